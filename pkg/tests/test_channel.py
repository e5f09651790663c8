import numpy as np
import pytest

from snschan.channel import (
    ChannelRealization,
    PathParams,
    VisibilityMask,
    assemble_channel,
    breakpoints_from_masks,
    dirichlet_interpolation,
    element_distances,
    ideal_mask,
    nonideal_mask,
    path_channel,
    sample_vr,
    steering_vector,
    zero_padded_angular_spectrum,
)
from snschan.config import SystemConfig
from snschan.diffraction import Obstacle


def euclidean_distance_oracle(r, theta, cfg):
    """Element-to-source distances from explicit 2-D coordinates."""
    source = np.array([r * np.sin(theta), r * np.cos(theta)])
    out = np.empty(cfg.N)
    for i, dn in enumerate(cfg.delta_n):
        elem = np.array([dn * cfg.d, 0.0])
        out[i] = np.linalg.norm(source - elem)
    return out


class TestSteeringVector:
    def test_center_element_has_zero_phase(self):
        # delta = 0 at the center of an odd array -> r_n = r -> unit amplitude
        cfg = SystemConfig(N=3, SI_min=1)
        b = steering_vector(12.0, 0.7, cfg)
        assert b[1] == pytest.approx(1 / np.sqrt(3))

    def test_two_element_taylor_symmetry(self):
        cfg = SystemConfig(N=2, fc=28e9, SI_min=1)
        r = 5.0
        b = steering_vector(r, 0.0, cfg, mode="taylor")
        expected = np.exp(-1j * cfg.wavenumber() * cfg.d**2 / (8 * r)) / np.sqrt(2)
        np.testing.assert_allclose(b, [expected, expected], rtol=1e-12)

    def test_exact_matches_coordinate_oracle(self):
        cfg = SystemConfig(N=4, fc=28e9, SI_min=1)
        r, theta = 10.0, np.pi / 6
        b = steering_vector(r, theta, cfg, mode="exact")
        d_oracle = euclidean_distance_oracle(r, theta, cfg)
        expected = np.exp(-1j * cfg.wavenumber() * (d_oracle - r)) / 2.0
        np.testing.assert_allclose(b, expected, rtol=1e-10)

    def test_taylor_error_bound(self):
        cfg = SystemConfig(N=4, fc=28e9, SI_min=1)
        r, theta = 10.0, np.pi / 6
        exact = element_distances(r, theta, cfg, "exact")
        taylor = element_distances(r, theta, cfg, "taylor")
        a = np.abs(cfg.delta_n * cfg.d)
        # third-order remainder of the binomial expansion
        bound = 5.0 * a**3 / r**2
        assert np.all(np.abs(exact - taylor) <= bound + 1e-15)

    @pytest.mark.parametrize("mode", ["exact", "taylor"])
    def test_unit_norm(self, mode):
        cfg = SystemConfig(N=64, SI_min=8)
        rng = np.random.default_rng(3)
        for _ in range(10):
            r = rng.uniform(1.0, 80.0)
            theta = rng.uniform(-1.4, 1.4)
            assert np.linalg.norm(steering_vector(r, theta, cfg, mode)) == \
                pytest.approx(1.0, abs=1e-12)

    def test_rejects_nonpositive_distance(self):
        cfg = SystemConfig(N=8, SI_min=2)
        with pytest.raises(ValueError):
            steering_vector(0.0, 0.1, cfg)
        with pytest.raises(ValueError):
            steering_vector(-3.0, 0.1, cfg)


class TestIdealMask:
    def test_center_element_is_one(self):
        cfg = SystemConfig(N=9, SI_min=3)
        path = PathParams(g=1.0, r=7.0, theta=0.9)
        mask = ideal_mask(path, cfg)
        assert mask[4] == pytest.approx(1.0, abs=1e-14)

    def test_far_field_limit(self):
        cfg = SystemConfig(N=16, SI_min=4)
        r = 1e4
        path = PathParams(g=1.0, r=r, theta=0.2)
        mask = ideal_mask(path, cfg)
        np.testing.assert_allclose(mask, 1.0, atol=2 * cfg.aperture / r)

    def test_matches_direct_formula(self):
        cfg = SystemConfig(N=8, SI_min=2)
        r, theta = 5.0, 0.5
        path = PathParams(g=1.0, r=r, theta=theta)
        a = cfg.delta_n * cfg.d
        expected = r / np.sqrt(r**2 + a**2 - 2 * a * r * np.sin(theta))
        np.testing.assert_allclose(ideal_mask(path, cfg), expected, rtol=1e-12)

    def test_mask_times_distance_recovers_r(self):
        cfg = SystemConfig(N=32, SI_min=4)
        path = PathParams(g=1.0, r=22.0, theta=-0.8)
        mask = ideal_mask(path, cfg)
        r_n = element_distances(path.r, path.theta, cfg, "exact")
        np.testing.assert_allclose(mask * r_n, path.r, rtol=1e-12)


class TestNonidealMask:
    def _path(self, t_d, cfg):
        return PathParams(g=1.0, r=30.0, theta=0.1, kind="nonideal",
                          obstacle=Obstacle(h_ref=0.01, d1_ref=12.0, d2_ref=18.0),
                          t_d=t_d)

    def test_zero_intensity_reduces_to_ideal(self):
        cfg = SystemConfig(N=16, SI_min=4)
        path = self._path(0.0, cfg)
        ideal = PathParams(g=1.0, r=30.0, theta=0.1)
        np.testing.assert_allclose(nonideal_mask(path, cfg),
                                   ideal_mask(ideal, cfg), rtol=1e-12)

    def test_unity_gain_reduces_to_ideal(self):
        # edge far below the path: A_n ~ 1 for every element
        cfg = SystemConfig(N=16, SI_min=4)
        path = PathParams(g=1.0, r=30.0, theta=0.0, kind="nonideal",
                          obstacle=Obstacle(h_ref=-10.0, d1_ref=15.0, d2_ref=15.0),
                          t_d=0.9)
        ideal = PathParams(g=1.0, r=30.0, theta=0.0)
        np.testing.assert_allclose(nonideal_mask(path, cfg),
                                   ideal_mask(ideal, cfg), rtol=2e-2)

    def test_grazing_element_factor(self):
        # with t_d = 1 the factor is sqrt(A_n); A(0) = 1/4 makes it exactly 0.5
        from snschan.diffraction import diffraction_gain, diffraction_geometry
        cfg = SystemConfig(N=64, SI_min=8)
        path = PathParams(g=1.0, r=30.0, theta=0.0, kind="nonideal",
                          obstacle=Obstacle(h_ref=0.0, d1_ref=12.0, d2_ref=18.0),
                          t_d=1.0)
        mask = nonideal_mask(path, cfg)
        _, _, _, nu = diffraction_geometry(path.obstacle, path.theta, cfg)
        r_n = element_distances(path.r, path.theta, cfg, "exact")
        expected = (path.r / r_n) * np.sqrt(diffraction_gain(nu))
        np.testing.assert_allclose(mask, expected, rtol=1e-12)
        # nearest-to-grazing element: factor ~ sqrt(A(0)) = 0.5 up to the
        # nu quantization across the element grid
        k = int(np.argmin(np.abs(nu)))
        assert mask[k] * r_n[k] / path.r == pytest.approx(0.5, abs=6e-3)

    def test_intensity_bound_enforced(self):
        from snschan.channel import MaskConfigurationError
        cfg = SystemConfig(N=256, SI_min=32)
        path = PathParams(g=1.0, r=30.0, theta=0.1, kind="nonideal",
                          obstacle=Obstacle(h_ref=0.05, d1_ref=12.0, d2_ref=18.0),
                          t_d=50.0)
        with pytest.raises(MaskConfigurationError):
            nonideal_mask(path, cfg)

    def test_positive_within_bound(self):
        cfg = SystemConfig(N=128, SI_min=16)
        path = self._path(0.99, cfg)
        assert np.all(nonideal_mask(path, cfg) > 0)


class TestSampleVr:
    def test_absorbing_visible_chain(self):
        cfg = SystemConfig(N=64, SI_min=8)
        path = PathParams(g=1.0, r=20.0, theta=0.0)
        rng = np.random.default_rng(0)
        mask = sample_vr(path, cfg, rng, p_stay_visible=1.0,
                         p_stay_blocked=0.0, p_init_visible=1.0)
        assert mask.support.all()
        assert np.all(mask.s > 0)

    def test_degenerate_all_blocked_warns_and_forces(self):
        cfg = SystemConfig(N=64, SI_min=8)
        path = PathParams(g=1.0, r=20.0, theta=0.0)
        rng = np.random.default_rng(0)
        with pytest.warns(RuntimeWarning):
            mask = sample_vr(path, cfg, rng, p_stay_visible=1.0,
                             p_stay_blocked=1.0, p_init_visible=0.0)
        assert mask.support.any()

    def test_mean_run_length(self):
        # geometric block runs: mean visible run = SI_min / (1 - p_vv)
        cfg = SystemConfig(N=4 * 200, SI_min=4)
        path = PathParams(g=1.0, r=20.0, theta=0.0)
        rng = np.random.default_rng(7)
        runs = []
        for _ in range(500):
            mask = sample_vr(path, cfg, rng, p_stay_visible=0.8,
                             p_stay_blocked=0.8)
            s = mask.support.astype(int)
            edges = np.flatnonzero(np.diff(np.concatenate([[0], s, [0]])))
            starts, ends = edges[::2], edges[1::2]
            for a, b in zip(starts, ends):
                if a > 0 and b < cfg.N:          # drop censored boundary runs
                    runs.append(b - a)
        assert np.mean(runs) == pytest.approx(5 * cfg.SI_min, rel=0.05)

    def test_nonideal_support_is_thresholded(self):
        cfg = SystemConfig(N=128, SI_min=16)
        path = PathParams(g=1.0, r=30.0, theta=0.1, kind="nonideal",
                          obstacle=Obstacle(h_ref=0.02, d1_ref=12.0, d2_ref=18.0),
                          t_d=0.9)
        rng = np.random.default_rng(0)
        mask = sample_vr(path, cfg, rng, power_threshold=0.3)
        full = nonideal_mask(path, cfg)
        np.testing.assert_array_equal(mask.support, full > 0.3 * full.max())


class TestAssembleChannel:
    def _cfg(self):
        return SystemConfig(N=32, M=3, SI_min=4)

    def test_zero_masks_give_zero_channel(self):
        cfg = self._cfg()
        path = PathParams(g=1.0, r=20.0, theta=0.0)
        path.mask = VisibilityMask(s=np.zeros(cfg.N),
                                   support=np.zeros(cfg.N, dtype=bool))
        chan = assemble_channel(cfg, [path])
        assert np.all(chan.H == 0)
        assert np.all(chan.power == 0)

    def test_superposition_linearity(self):
        cfg = self._cfg()
        rng = np.random.default_rng(5)
        paths = [PathParams(g=complex(*rng.standard_normal(2)),
                            r=rng.uniform(10, 50), theta=rng.uniform(-1, 1))
                 for _ in range(4)]
        h_all = assemble_channel(cfg, paths).H
        h_sum = sum(path_channel(p, cfg) for p in paths)
        np.testing.assert_allclose(h_all, h_sum, rtol=1e-12)

    def test_gain_scaling_is_exact(self):
        cfg = self._cfg()
        p1 = PathParams(g=0.3 + 0.1j, r=15.0, theta=0.4)
        p2 = PathParams(g=3 * (0.3 + 0.1j), r=15.0, theta=0.4)
        np.testing.assert_allclose(3 * path_channel(p1, cfg),
                                   path_channel(p2, cfg), rtol=1e-12)

    def test_breakpoints_cover_support_edges(self):
        cfg = self._cfg()
        p1 = PathParams(g=1.0, r=20.0, theta=0.0)
        sup = np.zeros(cfg.N, dtype=bool)
        sup[8:24] = True
        p1.mask = VisibilityMask(s=np.where(sup, 1.0, 0.0), support=sup)
        chan = assemble_channel(cfg, [p1])
        np.testing.assert_array_equal(chan.truth_breakpoints, [1, 9, 25, 33])

    def test_breakpoints_always_bracketed(self):
        cfg = self._cfg()
        rng = np.random.default_rng(11)
        for _ in range(10):
            paths = []
            for _ in range(3):
                p = PathParams(g=1.0, r=rng.uniform(10, 40),
                               theta=rng.uniform(-1, 1))
                sup = rng.random(cfg.N) < 0.5
                sup[rng.integers(cfg.N)] = True
                p.mask = VisibilityMask(s=np.where(sup, 1.0, 0.0), support=sup)
                paths.append(p)
            bp = assemble_channel(cfg, paths).truth_breakpoints
            assert bp[0] == 1 and bp[-1] == cfg.N + 1
            assert np.all(np.diff(bp) > 0)


class TestAngularSpectrum:
    def test_no_padding_equals_plain_dft(self):
        rng = np.random.default_rng(2)
        h = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        np.testing.assert_allclose(zero_padded_angular_spectrum(h, 0, 0),
                                   np.fft.fft(h), rtol=1e-12)

    def test_front_padding_is_pure_phase(self):
        rng = np.random.default_rng(3)
        h = rng.standard_normal(10) + 1j * rng.standard_normal(10)
        front = zero_padded_angular_spectrum(h, 4, 0)
        back = zero_padded_angular_spectrum(h, 0, 4)
        np.testing.assert_allclose(np.abs(front), np.abs(back), rtol=1e-10)

    def test_matches_dirichlet_interpolation(self):
        rng = np.random.default_rng(4)
        h = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        direct = zero_padded_angular_spectrum(h, 3, 5)
        interp = dirichlet_interpolation(h, 3, 5)
        np.testing.assert_allclose(direct, interp, atol=1e-10)

    def test_parseval_with_padding(self):
        rng = np.random.default_rng(5)
        h = rng.standard_normal(12) + 1j * rng.standard_normal(12)
        out = zero_padded_angular_spectrum(h, 2, 7)
        s = 2 + 12 + 7
        assert np.sum(np.abs(out) ** 2) == pytest.approx(
            s * np.sum(np.abs(h) ** 2), rel=1e-12)
