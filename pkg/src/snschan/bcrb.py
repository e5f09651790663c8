"""Bayesian Cramer-Rao lower bound for the linear-Gaussian sparse model.

With prior x_m ~ CN(0, V_s) independent across the M measurement vectors,
observations y_m = Psi x_m + n_m, n ~ CN(0, sigma^2 I), the Bayesian Fisher
information is sigma^-2 Psi^H Psi + V_s^-1 per vector, and the total MSE of
the stacked coefficients is bounded by M times the trace of its inverse.
The posterior mean attains the bound exactly in this model.
"""

from __future__ import annotations

import warnings

import numpy as np


def bcrb_bound(psi: np.ndarray, v_s: np.ndarray, sigma2: float,
               m_count: int = 1, eps_floor: float = 1e-12) -> float:
    """M * tr[(sigma^-2 Psi^H Psi + V_s^-1)^-1].

    v_s is the (block-diagonal) prior covariance of one measurement vector.
    A singular prior is eigenvalue-floored with a warning.
    """
    if sigma2 <= 0:
        raise ValueError("noise variance must be positive")
    psi = np.asarray(psi, dtype=complex)
    v_s = np.asarray(v_s, dtype=complex)
    v_s = 0.5 * (v_s + v_s.conj().T)
    vals, vecs = np.linalg.eigh(v_s)
    if np.any(vals <= 0):
        warnings.warn("prior covariance is singular; flooring eigenvalues",
                      RuntimeWarning, stacklevel=2)
        vals = np.maximum(vals, eps_floor * max(vals.max(), 1.0))
    v_inv = (vecs / vals) @ vecs.conj().T
    fisher = psi.conj().T @ psi / sigma2 + v_inv
    bound = np.trace(np.linalg.inv(fisher)).real
    return float(m_count * bound)
