"""Empirical-Bayes hyperparameter re-estimation by lower-bound maximization."""

import numpy as np

from .numerics import solve_gamma_shape

__all__ = ["optimize_alpha_hyper", "optimize_w_hyper", "optimize_mu_prior"]

# A point-mass mu posterior would drive beta, and with it the bound, to
# infinity; the rate is kept inside these limits.
BETA_FLOOR = 1e-8
BETA_CAP = 1e12


def _fit_gamma_from_moments(mean_log, mean, a_init):
    c = float(np.mean(mean_log))
    d_mean = float(np.mean(mean))
    a = solve_gamma_shape(c, d_mean, a_init=a_init)
    return a, a / d_mean


def optimize_alpha_hyper(mean_log_alpha, mean_alpha, a_alpha):
    """(a_alpha, b_alpha) solving psi(a) = ln b + mean(E[ln alpha]) with b = a / mean(E[alpha])."""
    return _fit_gamma_from_moments(mean_log_alpha, mean_alpha, a_alpha)


def optimize_w_hyper(mean_log_w, mean_w, a_w):
    """(a_w, b_w) for the Gamma precision arms; diagonal inputs average over the
    d rows, the isotropic arm passes its scalar moments."""
    return _fit_gamma_from_moments(mean_log_w, mean_w, a_w)


def optimize_mu_prior(qv, isotropic=False, update_mu0=True, mu0_old=None):
    """(mu0, beta) from the mu block of the row posteriors.

    With mu0 refreshed to E[mu] first (the default) the cross terms cancel and
    beta_r^{-1} reduces to the posterior variance of mu_r; update_mu0=False
    keeps the supplied mu0 and retains the cross terms.
    """
    mu_mean = qv.mu
    mu_var = qv.mu_var
    if update_mu0:
        mu0 = mu_mean.copy()
        inv_beta = mu_var.copy()
    else:
        if mu0_old is None:
            raise ValueError("update_mu0=False requires mu0_old")
        mu0 = np.asarray(mu0_old, dtype=float)
        inv_beta = mu_var + mu_mean**2 - 2.0 * mu0 * mu_mean + mu0**2
    if isotropic:
        inv_beta = np.full_like(inv_beta, float(np.mean(inv_beta)))
    beta = 1.0 / np.maximum(inv_beta, 1.0 / BETA_CAP)
    beta = np.clip(beta, BETA_FLOOR, BETA_CAP)
    return mu0, beta
