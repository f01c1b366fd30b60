"""Variational posterior factors and their moments.

All factor types are immutable values; derived moments are cached lazily and
rebuilt whenever a new value is constructed, so caches can never go stale.
"""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special

from .linalg import sym

__all__ = [
    "QY",
    "QVtilde",
    "QAlpha",
    "QWWishart",
    "QWGammaDiag",
    "QWGammaIso",
    "YAggregates",
    "y_aggregates",
    "expected_W",
    "expected_alpha",
    "VtildeMoments",
    "expected_quadratics",
    "expected_vtw_quadratic",
]

LOG2 = math.log(2.0)


def _batched_spd_inverse_logdet(mats):
    """Per-matrix inverse and log-determinant of an SPD stack via Cholesky."""
    if mats.shape[0] == 0:
        return mats.copy(), np.zeros(0)
    chol = np.linalg.cholesky(mats)
    k = mats.shape[-1]
    logdets = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
    inv_chol = np.linalg.inv(chol)
    covs = np.einsum("rba,rbc->rac", inv_chol, inv_chol)
    return 0.5 * (covs + covs.transpose(0, 2, 1)), logdets


@dataclass(frozen=True)
class QY:
    """Per-speaker Gaussian factors over the latent speaker vectors."""

    mean: np.ndarray  # (M, n_y)
    prec: np.ndarray  # (M, n_y, n_y)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        prec = np.asarray(self.prec, dtype=float)
        if mean.ndim != 2 or prec.shape != mean.shape + (mean.shape[1],):
            raise ValueError(f"inconsistent shapes mean {mean.shape}, prec {prec.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "prec", prec)

    @property
    def n_speakers(self):
        return self.mean.shape[0]

    @property
    def rank(self):
        return self.mean.shape[1]

    @cached_property
    def _cov_logdet(self):
        return _batched_spd_inverse_logdet(self.prec)

    @property
    def cov(self):
        return self._cov_logdet[0]

    @property
    def prec_logdets(self):
        return self._cov_logdet[1]

    @cached_property
    def second_moment(self):
        """E[y y^T] per speaker: covariance plus mean outer product."""
        return self.cov + np.einsum("ia,ib->iab", self.mean, self.mean)


@dataclass(frozen=True)
class QVtilde:
    """Independent Gaussian factors over the rows of the augmented loading [V mu]."""

    mean: np.ndarray  # (d, n_y+1); row r is the posterior mean of row r of [V mu]
    prec: np.ndarray  # (d, n_y+1, n_y+1)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        prec = np.asarray(self.prec, dtype=float)
        if mean.ndim != 2 or prec.shape != mean.shape + (mean.shape[1],):
            raise ValueError(f"inconsistent shapes mean {mean.shape}, prec {prec.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "prec", prec)

    @property
    def dim(self):
        return self.mean.shape[0]

    @property
    def rank(self):
        return self.mean.shape[1] - 1

    @property
    def V(self):
        return self.mean[:, :-1]

    @property
    def mu(self):
        return self.mean[:, -1]

    @cached_property
    def _cov_logdet(self):
        return _batched_spd_inverse_logdet(self.prec)

    @property
    def cov(self):
        return self._cov_logdet[0]

    @property
    def prec_logdets(self):
        return self._cov_logdet[1]

    @property
    def mu_var(self):
        """Posterior variance of each component of mu (mu block of the row covariances)."""
        return self.cov[:, -1, -1]

    @cached_property
    def col_sq_norms(self):
        """E[v_q^T v_q] for the n_y loading columns (mu column excluded)."""
        diag = np.einsum("rqq->q", self.cov)[:-1]
        return diag + np.sum(self.V**2, axis=0)


@dataclass(frozen=True)
class QAlpha:
    """Gamma factors over the per-column relevance precisions (shared shape)."""

    a: float
    b: np.ndarray  # (n_y,)

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.a <= 0 or np.any(b <= 0):
            raise ValueError("Gamma parameters must be positive")
        object.__setattr__(self, "b", b)

    @cached_property
    def mean(self):
        return self.a / self.b

    @cached_property
    def mean_log(self):
        return float(special.digamma(self.a)) - np.log(self.b)


@dataclass(frozen=True)
class QWWishart:
    psi: np.ndarray
    nu: float

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float)
        d = psi.shape[0]
        if psi.shape != (d, d):
            raise ValueError("psi must be square")
        if self.nu <= d - 1:
            raise ValueError(f"Wishart dof must exceed d-1={d - 1}, got {self.nu}")
        object.__setattr__(self, "psi", sym(psi))

    @property
    def dim(self):
        return self.psi.shape[0]

    @cached_property
    def mean(self):
        return self.nu * self.psi

    @cached_property
    def mean_logdet(self):
        d = self.dim
        sign, logdet_psi = np.linalg.slogdet(self.psi)
        if sign <= 0:
            raise ValueError("psi is not positive definite")
        i = np.arange(1, d + 1)
        return float(np.sum(special.digamma(0.5 * (self.nu + 1 - i))) + d * LOG2 + logdet_psi)


@dataclass(frozen=True)
class QWGammaDiag:
    a: float
    b: np.ndarray  # (d,) rates, one per diagonal element

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        if self.a <= 0 or np.any(b <= 0):
            raise ValueError("Gamma parameters must be positive")
        object.__setattr__(self, "b", b)

    @property
    def dim(self):
        return self.b.shape[0]

    @cached_property
    def mean_diag(self):
        return self.a / self.b

    @cached_property
    def mean(self):
        return np.diag(self.mean_diag)

    @cached_property
    def mean_log_diag(self):
        return float(special.digamma(self.a)) - np.log(self.b)

    @cached_property
    def mean_logdet(self):
        return float(np.sum(self.mean_log_diag))


@dataclass(frozen=True)
class QWGammaIso:
    a: float
    b: float
    dim: int

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("Gamma parameters must be positive")

    @cached_property
    def mean_scalar(self):
        return self.a / self.b

    @cached_property
    def mean_diag(self):
        return np.full(self.dim, self.mean_scalar)

    @cached_property
    def mean(self):
        return self.mean_scalar * np.eye(self.dim)

    @cached_property
    def mean_log_scalar(self):
        return float(special.digamma(self.a)) - math.log(self.b)

    @cached_property
    def mean_logdet(self):
        return self.dim * self.mean_log_scalar


def expected_W(qw):
    """(E[W], E[ln|W|]) for any precision-posterior arm."""
    return qw.mean, qw.mean_logdet


def expected_alpha(qalpha):
    """(E[alpha_q], E[ln alpha_q]) per column."""
    return qalpha.mean, qalpha.mean_log


@dataclass(frozen=True)
class YAggregates:
    """Dataset-level aggregates of the augmented latent moments."""

    C: np.ndarray        # (d, n_y+1): sum_i F_i E[ytilde_i]^T
    R: np.ndarray        # (n_y+1, n_y+1): sum_i N_i E[ytilde ytilde^T]
    Rho: np.ndarray      # (n_y, n_y): sum_i E[y y^T]


def y_aggregates(qy, stats):
    """C, R_ytilde and Rho from the current q(Y) and the sufficient statistics."""
    m, ny = qy.mean.shape
    if stats.n_speakers != m:
        raise ValueError(f"q(Y) covers {m} speakers, statistics have {stats.n_speakers}")
    k = ny + 1
    eyt = np.concatenate([qy.mean, np.ones((m, 1))], axis=1)
    eyyt = np.empty((m, k, k))
    eyyt[:, :ny, :ny] = qy.second_moment
    eyyt[:, :ny, ny] = qy.mean
    eyyt[:, ny, :ny] = qy.mean
    eyyt[:, ny, ny] = 1.0
    c = stats.spk_sums.T @ eyt
    r = np.einsum("i,iab->ab", stats.counts, eyyt)
    rho = qy.second_moment.sum(axis=0) if m else np.zeros((ny, ny))
    return YAggregates(C=c, R=sym(r), Rho=rho)


@dataclass(frozen=True)
class VtildeMoments:
    """Second-order expectations of the augmented loading under q(Vtilde) and q(W)."""

    evtwvt: np.ndarray   # (k, k): E[Vt^T W Vt], k = n_y+1
    evtwv: np.ndarray    # (n_y, n_y): loading block of evtwvt
    evtwmu: np.ndarray   # (n_y,): loading-mean cross block
    evrvt: np.ndarray    # (d, d): E[Vt R Vt^T]
    rho: np.ndarray      # (d,): Hadamard corrections sum_ab (R o cov_r)_ab
    evq_sq: np.ndarray   # (n_y,): E[v_q^T v_q]
    evtv: np.ndarray     # (k, k): E[Vt^T Vt]


def expected_vtw_quadratic(qv, wbar):
    """E[Vt^T W Vt] = sum_r wbar_rr cov_r + Vtbar^T Wbar Vtbar.

    The per-row factorization zeroes every cross-row covariance, so only the
    diagonal of Wbar meets the row covariances.
    """
    wdiag = np.diagonal(wbar)
    full = np.einsum("r,rab->ab", wdiag, qv.cov) + qv.mean.T @ wbar @ qv.mean
    return sym(full)


def expected_quadratics(qv, wbar, r_ytilde):
    """All second-order loading expectations consumed by the updates and the bound."""
    evtwvt = expected_vtw_quadratic(qv, wbar)
    rho = np.einsum("rab,ab->r", qv.cov, r_ytilde)
    evrvt = sym(qv.mean @ r_ytilde @ qv.mean.T) + np.diag(rho)
    evtv = sym(qv.cov.sum(axis=0) + qv.mean.T @ qv.mean)
    return VtildeMoments(
        evtwvt=evtwvt,
        evtwv=evtwvt[:-1, :-1],
        evtwmu=evtwvt[:-1, -1],
        evrvt=evrvt,
        rho=rho,
        evq_sq=qv.col_sq_norms,
        evtv=evtv,
    )
