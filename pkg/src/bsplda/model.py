"""Model parameters, prior configuration per variant, and the data conditional likelihood."""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .linalg import spd_cholesky, sym

__all__ = [
    "ModelParams",
    "AugmentedLoading",
    "PriorConfig",
    "VARIANTS",
    "V1_WISHART_INFORMATIVE",
    "V1_WISHART_NONINFORMATIVE",
    "V2_GAMMA_DIAGONAL",
    "V2_GAMMA_ISOTROPIC",
    "V3_GAUSSV_WISHART",
    "V4_GAUSSV_GAMMA_DIAGONAL",
    "V4_GAUSSV_GAMMA_ISOTROPIC",
    "has_alpha_arm",
    "has_wishart_arm",
    "has_coupled_rows",
    "is_isotropic",
    "conditional_loglik",
    "conditional_loglik_traced",
    "conditional_loglik_augmented",
    "conditional_loglik_augmented_traced",
]

LOG2PI = math.log(2.0 * math.pi)

V1_WISHART_INFORMATIVE = "V1-Wishart-informative"
V1_WISHART_NONINFORMATIVE = "V1-Wishart-noninformative"
V2_GAMMA_DIAGONAL = "V2-Gamma-diagonal"
V2_GAMMA_ISOTROPIC = "V2-Gamma-isotropic"
V3_GAUSSV_WISHART = "V3-GaussV-Wishart"
V4_GAUSSV_GAMMA_DIAGONAL = "V4-GaussV-Gamma-diagonal"
V4_GAUSSV_GAMMA_ISOTROPIC = "V4-GaussV-Gamma-isotropic"

VARIANTS = (
    V1_WISHART_INFORMATIVE,
    V1_WISHART_NONINFORMATIVE,
    V2_GAMMA_DIAGONAL,
    V2_GAMMA_ISOTROPIC,
    V3_GAUSSV_WISHART,
    V4_GAUSSV_GAMMA_DIAGONAL,
    V4_GAUSSV_GAMMA_ISOTROPIC,
)


def has_alpha_arm(variant):
    """True when the variant carries the per-column relevance posterior q(alpha)."""
    return variant in (
        V1_WISHART_INFORMATIVE,
        V1_WISHART_NONINFORMATIVE,
        V2_GAMMA_DIAGONAL,
        V2_GAMMA_ISOTROPIC,
    )


def has_wishart_arm(variant):
    return variant in (V1_WISHART_INFORMATIVE, V1_WISHART_NONINFORMATIVE, V3_GAUSSV_WISHART)


def has_coupled_rows(variant):
    """Full-covariance W couples the loading rows, forcing the Gauss-Seidel row sweep."""
    return has_wishart_arm(variant)


def is_isotropic(variant):
    return variant in (V2_GAMMA_ISOTROPIC, V4_GAUSSV_GAMMA_ISOTROPIC)


@dataclass(frozen=True)
class ModelParams:
    """Point parameters: mean mu, loading matrix V, within-class precision W."""

    mu: np.ndarray
    V: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        V = np.asarray(self.V, dtype=float)
        W = np.asarray(self.W, dtype=float)
        d = mu.shape[0]
        if mu.ndim != 1 or V.ndim != 2 or V.shape[0] != d or V.shape[1] < 1:
            raise ValueError(f"inconsistent shapes mu {mu.shape}, V {V.shape}")
        if W.shape != (d, d):
            raise ValueError(f"W has shape {W.shape}, expected ({d}, {d})")
        if not np.allclose(W, W.T, atol=1e-10 * max(1.0, float(np.abs(W).max()))):
            raise ValueError("W must be symmetric")
        spd_cholesky(W)  # signals non-PD instead of regularizing
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "W", sym(W))

    @property
    def dim(self):
        return self.mu.shape[0]

    @property
    def rank(self):
        return self.V.shape[1]

    @cached_property
    def logdet_W(self):
        chol = spd_cholesky(self.W)
        return 2.0 * float(np.sum(np.log(np.diag(chol))))

    def augmented(self):
        return AugmentedLoading(np.column_stack([self.V, self.mu]))


@dataclass(frozen=True)
class AugmentedLoading:
    """The loading matrix with the mean folded in as the last column: [V mu]."""

    Vtilde: np.ndarray

    def __post_init__(self):
        vt = np.asarray(self.Vtilde, dtype=float)
        if vt.ndim != 2 or vt.shape[1] < 2:
            raise ValueError(f"augmented loading needs at least two columns, got {vt.shape}")
        object.__setattr__(self, "Vtilde", vt)

    @property
    def V(self):
        return self.Vtilde[:, :-1]

    @property
    def mu(self):
        return self.Vtilde[:, -1]


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of one prior scheme; unused fields stay None.

    V1/V2 carry the hierarchical column prior (a_alpha, b_alpha), the Gaussian
    mean prior (mu0, beta) and either a Wishart (psi0, nu_d; None for the
    non-informative limit) or Gamma (a_w, b_w) precision prior. V3/V4 replace
    the column/mean priors with per-row Gaussians (v_row_means,
    v_row_precisions) computed from a large corpus.
    """

    variant: str
    mu0: np.ndarray = None
    beta: np.ndarray = None
    a_alpha: float = None
    b_alpha: float = None
    a_w: float = None
    b_w: np.ndarray = None       # scalar for V2/isotropic, per-row vector for V4-diagonal
    psi0: np.ndarray = None
    nu_d: float = None
    v_row_means: np.ndarray = None       # (d, n_y+1)
    v_row_precisions: np.ndarray = None  # (d, n_y+1, n_y+1)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        for name in ("mu0", "beta", "b_w", "psi0", "v_row_means", "v_row_precisions"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, np.asarray(value, dtype=float))

    def validate(self, d, n_y):
        """Check presence, shapes and positivity of every field the variant uses."""
        k = n_y + 1
        v = self.variant
        if has_alpha_arm(v):
            self._require_positive_scalar("a_alpha")
            self._require_positive_scalar("b_alpha")
            mu0 = self._require_vector("mu0", d)
            beta = self._require_vector("beta", d)
            if np.any(beta <= 0):
                raise ValueError("beta entries must be positive")
            object.__setattr__(self, "mu0", mu0)
            object.__setattr__(self, "beta", beta)
        else:
            if self.v_row_means is None or self.v_row_precisions is None:
                raise ValueError(f"{v} requires row priors (v_row_means, v_row_precisions)")
            if self.v_row_means.shape != (d, k):
                raise ValueError(f"v_row_means has shape {self.v_row_means.shape}, expected ({d}, {k})")
            if self.v_row_precisions.shape != (d, k, k):
                raise ValueError(
                    f"v_row_precisions has shape {self.v_row_precisions.shape}, expected ({d}, {k}, {k})"
                )
            for r in range(d):
                spd_cholesky(self.v_row_precisions[r])
        if v == V1_WISHART_INFORMATIVE or v == V3_GAUSSV_WISHART:
            if self.psi0 is None or self.nu_d is None:
                raise ValueError(f"{v} requires psi0 and nu_d")
            if self.psi0.shape != (d, d):
                raise ValueError(f"psi0 has shape {self.psi0.shape}, expected ({d}, {d})")
            spd_cholesky(self.psi0)
            if self.nu_d <= d - 1:
                raise ValueError(f"nu_d must exceed d-1={d - 1}, got {self.nu_d}")
        if not has_wishart_arm(v):
            self._require_positive_scalar("a_w")
            if self.b_w is None:
                raise ValueError(f"{v} requires b_w")
            b_w = np.atleast_1d(np.asarray(self.b_w, dtype=float))
            if v == V4_GAUSSV_GAMMA_DIAGONAL:
                if b_w.size == 1:
                    b_w = np.full(d, float(b_w[0]))
                if b_w.shape != (d,):
                    raise ValueError(f"b_w must be scalar or length-{d}, got shape {b_w.shape}")
            else:
                if b_w.size != 1:
                    raise ValueError(f"{v} takes a scalar b_w")
                b_w = b_w.reshape(1)
            if np.any(b_w <= 0):
                raise ValueError("b_w must be positive")
            object.__setattr__(self, "b_w", b_w)
        return self

    def _require_positive_scalar(self, name):
        value = getattr(self, name)
        if value is None or not np.isfinite(value) or value <= 0:
            raise ValueError(f"{self.variant} requires positive {name}, got {value!r}")

    def _require_vector(self, name, d):
        value = getattr(self, name)
        if value is None:
            raise ValueError(f"{self.variant} requires {name}")
        value = np.atleast_1d(np.asarray(value, dtype=float))
        if value.size == 1:
            value = np.full(d, float(value[0]))
        if value.shape != (d,):
            raise ValueError(f"{name} must be scalar or length-{d}, got shape {value.shape}")
        return value


def _logdet_term(n_i, params_logdet, d):
    return 0.5 * n_i * (params_logdet - d * LOG2PI)


def conditional_loglik(n_i, fbar_i, sbar_i, y, params):
    """ln P(speaker data | y, params) from centered statistics.

    (N_i/2) ln|W/2pi| - tr(W Sbar_i)/2 + y^T V^T W Fbar_i - (N_i/2) y^T V^T W V y
    """
    d = params.dim
    wf = params.W @ fbar_i
    wv = params.W @ params.V
    return float(
        _logdet_term(n_i, params.logdet_W, d)
        - 0.5 * np.sum(params.W * sbar_i)
        + y @ (params.V.T @ wf)
        - 0.5 * n_i * y @ (params.V.T @ wv) @ y
    )


def conditional_loglik_traced(n_i, f_i, s_i, y, params):
    """Same likelihood written as a single trace against raw statistics."""
    mu, V, W = params.mu, params.V, params.W
    d = params.dim
    vy = V @ y
    inner = (
        s_i
        - 2.0 * np.outer(f_i, mu)
        + n_i * np.outer(mu, mu)
        - 2.0 * np.outer(f_i - n_i * mu, vy)
        + n_i * np.outer(vy, vy)
    )
    return float(_logdet_term(n_i, params.logdet_W, d) - 0.5 * np.sum(W * inner.T))


def conditional_loglik_augmented(n_i, f_i, s_i, ytilde, loading, W, logdet_W=None):
    """ln P(speaker data | ytilde, [V mu], W) from raw statistics.

    (N_i/2) ln|W/2pi| - tr(W S_i)/2 + yt^T Vt^T W F_i - (N_i/2) yt^T Vt^T W Vt yt
    """
    ytilde = np.asarray(ytilde, dtype=float)
    if ytilde[-1] != 1.0:
        raise ValueError(f"last entry of the augmented factor must be 1, got {ytilde[-1]}")
    vt = loading.Vtilde
    d = vt.shape[0]
    if logdet_W is None:
        chol = spd_cholesky(np.asarray(W, dtype=float))
        logdet_W = 2.0 * float(np.sum(np.log(np.diag(chol))))
    wf = W @ f_i
    wvt = W @ vt
    return float(
        _logdet_term(n_i, logdet_W, d)
        - 0.5 * np.sum(W * s_i)
        + ytilde @ (vt.T @ wf)
        - 0.5 * n_i * ytilde @ (vt.T @ wvt) @ ytilde
    )


def conditional_loglik_augmented_traced(n_i, f_i, s_i, ytilde, loading, W, logdet_W=None):
    """Augmented likelihood written as a single trace."""
    ytilde = np.asarray(ytilde, dtype=float)
    if ytilde[-1] != 1.0:
        raise ValueError(f"last entry of the augmented factor must be 1, got {ytilde[-1]}")
    vt = loading.Vtilde
    d = vt.shape[0]
    if logdet_W is None:
        chol = spd_cholesky(np.asarray(W, dtype=float))
        logdet_W = 2.0 * float(np.sum(np.log(np.diag(chol))))
    vy = vt @ ytilde
    inner = s_i - 2.0 * np.outer(f_i, vy) + n_i * np.outer(vy, vy)
    return float(_logdet_term(n_i, logdet_W, d) - 0.5 * np.sum(W * inner.T))
