"""Robust cell losses, the smooth L1 surrogate and the penalized objective.

Residuals are ``R = X - X V V'`` and the data term is

    (1 / (n p)) * sum_j sigma_j^2 * sum_i rho(r_ij / sigma_j)

plus the elastic-net penalty ``sum_l lambda_l (alpha ||v_l||^2 + (1 - alpha) ||v_l||_1)``
in which the absolute value is replaced by ``v * tanh(c v)``.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class LossFamily(str, Enum):
    SQUARE = "square"
    HUBER = "huber"
    PSEUDO_HUBER = "pseudohuber"
    TUKEY = "tukey"
    LTS = "lts"


@dataclass(frozen=True)
class LossSpec:
    family: LossFamily = LossFamily.HUBER
    b: float = 1.35
    c_tukey: float = 1.35
    h_fraction: float = 0.5
    l1_smooth_c: float = 1000.0

    def __post_init__(self):
        object.__setattr__(self, "family", LossFamily(self.family))
        if self.b <= 0 or self.c_tukey <= 0 or self.l1_smooth_c <= 0:
            raise ValueError("loss constants must be positive")
        if not 0.5 <= self.h_fraction <= 1:
            raise ValueError("h_fraction must lie in [0.5, 1]")

    @property
    def surrogate(self):
        """The smooth family actually used for gradients."""
        if self.family is LossFamily.HUBER:
            return LossSpec(LossFamily.PSEUDO_HUBER, self.b, self.c_tukey, self.h_fraction, self.l1_smooth_c)
        return self


@dataclass(frozen=True)
class PenaltySpec:
    lambdas: tuple = field(default_factory=tuple)
    alpha: float = 0.0

    def __post_init__(self):
        lam = tuple(float(v) for v in np.atleast_1d(self.lambdas))
        object.__setattr__(self, "lambdas", lam)
        if any(v < 0 for v in lam):
            raise ValueError("lambdas must be nonnegative")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")

    @classmethod
    def shared(cls, lam, k, alpha=0.0):
        return cls(lambdas=(float(lam),) * k, alpha=alpha)

    def vector(self, k):
        if len(self.lambdas) == 0:
            return np.zeros(k)
        if len(self.lambdas) == 1:
            return np.full(k, self.lambdas[0])
        if len(self.lambdas) != k:
            raise ValueError(f"penalty has {len(self.lambdas)} lambdas for {k} components")
        return np.asarray(self.lambdas)


def rho(r, spec, inside=None):
    """Cell loss evaluated on standardized residuals ``r``.

    ``inside`` is the h-subset membership mask, only used by LTS (cells
    outside the subset cost nothing).
    """
    r = np.asarray(r, dtype=float)
    fam = spec.family
    if fam is LossFamily.SQUARE:
        return r * r
    if fam is LossFamily.HUBER:
        a = np.abs(r)
        return np.where(a <= spec.b, r * r, spec.b * a)
    if fam is LossFamily.PSEUDO_HUBER:
        u = r / spec.b
        return spec.b**2 * (np.sqrt(1.0 + u * u) - 1.0)
    if fam is LossFamily.TUKEY:
        u2 = (r / spec.c_tukey) ** 2
        return np.where(u2 <= 1.0, u2 * (3.0 - 3.0 * u2 + u2 * u2), 1.0)
    if fam is LossFamily.LTS:
        if inside is None:
            inside = np.ones(r.shape, dtype=bool)
        return np.where(inside, r * r, 0.0)
    raise ValueError(f"unknown loss family {fam!r}")


def rho_prime(r, spec, inside=None):
    """Derivative of the smooth surrogate of ``rho``."""
    r = np.asarray(r, dtype=float)
    fam = spec.surrogate.family
    if fam is LossFamily.SQUARE:
        return 2.0 * r
    if fam is LossFamily.PSEUDO_HUBER:
        return r / np.sqrt(1.0 + (r / spec.b) ** 2)
    if fam is LossFamily.TUKEY:
        c = spec.c_tukey
        u2 = (r / c) ** 2
        return np.where(u2 <= 1.0, 6.0 * r / c**2 * (1.0 - u2) ** 2, 0.0)
    if fam is LossFamily.LTS:
        if inside is None:
            inside = np.ones(r.shape, dtype=bool)
        return np.where(inside, 2.0 * r, 0.0)
    raise ValueError(f"unknown loss family {fam!r}")


def smooth_l1(v, c=1000.0):
    """Differentiable approximation ``v * tanh(c v)`` of ``|v|``."""
    v = np.asarray(v, dtype=float)
    return v * np.tanh(c * v)


def smooth_l1_prime(v, c=1000.0):
    v = np.asarray(v, dtype=float)
    t = np.tanh(c * v)
    return t + c * v * (1.0 - t * t)


def residuals(X, V):
    return X - (X @ V) @ V.T


def _check(X, V, sigmas):
    X = np.asarray(X, dtype=float)
    V = np.asarray(V, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if X.ndim != 2 or V.ndim != 2 or X.shape[1] != V.shape[0]:
        raise ValueError(f"dimension mismatch: X {X.shape}, V {V.shape}")
    if sigmas.shape != (X.shape[1],):
        raise ValueError(f"expected {X.shape[1]} residual scales, got shape {sigmas.shape}")
    if np.any(sigmas <= 0):
        raise ValueError("residual scales must be strictly positive")
    return X, V, sigmas


def _inside_mask(H, shape):
    if H is None:
        return None
    return H.mask(shape)


def penalty(V, pen, l1_c=1000.0):
    lam = pen.vector(V.shape[1])
    ridge = np.sum(V * V, axis=0)
    l1 = np.sum(smooth_l1(V, l1_c), axis=0)
    return float(np.sum(lam * (pen.alpha * ridge + (1.0 - pen.alpha) * l1)))


def penalty_gradient(V, pen, l1_c=1000.0):
    lam = pen.vector(V.shape[1])
    return lam * (2.0 * pen.alpha * V + (1.0 - pen.alpha) * smooth_l1_prime(V, l1_c))


def objective(X, V, sigmas, spec, pen, H=None, surrogate=False):
    """Penalized robust reconstruction objective.

    Parameters
    ----------
    X : ndarray, (n, p)
        Centered data.
    V : ndarray, (p, k)
        Loadings with orthonormal columns.
    sigmas : ndarray, (p,)
        Residual scale per column, treated as fixed.
    spec : LossSpec
    pen : PenaltySpec
    H : HSubsets, optional
        Trimming subsets; required for a meaningful LTS value.
    surrogate : bool
        Evaluate the smooth surrogate (Huber -> pseudo-Huber) instead of
        the exact loss.
    """
    X, V, sigmas = _check(X, V, sigmas)
    n, p = X.shape
    R = residuals(X, V)
    fam = spec.surrogate if surrogate else spec
    cells = rho(R / sigmas, fam, _inside_mask(H, R.shape))
    data = float(np.sum(sigmas**2 * np.sum(cells, axis=0))) / (n * p)
    return data + penalty(V, pen, spec.l1_smooth_c)


def objective_gradient(X, V, sigmas, spec, pen, H=None, rows=None):
    """Euclidean gradient of the surrogate objective with sigmas and H frozen.

    ``rows`` restricts the data term to a subset of observations, rescaled
    by ``n / len(rows)`` so it estimates the full-data gradient.
    """
    X, V, sigmas = _check(X, V, sigmas)
    n, p = X.shape
    inside = _inside_mask(H, X.shape)
    scale = 1.0
    if rows is not None:
        X = X[rows]
        if inside is not None:
            inside = inside[rows]
        scale = n / X.shape[0]
    R = residuals(X, V)
    W = sigmas * rho_prime(R / sigmas, spec, inside) * (scale / (n * p))
    XV = X @ V
    G = -(X.T @ (W @ V) + W.T @ XV)
    return G + penalty_gradient(V, pen, spec.l1_smooth_c)


@dataclass(frozen=True)
class HSubsets:
    """Per-column index sets of the ``h`` cells with smallest absolute residual."""

    indices: np.ndarray  # (h, p), column j holds the rows kept for variable j

    @property
    def h(self):
        return self.indices.shape[0]

    def mask(self, shape):
        m = np.zeros(shape, dtype=bool)
        cols = np.broadcast_to(np.arange(shape[1]), self.indices.shape)
        m[self.indices, cols] = True
        return m


def h_size(n, h_fraction):
    return min(n, max(1, int(np.ceil(h_fraction * n - 1e-12))))


def update_h_subsets(X, V, sigmas, h_fraction):
    """Keep, per column, the rows with the ``h`` smallest absolute residuals.

    Ties go to the lowest row index.
    """
    X = np.asarray(X, dtype=float)
    R = np.abs(residuals(X, np.asarray(V, dtype=float)))
    h = h_size(X.shape[0], h_fraction)
    order = np.argsort(R, axis=0, kind="stable")
    return HSubsets(np.sort(order[:h], axis=0))
