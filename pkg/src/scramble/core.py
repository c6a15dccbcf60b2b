"""The SCRAMBLE estimator: sparse, cellwise robust PCA on the Stiefel manifold."""

import json
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from . import loss as _loss
from .loss import LossFamily, LossSpec, PenaltySpec
from .robust_stats import qn_scale, rank_transform, solve_wrap_constants, wrap_transform
from .stiefel import (
    ConvergenceTrace,
    OptimizerConfig,
    minibatch_minimize,
    minimize,
    orthonormality_error,
)


class Init(str, Enum):
    RANK = "rank"
    WRAP = "wrap"


class Center(str, Enum):
    MEDIAN = "median"
    NONE = "none"


@dataclass(frozen=True)
class FitConfig:
    k: int = 2
    loss: LossSpec = field(default_factory=LossSpec)
    penalty: PenaltySpec = field(default_factory=PenaltySpec)
    init: Init = Init.WRAP
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    threshold_window: int = 10
    center: Center = Center.MEDIAN
    thresholding: bool = True
    wrap_b: float = 1.5
    wrap_c: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "init", Init(self.init))
        object.__setattr__(self, "center", Center(self.center))
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.threshold_window < 2:
            raise ValueError("threshold_window must be at least 2")

    def with_lambda(self, lam):
        return replace(self, penalty=PenaltySpec.shared(lam, self.k, self.penalty.alpha))

    def to_dict(self):
        d = asdict(self)
        d["init"] = self.init.value
        d["center"] = self.center.value
        d["loss"]["family"] = self.loss.family.value
        d["penalty"]["lambdas"] = list(self.penalty.lambdas)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["loss"] = LossSpec(**d["loss"])
        d["penalty"] = PenaltySpec(**d["penalty"])
        d["optimizer"] = OptimizerConfig(**d["optimizer"])
        return cls(**d)


@dataclass(frozen=True)
class FitResult:
    loadings: np.ndarray  # (p, k), thresholded
    scores: np.ndarray  # (n, k)
    eigenvalues: np.ndarray  # (k,), Qn^2 of score columns, nonincreasing
    residual_scales: np.ndarray  # (p,)
    center_offsets: np.ndarray  # (p,)
    threshold: float
    orthonormality_residual: float  # of the pre-threshold loadings
    raw_loadings: np.ndarray  # (p, k), pre-threshold, same order and signs
    trace: ConvergenceTrace
    config: FitConfig

    @property
    def k(self):
        return self.loadings.shape[1]

    @property
    def converged(self):
        return self.trace.converged

    def to_dict(self):
        return {
            "loadings": self.loadings.tolist(),
            "raw_loadings": self.raw_loadings.tolist(),
            "scores": self.scores.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "residual_scales": self.residual_scales.tolist(),
            "center_offsets": self.center_offsets.tolist(),
            "threshold": float(self.threshold),
            "orthonormality_residual": float(self.orthonormality_residual),
            "trace": self.trace.to_dict(),
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        p = len(d["center_offsets"])
        k = len(d["eigenvalues"])
        return cls(
            loadings=np.asarray(d["loadings"], dtype=float).reshape(p, k),
            scores=np.asarray(d["scores"], dtype=float).reshape(-1, k),
            eigenvalues=np.asarray(d["eigenvalues"], dtype=float),
            residual_scales=np.asarray(d["residual_scales"], dtype=float),
            center_offsets=np.asarray(d["center_offsets"], dtype=float),
            threshold=float(d["threshold"]),
            orthonormality_residual=float(d["orthonormality_residual"]),
            raw_loadings=np.asarray(d["raw_loadings"], dtype=float).reshape(p, k),
            trace=ConvergenceTrace.from_dict(d["trace"]),
            config=FitConfig.from_dict(d["config"]),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _as_matrix(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-d data matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("data matrix contains non-finite entries")
    return X


def center_data(X, center=Center.MEDIAN):
    X = _as_matrix(X)
    if Center(center) is Center.MEDIAN:
        offsets = np.median(X, axis=0)
    else:
        offsets = np.zeros(X.shape[1])
    return X - offsets, offsets


def leading_right_singular_vectors(Y, k):
    _, _, Vt = np.linalg.svd(Y, full_matrices=False)
    return Vt[:k].T.copy()


def initialize(X, cfg):
    """Starting loadings: first k right-singular vectors of the transformed data."""
    X = _as_matrix(X)
    n, p = X.shape
    if n < 2 or p < 2:
        raise ValueError("need at least two observations and two variables")
    if cfg.k > min(n, p):
        raise ValueError(f"k={cfg.k} exceeds min(n, p)={min(n, p)}")
    if cfg.init is Init.RANK:
        Y = rank_transform(X)
    else:
        Y = wrap_transform(X, solve_wrap_constants(cfg.wrap_b, cfg.wrap_c))
    return leading_right_singular_vectors(Y, cfg.k)


def _mad(X):
    med = np.median(X, axis=0)
    return np.median(np.abs(X - med), axis=0)


def estimate_residual_scales(X, V, floor=None):
    """Columnwise median absolute residual, floored away from zero."""
    X = _as_matrix(X)
    R = _loss.residuals(X, np.asarray(V, dtype=float))
    s = np.median(np.abs(R), axis=0)
    if floor is None:
        floor = 1e-12 * (_mad(X) + 1.0)
    return np.where(s > 0, s, floor)


def threshold_value(rel_changes, window):
    """Mean plus two sample standard deviations of the last ``window`` changes."""
    d = np.asarray(rel_changes[-window:], dtype=float)
    if d.size == 0:
        return 0.0
    sd = float(np.std(d, ddof=1)) if d.size > 1 else 0.0
    return float(np.mean(d)) + 2.0 * sd


def _canonical_order(V, X):
    """Sort components by Qn^2 score variance, largest entry of each column positive."""
    k = V.shape[1]
    var = np.array([qn_scale(X @ V[:, c]) ** 2 for c in range(k)])
    order = np.argsort(-var, kind="stable")
    signs = np.ones(k)
    for c in range(k):
        col = V[:, c]
        if np.any(col):
            signs[c] = 1.0 if col[np.argmax(np.abs(col))] >= 0 else -1.0
    return order, signs


class _State:
    """Residual scales and trimming subsets refreshed once per iteration."""

    def __init__(self, X, cfg):
        self.X = X
        self.cfg = cfg
        self.floor = 1e-12 * (_mad(X) + 1.0)
        self.sigmas = None
        self.H = None

    def refresh(self, V):
        self.sigmas = estimate_residual_scales(self.X, V, self.floor)
        if self.cfg.loss.family is LossFamily.LTS:
            self.H = _loss.update_h_subsets(self.X, V, self.sigmas, self.cfg.loss.h_fraction)

    def objective(self, V):
        return _loss.objective(self.X, V, self.sigmas, self.cfg.loss, self.cfg.penalty, self.H, surrogate=True)

    def gradient(self, V, rows=None):
        return _loss.objective_gradient(self.X, V, self.sigmas, self.cfg.loss, self.cfg.penalty, self.H, rows)


def fit(X, cfg=FitConfig(), V0=None):
    """Fit sparse cellwise robust principal components.

    Parameters
    ----------
    X : array-like, (n, p)
        Data matrix, observations in rows.
    cfg : FitConfig
    V0 : ndarray, optional
        Starting loadings; by default computed by :func:`initialize`.

    Returns
    -------
    FitResult
        If the optimizer hit ``max_iters`` the result is still returned and
        ``result.trace.reason == "max_iters"``.

    Raises
    ------
    scramble.stiefel.DivergenceError
        If the objective becomes non-finite.
    """
    X = _as_matrix(X)
    n = X.shape[0]
    if n <= cfg.k:
        raise ValueError(f"need more observations than components (n={n}, k={cfg.k})")
    cfg.penalty.vector(cfg.k)
    Xc, offsets = center_data(X, cfg.center)
    if V0 is None:
        V0 = initialize(Xc, cfg)

    state = _State(Xc, cfg)
    opt = cfg.optimizer
    if opt.batch_size is None or opt.batch_size >= n and not opt.shuffle:
        V, trace = minimize(state.objective, state.gradient, V0, opt, hooks=[state.refresh])
    else:
        opt = replace(opt, batch_size=min(opt.batch_size, n))
        V, trace = minibatch_minimize(state.objective, state.gradient, V0, n, opt, hooks=[state.refresh])

    ortho = orthonormality_error(V)
    t_bar = threshold_value(trace.rel_change, cfg.threshold_window) if cfg.thresholding else 0.0
    V_hat = np.where(np.abs(V) > t_bar, V, 0.0)

    order, signs = _canonical_order(V_hat, Xc)
    V_hat = V_hat[:, order] * signs[order]
    V = V[:, order] * signs[order]
    Z = Xc @ V_hat
    eig = np.array([qn_scale(Z[:, c]) ** 2 for c in range(cfg.k)])

    return FitResult(
        loadings=V_hat,
        scores=Z,
        eigenvalues=eig,
        residual_scales=estimate_residual_scales(Xc, V, state.floor),
        center_offsets=offsets,
        threshold=t_bar,
        orthonormality_residual=ortho,
        raw_loadings=V,
        trace=trace,
        config=cfg,
    )


def transform(result, Xnew):
    """Scores of new observations: ``(Xnew - center_offsets) @ loadings``."""
    Xnew = np.asarray(Xnew, dtype=float)
    if Xnew.ndim == 1:
        Xnew = Xnew.reshape(1, -1)
    p = result.loadings.shape[0]
    if Xnew.shape[1] != p:
        raise ValueError(f"expected {p} columns, got {Xnew.shape[1]}")
    return (Xnew - result.center_offsets) @ result.loadings


def reconstruct(result, scores):
    """Map scores back to data space: ``scores @ loadings' + center_offsets``."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2 or scores.shape[1] != result.k:
        raise ValueError(f"expected scores with {result.k} columns, got shape {scores.shape}")
    return scores @ result.loadings.T + result.center_offsets
