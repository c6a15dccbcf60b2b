"""First-order Riemannian descent on the Stiefel manifold St(p, k).

Each step projects the Euclidean gradient onto the tangent space at the
current point and maps ``V - step * P`` back onto the manifold with the QR
retraction. The optimizer only talks to the problem through callables, so
any objective can be plugged in.
"""

from dataclasses import dataclass, field

import numpy as np


class DivergenceError(FloatingPointError):
    """Raised when the objective becomes non-finite; carries the trace so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class RetractionError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.001
    decay: float = 0.99
    max_iters: int = 1000
    tol: float = 1e-6
    batch_size: int | None = None  # None means full batch
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class ConvergenceTrace:
    objective: list = field(default_factory=list)
    rel_change: list = field(default_factory=list)
    orthonormality: list = field(default_factory=list)
    n_iter: int = 0
    reason: str = ""

    @property
    def converged(self):
        return self.reason == "converged"

    def to_dict(self):
        return {
            "objective": [float(v) for v in self.objective],
            "rel_change": [float(v) for v in self.rel_change],
            "n_iter": int(self.n_iter),
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["objective"]), list(d["rel_change"]), [], int(d["n_iter"]), d["reason"])


def orthonormality_error(V):
    """Max-abs deviation of V'V from the identity."""
    V = np.asarray(V)
    return float(np.max(np.abs(V.T @ V - np.eye(V.shape[1]))))


def tangent_project(V, G):
    """Project a Euclidean gradient onto the tangent space: ``(I - V V') G``."""
    V = np.asarray(V, dtype=float)
    G = np.asarray(G, dtype=float)
    if V.shape != G.shape:
        raise ValueError(f"dimension mismatch: V {V.shape}, G {G.shape}")
    return G - V @ (V.T @ G)


def qr_retract(V, step):
    """Orthogonal factor of ``QR(V + step)`` with a nonnegative R diagonal."""
    V = np.asarray(V, dtype=float)
    step = np.asarray(step, dtype=float)
    if V.shape != step.shape:
        raise ValueError(f"dimension mismatch: V {V.shape}, step {step.shape}")
    if not np.any(step):
        return V.copy()
    Q, R = np.linalg.qr(V + step)
    d = np.diag(R)
    if np.min(np.abs(d)) <= 1e-12 * max(np.max(np.abs(d)), 1.0):
        raise RetractionError("retraction degenerate")
    return Q * np.where(d < 0, -1.0, 1.0)


def step_size(cfg, t):
    return cfg.learning_rate * cfg.decay**t


def _rel_change(V_new, V):
    return float(np.linalg.norm(V_new - V) / np.linalg.norm(V))


def _run(objective_fn, gradient_fn, V0, cfg, hooks, batches):
    V = np.asarray(V0, dtype=float).copy()
    trace = ConvergenceTrace()
    hooks = list(hooks or [])

    def refresh(V):
        for hook in hooks:
            hook(V)

    refresh(V)
    f = objective_fn(V)
    trace.objective.append(f)
    trace.orthonormality.append(orthonormality_error(V))
    if not np.isfinite(f):
        trace.reason = "divergence"
        raise DivergenceError("divergence", trace)

    for t in range(cfg.max_iters):
        rows = batches(t)
        G = gradient_fn(V) if rows is None else gradient_fn(V, rows)
        P = tangent_project(V, G)
        V_new = qr_retract(V, -step_size(cfg, t) * P)
        f_new = objective_fn(V_new)
        trace.rel_change.append(_rel_change(V_new, V))
        trace.n_iter = t + 1
        if not np.isfinite(f_new):
            trace.reason = "divergence"
            raise DivergenceError("divergence", trace)
        done = abs(f_new - f) <= cfg.tol
        V = V_new
        refresh(V)
        f = objective_fn(V)
        trace.objective.append(f)
        trace.orthonormality.append(orthonormality_error(V))
        if done:
            trace.reason = "converged"
            return V, trace
    trace.reason = "max_iters"
    return V, trace


def minimize(objective_fn, gradient_fn, V0, cfg=OptimizerConfig(), hooks=()):
    """Full-batch Riemannian gradient descent.

    Parameters
    ----------
    objective_fn : callable
        ``objective_fn(V) -> float``.
    gradient_fn : callable
        ``gradient_fn(V) -> (p, k) array``, Euclidean gradient.
    V0 : ndarray, (p, k)
        Starting point with orthonormal columns.
    cfg : OptimizerConfig
    hooks : sequence of callables
        Each called as ``hook(V)`` at every iterate before the objective and
        gradient are evaluated there (used to refresh residual scales and
        trimming subsets).

    Returns
    -------
    V : ndarray
        Final iterate.
    trace : ConvergenceTrace
        ``objective[t]`` is the value at iterate t after its hooks ran;
        ``rel_change[t]`` is ``||V_{t+1} - V_t||_F / ||V_t||_F``.
    """
    return _run(objective_fn, gradient_fn, V0, cfg, hooks, lambda t: None)


def minibatch_minimize(objective_fn, gradient_fn, V0, n, cfg=OptimizerConfig(), hooks=()):
    """Stochastic variant: every step uses a row subset of size ``cfg.batch_size``.

    Rows are drawn without replacement within an epoch. ``gradient_fn`` is
    called as ``gradient_fn(V, rows)`` and is expected to rescale by
    ``n / len(rows)``. When a batch spans all rows in their natural order the
    call falls back to ``gradient_fn(V)``, so ``batch_size=n`` with
    ``shuffle=False`` reproduces :func:`minimize` exactly.
    """
    bs = cfg.batch_size or n
    if not 1 <= bs <= n:
        raise ValueError(f"batch_size must lie in [1, {n}]")
    rng = np.random.default_rng(cfg.seed)
    state = {"perm": None, "pos": n}

    def batches(t):
        if state["pos"] + bs > n:
            state["perm"] = rng.permutation(n) if cfg.shuffle else np.arange(n)
            state["pos"] = 0
        rows = state["perm"][state["pos"]:state["pos"] + bs]
        state["pos"] += bs
        if bs == n and not cfg.shuffle:
            return None
        return rows

    return _run(objective_fn, gradient_fn, V0, cfg, hooks, batches)
