"""Choosing the sparsity parameter by maximizing the tradeoff-product score.

The score of a fit is

    TPO = sum_l Qn^2(X v_l) * (1 - alpha * nnz(v_l) / p)

and is maximized over ``log10(lambda)`` either by Gaussian-process Bayesian
optimization with expected improvement or by an exhaustive grid.
"""

import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import linalg, stats
from scipy.stats import qmc

from .core import fit
from .loss import PenaltySpec
from .robust_stats import qn_scale


class TuningError(RuntimeError):
    """Every candidate fit failed; ``log`` holds the attempts."""

    def __init__(self, message, log):
        super().__init__(message)
        self.log = log


class TpoScore(NamedTuple):
    value: float
    per_component: tuple  # ((qn2_variance, nonzero_fraction), ...)


def tpo_from_parts(per_component, alpha):
    return float(sum(var * (1.0 - alpha * frac) for var, frac in per_component))


def tpo_score(X, result, alpha):
    """Tradeoff-product score of a fitted model on the data it was fitted to."""
    V = result.loadings
    p = V.shape[0]
    Xc = np.asarray(X, dtype=float) - result.center_offsets
    parts = []
    for c in range(V.shape[1]):
        z = Xc @ V[:, c]
        parts.append((qn_scale(z) ** 2, float(np.count_nonzero(V[:, c])) / p))
    parts = tuple(parts)
    return TpoScore(tpo_from_parts(parts, alpha), parts)


@dataclass(frozen=True)
class BayesOptConfig:
    budget: int = 30
    n_init: int = 8
    search_box: tuple = ((-4.0, 1.0),)  # one (lo, hi) per tuned log10(lambda)
    seed: int = 0
    per_component: bool = False
    n_candidates: int = 2001
    noise: float = 1e-6

    def __post_init__(self):
        box = tuple(tuple(float(v) for v in b) for b in np.atleast_2d(self.search_box))
        object.__setattr__(self, "search_box", box)
        if self.n_init < 1 or self.budget < self.n_init:
            raise ValueError("need 1 <= n_init <= budget")
        if any(lo >= hi for lo, hi in box):
            raise ValueError("search box needs lo < hi")


@dataclass
class Evaluation:
    iteration: int
    log10_lambda: np.ndarray
    tpo: float
    k: int
    nonzero_total: int
    seconds: float
    result: object = None
    error: str = ""

    @property
    def lambdas(self):
        return 10.0 ** np.asarray(self.log10_lambda)


@dataclass
class TuneOutcome:
    best_lambda: np.ndarray
    score: TpoScore
    log: list = field(default_factory=list)
    result: object = None


LOG_COLUMNS = ("iteration", "lambda", "tpo", "k", "nonzero_total", "seconds")


def _se_kernel(A, B, length):
    d2 = np.sum((A[:, None, :] - B[None, :, :]) ** 2, axis=-1)
    return np.exp(-0.5 * d2 / length**2)


class _GP:
    """Zero-mean GP on standardized targets with a squared-exponential kernel."""

    def __init__(self, X, y, noise, widths):
        self.X = X
        self.mu, self.sd = float(np.mean(y)), float(np.std(y)) or 1.0
        self.y = (y - self.mu) / self.sd
        self.noise = noise
        scale = float(np.mean(widths))
        grid = scale * np.geomspace(0.02, 2.0, 25)
        self.length = max(grid, key=self._log_marginal)
        self._factor(self.length)

    def _factor(self, length):
        K = _se_kernel(self.X, self.X, length) + (self.noise + 1e-10) * np.eye(len(self.X))
        self.cho = linalg.cho_factor(K, lower=True)
        self.alpha = linalg.cho_solve(self.cho, self.y)

    def _log_marginal(self, length):
        try:
            self._factor(length)
        except linalg.LinAlgError:
            return -np.inf
        logdet = 2.0 * np.sum(np.log(np.diag(self.cho[0])))
        return float(-0.5 * self.y @ self.alpha - 0.5 * logdet)

    def predict(self, Xs):
        Ks = _se_kernel(Xs, self.X, self.length)
        mean = Ks @ self.alpha
        v = linalg.cho_solve(self.cho, Ks.T)
        var = np.clip(1.0 - np.sum(Ks * v.T, axis=1), 1e-12, None)
        return mean * self.sd + self.mu, np.sqrt(var) * self.sd


def expected_improvement(mean, sd, best):
    z = (mean - best) / sd
    return (mean - best) * stats.norm.cdf(z) + sd * stats.norm.pdf(z)


def _candidates(box, n, rng):
    lo, hi = box[:, 0], box[:, 1]
    if len(box) == 1:
        return np.linspace(lo[0], hi[0], n)[:, None]
    m = int(np.ceil(np.log2(max(n, 2))))
    return qmc.scale(qmc.Sobol(len(box), seed=rng).random_base2(m), lo, hi)


def bayes_opt_maximize(f, bo):
    """Maximize ``f`` over ``bo.search_box`` with GP expected improvement.

    ``f`` maps a point (1-d array) to a float or NaN for a failed evaluation.
    Returns the evaluated points and values, in evaluation order.
    """
    box = np.asarray(bo.search_box, dtype=float)
    rng = np.random.default_rng(bo.seed)
    design = qmc.LatinHypercube(d=len(box), seed=rng).random(bo.n_init)
    xs = list(qmc.scale(design, box[:, 0], box[:, 1]))
    ys = [float(f(x)) for x in xs]
    cand = _candidates(box, bo.n_candidates, rng)
    while len(xs) < bo.budget:
        ok = np.isfinite(ys)
        if ok.sum() < 2:
            x_next = cand[rng.integers(len(cand))]
        else:
            gp = _GP(np.asarray(xs)[ok], np.asarray(ys)[ok], bo.noise, box[:, 1] - box[:, 0])
            mean, sd = gp.predict(cand)
            ei = expected_improvement(mean, sd, np.max(np.asarray(ys)[ok]))
            x_next = cand[np.argmax(ei)] if np.max(ei) > 1e-12 else cand[np.argmax(sd)]
        xs.append(np.array(x_next, dtype=float))
        ys.append(float(f(xs[-1])))
    return np.asarray(xs), np.asarray(ys)


def _evaluate(X, template, log10_lam, alpha, iteration):
    lam = 10.0 ** np.atleast_1d(np.asarray(log10_lam, dtype=float))
    k = template.k
    cfg = template.with_lambda(lam[0]) if lam.size == 1 else _per_component(template, lam)
    t0 = time.perf_counter()
    try:
        res = fit(X, cfg)
        score = tpo_score(X, res, alpha)
        ev = Evaluation(iteration, np.atleast_1d(log10_lam), score.value, k,
                        int(np.count_nonzero(res.loadings)), 0.0, res)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        ev = Evaluation(iteration, np.atleast_1d(log10_lam), float("nan"), k, 0, 0.0, None,
                        f"{type(exc).__name__}: {exc}")
    ev.seconds = time.perf_counter() - t0
    return ev


def _per_component(template, lam):
    return replace(template, penalty=PenaltySpec(tuple(lam), template.penalty.alpha))


def _outcome(X, log, alpha):
    ok = [e for e in log if np.isfinite(e.tpo)]
    if not ok:
        raise TuningError("all fits failed during tuning: " + "; ".join(e.error for e in log), log)
    best = max(ok, key=lambda e: e.tpo)
    return TuneOutcome(best.lambdas, tpo_score(X, best.result, alpha), log, best.result)


def bayes_opt_tune(X, template, bo=BayesOptConfig(), tpo_alpha=None):
    """Tune lambda by Bayesian optimization of the TPO score.

    Parameters
    ----------
    X : array-like, (n, p)
    template : FitConfig
        Everything except the sparsity parameter.
    bo : BayesOptConfig
        With ``per_component=True`` one lambda per component is searched and
        the box is repeated to ``k`` dimensions if only one range is given.
    tpo_alpha : float, optional
        Sparsity weight in the score; defaults to the penalty's alpha.
    """
    alpha = template.penalty.alpha if tpo_alpha is None else tpo_alpha
    if bo.per_component and len(bo.search_box) == 1:
        bo = replace(bo, search_box=bo.search_box * template.k)
    log = []

    def f(x):
        log.append(_evaluate(X, template, x, alpha, len(log)))
        return log[-1].tpo

    bayes_opt_maximize(f, bo)
    return _outcome(X, log, alpha)


def grid_tune(X, template, grid, tpo_alpha=None):
    """Exhaustive search over lambda values; ties go to the smallest lambda."""
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    alpha = template.penalty.alpha if tpo_alpha is None else tpo_alpha
    log = [_evaluate(X, template, np.log10(lam) if lam > 0 else -np.inf, alpha, i)
           for i, lam in enumerate(grid)]
    ok = [e for e in log if np.isfinite(e.tpo)]
    if not ok:
        raise TuningError("all fits failed during tuning", log)
    top = max(e.tpo for e in ok)
    best = min((e for e in ok if e.tpo == top), key=lambda e: float(e.lambdas[0]))
    return TuneOutcome(best.lambdas, tpo_score(X, best.result, alpha), log, best.result)


def log_rows(log, timing=True):
    """Evaluation log as CSV-ready rows (see ``LOG_COLUMNS``)."""
    rows = []
    for e in log:
        lam = ";".join(f"{v:.17g}" for v in e.lambdas)
        rows.append([e.iteration, lam, f"{e.tpo:.17g}", e.k, e.nonzero_total,
                     f"{e.seconds:.6f}" if timing else "0"])
    return rows
