"""Simulation settings, contamination models and recovery metrics.

Two settings with a planted sparse two-component structure:

* ``LowDim``: p = 10, n = 50, blocks of 4 + 4 correlated variables.
* ``HighDim``: p = 500, n = 100, blocks of 20 + 20.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .core import FitConfig, Init, center_data, fit, leading_right_singular_vectors
from .loss import LossFamily, LossSpec, PenaltySpec


class Setting(str, Enum):
    LOW_DIM = "lowdim"
    HIGH_DIM = "highdim"


class Contamination(str, Enum):
    NONE = "none"
    CASEWISE = "casewise"
    CELLWISE = "cellwise"


_DIMS = {
    # p, n, block size, off-diagonal correlations, scales of (block1, block2, rest)
    Setting.LOW_DIM: (10, 50, 4),
    Setting.HIGH_DIM: (500, 100, 20),
}
_BLOCK_CORR = (0.9, 0.7)
_BLOCK_VAR = (100.0, 25.0, 4.0)

GAMMA_CELL_DEFAULT = 30.0


@dataclass(frozen=True)
class SimScenario:
    setting: Setting = Setting.LOW_DIM
    contamination: Contamination = Contamination.NONE
    epsilon: float = 0.0
    seed: int = 0
    gamma_cell: float = GAMMA_CELL_DEFAULT

    def __post_init__(self):
        object.__setattr__(self, "setting", Setting(self.setting))
        object.__setattr__(self, "contamination", Contamination(self.contamination))
        if not 0 <= self.epsilon <= 0.5:
            raise ValueError("epsilon must lie in [0, 0.5]")
        if self.gamma_cell <= 0:
            raise ValueError("gamma_cell must be positive")

    @property
    def p(self):
        return _DIMS[self.setting][0]

    @property
    def n(self):
        return _DIMS[self.setting][1]

    @property
    def name(self):
        return f"{self.setting.value}-{self.contamination.value}"


def build_sigma(setting):
    """Covariance ``C^(1/2) A C^(1/2)`` of the clean data."""
    p, _, m = _DIMS[Setting(setting)]
    A = np.eye(p)
    for b, rho in enumerate(_BLOCK_CORR):
        blk = slice(b * m, (b + 1) * m)
        A[blk, blk] = rho
        A[range(b * m, (b + 1) * m), range(b * m, (b + 1) * m)] = 1.0
    c = np.full(p, _BLOCK_VAR[2])
    c[:m] = _BLOCK_VAR[0]
    c[m:2 * m] = _BLOCK_VAR[1]
    s = np.sqrt(c)
    return s[:, None] * A * s[None, :]


def true_loadings(setting):
    """Planted loadings: equal weights on the first and on the second block."""
    p, _, m = _DIMS[Setting(setting)]
    V = np.zeros((p, 2))
    V[:m, 0] = 1.0 / np.sqrt(m)
    V[m:2 * m, 1] = 1.0 / np.sqrt(m)
    return V


def generate_clean(scenario):
    """``n`` draws from ``N(0, Sigma)`` via the Cholesky factor."""
    L = np.linalg.cholesky(build_sigma(scenario.setting))
    rng = np.random.default_rng(scenario.seed)
    return rng.standard_normal((scenario.n, scenario.p)) @ L.T


def outlier_mean(p):
    head = np.array([2.0, 4.0, 2.0, 4.0, 0.0, -1.0])
    tail = np.resize([1.0, 0.0, 1.0, -1.0], max(p - head.size, 0))
    return np.concatenate([head, tail])[:p]


def contaminate_casewise(X, epsilon, seed):
    """Replace ``floor(epsilon n)`` random rows by draws from ``N(mu_out, I)``."""
    X = np.array(X, dtype=float)
    n, p = X.shape
    rng = np.random.default_rng(seed)
    m = int(np.floor(epsilon * n + 1e-9))
    mask = np.zeros(n, dtype=bool)
    if m == 0:
        return X, mask
    rows = np.sort(rng.choice(n, size=m, replace=False))
    X[rows] = outlier_mean(p) + rng.standard_normal((m, p))
    mask[rows] = True
    return X, mask


def contaminate_cellwise(X, epsilon, sigma, gamma_cell=GAMMA_CELL_DEFAULT, seed=0):
    """Structured cellwise outliers.

    ``floor(epsilon n p)`` cells are drawn uniformly without replacement. In
    each affected row the cells are overwritten with the eigenvector ``w``
    of ``Sigma[S, S]`` with smallest eigenvalue, scaled to Mahalanobis length
    ``gamma_cell * sqrt(|S|)``.
    """
    X = np.array(X, dtype=float)
    n, p = X.shape
    sigma = np.asarray(sigma, dtype=float)
    rng = np.random.default_rng(seed)
    m = int(np.floor(epsilon * n * p + 1e-9))
    mask = np.zeros((n, p), dtype=bool)
    if m == 0:
        return X, mask
    flat = rng.choice(n * p, size=m, replace=False)
    mask.flat[flat] = True
    for i in np.nonzero(mask.any(axis=1))[0]:
        S = np.nonzero(mask[i])[0]
        evals, evecs = np.linalg.eigh(sigma[np.ix_(S, S)])
        w = evecs[:, 0]
        X[i, S] = gamma_cell * np.sqrt(S.size * evals[0]) * w
    return X, mask


def _orth(V):
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    return linalg.orth(V) if np.any(V) else np.zeros((V.shape[0], 0))


def principal_angle(V, V_hat):
    """Largest principal angle between two subspaces, scaled to [0, 1].

    Both arguments are orthonormalized first. The lower-dimensional basis is
    projected off the higher-dimensional subspace, so the angle is 0 exactly
    when one span contains the other.
    """
    A, B = _orth(V), _orth(V_hat)
    if A.shape[1] == 0 or B.shape[1] == 0:
        return 1.0
    if A.shape[1] > B.shape[1]:
        A, B = B, A
    resid = A - B @ (B.T @ A)
    s = np.linalg.norm(resid, 2)
    return float(np.arcsin(min(s, 1.0)) / (np.pi / 2))


class SparsityRates(NamedTuple):
    tpr: float
    tnr: float
    undefined: tuple = ()  # names of rates reported as 1 because of an empty denominator


def sparsity_rates(V_true, V_hat):
    """Fractions of correctly recovered nonzero / zero loading entries."""
    V_true = np.asarray(V_true)
    V_hat = np.asarray(V_hat)
    if V_true.shape != V_hat.shape:
        raise ValueError(f"shape mismatch: {V_true.shape} vs {V_hat.shape}")
    nz, hz = V_true != 0, V_hat != 0
    undefined = []
    if nz.sum():
        tpr = float(np.sum(nz & hz) / nz.sum())
    else:
        tpr, undefined = 1.0, undefined + ["tpr"]
    if (~nz).sum():
        tnr = float(np.sum(~nz & ~hz) / (~nz).sum())
    else:
        tnr, undefined = 1.0, undefined + ["tnr"]
    return SparsityRates(tpr, tnr, tuple(undefined))


@dataclass(frozen=True)
class Method:
    """A competitor in a study: ``kind`` is ``"svd"`` or ``"scramble"``.

    For SCRAMBLE the sparsity parameter is either fixed (``lam``) or tuned
    per replicate by ``tune`` (a ``BayesOptConfig`` or a list of grid values).
    """

    name: str
    kind: str = "scramble"
    loss: LossFamily = LossFamily.HUBER
    init: Init = Init.WRAP
    lam: float = 0.0
    alpha: float = 0.0
    tune: object = None
    tune_alpha: float | None = None
    fit_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("svd", "scramble"):
            raise ValueError(f"unknown method kind {self.kind!r}")
        object.__setattr__(self, "loss", LossFamily(self.loss))
        object.__setattr__(self, "init", Init(self.init))

    def fit_config(self, k=2):
        return FitConfig(
            k=k,
            loss=LossSpec(family=self.loss),
            penalty=PenaltySpec.shared(self.lam, k, self.alpha),
            init=self.init,
            **self.fit_overrides,
        )


SVD = Method("svd", kind="svd", loss=LossFamily.SQUARE)

CSV_COLUMNS = ("scenario", "method", "loss", "init", "epsilon", "replicate",
               "angle", "tpr", "tnr", "seconds", "lambda", "error")


def classical_loadings(X, k):
    """Right-singular vectors of median-centered data."""
    Xc, _ = center_data(X)
    return leading_right_singular_vectors(Xc, k)


def replicate_seeds(master_seed, scenario, replicate):
    """Independent (data, contamination) seeds for one replicate of a scenario."""
    key = [int(master_seed), list(Setting).index(scenario.setting),
           list(Contamination).index(scenario.contamination),
           round(scenario.epsilon * 10_000), int(replicate)]
    data_ss, cont_ss = np.random.SeedSequence(key).spawn(2)
    return int(data_ss.generate_state(1)[0]), int(cont_ss.generate_state(1)[0])


def simulate_data(scenario, cont_seed=None):
    """Clean draw followed by the scenario's contamination.

    Returns the data matrix and the contamination mask (rows or cells).
    """
    X = generate_clean(scenario)
    if cont_seed is None:
        cont_seed = scenario.seed + 1
    if scenario.contamination is Contamination.CASEWISE:
        return contaminate_casewise(X, scenario.epsilon, cont_seed)
    if scenario.contamination is Contamination.CELLWISE:
        return contaminate_cellwise(X, scenario.epsilon, build_sigma(scenario.setting),
                                    scenario.gamma_cell, cont_seed)
    return X, np.zeros(X.shape[0], dtype=bool)


def _fit_method(method, X, k):
    if method.kind == "svd":
        return classical_loadings(X, k), float("nan")
    cfg = method.fit_config(k)
    if method.tune is None:
        return fit(X, cfg).loadings, method.lam
    from .tuning import BayesOptConfig, bayes_opt_tune, grid_tune

    alpha = method.alpha if method.tune_alpha is None else method.tune_alpha
    if isinstance(method.tune, BayesOptConfig):
        outcome = bayes_opt_tune(X, cfg, method.tune, tpo_alpha=alpha)
    else:
        outcome = grid_tune(X, cfg, method.tune, tpo_alpha=alpha)
    lam = np.asarray(outcome.best_lambda, dtype=float)
    if np.all(lam == lam[0]):
        return outcome.result.loadings, float(lam[0])
    # per-component values are kept in one field
    return outcome.result.loadings, ";".join(f"{v:.6g}" for v in lam)


def run_replicate(scenario, methods, replicate, master_seed=0, k=2):
    data_seed, cont_seed = replicate_seeds(master_seed, scenario, replicate)
    X, _ = simulate_data(replace(scenario, seed=data_seed), cont_seed)
    V_true = true_loadings(scenario.setting)
    rows = []
    for method in methods:
        row = {
            "scenario": scenario.name, "method": method.name, "loss": method.loss.value,
            "init": "-" if method.kind == "svd" else method.init.value,
            "epsilon": scenario.epsilon, "replicate": replicate,
            "angle": float("nan"), "tpr": float("nan"), "tnr": float("nan"),
            "seconds": 0.0, "lambda": float("nan"), "error": "",
        }
        t0 = time.perf_counter()
        try:
            V_hat, lam = _fit_method(method, X, k)
            rates = sparsity_rates(V_true, V_hat)
            row.update(angle=principal_angle(V_true, V_hat), tpr=rates.tpr, tnr=rates.tnr, **{"lambda": lam})
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        row["seconds"] = time.perf_counter() - t0
        rows.append(row)
    return rows


def run_study(scenarios, methods, replicates, master_seed=0, jobs=1, k=2):
    """Run every (scenario, method, replicate) combination.

    Returns a list of row dicts (see ``CSV_COLUMNS``) sorted by scenario,
    epsilon, method and replicate. Fit failures are recorded in the
    ``error`` field instead of aborting the study.
    """
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    tasks = [(s, r) for s in scenarios for r in range(replicates)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(lambda t: run_replicate(t[0], methods, t[1], master_seed, k), tasks))
    else:
        chunks = [run_replicate(s, methods, r, master_seed, k) for s, r in tasks]
    order = {m.name: i for i, m in enumerate(methods)}
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: (r["scenario"], r["epsilon"], order[r["method"]], r["replicate"]))
    return rows


def summarize(rows):
    """Mean angle / TPR / TNR per (scenario, epsilon, method)."""
    groups = {}
    for r in rows:
        groups.setdefault((r["scenario"], r["epsilon"], r["method"]), []).append(r)
    out = []
    for (scen, eps, meth), rs in groups.items():
        ok = [r for r in rs if not r["error"]]

        def mean(key):
            return float(np.mean([r[key] for r in ok])) if ok else float("nan")

        out.append({"scenario": scen, "epsilon": eps, "method": meth, "n": len(ok),
                    "failures": len(rs) - len(ok), "angle": mean("angle"),
                    "tpr": mean("tpr"), "tnr": mean("tnr"), "seconds": mean("seconds")})
    return out
