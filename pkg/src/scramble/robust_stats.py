"""Robust univariate estimators and the robustifying column transforms.

The rank and wrapping transforms are used to build a starting point for the
manifold optimizer that is insensitive to outlying cells.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, stats

QN_CONSTANT = 2.2219

# Small-sample correction factors of the Qn estimator for n = 2..9.
_QN_SMALL_N = {2: 0.399, 3: 0.994, 4: 0.512, 5: 0.844, 6: 0.611, 7: 0.857, 8: 0.669, 9: 0.872}

# Above this size the pairwise differences are not materialized.
_QN_NAIVE_MAX = 3000


def median(xs):
    """Median of a nonempty sample (mean of the middle pair for even length)."""
    xs = np.asarray(xs, dtype=float).ravel()
    if xs.size == 0:
        raise ValueError("empty sample")
    return float(np.median(xs))


def qn_correction(n):
    """Finite-sample correction factor for Qn at sample size ``n``."""
    if n <= 9:
        return _QN_SMALL_N[n]
    if n % 2:
        return n / (n + 1.4)
    return n / (n + 3.8)


def _qn_rank(n):
    h = n // 2 + 1
    return h * (h - 1) // 2


def _kth_pairwise_naive(x, k):
    i, j = np.triu_indices(x.size, 1)
    diffs = np.abs(x[i] - x[j])
    return float(np.partition(diffs, k - 1)[k - 1])


def _count_upto(xs, t):
    """Per-row index bounds so that xs[j] - xs[i] <= t exactly for i < j < bound[i]."""
    n = xs.size
    rows = np.arange(n)
    bound = np.searchsorted(xs, xs + t, side="right")
    bound = np.clip(bound, rows + 1, n)
    # searchsorted on xs + t can disagree with the rounded difference by a few slots
    while True:
        up = bound < n
        up[up] = xs[bound[up]] - xs[rows[up]] <= t
        down = bound - 1 > rows
        down[down] = xs[bound[down] - 1] - xs[rows[down]] > t
        if not up.any() and not down.any():
            return bound
        bound = bound + up - down


def _kth_pairwise_select(x, k):
    """k-th smallest |x_i - x_j| without forming all pairs (exact, O(n log n) per probe)."""
    xs = np.sort(x)
    n = xs.size
    rows = np.arange(n)
    lo, hi = -1.0, float(xs[-1] - xs[0])
    b_lo = rows + 1
    b_hi = _count_upto(xs, hi)
    c_lo = 0
    while True:
        c_hi = int(np.sum(b_hi - rows - 1))
        if c_hi - c_lo <= 4 * n:
            break
        mid = 0.5 * (lo + hi) if lo >= 0 else 0.5 * hi
        if not lo < mid < hi:
            # no double strictly inside (lo, hi]: every candidate equals hi
            return hi
        b_mid = _count_upto(xs, mid)
        c_mid = int(np.sum(b_mid - rows - 1))
        if c_mid >= k:
            hi, b_hi = mid, b_mid
        else:
            lo, b_lo, c_lo = mid, b_mid, c_mid
    # pairs with difference in (lo, hi]
    cand = []
    for i in np.nonzero(b_hi > b_lo)[0]:
        cand.append(xs[b_lo[i]:b_hi[i]] - xs[i])
    cand = np.concatenate(cand)
    return float(np.partition(cand, k - c_lo - 1)[k - c_lo - 1])


def qn_scale(xs, naive_max=_QN_NAIVE_MAX):
    """Rousseeuw-Croux Qn scale estimator.

    The ``k = C(h, 2)``-th smallest pairwise absolute difference with
    ``h = n // 2 + 1``, times the normal consistency constant 2.2219 and a
    finite-sample correction factor.

    Parameters
    ----------
    xs : array-like
        Sample of at least two finite values.
    naive_max : int
        Largest sample size for which all pairwise differences are
        enumerated; larger samples use an exact counting selection.
    """
    x = np.asarray(xs, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ValueError("sample too small")
    k = _qn_rank(n)
    if n <= naive_max:
        kth = _kth_pairwise_naive(x, k)
    else:
        kth = _kth_pairwise_select(x, k)
    return QN_CONSTANT * qn_correction(n) * kth


def column_location_scale(X):
    """Columnwise median and Qn of a data matrix."""
    X = np.asarray(X, dtype=float)
    loc = np.median(X, axis=0)
    scale = np.array([qn_scale(X[:, j]) for j in range(X.shape[1])])
    return loc, scale


def rank_transform(X):
    """Replace each column by its scaled midranks, re-attaching median and Qn.

    ``y_ij = (rank_i(x_ij) - 0.5) / n * c_j + t_j`` with average ranks for ties.
    A constant column maps to its own value.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    loc, scale = column_location_scale(X)
    ranks = stats.rankdata(X, method="average", axis=0)
    return (ranks - 0.5) / n * scale + loc


@dataclass(frozen=True)
class WrapParams:
    b: float = 1.5
    c: float = 4.0
    q1: float = 1.540793
    q2: float = 0.8622731

    def __post_init__(self):
        if not 0 < self.b < self.c:
            raise ValueError("wrap parameters need 0 < b < c")
        if self.q1 <= 0 or self.q2 <= 0:
            raise ValueError("q1 and q2 must be positive")


def psi_wrap(z, params):
    """Wrapping psi-function: identity on [-b, b], tanh taper to zero at |z| = c."""
    z = np.asarray(z, dtype=float)
    a = np.abs(z)
    out = np.where(a <= params.b, z, 0.0)
    mid = (a > params.b) & (a <= params.c)
    out = np.where(mid, params.q1 * np.tanh(params.q2 * (params.c - a)) * np.sign(z), out)
    return out


def _tanh_moments(b, c, q1, q2):
    phi = stats.norm.pdf

    def tail(z):
        return q1 * np.tanh(q2 * (c - z))

    a_in = integrate.quad(lambda z: z * z * phi(z), 0, b, epsabs=1e-14, epsrel=1e-13)[0]
    a_out = integrate.quad(lambda z: tail(z) ** 2 * phi(z), b, c, epsabs=1e-14, epsrel=1e-13)[0]
    b_in = stats.norm.cdf(b) - 0.5
    b_out = integrate.quad(
        lambda z: -q1 * q2 / np.cosh(q2 * (c - z)) ** 2 * phi(z), b, c, epsabs=1e-14, epsrel=1e-13
    )[0]
    return 2 * (a_in + a_out), 2 * (b_in + b_out)


def wrap_residuals(b, c, q1, q2):
    """Residuals of the two equations defining (q1, q2).

    The first is continuity of psi at ``|z| = b``; the second is the
    consistency condition ``q2 = q1 E[psi'] / (2 E[psi^2])`` of the
    hyperbolic tangent estimator under the standard normal.
    """
    A, B = _tanh_moments(b, c, q1, q2)
    return q1 * np.tanh(q2 * (c - b)) - b, q2 - q1 * B / (2 * A)


@lru_cache(maxsize=32)
def solve_wrap_constants(b=1.5, c=4.0):
    """Solve for the tanh-branch constants of the wrapping function."""
    if not 0 < b < c:
        raise ValueError("wrap parameters need 0 < b < c")

    def q1_of(q2):
        return b / np.tanh(q2 * (c - b))

    def g(q2):
        return wrap_residuals(b, c, q1_of(q2), q2)[1]

    grid = np.geomspace(1e-3, 50.0, 200) / (c - b)
    vals = [g(q) for q in grid]
    for lo, hi, glo, ghi in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if np.sign(glo) != np.sign(ghi):
            q2 = optimize.brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
            return WrapParams(b=b, c=c, q1=float(q1_of(q2)), q2=float(q2))
    raise ValueError("wrap constants not solvable")


def wrap_transform(X, params=None):
    """Wrap each column: ``y = psi(z) * c_j + t_j`` with ``z = (x - t_j) / c_j``."""
    if params is None:
        params = solve_wrap_constants(1.5, 4.0)
    X = np.asarray(X, dtype=float)
    loc, scale = column_location_scale(X)
    safe = np.where(scale > 0, scale, 1.0)
    Z = (X - loc) / safe
    Y = psi_wrap(Z, params) * scale + loc
    return np.where(scale > 0, Y, loc)
