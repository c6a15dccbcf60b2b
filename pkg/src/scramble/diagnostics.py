"""Outlier diagnostics for a fitted model: score/orthogonal distances and cell maps."""

from enum import Enum

import numpy as np
from scipy import stats

MAD_CONSISTENCY = 1.4826


class Flag(str, Enum):
    REGULAR = "Regular"
    GOOD_LEVERAGE = "GoodLeverage"
    ORTHOGONAL_OUTLIER = "OrthogonalOutlier"
    BAD_LEVERAGE = "BadLeverage"


def _centered(result, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != result.loadings.shape[0]:
        raise ValueError(f"expected {result.loadings.shape[0]} columns, got shape {X.shape}")
    return X - result.center_offsets


def score_distances(result, X):
    """Mahalanobis-type distance inside the component space.

    ``SD_i = sqrt(sum_l z_il^2 / a_l)`` with ``a_l`` the robust score variances.
    """
    a = np.asarray(result.eigenvalues, dtype=float)
    if np.any(a <= 0):
        raise ValueError("degenerate component")
    Z = _centered(result, X) @ result.loadings
    return np.sqrt(np.sum(Z**2 / a, axis=1))


def orthogonal_distances(result, X):
    """Euclidean distance of each centered row to the span of the loadings."""
    Xc = _centered(result, X)
    V = result.loadings
    return np.linalg.norm(Xc - (Xc @ V) @ V.T, axis=1)


def cutoffs(result, X, quantile=0.975):
    """Cutoffs for score and orthogonal distances.

    The SD cutoff is the square root of the chi-square quantile with ``k``
    degrees of freedom. For OD, ``OD^(2/3)`` is taken as roughly normal
    (Wilson-Hilferty); its median and scaled MAD give the cutoff
    ``(m + s z_q)^(3/2)``.
    """
    sd_cut = float(np.sqrt(stats.chi2.ppf(quantile, result.k)))
    od = orthogonal_distances(result, X)
    if not np.any(od):
        return sd_cut, 0.0
    t = od ** (2.0 / 3.0)
    m = np.median(t)
    s = MAD_CONSISTENCY * np.median(np.abs(t - m))
    od_cut = float(max(m + s * stats.norm.ppf(quantile), 0.0) ** 1.5)
    return sd_cut, od_cut


def classify(sd, od, sd_cut, od_cut):
    """One flag per observation from the (SD, OD) quadrant."""
    out = []
    for s, o in zip(np.atleast_1d(sd), np.atleast_1d(od)):
        far, off = s > sd_cut, o > od_cut
        if far and off:
            out.append(Flag.BAD_LEVERAGE)
        elif far:
            out.append(Flag.GOOD_LEVERAGE)
        elif off:
            out.append(Flag.ORTHOGONAL_OUTLIER)
        else:
            out.append(Flag.REGULAR)
    return out


def distance_table(result, X, quantile=0.975):
    """Per-observation (sd, od, flag) plus the cutoffs used."""
    sd = score_distances(result, X)
    od = orthogonal_distances(result, X)
    sd_cut, od_cut = cutoffs(result, X, quantile)
    return sd, od, classify(sd, od, sd_cut, od_cut), (sd_cut, od_cut)


def residual_cell_map(result, X):
    """Residuals standardized by the median and MAD pooled over all cells."""
    Xc = _centered(result, X)
    V = result.loadings
    R = Xc - (Xc @ V) @ V.T
    med = np.median(R)
    mad = MAD_CONSISTENCY * np.median(np.abs(R - med))
    if mad == 0:
        raise ValueError("degenerate residuals")
    return (R - med) / mad
