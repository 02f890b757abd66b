"""Per-eigenvector statistics that measure how compatible negating each axis is.

A score near zero says the projected sample looks symmetric about the origin
along that eigenvector, so the axis is a good candidate for a -1 eigenvalue of
the symmetry. Sorting ascending turns 2**d candidate sign patterns into d
nested ones.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import DesignMatrix
from .errors import (
    DistinctEigenvalueError,
    InsufficientClassDataError,
    InvalidArgumentError,
    NoScorableCoordinatesError,
)
from .spectral import SpectralModel

FLOOR_RATIO = 1e-12
FISHER_CLAMP = 1 - 1e-12


@dataclass(frozen=True)
class Projections:
    values: np.ndarray  # N x d, column i is the sample projected on eigenvector i
    eigenvalues: np.ndarray

    @property
    def rows(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class RankingReport:
    statistic: str
    scores: np.ndarray
    order: np.ndarray  # eigenvector indices, most symmetry-compatible first

    def to_csv(self, path, eigenvalues) -> None:
        position = np.empty_like(self.order)
        position[self.order] = np.arange(len(self.order))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "eigenvalue", "score", "rank"])
            for i, s in enumerate(self.scores):
                w.writerow([i, repr(float(eigenvalues[i])), repr(float(s)), int(position[i])])


@dataclass(frozen=True)
class LabeledSimilarity:
    matrix: np.ndarray  # (d+1) x (d+1), last row/column is the auxiliary point
    aux_index: int


def project(x, model: SpectralModel) -> Projections:
    x = np.asarray(getattr(x, "values", x), dtype=float)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise InvalidArgumentError(f"expected N x {model.dim} data, got {x.shape}")
    # raw origin, no centering: the tests are about symmetry through zero
    return Projections(x @ model.eigenvectors, model.eigenvalues)


def scorable(eigenvalues) -> np.ndarray:
    lam = np.asarray(eigenvalues, dtype=float)
    mask = lam > FLOOR_RATIO * max(float(lam.max()), 0.0)
    if not mask.any():
        raise NoScorableCoordinatesError("every eigenvalue is below the variance floor")
    return mask


def _normalised(raw, eigenvalues) -> np.ndarray:
    mask = scorable(eigenvalues)
    out = np.full(len(mask), np.inf)
    out[mask] = np.abs(raw[mask]) / np.sqrt(np.asarray(eigenvalues)[mask])
    return out


def stat_mean(proj: Projections) -> np.ndarray:
    return _normalised(proj.values.mean(axis=0), proj.eigenvalues)


def stat_median(proj: Projections) -> np.ndarray:
    return _normalised(np.median(proj.values, axis=0), proj.eigenvalues)


def stat_mm_mix(proj: Projections) -> np.ndarray:
    return (stat_mean(proj) + stat_median(proj)) / 2


def stat_sign(proj: Projections) -> np.ndarray:
    """|#positive - #negative| / sqrt(N); exact zeros count for neither side."""
    y = proj.values
    return np.abs((y > 0).sum(axis=0) - (y < 0).sum(axis=0)) / np.sqrt(y.shape[0])


def _abs_pair_sum(a: np.ndarray, b: np.ndarray) -> float:
    """sum_{i,j} |a_i - b_j| in O((n + m) log m)."""
    b = np.sort(b)
    prefix = np.concatenate([[0.0], np.cumsum(b)])
    cnt = np.searchsorted(b, a, side="right")
    below = a * cnt - prefix[cnt]
    above = (prefix[-1] - prefix[cnt]) - a * (len(b) - cnt)
    return float(np.sum(below + above))


def distance_skewness(y) -> tuple[float, bool]:
    """Sample distance skewness about zero over distinct pairs, floored at 0.

    Returns ``(value, degenerate)``; degenerate means every pairwise sum is zero.
    """
    y = np.sort(np.asarray(y, dtype=float))
    n = len(y)
    diff = float(np.sum(y * (2 * np.arange(n) - (n - 1))))
    total = (_abs_pair_sum(y, -y) - 2 * np.abs(y).sum()) / 2
    if total <= 0:
        return 0.0, True
    return max(0.0, 1.0 - diff / total), False


def stat_skew(proj: Projections, kind: str = "moment", return_flags: bool = False):
    """Skewness-type scores: ``moment``, ``nonparametric`` or ``distance``."""
    y = proj.values
    if y.shape[0] < 3:
        raise InvalidArgumentError("skewness scores need N >= 3")
    d = y.shape[1]
    flags = np.zeros(d, dtype=bool)
    if kind == "moment":
        c = y - y.mean(axis=0)
        m2 = (c**2).mean(axis=0)
        m3 = (c**3).mean(axis=0)
        flags = m2 <= 0
        scores = np.zeros(d)
        ok = ~flags
        scores[ok] = np.abs(m3[ok]) / m2[ok] ** 1.5
    elif kind == "nonparametric":
        scores = _normalised(y.mean(axis=0) - np.median(y, axis=0), proj.eigenvalues)
    elif kind == "distance":
        scores = np.empty(d)
        for i in range(d):
            scores[i], flags[i] = distance_skewness(y[:, i])
    else:
        raise InvalidArgumentError(f"unknown skewness kind {kind!r}")
    return (scores, flags) if return_flags else scores


def _safe_corr(z: np.ndarray) -> np.ndarray:
    c = z - z.mean(axis=0)
    sd = np.sqrt((c**2).sum(axis=0))
    ok = sd > 0
    corr = np.zeros((z.shape[1], z.shape[1]))
    cc = c[:, ok] / sd[ok]
    corr[np.ix_(ok, ok)] = cc.T @ cc
    return np.clip(corr, -1.0, 1.0)


def stat_cov_adjusted(x, model: SpectralModel, sqrt_n: bool = False) -> np.ndarray:
    """Mean score whose denominator also carries the eigenvector-estimation error.

    ``s_k = |mu_k| / (sqrt(lam_k) + sum_{i!=k} (|mu_i| - |mu_k|)_+ / |lam_i - lam_k| * C_ik)``
    with ``C_ik`` the correlation of squared centred projections, clamped to
    [0, 1]. ``sqrt_n`` divides the correction by sqrt(N).
    """
    x = np.asarray(getattr(x, "values", x), dtype=float)
    lam = model.eigenvalues
    mask = scorable(lam)
    v = model.eigenvectors
    mu = np.abs(x.mean(axis=0) @ v)
    centred = (x - x.mean(axis=0)) @ v
    corr = np.clip(_safe_corr(centred**2), 0.0, 1.0)
    floor = FLOOR_RATIO * lam.max()
    idx = np.flatnonzero(mask)
    gaps = np.abs(lam[idx, None] - lam[None, idx])
    np.fill_diagonal(gaps, np.inf)
    if np.any(gaps <= floor):
        raise DistinctEigenvalueError("covariance-adjusted score needs distinct eigenvalues")
    excess = np.maximum(mu[idx, None] - mu[None, idx], 0.0)  # [i, k]
    sub = corr[np.ix_(idx, idx)]
    np.fill_diagonal(sub, 0.0)
    correction = (excess / gaps * sub).sum(axis=0)
    if sqrt_n:
        correction = correction / np.sqrt(x.shape[0])
    out = np.full(len(lam), np.inf)
    out[idx] = mu[idx] / (np.sqrt(lam[idx]) + correction)
    return out


def rank(scores, statistic: str = "") -> RankingReport:
    s = np.asarray(scores, dtype=float)
    key = np.where(np.isnan(s), np.inf, s)
    return RankingReport(statistic, s, np.argsort(key, kind="stable"))


# name -> f(x, model) -> scores
STATISTICS = {
    "mean": lambda x, m: stat_mean(project(x, m)),
    "median": lambda x, m: stat_median(project(x, m)),
    "mm-mix": lambda x, m: stat_mm_mix(project(x, m)),
    "sign": lambda x, m: stat_sign(project(x, m)),
    "skew": lambda x, m: stat_skew(project(x, m), "moment"),
    "np-skew": lambda x, m: stat_skew(project(x, m), "nonparametric"),
    "dskew": lambda x, m: stat_skew(project(x, m), "distance"),
    "cov-adj": lambda x, m: stat_cov_adjusted(x, m),
}


def get_statistic(name: str):
    try:
        return STATISTICS[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown statistic {name!r}; choose from {sorted(STATISTICS)}") from None


def _signed_mean(y, lam):
    return y.mean() / np.sqrt(lam)


def _signed_median(y, lam):
    return np.median(y) / np.sqrt(lam)


def _signed_skew(y, lam):
    c = y - y.mean()
    m2 = np.mean(c**2)
    return 0.0 if m2 <= 0 else np.mean(c**3) / m2**1.5


# Signed 1-D versions for interval tests; |signed| equals the ranking score.
SIGNED_STATISTICS = {
    "mean": _signed_mean,
    "median": _signed_median,
    "mm-mix": lambda y, lam: (_signed_mean(y, lam) + _signed_median(y, lam)) / 2,
    "sign": lambda y, lam: ((y > 0).sum() - (y < 0).sum()) / np.sqrt(len(y)),
    "skew": _signed_skew,
    "np-skew": lambda y, lam: (y.mean() - np.median(y)) / np.sqrt(lam),
}


def rank_data(x, model: SpectralModel, statistic: str) -> RankingReport:
    return rank(get_statistic(statistic)(x, model), statistic)


# -- labelled similarity ---------------------------------------------------

def label_similarity(dm: DesignMatrix, model: SpectralModel, use_fisher: bool = False) -> LabeledSimilarity:
    """Average per-class |correlation| between eigen-coordinates plus an auxiliary point.

    The auxiliary point's similarity to eigenvector v is the class-averaged
    normalised absolute mean ``|<mu_c, v>| / sqrt(lam)``; high values mark
    fixed directions.
    """
    if dm.labels is None:
        raise InvalidArgumentError("label similarity needs labels")
    classes = dm.classes()
    if len(classes) < 2:
        raise InvalidArgumentError("label similarity needs at least two classes")
    d = model.dim
    lam = model.eigenvalues
    mask = scorable(lam)
    acc = np.zeros((d, d))
    aux = np.zeros(d)
    for c in classes:
        xc = dm.values[dm.labels == c]
        if len(xc) < 2:
            raise InsufficientClassDataError(f"class {c} has {len(xc)} rows, need at least 2")
        z = xc @ model.eigenvectors
        p = np.abs(_safe_corr(z))
        if use_fisher:
            p = np.arctanh(np.minimum(p, FISHER_CLAMP))
        acc += p
        aux[mask] += np.abs(z.mean(axis=0)[mask]) / np.sqrt(lam[mask])
    acc /= len(classes)
    aux /= len(classes)
    sim = np.ones((d + 1, d + 1))
    sim[:d, :d] = acc
    sim[d, :d] = sim[:d, d] = aux
    np.fill_diagonal(sim, 1.0)
    return LabeledSimilarity(sim, d)


def _normalised_dissimilarity(sim: LabeledSimilarity) -> np.ndarray:
    s = np.array(sim.matrix, dtype=float)
    a = sim.aux_index
    others = np.array([i for i in range(len(s)) if i != a])
    block = s[np.ix_(others, others)]
    off = block[~np.eye(len(others), dtype=bool)]
    scale = off.max() if off.size and off.max() > 0 else 1.0
    s[np.ix_(others, others)] = block / scale
    aux_scale = s[a, others].max() if s[a, others].max() > 0 else 1.0
    s[a, others] = s[others, a] = s[a, others] / aux_scale
    np.fill_diagonal(s, 1.0)
    return 1.0 - s


def dissimilarity_select(sim: LabeledSimilarity, max_select: int | None = None) -> np.ndarray:
    """Single-step splinter clustering seeded by the auxiliary point.

    Repeatedly move into the auxiliary cluster the eigenvector with the largest
    ``d_avg(v, swap cluster) - d_avg(v, aux cluster)`` while that margin is
    positive. Returns the indices predicted FIXED.
    """
    dis = _normalised_dissimilarity(sim)
    a = sim.aux_index
    aux = [a]
    rest = [i for i in range(len(dis)) if i != a]
    limit = len(rest) if max_select is None else max_select
    chosen = []
    while len(chosen) < limit and len(rest) > 1:
        margins = []
        for i in rest:
            to_rest = np.mean([dis[i, j] for j in rest if j != i])
            to_aux = np.mean(dis[i, aux])
            margins.append(to_rest - to_aux)
        best = int(np.argmax(margins))
        if margins[best] <= 0:
            break
        i = rest.pop(best)
        aux.append(i)
        chosen.append(i)
    return np.array(sorted(chosen), dtype=int)
