"""Choosing how many ranked eigenvectors to negate.

Once a ranking fixes the order, the candidates are the d+1 nested sign patterns
``A_k`` (top-k ranked axes negated). They are compared with a Bayesian cut-off
on the mean, with squared-exponential MMD between the sample and its image, or
tested one axis at a time with a bootstrap percentile interval.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InsufficientDataError, InvalidArgumentError
from .ranking import SIGNED_STATISTICS, RankingReport, get_statistic, rank
from .rng import as_rng
from .spectral import SpectralModel, compose_symmetry, fit_spectral, match_eigenpairs


# -- CLT / Bayes cut-off ---------------------------------------------------

def clt_threshold(n: int) -> float:
    """Cut-off on |mean|/sqrt(lam) below which the zero-mean model is preferred.

    Compares N(0, lam/N) against N(0, lam + lam/N) for the sample mean, i.e. a
    N(0, lam) prior on the mean of a fixed axis.
    """
    if n < 1:
        raise InvalidArgumentError("threshold needs N >= 1")
    return math.sqrt((n + 1) * math.log(n + 1)) / n


def clt_model_densities(xbar: float, lam: float, n: int) -> tuple[float, float]:
    """Densities of the observed mean under the unfixed and the fixed model."""
    v0 = lam / n
    v1 = lam + lam / n
    p0 = math.exp(-xbar * xbar / (2 * v0)) / math.sqrt(2 * math.pi * v0)
    p1 = math.exp(-xbar * xbar / (2 * v1)) / math.sqrt(2 * math.pi * v1)
    return p0, p1


# -- kernels and MMD -------------------------------------------------------

@dataclass(frozen=True)
class KernelSpec:
    """Squared-exponential kernel ``exp(-(x-y)^T W (x-y) / 2)``.

    Spherical: ``W = I / h``. Weighted: ``W = ((1-alpha) Sigma + alpha I)^-1 / h``,
    which up-weights low-variance directions.
    """

    kind: str = "spherical"
    bandwidth: float = 3.0
    alpha: float = 1.0
    weight: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise InvalidArgumentError("bandwidth must be positive")
        if self.kind not in ("spherical", "weighted"):
            raise InvalidArgumentError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "weighted":
            if not 0 <= self.alpha <= 1:
                raise InvalidArgumentError("alpha must lie in [0, 1]")
            if self.weight is None:
                raise InvalidArgumentError("weighted kernel needs a weight matrix, use KernelSpec.weighted")

    @classmethod
    def spherical(cls, bandwidth: float = 3.0) -> "KernelSpec":
        return cls("spherical", bandwidth)

    @classmethod
    def weighted(cls, bandwidth: float, alpha: float, covariance) -> "KernelSpec":
        cov = np.asarray(covariance, dtype=float)
        reg = (1 - alpha) * cov + alpha * np.eye(len(cov))
        w = np.linalg.inv(reg) / bandwidth
        return cls("weighted", bandwidth, alpha, (w + w.T) / 2)

    def embed(self, x: np.ndarray) -> np.ndarray:
        """Map rows so that the kernel becomes exp(-||z - z'||^2 / 2)."""
        if self.kind == "spherical":
            return x / math.sqrt(self.bandwidth)
        return x @ np.linalg.cholesky(self.weight)


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ np.ascontiguousarray(b.T))
    return np.maximum(d, 0.0)


def kernel_matrix(a, b, kernel: KernelSpec) -> np.ndarray:
    za, zb = kernel.embed(np.asarray(a, dtype=float)), kernel.embed(np.asarray(b, dtype=float))
    return np.exp(-0.5 * _sq_dists(za, zb))


def mmd2(xa, xb, kernel: KernelSpec, omit_self_pairs: bool = False, biased: bool = False) -> float:
    """Squared MMD between two samples.

    Default is the unbiased U-statistic. With ``omit_self_pairs`` the rows are
    treated as pairs (``xb[n]`` is the image of ``xa[n]``) and the diagonal of
    the cross term is dropped, so a map is not rewarded for sending each point
    close to itself.
    """
    xa = np.asarray(xa, dtype=float)
    xb = np.asarray(xb, dtype=float)
    if xa.ndim != 2 or xb.ndim != 2 or xa.shape[1] != xb.shape[1]:
        raise InvalidArgumentError("samples must be 2-D with equal dimension")
    na, nb = len(xa), len(xb)
    if omit_self_pairs and na != nb:
        raise InvalidArgumentError("self-pair omission needs paired samples of equal size")
    if biased:
        if omit_self_pairs:
            raise InvalidArgumentError("self-pair omission applies to the unbiased estimator only")
        kaa = kernel_matrix(xa, xa, kernel).mean()
        kbb = kernel_matrix(xb, xb, kernel).mean()
        kab = kernel_matrix(xa, xb, kernel).mean()
        return float(kaa + kbb - 2 * kab)
    if na < 2 or nb < 2:
        raise InvalidArgumentError("unbiased MMD needs at least 2 rows per sample")
    kaa = kernel_matrix(xa, xa, kernel)
    kbb = kernel_matrix(xb, xb, kernel)
    kab = kernel_matrix(xa, xb, kernel)
    t_aa = (kaa.sum() - np.trace(kaa)) / (na * (na - 1))
    t_bb = (kbb.sum() - np.trace(kbb)) / (nb * (nb - 1))
    if omit_self_pairs:
        t_ab = (kab.sum() - np.trace(kab)) / (na * (na - 1))
    else:
        t_ab = kab.sum() / (na * nb)
    return float(t_aa + t_bb - 2 * t_ab)


def mmd_batched(xa, xb, kernel: KernelSpec, batch: int, repeats: int, rng, omit_self_pairs: bool = False):
    """Mean and standard error of ``repeats`` MMD estimates on random subsamples of size ``batch``."""
    xa = np.asarray(xa, dtype=float)
    xb = np.asarray(xb, dtype=float)
    if batch < 2:
        raise InvalidArgumentError("batch must be >= 2")
    if batch > min(len(xa), len(xb)):
        raise InvalidArgumentError("batch larger than the smaller sample")
    if repeats < 1:
        raise InvalidArgumentError("repeats must be >= 1")
    rng = as_rng(rng)
    vals = np.empty(repeats)
    full = batch == len(xa) == len(xb)
    for r in range(repeats):
        if full:
            ia = ib = slice(None)
        elif omit_self_pairs:
            ia = ib = rng.choice(len(xa), batch, replace=False)
        else:
            ia = rng.choice(len(xa), batch, replace=False)
            ib = rng.choice(len(xb), batch, replace=False)
        vals[r] = mmd2(xa[ia], xb[ib], kernel, omit_self_pairs=omit_self_pairs)
    se = float(vals.std(ddof=1) / math.sqrt(repeats)) if repeats > 1 else 0.0
    return float(vals.mean()), se


# -- model selection -------------------------------------------------------

@dataclass
class SelectionResult:
    swap_count: int
    signs: np.ndarray
    mean_error: np.ndarray  # index k = number of negated axes, NaN when not scored
    std_error: np.ndarray
    method: str
    details: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "mean_error", "std_error", "selected"])
            for k, (m, s) in enumerate(zip(self.mean_error, self.std_error)):
                w.writerow([k, repr(float(m)), repr(float(s)), int(k == self.swap_count)])


def signs_for(order, k: int, d: int) -> np.ndarray:
    signs = np.ones(d)
    signs[np.asarray(order)[:k]] = -1.0
    return signs


def _nan_curve(d):
    return np.full(d + 1, np.nan)


def select_known_k(model: SpectralModel, report: RankingReport, k: int) -> SelectionResult:
    d = model.dim
    if not 0 <= k <= d:
        raise InvalidArgumentError(f"k must lie in [0, {d}]")
    return SelectionResult(k, signs_for(report.order, k, d), _nan_curve(d), _nan_curve(d), "known-k")


def select_threshold(x, model: SpectralModel, report: RankingReport, threshold: float | None = None) -> SelectionResult:
    """Negate every axis whose score falls below ``threshold`` (CLT cut-off by default)."""
    n = len(np.asarray(getattr(x, "values", x)))
    thr = clt_threshold(n) if threshold is None else threshold
    unfixed = np.flatnonzero(np.asarray(report.scores) < thr)
    signs = np.ones(model.dim)
    signs[unfixed] = -1.0
    return SelectionResult(
        len(unfixed), signs, _nan_curve(model.dim), _nan_curve(model.dim), "clt", {"threshold": thr}
    )


def _candidate_matrices(model: SpectralModel, order):
    d = model.dim
    return [compose_symmetry(model.eigenvectors, signs_for(order, k, d)).matrix for k in range(d + 1)]


def select_full_dataset(
    x, model: SpectralModel, report: RankingReport, kernel: KernelSpec, rng,
    batch: int = 1024, repeats: int = 5,
) -> SelectionResult:
    """Score every nested candidate by MMD(X, X A_k^T) on the whole sample; take the argmin."""
    x = np.asarray(getattr(x, "values", x), dtype=float)
    rng = as_rng(rng)
    d = model.dim
    b = min(batch, len(x))
    means, ses = np.empty(d + 1), np.empty(d + 1)
    for k, (a, r) in enumerate(zip(_candidate_matrices(model, report.order), rng.spawn(d + 1))):
        means[k], ses[k] = mmd_batched(x, x @ a.T, kernel, b, repeats, r, omit_self_pairs=True)
    best = int(np.argmin(means))
    return SelectionResult(best, signs_for(report.order, best, d), means, ses, "full-mmd")


def one_standard_error(means, ses) -> int:
    """Largest k whose mean error is within one standard error of the minimum."""
    means = np.asarray(means)
    best = int(np.argmin(means))
    ok = np.flatnonzero(means <= means[best] + ses[best])
    return int(ok.max())


def select_kfold(
    x, statistic, kernel: KernelSpec, rng, folds: int = 5, repeats: int = 5,
    batch: int = 1024, spectral_fn=None,
) -> SelectionResult:
    """Repeated k-fold MMD scoring with the one-standard-error rule.

    For each fold the eigenbasis and ranking are fitted on the other folds and
    each candidate is scored on the held-out rows.
    """
    x = np.asarray(getattr(x, "values", x), dtype=float)
    if folds < 2:
        raise InvalidArgumentError("folds must be >= 2")
    if len(x) // folds < 2:
        raise InsufficientDataError("every fold needs at least 2 rows")
    spectral_fn = spectral_fn or (lambda z: fit_spectral(z, warn=False))
    stat = get_statistic(statistic) if isinstance(statistic, str) else statistic
    rng = as_rng(rng)
    d = x.shape[1]
    errs = np.empty((repeats * folds, d + 1))
    for r, rep_rng in enumerate(rng.spawn(repeats)):
        parts = np.array_split(rep_rng.permutation(len(x)), folds)
        for f, fold_rng in enumerate(rep_rng.spawn(folds)):
            train = x[np.concatenate([p for i, p in enumerate(parts) if i != f])]
            held = x[parts[f]]
            model = spectral_fn(train)
            order = rank(stat(train, model)).order
            b = min(batch, len(held))
            for k, (a, kr) in enumerate(zip(_candidate_matrices(model, order), fold_rng.spawn(d + 1))):
                errs[r * folds + f, k] = mmd_batched(held, held @ a.T, kernel, b, 1, kr, omit_self_pairs=True)[0]
    means = errs.mean(axis=0)
    ses = errs.std(axis=0, ddof=1) / math.sqrt(len(errs))
    k_star = one_standard_error(means, ses)
    full = spectral_fn(x)
    order = rank(stat(x, full)).order
    return SelectionResult(k_star, signs_for(order, k_star, d), means, ses, "kfold-mmd", {"fits_per_k": len(errs)})


# -- bootstrap -------------------------------------------------------------

class Decision(str, Enum):
    UNFIXED = "UNFIXED"
    FIXED = "FIXED"
    UNMATCHED = "UNMATCHED"


@dataclass
class BootstrapRecord:
    statistics: np.ndarray  # d x m, S_v per original eigenvector
    angles: np.ndarray  # d x m, radians to the matched resample eigenvector
    resamples: int
    alpha_sig: float


@dataclass
class BootstrapResult:
    decisions: list
    intervals: np.ndarray  # d x 2
    median_angle_deg: np.ndarray
    record: BootstrapRecord

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "decision", "interval_lo", "interval_hi", "median_angle_deg"])
            for i, dec in enumerate(self.decisions):
                lo, hi = self.intervals[i]
                w.writerow([i, dec.value, repr(float(lo)), repr(float(hi)), repr(float(self.median_angle_deg[i]))])


def bootstrap_unfixed_test(
    x, statistic: str, m: int, alpha_sig: float, rng, guard_deg: float = 30.0,
    model: SpectralModel | None = None,
) -> BootstrapResult:
    """Percentile-interval test of each eigenvector's symmetry.

    Every resample is re-decomposed; each original eigenvector is matched to its
    closest resample eigenvector and the signed statistic is evaluated on the
    resample projected there. An interval covering 0 means UNFIXED; a median
    matching angle above ``guard_deg`` means the correspondence is unreliable.
    """
    if m < 50:
        raise InvalidArgumentError("bootstrap needs at least 50 resamples")
    if statistic not in SIGNED_STATISTICS:
        raise InvalidArgumentError(f"statistic {statistic!r} has no signed form; use one of {sorted(SIGNED_STATISTICS)}")
    signed = SIGNED_STATISTICS[statistic]
    x = np.asarray(getattr(x, "values", x), dtype=float)
    model = model or fit_spectral(x, warn=False)
    rng = as_rng(rng)
    v = model.eigenvectors
    d, n = model.dim, len(x)
    stats = np.empty((d, m))
    angles = np.empty((d, m))
    for r in range(m):
        xs = x[rng.integers(0, n, n)]
        ms = fit_spectral(xs, warn=False)
        assign, ang = match_eigenpairs(v, ms.eigenvectors)
        angles[:, r] = ang
        for i in range(d):
            vv = ms.eigenvectors[:, assign[i]]
            if vv @ v[:, i] < 0:
                vv = -vv
            stats[i, r] = signed(xs @ vv, max(ms.eigenvalues[assign[i]], np.finfo(float).tiny))
    intervals = np.quantile(stats, [alpha_sig / 2, 1 - alpha_sig / 2], axis=1).T
    med = np.degrees(np.median(angles, axis=1))
    decisions = []
    for i in range(d):
        if med[i] > guard_deg:
            decisions.append(Decision.UNMATCHED)
        elif intervals[i, 0] <= 0 <= intervals[i, 1]:
            decisions.append(Decision.UNFIXED)
        else:
            decisions.append(Decision.FIXED)
    return BootstrapResult(decisions, intervals, med, BootstrapRecord(stats, angles, m, alpha_sig))


def select_bootstrap(x, model: SpectralModel, statistic: str, rng, m: int = 200, alpha_sig: float = 0.05) -> SelectionResult:
    res = bootstrap_unfixed_test(x, statistic, m, alpha_sig, rng, model=model)
    signs = np.array([-1.0 if dec is Decision.UNFIXED else 1.0 for dec in res.decisions])
    return SelectionResult(
        int((signs < 0).sum()), signs, _nan_curve(model.dim), _nan_curve(model.dim), "bootstrap", {"bootstrap": res}
    )
