"""End-to-end pipelines and experiment runners shared by the CLI and the test suite."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import DesignMatrix, SynthConfig, downsample, flip_augment, gumbel_mixture
from .errors import InvalidArgumentError
from .evaluate import Bucket, EvalRecord, bucket_counts, eigenvector_buckets, ground_truth_error, selection_accuracy
from .finetune import FinetuneConfig, finetune
from .ranking import (
    STATISTICS,
    RankingReport,
    dissimilarity_select,
    label_similarity,
    rank,
    rank_data,
    scorable,
)
from .rng import make_rng
from .selection import (
    KernelSpec,
    SelectionResult,
    select_bootstrap,
    select_full_dataset,
    select_kfold,
    select_known_k,
    select_threshold,
)
from .spectral import SpectralModel, SymmetryCandidate, compose_symmetry, fit_spectral

LABEL_STAT = "label-dissim"
STAT_CHOICES = list(STATISTICS) + [LABEL_STAT]
SELECTION_CHOICES = ["known-k", "clt", "full-mmd", "kfold-mmd", "bootstrap"]


@dataclass
class Discovery:
    model: SpectralModel
    report: RankingReport
    selection: SelectionResult
    candidate: SymmetryCandidate


def make_kernel(bandwidth: float = 3.0, alpha: float | None = None, covariance=None) -> KernelSpec:
    if alpha is None:
        return KernelSpec.spherical(bandwidth)
    return KernelSpec.weighted(bandwidth, alpha, covariance)


def discover(
    x, statistic: str = "mm-mix", selection: str = "known-k", k: int | None = None,
    kernel: KernelSpec | None = None, rng=None, model: SpectralModel | None = None,
    batch: int = 1024, repeats: int = 5, folds: int = 5, bootstrap_m: int = 200, alpha_sig: float = 0.05,
) -> Discovery:
    """Moments, eigenbasis, ranking, selection and composition in one call.

    ``x`` may be an array or a DesignMatrix; the label-based statistic needs labels.
    With that statistic every selection other than known-k uses the splinter
    clustering of the similarity matrix.
    """
    dm = x if isinstance(x, DesignMatrix) else None
    values = np.asarray(getattr(x, "values", x), dtype=float)
    model = model or fit_spectral(values)
    kernel = kernel or KernelSpec.spherical(3.0)
    rng = make_rng(0) if rng is None else rng
    d = model.dim
    if statistic == LABEL_STAT:
        if dm is None or dm.labels is None:
            raise InvalidArgumentError("the label-based statistic needs labelled data")
        sim = label_similarity(dm, model)
        report = rank(sim.matrix[sim.aux_index, :d], statistic)
        if selection != "known-k":
            fixed = dissimilarity_select(sim)
            signs = -np.ones(d)
            signs[fixed] = 1.0
            nan = np.full(d + 1, np.nan)
            sel = SelectionResult(int((signs < 0).sum()), signs, nan, nan.copy(), LABEL_STAT)
            return Discovery(model, report, sel, compose_symmetry(model.eigenvectors, signs))
    else:
        report = rank_data(values, model, statistic)
    if selection == "known-k":
        if k is None:
            raise InvalidArgumentError("known-k selection needs k")
        sel = select_known_k(model, report, k)
    elif selection == "clt":
        sel = select_threshold(values, model, rank_data(values, model, "mean"))
    elif selection == "full-mmd":
        sel = select_full_dataset(values, model, report, kernel, rng, batch=batch, repeats=repeats)
    elif selection == "kfold-mmd":
        sel = select_kfold(values, statistic, kernel, rng, folds=folds, repeats=repeats, batch=batch)
    elif selection == "bootstrap":
        sel = select_bootstrap(values, model, statistic, rng, m=bootstrap_m, alpha_sig=alpha_sig)
    else:
        raise InvalidArgumentError(f"unknown selection {selection!r}")
    return Discovery(model, report, sel, compose_symmetry(model.eigenvectors, sel.signs))


# -- synthetic ---------------------------------------------------------------

def run_synthetic(
    seed: int, d: int = 10, n: int = 10000, clusters: int = 2, swaps: int = 5,
    statistics=("mm-mix",), selection: str = "known-k", exact_pairs: bool = False,
    bandwidth: float = 3.0, alpha: float | None = None, **kw,
) -> list[EvalRecord]:
    """One planted dataset, one record per statistic. Errors are per-entry (Frobenius / d)."""
    dm, planted = gumbel_mixture(SynthConfig(d, n, clusters, seed, swaps, exact_pairs))
    t0 = time.perf_counter()
    model = fit_spectral(dm.values, warn=False)
    kernel = make_kernel(bandwidth, alpha, model.covariance)
    base = time.perf_counter() - t0
    out = []
    for i, stat in enumerate(statistics):
        t0 = time.perf_counter()
        disc = discover(
            dm.values, stat, selection, k=swaps, kernel=kernel, rng=make_rng(seed, 1, i), model=model, **kw
        )
        err = ground_truth_error(disc.candidate.matrix, planted.matrix, per_entry=True)
        out.append(EvalRecord(seed, f"{stat}/{selection}", d, n, err, disc.selection.swap_count, swaps,
                              runtime_s=base + time.perf_counter() - t0))
    return out


def seed_sweep(fn, seeds, workers: int = 1) -> list:
    """Apply ``fn`` to every seed (threads when workers > 1); results in seed order."""
    seeds = list(seeds)
    if workers <= 1:
        results = [fn(s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fn, seeds))
    return [r for _, r in sorted(zip(seeds, results), key=lambda t: t[0])]


def true_signs(basis, transform) -> np.ndarray:
    """Sign of each eigenvector under the true transform, from the Rayleigh quotient."""
    q = np.einsum("ji,jk,ki->i", basis, transform, basis)
    return np.where(q < 0, -1.0, 1.0)


def rotate_in_random_plane(basis, rng, degrees: float) -> tuple[np.ndarray, tuple[int, int]]:
    d = basis.shape[1]
    i, j = (int(t) for t in rng.choice(d, 2, replace=False))
    th = math.radians(degrees)
    r = np.eye(d)
    r[i, i] = r[j, j] = math.cos(th)
    r[i, j], r[j, i] = -math.sin(th), math.sin(th)
    return basis @ r, (i, j)


def finetune_gain(seed: int, d: int = 10, n: int = 50000, clusters: int = 2, swaps: int = 5,
                  degrees: float = 2.0, config: FinetuneConfig | None = None) -> dict:
    """Correct signs, eigenbasis rotated by ``degrees`` in a random eigen-plane, then fine-tune."""
    dm, planted = gumbel_mixture(SynthConfig(d, n, clusters, seed, swaps))
    model = fit_spectral(dm.values, warn=False)
    signs = true_signs(model.eigenvectors, planted.matrix)
    w0, plane = rotate_in_random_plane(model.eigenvectors, make_rng(seed, 1), degrees)
    before = ground_truth_error(compose_symmetry(w0, signs).matrix, planted.matrix, per_entry=True)
    trace = finetune(dm.values, signs, w0, config, make_rng(seed, 2))
    a = (trace.w * signs) @ trace.w.T
    after = ground_truth_error(a, planted.matrix, per_entry=True)
    return {"seed": seed, "plane": plane, "error_before": before, "error_after": after, "trace": trace}


# -- semi-synthetic ----------------------------------------------------------

def nontrivial(model: SpectralModel) -> np.ndarray:
    return np.flatnonzero(scorable(model.eigenvalues))


def semisynth(images: DesignMatrix, to_side: int, statistics=("sign",), seed: int = 0, from_side: int = 28) -> dict:
    """Flip half the (downsampled) images and score how well eigenvectors and rankings line up with the flip."""
    small = downsample(images, from_side, to_side) if to_side != from_side else images
    flipped, planted = flip_augment(small, to_side, make_rng(seed))
    model = fit_spectral(flipped.values, warn=False)
    buckets = eigenvector_buckets(model.eigenvectors, planted.matrix)
    counts = bucket_counts(buckets)
    result = {
        "side": to_side,
        "N": flipped.rows,
        "buckets": counts,
        "covariance_accuracy": 1 - counts[Bucket.ERROR.value] / model.dim,
        "selection_accuracy": {},
        "model": model,
        "planted": planted,
        "data": flipped,
    }
    usable = nontrivial(model)
    for stat in statistics:
        if stat == LABEL_STAT:
            if flipped.labels is None:
                continue
            fixed = set(dissimilarity_select(label_similarity(flipped, model)).tolist())
            pred = [i for i in usable if i not in fixed]
        else:
            scores = np.asarray(STATISTICS[stat](flipped.values, model))
            by_score = usable[np.argsort(scores[usable], kind="stable")]
            pred = by_score[: len(usable) // 2]
        result["selection_accuracy"][stat] = selection_accuracy(buckets, pred)
    return result


def transformed_rows(x, model: SpectralModel, order, swap_counts) -> list:
    """Images mapped through the candidate negating the top-k ranked eigenvectors, for each k."""
    rows = []
    for k in swap_counts:
        signs = np.ones(model.dim)
        signs[np.asarray(order)[:k]] = -1
        rows.append(np.clip(x @ compose_symmetry(model.eigenvectors, signs).matrix.T, 0, 1))
    return rows

