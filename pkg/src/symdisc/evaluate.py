"""Ground-truth metrics, error histograms and image output."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from enum import Enum

import numpy as np

from .errors import InvalidArgumentError, UndefinedAccuracyError

PLUS_MAX_DEG = 60.0
MINUS_MIN_DEG = 120.0
FALLBACK_CUT = 0.5
VALLEY_RATIO = 0.5  # density dip between the modes, relative to the lower mode, that counts as two modes


def ground_truth_error(a_pred, a_true, per_entry: bool = False) -> float:
    """Frobenius distance between two matrices.

    ``per_entry=True`` divides by d, giving the root-mean-square entry error
    scaled by sqrt(d)/d; this is the scale the experiment tables are reported on.
    """
    a_pred = np.asarray(a_pred, dtype=float)
    a_true = np.asarray(a_true, dtype=float)
    if a_pred.shape != a_true.shape:
        raise InvalidArgumentError(f"shape mismatch {a_pred.shape} vs {a_true.shape}")
    err = float(np.linalg.norm(a_pred - a_true))
    return err / a_pred.shape[0] if per_entry else err


class Bucket(str, Enum):
    PLUS = "PLUS"
    MINUS = "MINUS"
    ERROR = "ERROR"


def eigenvector_angles(v, transform) -> np.ndarray:
    """Angle in degrees between each column v and ``transform @ v``."""
    v = np.asarray(v, dtype=float)
    tv = np.asarray(transform, dtype=float) @ v
    cos = (v * tv).sum(0) / (np.linalg.norm(v, axis=0) * np.linalg.norm(tv, axis=0))
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def eigenvector_buckets(v, transform) -> list:
    """PLUS when a vector is nearly kept by the transform, MINUS when nearly negated."""
    out = []
    for theta in eigenvector_angles(v, transform):
        if theta < PLUS_MAX_DEG:
            out.append(Bucket.PLUS)
        elif theta > MINUS_MIN_DEG:
            out.append(Bucket.MINUS)
        else:
            out.append(Bucket.ERROR)
    return out


def bucket_counts(buckets) -> dict:
    return {b.value: sum(1 for x in buckets if x is b) for b in Bucket}


def selection_accuracy(buckets, predicted_unfixed) -> float:
    """Share of non-ERROR vectors whose predicted role (negated or kept) matches its bucket.

    Indices of ERROR vectors in ``predicted_unfixed`` are ignored.
    """
    pred = set(int(i) for i in predicted_unfixed)
    judged = [i for i, b in enumerate(buckets) if b is not Bucket.ERROR]
    if not judged:
        raise UndefinedAccuracyError("no vector falls in the PLUS or MINUS bucket")
    correct = sum((buckets[i] is Bucket.MINUS) == (i in pred) for i in judged)
    return correct / len(judged)


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    cut: float
    near_global_fraction: float
    bimodal: bool

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def two_means_1d(values, iters: int = 100):
    """Lloyd's algorithm on a line, started from the extremes. Returns (centres, labels)."""
    x = np.asarray(values, dtype=float)
    c = np.array([x.min(), x.max()])
    labels = np.zeros(len(x), dtype=int)
    for it in range(iters):
        new = (np.abs(x - c[1]) < np.abs(x - c[0])).astype(int)
        converged = np.array_equal(new, labels)
        labels = new
        if converged and it:
            break
        for j in (0, 1):
            if np.any(labels == j):
                c[j] = x[labels == j].mean()
    return c, labels


def _smoothed_density(x, at, bandwidth):
    z = (np.asarray(at)[:, None] - x[None, :]) / bandwidth
    return np.exp(-0.5 * z * z).sum(1)


def mode_cut(values) -> tuple[float, bool]:
    """Cut between the low and high error modes, and whether two modes are present.

    Two 1-D means split the values; they count as two modes when a Gaussian
    smoothing of the values (rule-of-thumb bandwidth from the within-cluster
    spread) dips between the centres below VALLEY_RATIO of the lower centre.
    """
    x = np.sort(np.asarray(values, dtype=float))
    if x[0] == x[-1]:
        return math.inf, False
    c, labels = two_means_1d(x)
    lo, hi = x[labels == 0], x[labels == 1]
    if not len(lo) or not len(hi):
        return FALLBACK_CUT, False
    spread = math.sqrt((lo.var() * len(lo) + hi.var() * len(hi)) / len(x))
    if spread > 0:
        bw = 1.06 * spread * len(x) ** -0.2
        peaks = _smoothed_density(x, c, bw)
        valley = _smoothed_density(x, np.linspace(c[0], c[1], 256), bw).min()
        if valley > VALLEY_RATIO * peaks.min():
            return FALLBACK_CUT, False
    # a rounded mean can land past its own cluster's edge, so widen to the edges
    between = x[(x >= min(c[0], lo.max())) & (x <= max(c[1], hi.min()))]
    j = int(np.argmax(np.diff(between)))
    return float((between[j] + between[j + 1]) / 2), True


def error_histogram(errors, bins: int = 20) -> Histogram:
    """Equal-width histogram on [0, max] and the share of runs in the low-error mode.

    With no spread at all every run belongs to the single (lowest) mode.
    """
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise InvalidArgumentError("no errors given")
    if bins < 2:
        raise InvalidArgumentError("bins must be >= 2")
    # below the smallest normal float the range cannot be split into bins
    top = float(e.max()) if e.max() >= np.finfo(float).tiny else 1.0
    counts, edges = np.histogram(e, bins=bins, range=(0.0, top))
    cut, bimodal = mode_cut(e)
    return Histogram(edges, counts, cut, float(np.mean(e < cut)), bimodal)


# -- records -----------------------------------------------------------------

@dataclass
class EvalRecord:
    seed: int
    method: str
    d: int
    N: int
    error: float
    k_pred: int
    k_true: int
    acc: float = float("nan")
    runtime_s: float = 0.0

    def __post_init__(self):
        if not (math.isnan(self.acc) or 0 <= self.acc <= 1):
            raise InvalidArgumentError("accuracy must lie in [0, 1]")


RECORD_FIELDS = [f.name for f in fields(EvalRecord)]


def write_records(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS)
        w.writeheader()
        for r in sorted(records, key=lambda r: (r.seed, r.method)):
            w.writerow(asdict(r))


def summarize(records) -> list[dict]:
    """Mean and standard error of the error per (method, d, N)."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.method, r.d, r.N), []).append(r.error)
    out = []
    for (method, d, n), errs in sorted(groups.items()):
        e = np.asarray(errs)
        se = float(e.std(ddof=1) / math.sqrt(len(e))) if len(e) > 1 else float("nan")
        out.append({"method": method, "d": d, "N": n, "runs": len(e), "mean_error": float(e.mean()), "std_error": se})
    return out


# -- images ------------------------------------------------------------------

def write_pgm(path, image) -> None:
    """Binary greyscale PGM (P5, maxval 255) from values in [0, 1]."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise InvalidArgumentError("image must be 2-D")
    data = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise InvalidArgumentError("not a binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8).reshape(h, w) / 255.0


def image_grid(rows, side: int, pad: int = 1) -> np.ndarray:
    """Tile a list of (n_images, side*side) arrays: one grid row per list entry."""
    rows = [np.asarray(r, dtype=float).reshape(-1, side, side) for r in rows]
    n = max(len(r) for r in rows)
    cell = side + pad
    grid = np.zeros((len(rows) * cell - pad, n * cell - pad))
    for i, r in enumerate(rows):
        for j, img in enumerate(r):
            grid[i * cell:i * cell + side, j * cell:j * cell + side] = img
    return grid
