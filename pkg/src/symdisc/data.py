"""Sample containers, planted-symmetry generators and image-dataset ingestion."""

from __future__ import annotations

import csv
import itertools
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError
from .rng import as_rng, make_rng


@dataclass
class DesignMatrix:
    """An N x d sample with optional integer class labels."""

    values: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise InvalidArgumentError(f"design matrix must be 2-D, got shape {self.values.shape}")
        n, d = self.values.shape
        if n < 2 or d < 1:
            raise InvalidArgumentError(f"need N >= 2 and d >= 1, got N={n}, d={d}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgumentError("design matrix contains non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise InvalidArgumentError(f"labels must have length {n}, got {self.labels.shape}")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def classes(self) -> np.ndarray:
        if self.labels is None:
            raise InvalidArgumentError("design matrix has no labels")
        return np.unique(self.labels)

    def subset(self, rows) -> "DesignMatrix":
        labels = None if self.labels is None else self.labels[rows]
        return DesignMatrix(self.values[rows], labels)


@dataclass
class PlantedSymmetry:
    """A signed permutation matrix with known ground truth.

    ``perm`` and ``signs`` describe the action on row vectors exactly:
    ``x @ matrix.T == x[:, perm] * signs``.
    """

    matrix: np.ndarray
    swapped_pairs: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        nz = m != 0
        if not (np.all(np.isin(m, (-1.0, 0.0, 1.0))) and np.all(nz.sum(0) == 1) and np.all(nz.sum(1) == 1)):
            raise InvalidArgumentError("planted symmetry must be a signed permutation matrix")
        self.matrix = m

    @property
    def perm(self) -> np.ndarray:
        return np.argmax(self.matrix != 0, axis=1)

    @property
    def signs(self) -> np.ndarray:
        return self.matrix[np.arange(len(self.matrix)), self.perm]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Map every row ``x_n`` to ``matrix @ x_n`` without rounding."""
        return x[:, self.perm] * self.signs

    @classmethod
    def from_swaps(cls, dim: int, pairs) -> "PlantedSymmetry":
        m = np.eye(dim)
        pairs = [tuple(int(i) for i in p) for p in pairs]
        used = set()
        for a, b in pairs:
            if a == b or a in used or b in used or max(a, b) >= dim:
                raise InvalidArgumentError(f"invalid or overlapping swap pair {(a, b)}")
            used.update((a, b))
            m[[a, b]] = m[[b, a]]
        return cls(m, pairs)


@dataclass
class SynthConfig:
    dim: int = 10
    samples: int = 10_000
    clusters: int = 2
    seed: int = 0
    planted_swaps: int = 5
    # Pair every draw with its exact image instead of drawing the image half afresh.
    exact_pairs: bool = False

    def validate(self):
        if self.dim < 1 or self.clusters < 1 or self.samples < 2:
            raise InvalidArgumentError("dim, clusters must be >= 1 and samples >= 2")
        if self.samples % (2 * self.clusters):
            raise InvalidArgumentError(
                f"samples ({self.samples}) must be divisible by 2*clusters ({2 * self.clusters})"
            )
        if not 0 <= self.planted_swaps <= self.dim // 2:
            raise InvalidArgumentError(f"planted_swaps must be in [0, {self.dim // 2}]")
        return self


def truncated_normal(rng, low, high, size, loc=0.0, scale=1.0) -> np.ndarray:
    """Normal draws restricted to [low, high] by rejection."""
    if not low < high:
        raise InvalidArgumentError("truncation interval is empty")
    out = np.empty(size)
    filled = 0
    while filled < size:
        z = rng.normal(loc, scale, size=max(2 * (size - filled), 16))
        z = z[(z >= low) & (z <= high)]
        take = min(len(z), size - filled)
        out[filled:filled + take] = z[:take]
        filled += take
    return out


def standard_gumbel(rng, size) -> np.ndarray:
    # open unit interval so both logs stay finite
    u = (rng.integers(0, 2**53, size=size) + 0.5) / 2.0**53
    return -np.log(-np.log(u))


def random_triangular_factors(dim: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Unit lower-triangular L and upper-triangular U with well-separated diagonal.

    The diagonal of U is a random permutation of the prefix sums of ``dim``
    standard-normal draws truncated to [0.4, 2] and divided by 4, so every entry
    exceeds 0.1 and no two entries are within 0.1 of each other.
    """
    if dim < 1:
        raise InvalidArgumentError("dim must be >= 1")
    rng = as_rng(rng)
    lower = np.tril(rng.standard_normal((dim, dim)), -1) + np.eye(dim)
    upper = np.triu(rng.standard_normal((dim, dim)), 1)
    steps = truncated_normal(rng, 0.4, 2.0, dim) / 4.0
    upper[np.diag_indices(dim)] = rng.permutation(np.cumsum(steps))
    return lower, upper


def random_invertible(dim: int, rng) -> np.ndarray:
    lower, upper = random_triangular_factors(dim, rng)
    return lower @ upper


def _component(dim, rng):
    transform = random_invertible(dim, rng)
    shift = truncated_normal(rng, -2.0, 2.0, dim)
    return transform, shift


def _draw(rng, count, transform, shift):
    return standard_gumbel(rng, (count, len(shift))) @ transform.T + shift


def gumbel_mixture(config: SynthConfig) -> tuple[DesignMatrix, PlantedSymmetry]:
    """Mixture of transformed, shifted Gumbel clusters made symmetric under coordinate swaps.

    Each cluster contributes N/(2*clusters) draws plus N/(2*clusters) draws mapped
    through the planted swap matrix (e0<->e1, e2<->e3, ...). The whole sample is
    then divided by its scalar standard deviation.
    """
    config.validate()
    rng = make_rng(config.seed)
    planted = PlantedSymmetry.from_swaps(
        config.dim, [(2 * p, 2 * p + 1) for p in range(config.planted_swaps)]
    )
    per_half = config.samples // (2 * config.clusters)
    parts = []
    for _ in range(config.clusters):
        transform, shift = _component(config.dim, rng)
        base = _draw(rng, per_half, transform, shift)
        image_src = base if config.exact_pairs else _draw(rng, per_half, transform, shift)
        parts += [base, planted.apply(image_src)]
    x = np.vstack(parts)
    x /= x.std()
    return DesignMatrix(x), planted


def orbit_mixture(dim: int, samples: int, clusters: int, generators, seed: int) -> DesignMatrix:
    """Gumbel-mixture sample that is exactly invariant under the group spanned by ``generators``.

    Every base draw is accompanied by its image under each of the 2**n group
    elements, so the sample is a union of complete orbits. Generators must be
    commuting signed permutations (e.g. swaps on disjoint coordinate pairs).
    """
    gens = [g if isinstance(g, PlantedSymmetry) else PlantedSymmetry(g) for g in generators]
    order = 2 ** len(gens)
    if samples % (clusters * order):
        raise InvalidArgumentError(f"samples must be divisible by clusters * {order}")
    rng = make_rng(seed)
    per_orbit = samples // (clusters * order)
    parts = []
    for _ in range(clusters):
        transform, shift = _component(dim, rng)
        base = _draw(rng, per_orbit, transform, shift)
        for mask in itertools.product((0, 1), repeat=len(gens)):
            img = base
            for use, g in zip(mask, gens):
                if use:
                    img = g.apply(img)
            parts.append(img)
    x = np.vstack(parts)
    x /= x.std()
    return DesignMatrix(x)


# -- IDX ---------------------------------------------------------------------

IDX_UBYTE = 0x08


def read_idx_array(path) -> np.ndarray:
    """Raw uint8 array from an IDX file of rank 1 or 3."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError("file too short for IDX magic", offset=len(raw))
    if raw[0] != 0 or raw[1] != 0:
        raise FormatError("bad IDX magic, leading bytes must be zero", offset=0)
    if raw[2] != IDX_UBYTE:
        raise FormatError(f"unsupported IDX element type 0x{raw[2]:02x}", offset=2)
    rank = raw[3]
    if rank not in (1, 3):
        raise FormatError(f"unsupported IDX rank {rank}, expected 1 or 3", offset=3)
    header_end = 4 + 4 * rank
    if len(raw) < header_end:
        raise FormatError("truncated IDX dimension header", offset=len(raw))
    dims = struct.unpack(f">{rank}I", raw[4:header_end])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) < header_end + size:
        raise FormatError(f"truncated IDX payload, expected {size} bytes", offset=len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header_end).reshape(dims)


def idx_write(path, array) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8 or array.ndim not in (1, 3):
        raise InvalidArgumentError("idx_write expects a uint8 array of rank 1 or 3")
    header = bytes([0, 0, IDX_UBYTE, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(array).tobytes())


def idx_read(path, labels_path=None) -> DesignMatrix:
    """Load IDX images as an N x (H*W) matrix scaled to [0, 1]."""
    arr = read_idx_array(path)
    if arr.ndim != 3:
        raise FormatError("image file must have rank 3", offset=3)
    values = arr.reshape(arr.shape[0], -1).astype(float) / 255.0
    labels = None
    if labels_path is not None:
        labels = read_idx_array(labels_path)
        if labels.ndim != 1:
            raise FormatError("label file must have rank 1", offset=3)
        if len(labels) != len(values):
            raise FormatError(f"label count {len(labels)} != image count {len(values)}", offset=4)
    return DesignMatrix(values, labels)


# -- images ------------------------------------------------------------------

def _pool_matrix(from_side: int, to_side: int) -> np.ndarray:
    # fraction of each source pixel falling inside each target cell, rows sum to 1
    edges = np.arange(to_side + 1) * (from_side / to_side)
    src = np.arange(from_side)
    lo = np.maximum(edges[:-1, None], src[None, :])
    hi = np.minimum(edges[1:, None], src[None, :] + 1)
    overlap = np.clip(hi - lo, 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def downsample(dm: DesignMatrix, from_side: int, to_side: int) -> DesignMatrix:
    """Area-weighted block averaging of square images."""
    if dm.dim != from_side * from_side:
        raise InvalidArgumentError(f"d={dm.dim} is not {from_side}^2")
    if not 1 <= to_side <= from_side:
        raise InvalidArgumentError("to_side must lie in [1, from_side]")
    p = _pool_matrix(from_side, to_side)
    imgs = dm.values.reshape(-1, from_side, from_side)
    out = np.einsum("ij,njk,lk->nil", p, imgs, p, optimize=True)
    return DesignMatrix(np.clip(out.reshape(len(out), -1), 0.0, 1.0), dm.labels)


def flip_matrix(side: int) -> PlantedSymmetry:
    """Horizontal mirror acting on row-major flattened side x side images."""
    idx = np.arange(side * side).reshape(side, side)[:, ::-1].ravel()
    m = np.eye(side * side)[idx]
    return PlantedSymmetry(m)


def flip_augment(dm: DesignMatrix, side: int, rng) -> tuple[DesignMatrix, PlantedSymmetry]:
    """Mirror a uniformly random half of the images."""
    if dm.dim != side * side:
        raise InvalidArgumentError(f"d={dm.dim} is not {side}^2")
    rng = as_rng(rng)
    flip = flip_matrix(side)
    chosen = rng.permutation(dm.rows)[: dm.rows // 2]
    values = dm.values.copy()
    values[chosen] = flip.apply(values[chosen])
    return DesignMatrix(values, dm.labels), flip


# -- CSV ---------------------------------------------------------------------

def write_csv(path, dm: DesignMatrix) -> None:
    header = [f"x{j}" for j in range(dm.dim)]
    if dm.labels is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for n, row in enumerate(dm.values):
            cells = [repr(float(v)) for v in row]
            if dm.labels is not None:
                cells.append(str(int(dm.labels[n])))
            w.writerow(cells)


def read_csv(path) -> DesignMatrix:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty CSV file", offset=0) from None
        rows = [r for r in reader if r]
    has_label = header[-1] == "label"
    d = len(header) - has_label
    if header[:d] != [f"x{j}" for j in range(d)]:
        raise FormatError("CSV header must be x0,...,x{d-1}[,label]", offset=0)
    data = np.array(rows, dtype=float) if rows else np.empty((0, len(header)))
    labels = data[:, -1].astype(np.int64) if has_label else None
    return DesignMatrix(data[:, :d], labels)


def write_matrix(path, m: np.ndarray) -> None:
    np.savetxt(path, np.asarray(m, dtype=float), delimiter=",", fmt="%.17g")


def read_matrix(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=","))
