"""Recovering an elementary abelian 2-group of symmetries and a generating set.

When several commuting involutions act on the data, restricting to the
half-space where a negated eigenvector projects positively removes every group
element that negates it. Repeating this peels off one generator per level.
All statistics on restricted subsets are taken in the top-level eigenbasis.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyRestrictionError, InconsistentGroupError, InvalidArgumentError
from .ranking import get_statistic
from .selection import clt_threshold
from .spectral import SpectralModel, SymmetryCandidate, compose_symmetry

N_MIN = 200


@dataclass
class GroupModel:
    fixed_sequence: list  # eigenvector indices fixed level by level
    level_unfixed: list  # S_0 ⊇ S_1 ⊇ ... as sorted index lists
    level_sizes: list  # rows available at each level
    minimal: SymmetryCandidate | None  # negates the last non-empty S
    truncated: bool = False
    generators: list = field(default_factory=list)

    @property
    def order_log2(self) -> int:
        return len(self.fixed_sequence)

    def save(self, csv_path, json_path) -> None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.generators:
                d = len(self.generators[0].signs)
                w.writerow([f"s{i}" for i in range(d)])
            for g in self.generators:
                w.writerow([int(s) for s in g.signs])
        meta = {
            "n": self.order_log2,
            "F": [int(i) for i in self.fixed_sequence],
            "levels": [[int(i) for i in s] for s in self.level_unfixed],
            "level_sizes": [int(n) for n in self.level_sizes],
            "truncated": self.truncated,
        }
        with open(json_path, "w") as fh:
            json.dump(meta, fh, indent=2)


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=float)


def halfspace_restrict(x, model: SpectralModel, fixed) -> np.ndarray:
    """Rows with strictly positive projection on every eigenvector in ``fixed``."""
    x = _values(x)
    fixed = list(fixed)
    if len(set(fixed)) != len(fixed):
        raise InvalidArgumentError("restriction indices must be distinct")
    if not fixed:
        return x
    keep = np.all(x @ model.eigenvectors[:, fixed] > 0, axis=1)
    if not keep.any():
        raise EmptyRestrictionError(len(fixed))
    return x[keep]


def unfixed_vectors(x, model: SpectralModel, statistic="mean", threshold: float | None = None) -> np.ndarray:
    """Indices whose score falls below ``threshold`` (CLT cut-off at this sample size by default)."""
    x = _values(x)
    stat = get_statistic(statistic) if isinstance(statistic, str) else statistic
    thr = clt_threshold(len(x)) if threshold is None else threshold
    scores = np.asarray(stat(x, model))
    return np.flatnonzero(scores < thr)


def recover_group(x, model: SpectralModel, statistic="mean", threshold: float | None = None, n_min: int = N_MIN) -> GroupModel:
    x = _values(x)
    top = unfixed_vectors(x, model, statistic, threshold)
    s = top
    fixed: list[int] = []
    levels = [top.tolist()]
    sizes = [len(x)]
    last_nonempty = top
    truncated = False
    while len(s):
        # largest eigenvalue among the unfixed: eigenvalues are descending, so the smallest index
        fixed.append(int(s.min()))
        try:
            sub = halfspace_restrict(x, model, fixed)
        except EmptyRestrictionError:
            truncated = True
            break
        if len(sub) < n_min:
            truncated = True
            sizes.append(len(sub))
            break
        s = np.intersect1d(unfixed_vectors(sub, model, statistic, threshold), top)
        levels.append(s.tolist())
        sizes.append(len(sub))
        if len(s):
            last_nonempty = s
    minimal = None
    if len(last_nonempty):
        signs = np.ones(model.dim)
        signs[last_nonempty] = -1
        minimal = compose_symmetry(model.eigenvectors, signs)
    return GroupModel(fixed, levels, sizes, minimal, truncated)


def generators(x, model: SpectralModel, group: GroupModel, statistic="mean", threshold: float | None = None) -> list:
    """One generator per fixed index: negate what is unfixed once that index is released."""
    if group.truncated:
        raise InvalidArgumentError("generators need a complete (untruncated) recursion")
    x = _values(x)
    top = unfixed_vectors(x, model, statistic, threshold)
    out = []
    for j in range(group.order_log2):
        others = group.fixed_sequence[:j] + group.fixed_sequence[j + 1:]
        sub = halfspace_restrict(x, model, others)
        s = np.intersect1d(unfixed_vectors(sub, model, statistic, threshold), top)
        if not len(s):
            raise InconsistentGroupError(f"generator {j} is the identity; the threshold is likely miscalibrated")
        signs = np.ones(model.dim)
        signs[s] = -1
        out.append(compose_symmetry(model.eigenvectors, signs))
    group.generators = out
    return out


def group_elements(gens) -> np.ndarray:
    """All distinct sign patterns generated by products of the generators."""
    d = len(gens[0].signs) if gens else 0
    patterns = {tuple(np.ones(d))}
    for g in gens:
        patterns |= {tuple(np.asarray(p) * g.signs) for p in patterns}
    return np.array(sorted(patterns))
