"""Sample moments, symmetric eigendecomposition and symmetry composition.

Under the working assumptions (orthogonal finite-order symmetry, covariance with
distinct eigenvalues) every linear symmetry has the form ``V diag(signs) V^T``
where ``V`` is the covariance eigenbasis, so all candidates are built here.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data import DesignMatrix
from .errors import (
    DegenerateCovarianceError,
    DistinctEigenvalueWarning,
    InsufficientDataError,
    InvalidArgumentError,
    PreconditionViolatedError,
)

ALL = "all"
GAP_WARN_RATIO = 1e-8


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SpectralModel:
    mean: np.ndarray
    covariance: np.ndarray
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns
    sample_size: int

    def __post_init__(self):
        for name in ("mean", "covariance", "eigenvalues", "eigenvectors"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)


@dataclass(frozen=True)
class SymmetryCandidate:
    signs: np.ndarray
    matrix: np.ndarray
    basis: np.ndarray

    @property
    def negated(self) -> np.ndarray:
        return np.flatnonzero(self.signs < 0)


@dataclass(frozen=True)
class PerturbationBudget:
    eps1: np.ndarray | float  # per-coordinate mean error bounds
    eps2: float  # operator-norm covariance error bound
    delta: float  # half the minimal eigengap


def moments(x, chunk: int = 8192) -> tuple[np.ndarray, np.ndarray]:
    """Mean and unbiased covariance in one streaming pass.

    Chunks are reduced exactly and merged with the pairwise update of Chan et
    al., which stays accurate for large N and large offsets.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientDataError("moments need at least 2 rows")
    n_tot = 0
    mean = np.zeros(x.shape[1])
    m2 = np.zeros((x.shape[1], x.shape[1]))
    for start in range(0, x.shape[0], chunk):
        block = x[start:start + chunk]
        nb = block.shape[0]
        mb = block.mean(axis=0)
        centered = block - mb
        m2b = centered.T @ centered
        delta = mb - mean
        n_new = n_tot + nb
        mean = mean + delta * (nb / n_new)
        m2 = m2 + m2b + np.outer(delta, delta) * (n_tot * nb / n_new)
        n_tot = n_new
    cov = m2 / (n_tot - 1)
    return mean, (cov + cov.T) / 2


def eig_sym(covariance, tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Descending eigenvalues and orthonormal eigenvectors (columns).

    Each eigenvector is oriented so its largest-magnitude entry is positive
    (first such entry on ties).
    """
    c = np.asarray(covariance, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise InvalidArgumentError("matrix must be square")
    scale = max(1.0, float(np.abs(c).max(initial=0.0)))
    if np.abs(c - c.T).max(initial=0.0) > tol * scale:
        raise InvalidArgumentError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh((c + c.T) / 2)
    vals, vecs = vals[::-1], vecs[:, ::-1].copy()
    lead = np.argmax(np.abs(vecs), axis=0)
    flip = vecs[lead, np.arange(vecs.shape[1])] < 0
    vecs[:, flip] *= -1
    return vals, vecs


def eigengap(eigenvalues) -> float:
    """Half the minimum pairwise distance between eigenvalues."""
    lam = np.sort(np.asarray(eigenvalues, dtype=float))
    if lam.size < 2:
        raise InvalidArgumentError("eigengap needs at least two eigenvalues")
    return float(np.diff(lam).min() / 2)


def fit_spectral(x, warn: bool = True) -> SpectralModel:
    x = np.asarray(getattr(x, "values", x), dtype=float)
    mean, cov = moments(x)
    vals, vecs = eig_sym(cov)
    if warn and len(vals) > 1 and eigengap(vals) < GAP_WARN_RATIO * max(vals[0], 0.0):
        warnings.warn(
            f"eigengap {eigengap(vals):.3g} is tiny relative to the top eigenvalue {vals[0]:.3g}",
            DistinctEigenvalueWarning,
            stacklevel=2,
        )
    return SpectralModel(mean, cov, vals, vecs, x.shape[0])


def match_eigenpairs(v_ref, v_other) -> tuple[np.ndarray, np.ndarray]:
    """Greedy sign-insensitive matching of eigenvector columns.

    Reference columns are visited in order (descending eigenvalue) and each takes
    the unused column of ``v_other`` with the largest ``|<v, v'>|``. Returns the
    assignment and the angles (radians) between matched lines.
    """
    v_ref = np.asarray(v_ref, dtype=float)
    v_other = np.asarray(v_other, dtype=float)
    if v_ref.shape != v_other.shape:
        raise InvalidArgumentError(f"basis shapes differ: {v_ref.shape} vs {v_other.shape}")
    overlap = np.abs(v_ref.T @ v_other)
    d = overlap.shape[1]
    free = np.ones(d, dtype=bool)
    assign = np.empty(v_ref.shape[1], dtype=int)
    for i in range(v_ref.shape[1]):
        row = np.where(free, overlap[i], -1.0)
        j = int(np.argmax(row))
        assign[i] = j
        free[j] = False
    cosines = np.clip(overlap[np.arange(len(assign)), assign], 0.0, 1.0)
    return assign, np.arccos(cosines)


def compose_symmetry(basis, signs) -> SymmetryCandidate:
    basis = np.asarray(basis, dtype=float)
    signs = np.asarray(signs, dtype=float)
    if basis.ndim != 2 or basis.shape[0] != basis.shape[1] or signs.shape != (basis.shape[1],):
        raise InvalidArgumentError("basis must be d x d and signs length d")
    if not np.all(np.abs(signs) == 1):
        raise InvalidArgumentError("signs must be +1 or -1")
    matrix = (basis * signs) @ basis.T
    matrix = (matrix + matrix.T) / 2
    return SymmetryCandidate(_frozen(signs), _frozen(matrix), _frozen(basis))


def whiten_by_class(dm: DesignMatrix, reference_class=ALL) -> DesignMatrix:
    """Express all rows in the whitened eigenbasis of one class (or the pooled sample).

    After this change of basis a symmetry that preserves the reference class
    covariance is orthogonal, so the orthogonal pipeline applies to the other
    classes.
    """
    if dm.labels is None:
        raise InvalidArgumentError("whitening by class needs labels")
    if reference_class == ALL:
        ref = dm.values
    else:
        ref = dm.values[dm.labels == reference_class]
        if len(ref) < 2:
            raise DegenerateCovarianceError(f"class {reference_class} has fewer than 2 rows")
    model = fit_spectral(ref, warn=False)
    lam = model.eigenvalues
    if lam[-1] <= 1e-10 or eigengap(lam) <= 0:
        raise DegenerateCovarianceError(
            f"reference covariance is degenerate (min eigenvalue {lam[-1]:.3g}, gap {eigengap(lam):.3g})"
        )
    out = (dm.values - model.mean) @ model.eigenvectors / np.sqrt(lam)
    return DesignMatrix(out, dm.labels)


def g_bound(eps2: float, delta: float) -> float:
    """Eigenvector error bound: ||v_hat - v|| < g(eps2, delta)."""
    r = (eps2 / delta) ** 2
    if r >= 1:
        raise PreconditionViolatedError("need eps2 < delta for an eigenvector correspondence")
    return math.sqrt(2.0 * (1.0 - math.sqrt(1.0 - r)))


def eigenvalue_bound(eps2: float, delta: float) -> float:
    """Bound on |lambda_hat_k - lambda_k| for matched eigenpairs."""
    r = (eps2 / delta) ** 2
    if r >= 1:
        raise PreconditionViolatedError("need eps2 < delta for an eigenvector correspondence")
    return eps2 / math.sqrt(1.0 - r)


def perturbation_bound(budget: PerturbationBudget, mean_norm: float, d: int, k: int | None = None) -> float:
    """Bound on the error of the projected mean ``<mu_hat, v_hat_k>``.

    ``eps1 + sqrt(2) (d + 1) ||mu_hat|| sqrt(1 - sqrt(1 - eps2^2/delta^2))``,
    i.e. ``eps1 + (d + 1) ||mu_hat|| g(eps2, delta)``.
    """
    if budget.eps2 >= budget.delta:
        raise PreconditionViolatedError(
            f"eps2={budget.eps2:.3g} >= delta={budget.delta:.3g}: correspondence not guaranteed"
        )
    eps1 = np.asarray(budget.eps1, dtype=float)
    if eps1.ndim:
        if k is None:
            raise InvalidArgumentError("k is required when eps1 is per-coordinate")
        eps1 = eps1[k]
    return float(eps1) + (d + 1) * mean_norm * g_bound(budget.eps2, budget.delta)


def save_model(path, model: SpectralModel, w=None) -> None:
    extra = {} if w is None else {"finetuned_basis": np.asarray(w, dtype=float)}
    np.savez(
        path,
        mean=model.mean,
        covariance=model.covariance,
        eigenvalues=model.eigenvalues,
        eigenvectors=model.eigenvectors,
        sample_size=np.int64(model.sample_size),
        **extra,
    )


def load_model(path) -> tuple[SpectralModel, np.ndarray | None]:
    with np.load(path) as z:
        model = SpectralModel(z["mean"], z["covariance"], z["eigenvalues"], z["eigenvectors"], int(z["sample_size"]))
        w = z["finetuned_basis"] if "finetuned_basis" in z.files else None
    return model, w
