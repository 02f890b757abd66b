"""Discovering involutive orthogonal linear symmetries of a distribution from samples."""

from .data import DesignMatrix, PlantedSymmetry, SynthConfig, gumbel_mixture, idx_read
from .errors import SymdiscError
from .evaluate import ground_truth_error
from .experiments import discover
from .finetune import FinetuneConfig, finetune
from .groups import generators, recover_group
from .ranking import rank_data
from .selection import KernelSpec, clt_threshold, mmd2
from .spectral import compose_symmetry, fit_spectral

__all__ = [
    "DesignMatrix",
    "FinetuneConfig",
    "KernelSpec",
    "PlantedSymmetry",
    "SymdiscError",
    "SynthConfig",
    "clt_threshold",
    "compose_symmetry",
    "discover",
    "finetune",
    "fit_spectral",
    "generators",
    "ground_truth_error",
    "gumbel_mixture",
    "idx_read",
    "mmd2",
    "rank_data",
    "recover_group",
]
