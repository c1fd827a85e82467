"""Phantoms, the channel ablation sweep, reports and the CLI."""

from .ablation import (
    AblationResult,
    MarginalReport,
    ablation_sweep,
    cell_seed,
    marginal_contribution,
    read_results,
)
from .phantom import Phantom, generate_cohort, generate_phantom, sample_ages

__all__ = [
    "AblationResult",
    "MarginalReport",
    "Phantom",
    "ablation_sweep",
    "cell_seed",
    "generate_cohort",
    "generate_phantom",
    "marginal_contribution",
    "read_results",
    "sample_ages",
]
