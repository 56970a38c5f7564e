"""Latent association mining in binary data (LAMB).

Binary observations are modeled as randomized thresholdings of a latent
continuous vector.  The package estimates the per-sample/per-variable
threshold parameters, measures association through sample latent
correlation with normal-approximation p-values, and searches for
coherent variable sets by iterative FDR-controlled testing.  A
simulation lab generates data from the same model for calibration and
benchmarking against distance-based clustering.
"""

from .dataset import BinaryDataset, ColumnStats
from .threshold import GammaPrior, ThresholdFit
from .latentcorr import StandardizedMatrix, TestStatistic
from .miner import CoherentSetResult, Neighborhood, SearchOutcome
from .simlab import EvalResult, SimulationSpec

__all__ = [
    "BinaryDataset",
    "ColumnStats",
    "ThresholdFit",
    "GammaPrior",
    "StandardizedMatrix",
    "TestStatistic",
    "SearchOutcome",
    "CoherentSetResult",
    "Neighborhood",
    "SimulationSpec",
    "EvalResult",
]

__version__ = "0.1.0"
