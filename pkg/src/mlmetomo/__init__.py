"""Maximum-likelihood maximum-entropy state tomography.

Estimates quantum states (and coherence operators of classical beams) from
informationally incomplete and possibly lossy measurement data, together
with measurement models for time-multiplexed photon counting and
Shack-Hartmann wavefront sensing.
"""

__version__ = "0.1.0"

from .engine import EngineConfig, ReconstructionReport, lambda_sweep, reconstruct
from .measurement import Dataset, Pom, probabilities, simulate_counts, validate_pom
from .operators import fidelity, trace_distance, von_neumann_entropy
from .quasiprob import PhaseSpaceGrid, nonclassicality_depth, r_function, wigner

__all__ = [
    "Dataset",
    "EngineConfig",
    "PhaseSpaceGrid",
    "Pom",
    "ReconstructionReport",
    "fidelity",
    "lambda_sweep",
    "nonclassicality_depth",
    "probabilities",
    "r_function",
    "reconstruct",
    "simulate_counts",
    "trace_distance",
    "validate_pom",
    "von_neumann_entropy",
    "wigner",
]
