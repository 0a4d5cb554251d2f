"""Repetition and distance-2 surface code simulation, decoding and analysis."""

from .circuit import Circuit, CorrelatedChannel, BurstConfig, NoiseModel, preset
from .codes import CodeSpec, build, build_repetition, build_surface2, subsample_maps
from .sampling import BACKEND, enumerate_single_errors, reference_run, sample_shots

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BurstConfig", "Circuit", "CodeSpec", "CorrelatedChannel", "NoiseModel",
    "build", "build_repetition", "build_surface2", "enumerate_single_errors", "preset",
    "reference_run", "sample_shots", "subsample_maps",
]
