"""Change detection between optical images of different spatial and spectral resolutions.

Pipeline: fuse the HR-PAN/MS and LR-HS observations into a pseudo-latent
HR-HS image, predict both observations from it, and run a same-resolution
detector on each observed/predicted pair.
"""
from .image import ChangeEnergyMap, ChangeMask, ImageCube, read_cube, read_mask, write_cube, write_mask
from .operators import DegradationModel, NoiseModel, SpatialDegradation, SpectralResponse
from .fusion import FusionConfig, FusionProblem, FusionResult, fuse
from .detect import DetectorConfig, MadModel
from .pipeline import CdOutputs, PipelineFusionConfig, run_cd, run_worst_case
from .evaluate import ExperimentManifest, RocCurve, roc, run_experiment

__version__ = "0.1.0"

__all__ = [
    "ChangeEnergyMap", "ChangeMask", "ImageCube", "read_cube", "read_mask", "write_cube", "write_mask",
    "DegradationModel", "NoiseModel", "SpatialDegradation", "SpectralResponse",
    "FusionConfig", "FusionProblem", "FusionResult", "fuse",
    "DetectorConfig", "MadModel",
    "CdOutputs", "PipelineFusionConfig", "run_cd", "run_worst_case",
    "ExperimentManifest", "RocCurve", "roc", "run_experiment",
]
