"""Fusion -> prediction -> decision, plus the worst-case baseline."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .detect import DetectorConfig, change_energy, decision_threshold, threshold_map
from .fusion import FusionConfig, FusionProblem, FusionResult, fuse
from .image import ChangeEnergyMap, ChangeMask, ImageCube
from .operators import DegradationModel, SpatialDegradation, apply_spatial, apply_spectral
from .simulate import degrade_mask


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"{stage} stage failed: {exc}")
        self.stage = stage
        self.__cause__ = exc


@dataclass
class PipelineFusionConfig(FusionConfig):
    """Solver settings plus the data-model weights the pipeline feeds to fusion."""
    lambda_reg: float = 1e-4
    lambda_hr: Optional[np.ndarray] = None
    lambda_lr: Optional[np.ndarray] = None


@dataclass
class CdOutputs:
    d_hr_hat: ChangeMask
    d_lr_hat: ChangeMask
    d_alr_hat: ChangeMask
    v_hr: ChangeEnergyMap
    v_lr: ChangeEnergyMap
    v_alr: ChangeEnergyMap
    x_hat: ImageCube
    fusion: Optional[FusionResult] = field(default=None, repr=False)


def predict(x_hat: ImageCube, model: DegradationModel) -> tuple:
    """Noiseless HR and LR predictions: (L X, X B S)."""
    return apply_spectral(model.response, x_hat), apply_spatial(model.spatial, x_hat)


def block_max(V: ChangeEnergyMap, spatial: SpatialDegradation) -> ChangeEnergyMap:
    """Energy whose threshold at tau equals the block-OR of ``V >= tau``.

    This gives the aLR map a continuous statistic for ROC sweeps.
    """
    mr, mc = spatial.lr_grid(V.rows, V.cols)
    blocks = V.data.reshape(mr, spatial.d_r, mc, spatial.d_c)
    return ChangeEnergyMap(blocks.max(axis=(1, 3)), V.dof)


def fuse_observations(y_hr: ImageCube, y_lr: ImageCube, model: DegradationModel,
                      fusion_cfg: Optional[PipelineFusionConfig] = None) -> FusionResult:
    cfg = fusion_cfg or PipelineFusionConfig()
    try:
        problem = FusionProblem(y_hr, y_lr, model.response, model.spatial,
                                cfg.lambda_hr, cfg.lambda_lr, cfg.lambda_reg)
        return fuse(problem, cfg)
    except Exception as exc:
        raise StageError("fusion", exc) from exc


def decide(y_hr: ImageCube, y_lr: ImageCube, y_hr_hat: ImageCube, y_lr_hat: ImageCube,
           spatial: SpatialDegradation, detector_cfg: DetectorConfig, x_hat: ImageCube,
           fusion: Optional[FusionResult] = None) -> CdOutputs:
    """Run the detector on the HR pair and the LR pair separately."""
    if y_hr.shape != y_hr_hat.shape or y_lr.shape != y_lr_hat.shape:
        raise ValueError("observed and predicted images must share their resolution")
    try:
        v_hr = change_energy(y_hr, y_hr_hat, detector_cfg)
    except Exception as exc:
        raise StageError("HR detection", exc) from exc
    try:
        v_lr = change_energy(y_lr, y_lr_hat, detector_cfg)
    except Exception as exc:
        raise StageError("LR detection", exc) from exc
    d_hr = threshold_map(v_hr, decision_threshold(detector_cfg, v_hr.dof))
    d_lr = threshold_map(v_lr, decision_threshold(detector_cfg, v_lr.dof))
    d_alr = degrade_mask(d_hr, spatial)
    return CdOutputs(d_hr, d_lr, d_alr, v_hr, v_lr, block_max(v_hr, spatial), x_hat, fusion)


def run_cd(y_hr: ImageCube, y_lr: ImageCube, model: DegradationModel,
           fusion_cfg: Optional[PipelineFusionConfig] = None,
           detector_cfg: Optional[DetectorConfig] = None) -> CdOutputs:
    detector_cfg = detector_cfg or DetectorConfig()
    res = fuse_observations(y_hr, y_lr, model, fusion_cfg)
    y_hr_hat, y_lr_hat = predict(res.x_hat, model)
    return decide(y_hr, y_lr, y_hr_hat, y_lr_hat, model.spatial, detector_cfg, res.x_hat, res)


def worst_case_pair(y_hr: ImageCube, y_lr: ImageCube, model: DegradationModel) -> tuple:
    """Both observations brought to low spatial and low spectral resolution."""
    return apply_spatial(model.spatial, y_hr), apply_spectral(model.response, y_lr)


def worst_case_energy(y_hr: ImageCube, y_lr: ImageCube, model: DegradationModel,
                      detector_cfg: DetectorConfig) -> ChangeEnergyMap:
    a, b = worst_case_pair(y_hr, y_lr, model)
    try:
        return change_energy(a, b, detector_cfg)
    except Exception as exc:
        raise StageError("worst-case detection", exc) from exc


def run_worst_case(y_hr: ImageCube, y_lr: ImageCube, model: DegradationModel,
                   detector_cfg: Optional[DetectorConfig] = None) -> ChangeMask:
    detector_cfg = detector_cfg or DetectorConfig()
    V = worst_case_energy(y_hr, y_lr, model, detector_cfg)
    return threshold_map(V, decision_threshold(detector_cfg, V.dof))
