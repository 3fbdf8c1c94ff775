"""Same-resolution change detectors: CVA, windowed CVA, MAD and IR-MAD."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage, special, stats

from .image import ChangeEnergyMap, ChangeMask, ImageCube

COND_LIMIT = 1e12
RIDGE = 1e-8
MAD_VARIANCE_FLOOR = 1e-12

METHODS = ("cva", "scva", "mad", "irmad")


@dataclass
class DetectorConfig:
    method: str = "cva"
    window: Optional[int] = None
    pfa: Optional[float] = None
    threshold: Optional[float] = None
    irmad_max_iter: int = 30
    irmad_tol: float = 1e-4

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method == "scva":
            if self.window is None:
                self.window = 7
            if self.window < 1 or self.window % 2 == 0:
                raise ValueError(f"scva window must be odd and positive, got {self.window}")
        if self.pfa is not None and self.threshold is not None:
            raise ValueError("set either pfa or threshold, not both")
        if self.pfa is None and self.threshold is None:
            self.pfa = 0.05
        if self.pfa is not None and not 0.0 < self.pfa < 1.0:
            raise ValueError(f"pfa must lie in (0, 1), got {self.pfa}")
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("threshold must be nonnegative")

    @property
    def name(self) -> str:
        return f"scva{self.window}" if self.method == "scva" else self.method

    @classmethod
    def from_name(cls, name: str, **kw) -> "DetectorConfig":
        """``"cva"``, ``"scva7"``, ``"mad"``, ``"irmad"``."""
        name = name.strip().lower()
        if name.startswith("scva"):
            return cls("scva", window=int(name[4:] or 7), **kw)
        return cls(name, **kw)


@dataclass
class MadModel:
    U: np.ndarray
    V: np.ndarray
    rho: np.ndarray
    mad_variances: np.ndarray
    mean1: np.ndarray
    mean2: np.ndarray


def _same_shape(y1: ImageCube, y2: ImageCube):
    if y1.shape != y2.shape:
        raise ValueError(f"images differ in shape: {y1.shape} vs {y2.shape}")


def _regularize(S: np.ndarray, what: str) -> np.ndarray:
    ev = np.linalg.eigvalsh(S)
    if ev[-1] <= 0 or ev[0] <= ev[-1] / COND_LIMIT:
        ridge = RIDGE * max(np.trace(S), np.finfo(float).tiny) / S.shape[0]
        warnings.warn(f"{what} is ill-conditioned; adding ridge {ridge:.3g}", RuntimeWarning, stacklevel=3)
        S = S + ridge * np.eye(S.shape[0])
    return S


def ml_covariance(Y: np.ndarray, weights: Optional[np.ndarray] = None) -> tuple:
    if weights is None:
        mean = Y.mean(axis=1)
        Yc = Y - mean[:, None]
        return mean, Yc @ Yc.T / Y.shape[1]
    w = weights / weights.sum()
    mean = Y @ w
    Yc = Y - mean[:, None]
    return mean, (Yc * w) @ Yc.T


def cva_energy(y1: ImageCube, y2: ImageCube) -> ChangeEnergyMap:
    """Squared Mahalanobis norm of the pixel difference, metric (Sigma1 + Sigma2)^-1."""
    _same_shape(y1, y2)
    _, S1 = ml_covariance(y1.data)
    _, S2 = ml_covariance(y2.data)
    S = _regularize(S1 + S2, "CVA covariance")
    dY = y1.data - y2.data
    cho = np.linalg.cholesky(S)
    Z = np.linalg.solve(cho, dY)
    V = np.maximum(np.sum(Z * Z, axis=0), 0.0)
    return ChangeEnergyMap(V.reshape(y1.rows, y1.cols), y1.bands)


def chi2_threshold(dof: int, pfa: float) -> float:
    """tau with P[chi2_dof > tau] = pfa (inverse regularized upper incomplete gamma)."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    if not 0.0 < pfa < 1.0:
        raise ValueError(f"pfa must lie in (0, 1), got {pfa}")
    return float(2.0 * special.gammainccinv(0.5 * dof, pfa))


def threshold_map(V: ChangeEnergyMap, tau: float) -> ChangeMask:
    if tau < 0:
        raise ValueError("threshold must be nonnegative")
    return ChangeMask((V.data >= tau).astype(np.uint8))


def scva_energy(V: ChangeEnergyMap, window: int) -> ChangeEnergyMap:
    """Mean of V over a window x window neighbourhood, shrunk to in-bounds pixels."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and positive, got {window}")
    if window == 1:
        return ChangeEnergyMap(V.data, V.dof)
    sums = ndimage.uniform_filter(V.data, size=window, mode="constant", cval=0.0)
    counts = ndimage.uniform_filter(np.ones_like(V.data), size=window, mode="constant", cval=0.0)
    return ChangeEnergyMap(np.maximum(sums / counts, 0.0), V.dof)


def _inv_sqrt(S: np.ndarray) -> np.ndarray:
    ev, Q = np.linalg.eigh(S)
    return (Q / np.sqrt(ev)) @ Q.T


def fit_cca(y1: ImageCube, y2: ImageCube, weights: Optional[np.ndarray] = None) -> MadModel:
    """Canonical correlation analysis of the band vectors of two images.

    Rows of ``U``/``V`` are canonical directions ordered by decreasing
    correlation, scaled to unit (weighted) variance on the data.
    """
    _same_shape(y1, y2)
    if y1.bands < 2:
        raise ValueError("MAD/IR-MAD need multi-band images (got a single band)")
    m1, S11 = ml_covariance(y1.data, weights)
    m2, S22 = ml_covariance(y2.data, weights)
    w = None if weights is None else weights / weights.sum()
    Y1c = y1.data - m1[:, None]
    Y2c = y2.data - m2[:, None]
    S12 = (Y1c @ Y2c.T / y1.pixels) if w is None else (Y1c * w) @ Y2c.T
    S11 = _regularize(S11, "CCA covariance of image 1")
    S22 = _regularize(S22, "CCA covariance of image 2")
    W1, W2 = _inv_sqrt(S11), _inv_sqrt(S22)
    P, rho, Rt = np.linalg.svd(W1 @ S12 @ W2)
    rho = np.clip(rho, 0.0, 1.0)
    U = (W1 @ P).T
    V = (W2 @ Rt.T).T
    var = np.maximum(2.0 * (1.0 - rho), MAD_VARIANCE_FLOOR)
    return MadModel(U, V, rho, var, m1, m2)


def mad_variates(y1: ImageCube, y2: ImageCube, model: MadModel) -> np.ndarray:
    return model.U @ (y1.data - model.mean1[:, None]) - model.V @ (y2.data - model.mean2[:, None])


def mad_energy(y1: ImageCube, y2: ImageCube, model: MadModel) -> ChangeEnergyMap:
    _same_shape(y1, y2)
    D = mad_variates(y1, y2, model)
    V = np.sum(D * D / model.mad_variances[:, None], axis=0)
    return ChangeEnergyMap(V.reshape(y1.rows, y1.cols), y1.bands)


def irmad(y1: ImageCube, y2: ImageCube, cfg: Optional[DetectorConfig] = None):
    """Iteratively reweighted MAD.

    Each pass refits the CCA with pixel weights equal to the chi-square
    no-change probability of the previous MAD energy. Returns
    ``(model, energy, weights, iterations)``.
    """
    cfg = cfg or DetectorConfig("irmad")
    model = fit_cca(y1, y2)
    energy = mad_energy(y1, y2, model)
    weights = np.ones(y1.pixels)
    it = 0
    while it < cfg.irmad_max_iter:
        it += 1
        w = stats.chi2.sf(energy.data.reshape(-1), y1.bands)
        if not np.all(np.isfinite(w)) or w.sum() <= 0:
            warnings.warn("IR-MAD weights degenerate; keeping last iterate", RuntimeWarning, stacklevel=2)
            break
        try:
            new = fit_cca(y1, y2, w)
        except np.linalg.LinAlgError:
            warnings.warn("IR-MAD refit failed; keeping last iterate", RuntimeWarning, stacklevel=2)
            break
        if not np.all(np.isfinite(new.rho)):
            warnings.warn("IR-MAD diverged; keeping last iterate", RuntimeWarning, stacklevel=2)
            break
        delta = np.max(np.abs(new.rho - model.rho))
        model, weights = new, w
        energy = mad_energy(y1, y2, model)
        if delta < cfg.irmad_tol:
            break
    return model, energy, weights, it


def change_energy(y1: ImageCube, y2: ImageCube, cfg: DetectorConfig) -> ChangeEnergyMap:
    _same_shape(y1, y2)
    if cfg.method == "cva":
        return cva_energy(y1, y2)
    if cfg.method == "scva":
        return scva_energy(cva_energy(y1, y2), cfg.window)
    if cfg.method == "mad":
        return mad_energy(y1, y2, fit_cca(y1, y2))
    return irmad(y1, y2, cfg)[1]


def decision_threshold(cfg: DetectorConfig, dof: int) -> float:
    if cfg.threshold is not None:
        return float(cfg.threshold)
    return chi2_threshold(dof, cfg.pfa)


def detect(y1: ImageCube, y2: ImageCube, cfg: DetectorConfig) -> tuple:
    """Energy map and its thresholded mask."""
    V = change_energy(y1, y2, cfg)
    return threshold_map(V, decision_threshold(cfg, V.dof)), V
