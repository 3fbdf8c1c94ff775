"""Linear degradation operators and the additive Gaussian noise model.

``apply_spectral`` acts on the band axis (left multiplication by the spectral
response), ``apply_blur``/``decimate`` act on the pixel axis (right
multiplication by B and S). Blur is a cyclic 2-D convolution evaluated in the
Fourier domain; decimation keeps the pixel at block offset (0, 0).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import fft as sfft

from .image import ImageCube


@dataclass(frozen=True)
class SpectralResponse:
    matrix: np.ndarray

    def __post_init__(self):
        L = np.array(self.matrix, dtype=np.float64, copy=True)
        L = np.atleast_2d(L)
        if np.any(L < 0) or not np.all(np.isfinite(L)):
            raise ValueError("spectral response must be finite and nonnegative")
        if not np.allclose(L.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise ValueError("spectral response rows must sum to 1")
        L.setflags(write=False)
        object.__setattr__(self, "matrix", L)

    @property
    def out_bands(self) -> int:
        return self.matrix.shape[0]

    @property
    def in_bands(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class SpatialDegradation:
    kernel: np.ndarray
    d_r: int = 1
    d_c: int = 1

    def __post_init__(self):
        k = np.array(self.kernel, dtype=np.float64, copy=True)
        k = np.atleast_2d(k)
        if k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
            raise ValueError(f"blur kernel must be odd-sized and square, got {k.shape}")
        if not np.isclose(k.sum(), 1.0, rtol=0, atol=1e-9):
            raise ValueError("blur kernel must sum to 1")
        if self.d_r < 1 or self.d_c < 1:
            raise ValueError("decimation factors must be positive")
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)

    @property
    def factor(self) -> int:
        return self.d_r * self.d_c

    @property
    def symmetric(self) -> bool:
        return bool(np.array_equal(self.kernel, self.kernel[::-1, ::-1]))

    def lr_grid(self, rows: int, cols: int) -> tuple:
        if rows % self.d_r or cols % self.d_c:
            raise ValueError(
                f"grid {rows}x{cols} is not divisible by factors ({self.d_r}, {self.d_c})"
            )
        return rows // self.d_r, cols // self.d_c

    def transfer(self, rows: int, cols: int) -> np.ndarray:
        """rfft2 of the kernel wrapped onto a ``rows x cols`` torus."""
        k = self.kernel
        if rows < k.shape[0] or cols < k.shape[1]:
            raise ValueError(f"grid {rows}x{cols} smaller than kernel {k.shape}")
        return _transfer(k.tobytes(), k.shape[0], rows, cols)


@lru_cache(maxsize=32)
def _transfer(kbytes: bytes, size: int, rows: int, cols: int) -> np.ndarray:
    k = np.frombuffer(kbytes, dtype=np.float64).reshape(size, size)
    c = size // 2
    psf = np.zeros((rows, cols))
    psf[:size, :size] = k
    psf = np.roll(psf, (-c, -c), axis=(0, 1))
    out = sfft.rfft2(psf)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class NoiseModel:
    lambda_hr: np.ndarray
    lambda_lr: np.ndarray
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda_hr", "lambda_lr"):
            v = np.atleast_1d(np.array(getattr(self, name), dtype=np.float64))
            # zero variance is allowed here and means "noiseless band"
            if np.any(v < 0) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite and nonnegative")
            v.setflags(write=False)
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class DegradationModel:
    response: SpectralResponse
    spatial: SpatialDegradation


def gaussian_kernel(size: int = 5, sigma: float = 1.0) -> np.ndarray:
    if size % 2 == 0 or size < 1:
        raise ValueError("kernel size must be odd and positive")
    r = np.arange(size) - size // 2
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def delta_kernel(size: int = 1) -> np.ndarray:
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


# ---------------------------------------------------------------------------
# spectral


def apply_spectral(L: SpectralResponse, X: ImageCube) -> ImageCube:
    if X.bands != L.in_bands:
        raise ValueError(f"cube has {X.bands} bands, response expects {L.in_bands}")
    return ImageCube(L.matrix @ X.data, X.rows, X.cols)


def make_pan_response(n_bands: int, n_avg: int) -> SpectralResponse:
    if not 1 <= n_avg <= n_bands:
        raise ValueError(f"n_avg must be in [1, {n_bands}], got {n_avg}")
    L = np.zeros((1, n_bands))
    L[0, :n_avg] = 1.0 / n_avg
    return SpectralResponse(L)


def make_ms_response(band_groups: Sequence[Sequence[int]], n_bands: int) -> SpectralResponse:
    """One output band per group, uniform average over the group's band indices."""
    L = np.zeros((len(band_groups), n_bands))
    for i, group in enumerate(band_groups):
        group = list(group)
        if not group:
            raise ValueError(f"band group {i} is empty")
        if min(group) < 0 or max(group) >= n_bands:
            raise ValueError(f"band group {i} has indices outside [0, {n_bands})")
        L[i, group] = 1.0 / len(group)
    return SpectralResponse(L)


# Landsat TM bands 1-4 (blue, green, red, NIR), nm
LANDSAT_EDGES = ((450.0, 520.0), (520.0, 600.0), (630.0, 690.0), (760.0, 900.0))


def landsat_groups(n_bands: int, wavelengths=None, wl_range=(430.0, 860.0),
                   edges=LANDSAT_EDGES) -> list:
    """Band-index groups falling inside each Landsat-like window.

    Without explicit wavelengths the bands are assumed evenly spaced over
    ``wl_range`` (the ROSIS range). Windows that catch no band get the
    nearest band so every output channel is defined.
    """
    if wavelengths is None:
        wavelengths = np.linspace(wl_range[0], wl_range[1], n_bands)
    wl = np.asarray(wavelengths, dtype=float)
    groups = []
    for lo, hi in edges:
        idx = np.flatnonzero((wl >= lo) & (wl < hi))
        if idx.size == 0:
            idx = np.array([int(np.argmin(np.abs(wl - 0.5 * (lo + hi))))])
        groups.append(idx.tolist())
    return groups


# ---------------------------------------------------------------------------
# spatial


def _blur_fft(k: SpatialDegradation, X: ImageCube, conj: bool) -> ImageCube:
    H = k.transfer(X.rows, X.cols)
    if conj:
        H = np.conj(H)
    F = sfft.rfft2(X.as_3d(), axes=(1, 2), workers=-1)
    out = sfft.irfft2(F * H, s=(X.rows, X.cols), axes=(1, 2), workers=-1)
    return ImageCube(out.reshape(X.bands, -1), X.rows, X.cols, X.band_centers)


def apply_blur(k: SpatialDegradation, X: ImageCube) -> ImageCube:
    """Per-band cyclic convolution with the kernel (centered at its middle tap)."""
    return _blur_fft(k, X, conj=False)


def blur_adjoint(k: SpatialDegradation, X: ImageCube) -> ImageCube:
    return _blur_fft(k, X, conj=True)


def decimate(k: SpatialDegradation, X: ImageCube) -> ImageCube:
    mr, mc = k.lr_grid(X.rows, X.cols)
    out = X.as_3d()[:, ::k.d_r, ::k.d_c]
    return ImageCube(out.reshape(X.bands, mr * mc), mr, mc, X.band_centers)


def upsample(k: SpatialDegradation, X_lr: ImageCube) -> ImageCube:
    """Zero-fill adjoint of :func:`decimate`."""
    rows, cols = X_lr.rows * k.d_r, X_lr.cols * k.d_c
    out = np.zeros((X_lr.bands, rows, cols))
    out[:, ::k.d_r, ::k.d_c] = X_lr.as_3d()
    return ImageCube(out.reshape(X_lr.bands, -1), rows, cols, X_lr.band_centers)


def apply_spatial(k: SpatialDegradation, X: ImageCube) -> ImageCube:
    """X -> X B S."""
    return decimate(k, apply_blur(k, X))


def spatial_adjoint(k: SpatialDegradation, Z: ImageCube) -> ImageCube:
    """Z -> Z S^T B^T."""
    return blur_adjoint(k, upsample(k, Z))


# ---------------------------------------------------------------------------
# noise


def add_noise(N: NoiseModel, X: ImageCube, which: str) -> ImageCube:
    """Add band-wise independent Gaussian noise; ``which`` is ``"HR"`` or ``"LR"``.

    HR and LR draws come from distinct streams of the same seed, so either
    observation can be regenerated on its own.
    """
    which = which.upper()
    if which not in ("HR", "LR"):
        raise ValueError("which must be 'HR' or 'LR'")
    var = N.lambda_hr if which == "HR" else N.lambda_lr
    if var.size != X.bands:
        raise ValueError(f"{var.size} variances for a {X.bands}-band cube")
    rng = np.random.default_rng([N.seed, 0 if which == "HR" else 1])
    noise = rng.standard_normal(X.data.shape) * np.sqrt(var)[:, None]
    return X.with_data(X.data + noise)


def variances_from_snr(X: ImageCube, snr_db: Optional[float]) -> np.ndarray:
    """Per-band noise variance giving the requested SNR (mean signal power / variance)."""
    if snr_db is None:
        return np.zeros(X.bands)
    power = np.mean(X.data ** 2, axis=1)
    return power / 10.0 ** (snr_db / 10.0)
