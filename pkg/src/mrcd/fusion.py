"""MAP fusion of an HR-PAN/MS image and an LR-HS image.

Minimizes

    1/2 |W_hr^1/2 (Y_hr - L X)|_F^2 + 1/2 |W_lr^1/2 (Y_lr - X B S)|_F^2
        + lam/2 |X - X_bar|_F^2

(W = inverse band variances) by preconditioned conjugate gradient on the
normal equations. The preconditioner is the exact inverse of the normal
operator with ``S S^T`` replaced by ``I / d``; it is diagonal in the
product of a band eigenbasis and the 2-D Fourier basis, so one application
costs two FFTs and two small dense products.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import fft as sfft

from .image import ImageCube
from .operators import (
    SpatialDegradation,
    SpectralResponse,
    apply_spatial,
    spatial_adjoint,
)

log = logging.getLogger(__name__)


class FusionError(RuntimeError):
    pass


def interpolate_prior(y_lr: ImageCube, spatial: SpatialDegradation) -> ImageCube:
    """Default prior mean: normalized B^T S^T interpolation of the LR image.

    Pixels the kernel footprint never reaches fall back to block replication.
    """
    num = spatial_adjoint(spatial, y_lr).data
    ones = ImageCube(np.ones((1, y_lr.pixels)), y_lr.rows, y_lr.cols)
    den = spatial_adjoint(spatial, ones).data[0]
    rep = np.repeat(np.repeat(y_lr.as_3d(), spatial.d_r, axis=1), spatial.d_c, axis=2)
    rep = rep.reshape(y_lr.bands, -1)
    ok = den > 1e-8 * den.max()
    out = np.where(ok[None, :], num / np.where(ok, den, 1.0)[None, :], rep)
    return ImageCube(out, y_lr.rows * spatial.d_r, y_lr.cols * spatial.d_c, y_lr.band_centers)


@dataclass(frozen=True)
class FusionProblem:
    y_hr: ImageCube
    y_lr: ImageCube
    response: SpectralResponse
    spatial: SpatialDegradation
    lambda_hr: Optional[np.ndarray] = None
    lambda_lr: Optional[np.ndarray] = None
    lambda_reg: float = 1e-4
    prior_mean: Optional[ImageCube] = None

    def __post_init__(self):
        L = self.response.matrix
        if self.y_hr.bands != L.shape[0]:
            raise ValueError(f"y_hr has {self.y_hr.bands} bands, response gives {L.shape[0]}")
        if self.y_lr.bands != L.shape[1]:
            raise ValueError(f"y_lr has {self.y_lr.bands} bands, response expects {L.shape[1]}")
        lr_grid = self.spatial.lr_grid(self.y_hr.rows, self.y_hr.cols)
        if lr_grid != (self.y_lr.rows, self.y_lr.cols):
            raise ValueError(f"y_lr grid {(self.y_lr.rows, self.y_lr.cols)} != expected {lr_grid}")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be nonnegative")
        for name, n in (("lambda_hr", self.y_hr.bands), ("lambda_lr", self.y_lr.bands)):
            v = getattr(self, name)
            v = np.ones(n) if v is None else np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()
            if np.any(v <= 0) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be positive")
            object.__setattr__(self, name, v)
        prior = self.prior_mean
        if prior is None:
            prior = interpolate_prior(self.y_lr, self.spatial)
        if prior.shape != self.x_shape:
            raise ValueError(f"prior_mean shape {prior.shape} != {self.x_shape}")
        object.__setattr__(self, "prior_mean", prior)

    @property
    def x_shape(self) -> tuple:
        return (self.y_lr.bands, self.y_hr.rows, self.y_hr.cols)

    def _check(self, X: ImageCube):
        if X.shape != self.x_shape:
            raise ValueError(f"X has shape {X.shape}, expected {self.x_shape}")


@dataclass
class FusionConfig:
    max_iter: int = 500
    tol: float = 1e-6


@dataclass
class FusionResult:
    x_hat: ImageCube
    objective_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _cube(p: FusionProblem, data: np.ndarray) -> ImageCube:
    return ImageCube(data, p.y_hr.rows, p.y_hr.cols)


def objective(p: FusionProblem, X: ImageCube) -> float:
    p._check(X)
    L = p.response.matrix
    r_hr = p.y_hr.data - L @ X.data
    r_lr = p.y_lr.data - apply_spatial(p.spatial, X).data
    with np.errstate(over="ignore", invalid="ignore"):
        # overflow shows up as a non-finite value, which fuse() reports
        val = 0.5 * np.sum(r_hr ** 2 / p.lambda_hr[:, None])
        val += 0.5 * np.sum(r_lr ** 2 / p.lambda_lr[:, None])
        if p.lambda_reg:
            val += 0.5 * p.lambda_reg * np.sum((X.data - p.prior_mean.data) ** 2)
    return float(val)


def objective_gradient(p: FusionProblem, X: ImageCube) -> ImageCube:
    p._check(X)
    L = p.response.matrix
    g = L.T @ ((L @ X.data - p.y_hr.data) / p.lambda_hr[:, None])
    r_lr = (apply_spatial(p.spatial, X).data - p.y_lr.data) / p.lambda_lr[:, None]
    g = g + spatial_adjoint(p.spatial, ImageCube(r_lr, p.y_lr.rows, p.y_lr.cols)).data
    if p.lambda_reg:
        g = g + p.lambda_reg * (X.data - p.prior_mean.data)
    return _cube(p, g)


def _normal_op(p: FusionProblem, C: np.ndarray, V: np.ndarray) -> np.ndarray:
    lo = apply_spatial(p.spatial, _cube(p, V)).data / p.lambda_lr[:, None]
    out = C @ V + spatial_adjoint(p.spatial, ImageCube(lo, p.y_lr.rows, p.y_lr.cols)).data
    return out + p.lambda_reg * V


def _rhs(p: FusionProblem) -> np.ndarray:
    L = p.response.matrix
    b = L.T @ (p.y_hr.data / p.lambda_hr[:, None])
    b = b + spatial_adjoint(
        p.spatial, p.y_lr.with_data(p.y_lr.data / p.lambda_lr[:, None])
    ).data
    return b + p.lambda_reg * p.prior_mean.data


class _Preconditioner:
    def __init__(self, p: FusionProblem, C: np.ndarray):
        rows, cols = p.y_hr.rows, p.y_hr.cols
        self.shape = (p.y_lr.bands, rows, cols)
        self.d = np.sqrt(p.lambda_lr)
        mu, Q = np.linalg.eigh(self.d[:, None] * (C + p.lambda_reg * np.eye(C.shape[0])) * self.d[None, :])
        self.Q = Q
        g = np.abs(p.spatial.transfer(rows, cols)) ** 2 / p.spatial.factor
        denom = mu[:, None, None] + g[None]
        floor = 1e-12 * max(float(denom.max()), 1e-300)
        self.inv = 1.0 / np.maximum(denom, floor)

    def __call__(self, R: np.ndarray) -> np.ndarray:
        b, rows, cols = self.shape
        T = self.Q.T @ (self.d[:, None] * R)
        F = sfft.rfft2(T.reshape(b, rows, cols), axes=(1, 2), workers=-1) * self.inv
        T = sfft.irfft2(F, s=(rows, cols), axes=(1, 2), workers=-1).reshape(b, -1)
        return self.d[:, None] * (self.Q @ T)


def fuse(p: FusionProblem, cfg: Optional[FusionConfig] = None, x0: Optional[ImageCube] = None) -> FusionResult:
    """Estimate the pseudo-latent HR-HS image. Starts from the prior mean by default.

    Stops once the normal-equation residual satisfies |r| <= tol * |b|, with b
    the right-hand side; this is checked on the true residual, not the
    recursively updated one.
    """
    cfg = cfg or FusionConfig()
    L = p.response.matrix
    C = L.T @ (L / p.lambda_hr[:, None])
    precond = _Preconditioner(p, C)
    b = _rhs(p)

    x = (x0 if x0 is not None else p.prior_mean).data.copy()
    r = b - _normal_op(p, C, x)
    stop = cfg.tol * np.linalg.norm(b)
    trace = [objective(p, _cube(p, x))]
    if not np.isfinite(trace[0]):
        raise FusionError("non-finite objective at the starting point")
    if np.linalg.norm(r) <= stop:
        return FusionResult(_cube(p, x), trace, 0, True)

    z = precond(r)
    rz = float(np.vdot(r, z))
    s = z.copy()
    converged = False
    it = 0
    while it < cfg.max_iter:
        it += 1
        As = _normal_op(p, C, s)
        sAs = float(np.vdot(s, As))
        if sAs <= 0:
            break
        alpha = rz / sAs
        x += alpha * s
        if it % 50 == 0:
            r = b - _normal_op(p, C, x)
        else:
            r -= alpha * As
        f = objective(p, _cube(p, x))
        if not np.isfinite(f):
            raise FusionError(f"non-finite objective at iteration {it}")
        trace.append(f)
        if np.linalg.norm(r) <= stop:
            # the recursive residual can drift; confirm with the true gradient
            r = b - _normal_op(p, C, x)
            if np.linalg.norm(r) <= stop:
                converged = True
                break
            z = precond(r)
            rz = float(np.vdot(r, z))
            s = z.copy()
            continue
        z = precond(r)
        rz_new = float(np.vdot(r, z))
        s = z + (rz_new / rz) * s
        rz = rz_new

    log.debug("fuse: %d iterations, converged=%s", it, converged)
    return FusionResult(_cube(p, x), trace, it, converged)
