"""Simulation of before/after image pairs from a single HR-HS reference.

The reference is unmixed once; changes are made on the abundance matrix
(three rules) and the latent images are re-mixed with the same endmembers.
The observed pair is then produced by the spectral and spatial
degradations, in either temporal order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .image import ChangeMask, ImageCube
from .operators import (
    DegradationModel,
    NoiseModel,
    SpatialDegradation,
    add_noise,
    apply_spatial,
    apply_spectral,
)
from .unmix import UnmixResult, reconstruct, unmix

RULES = ("zero_abundance", "same_abundance", "block_abundance")


@dataclass
class ChangeSpec:
    """Regions are arrays of flat HR pixel indices; later regions overwrite earlier ones."""
    regions: list
    rules: list
    rows: int
    cols: int
    seed: int = 0

    def __post_init__(self):
        if len(self.regions) != len(self.rules):
            raise ValueError("need exactly one rule per region")
        n = self.rows * self.cols
        regions = []
        for i, (reg, rule) in enumerate(zip(self.regions, self.rules)):
            reg = np.unique(np.asarray(reg, dtype=np.int64).ravel())
            if reg.size and (reg.min() < 0 or reg.max() >= n):
                raise ValueError(f"region {i} lies outside the {self.rows}x{self.cols} grid")
            if rule not in RULES:
                raise ValueError(f"unknown change rule {rule!r}")
            regions.append(reg)
        self.regions = regions
        self.rules = list(self.rules)


@dataclass
class SimulatedPair:
    y_hr: ImageCube
    y_lr: ImageCube
    d_hr: ChangeMask
    d_lr: ChangeMask
    x_t1: ImageCube
    x_t2: ImageCube
    config: int
    abundances_t1: Optional[np.ndarray] = field(default=None, repr=False)
    abundances_t2: Optional[np.ndarray] = field(default=None, repr=False)


def rectangle(r0: int, c0: int, h: int, w: int, cols: int) -> np.ndarray:
    rr, cc = np.mgrid[r0:r0 + h, c0:c0 + w]
    return (rr * cols + cc).ravel()


def random_regions(rows: int, cols: int, count: int, side_range=(1, 15), seed: int = 0) -> list:
    """Axis-aligned rectangles with uniform side lengths, placed uniformly in bounds."""
    lo, hi = side_range
    if lo < 1 or hi < lo:
        raise ValueError("side_range must satisfy 1 <= lo <= hi")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        h = int(rng.integers(lo, min(hi, rows) + 1))
        w = int(rng.integers(lo, min(hi, cols) + 1))
        r0 = int(rng.integers(0, rows - h + 1))
        c0 = int(rng.integers(0, cols - w + 1))
        out.append(rectangle(r0, c0, h, w, cols))
    return out


def random_change_spec(rows: int, cols: int, count: int, side_range=(1, 15),
                       rules: Sequence[str] = RULES, seed: int = 0) -> ChangeSpec:
    regions = random_regions(rows, cols, count, side_range, seed)
    rng = np.random.default_rng([seed, 1])
    picked = [rules[int(i)] for i in rng.integers(0, len(rules), size=count)]
    return ChangeSpec(regions, picked, rows, cols, seed)


def apply_change_rule(A: np.ndarray, M: np.ndarray, region, rule: str, seed: int = 0,
                      grid: Optional[tuple] = None, source_offset: Optional[tuple] = None):
    """Return ``(A', M)`` with the rule applied to the abundance columns in ``region``.

    ``grid`` (rows, cols) is needed by ``block_abundance``; ``source_offset``
    pins its copy source instead of drawing one.
    """
    region = np.asarray(region, dtype=np.int64).ravel()
    if region.size == 0:
        raise ValueError("change region is empty")
    A = np.asarray(A, dtype=np.float64)
    K, n = A.shape
    out = A.copy()
    rng = np.random.default_rng(seed)
    if rule == "zero_abundance":
        if K < 2:
            raise ValueError("zero_abundance needs at least two endmembers")
        j = int(np.argmax(A[:, region].sum(axis=1)))
        sub = out[:, region]
        sub[j] = 0.0
        s = sub.sum(axis=0)
        pure = s <= 1e-12
        # pixels made only of the removed endmember: spread over the others
        sub[:, pure] = 1.0 / (K - 1)
        sub[j, pure] = 0.0
        sub[:, ~pure] /= s[~pure]
        out[:, region] = sub
    elif rule == "same_abundance":
        p = int(rng.integers(0, n))
        out[:, region] = A[:, [p]]
    elif rule == "block_abundance":
        if grid is None:
            raise ValueError("block_abundance needs the grid shape")
        rows, cols = grid
        if rows * cols != n:
            raise ValueError("grid does not match the abundance matrix")
        r, c = np.divmod(region, cols)
        if source_offset is None:
            h, w = r.max() - r.min() + 1, c.max() - c.min() + 1
            r_src = int(rng.integers(0, rows - h + 1))
            c_src = int(rng.integers(0, cols - w + 1))
            source_offset = (r_src - r.min(), c_src - c.min())
        dr, dc = source_offset
        rs, cs = r + dr, c + dc
        if rs.min() < 0 or cs.min() < 0 or rs.max() >= rows or cs.max() >= cols:
            raise ValueError("block source falls outside the grid")
        out[:, region] = A[:, rs * cols + cs]
    else:
        raise ValueError(f"unknown change rule {rule!r}")
    return out, M


def build_mask(regions, rows: int, cols: int) -> ChangeMask:
    m = np.zeros(rows * cols, dtype=np.uint8)
    for reg in regions:
        m[np.asarray(reg, dtype=np.int64)] = 1
    return ChangeMask(m.reshape(rows, cols))


def degrade_mask(d_hr: ChangeMask, spatial: SpatialDegradation) -> ChangeMask:
    """LR pixel is a change if any HR pixel of its d_r x d_c block is."""
    mr, mc = spatial.lr_grid(d_hr.rows, d_hr.cols)
    blocks = d_hr.data.reshape(mr, spatial.d_r, mc, spatial.d_c)
    return ChangeMask(blocks.any(axis=(1, 3)).astype(np.uint8))


def apply_changes(A: np.ndarray, M: np.ndarray, spec: ChangeSpec) -> np.ndarray:
    for i, (reg, rule) in enumerate(zip(spec.regions, spec.rules)):
        if reg.size == 0:
            continue
        seed = int(np.random.default_rng([spec.seed, 2, i]).integers(0, 2 ** 63 - 1))
        A, M = apply_change_rule(A, M, reg, rule, seed, (spec.rows, spec.cols))
    return A


def simulate_pair(x_ref: ImageCube, spec: ChangeSpec, model: DegradationModel, config: int,
                  noise: Optional[NoiseModel] = None, unmixed: Optional[UnmixResult] = None,
                  K: Optional[int] = None, unmix_seed: int = 0) -> SimulatedPair:
    """Observed HR/LR pair plus ground truth for one change specification.

    config 1: HR observation from the before-change latent image, LR from
    the after-change one. config 2 swaps them.
    """
    if config not in (1, 2):
        raise ValueError("config must be 1 or 2")
    if (spec.rows, spec.cols) != (x_ref.rows, x_ref.cols):
        raise ValueError("change spec grid does not match the reference image")
    if unmixed is None:
        unmixed = unmix(x_ref, K, unmix_seed)
    M, A1 = unmixed.endmembers, unmixed.abundances
    A2 = apply_changes(A1, M, spec)
    x1 = reconstruct(M, A1, x_ref.rows, x_ref.cols)
    x2 = reconstruct(M, A2, x_ref.rows, x_ref.cols)
    src_hr, src_lr = (x1, x2) if config == 1 else (x2, x1)
    y_hr = apply_spectral(model.response, src_hr)
    y_lr = apply_spatial(model.spatial, src_lr)
    if noise is not None:
        y_hr = add_noise(noise, y_hr, "HR")
        y_lr = add_noise(noise, y_lr, "LR")
    d_hr = build_mask(spec.regions, x_ref.rows, x_ref.cols)
    d_lr = degrade_mask(d_hr, model.spatial)
    return SimulatedPair(y_hr, y_lr, d_hr, d_lr, x1, x2, config, A1, A2)
