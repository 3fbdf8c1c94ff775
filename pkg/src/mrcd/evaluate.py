"""ROC metrics and the Monte-Carlo experiment driver.

Every estimated map is scored against the truth mask of its own grid: HR
maps against D_HR; LR, aLR and worst-case maps against D_LR.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import traceback
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from .detect import DetectorConfig
from .image import ChangeEnergyMap, ChangeMask, ImageCube, read_cube, read_kv
from .operators import (
    DegradationModel,
    NoiseModel,
    SpatialDegradation,
    gaussian_kernel,
    landsat_groups,
    make_ms_response,
    make_pan_response,
    variances_from_snr,
)
from .pipeline import PipelineFusionConfig, decide, fuse_observations, predict, worst_case_energy
from .simulate import RULES, ChangeSpec, random_change_spec, simulate_pair
from .unmix import unmix

log = logging.getLogger(__name__)

MAP_TYPES = ("HR", "LR", "aLR", "WC")
TRUTH_NOTE = "truth: HR maps vs D_HR; LR, aLR and WC maps vs D_LR"


@dataclass
class RocCurve:
    pfa: np.ndarray
    pd: np.ndarray
    auc: float = field(init=False)
    norm_dist: float = field(init=False)

    def __post_init__(self):
        self.pfa = np.asarray(self.pfa, dtype=np.float64)
        self.pd = np.asarray(self.pd, dtype=np.float64)
        if self.pfa.shape != self.pd.shape or self.pfa.ndim != 1:
            raise ValueError("pfa and pd must be 1-D arrays of equal length")
        if np.any(np.diff(self.pfa) < 0) or np.any(np.diff(self.pd) < 0):
            raise ValueError("ROC points must be non-decreasing in pfa and pd")
        self.auc = auc(self)
        self.norm_dist = norm_dist(self)

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.pfa, self.pd])


def roc(V: ChangeEnergyMap, truth: ChangeMask) -> RocCurve:
    """Empirical ROC of the rule ``V >= tau`` swept over every distinct energy value."""
    if V.data.shape != truth.data.shape:
        raise ValueError(f"energy grid {V.data.shape} != truth grid {truth.data.shape}")
    v = V.data.ravel()
    t = truth.data.ravel().astype(bool)
    n_pos = int(t.sum())
    n_neg = t.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("truth mask needs at least one change and one no-change pixel")
    order = np.argsort(-v, kind="stable")
    vs, ts = v[order], t[order]
    tp = np.cumsum(ts)
    fp = np.cumsum(~ts)
    last = np.r_[np.flatnonzero(np.diff(vs) != 0), v.size - 1]
    pfa = np.r_[0.0, fp[last] / n_neg]
    pd = np.r_[0.0, tp[last] / n_pos]
    return RocCurve(pfa, pd)


def auc(curve: RocCurve) -> float:
    x, y = curve.pfa, curve.pd
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) * 0.5))


def diagonal_intersection(curve: RocCurve) -> tuple:
    """Point where the ROC polyline meets ``pd = 1 - pfa``."""
    h = curve.pd + curve.pfa - 1.0
    k = int(np.argmax(h >= 0))
    if h[k] < 0:
        raise ValueError("ROC curve never reaches the anti-diagonal")
    if k == 0 or h[k] == 0:
        return float(curve.pfa[k]), float(curve.pd[k])
    t = -h[k - 1] / (h[k] - h[k - 1])
    pfa = curve.pfa[k - 1] + t * (curve.pfa[k] - curve.pfa[k - 1])
    pd = curve.pd[k - 1] + t * (curve.pd[k] - curve.pd[k - 1])
    return float(pfa), float(pd)


def norm_dist(curve: RocCurve) -> float:
    """Distance from (pfa=1, pd=0) to the anti-diagonal crossing, scaled so an ideal test gives 1."""
    pfa, pd = diagonal_intersection(curve)
    return float(math.hypot(1.0 - pfa, pd) / math.sqrt(2.0))


def pfa_grid(points: int = 512) -> np.ndarray:
    return np.linspace(0.0, 1.0, points)


def resample(curve: RocCurve, grid: np.ndarray) -> np.ndarray:
    """pd on ``grid``; vertical runs resolve to their highest pd."""
    ux, idx = np.unique(curve.pfa[::-1], return_index=True)
    upd = curve.pd[::-1][idx]
    return np.interp(grid, ux, upd)


def average_curves(rows: list, grid: np.ndarray) -> RocCurve:
    """Vertical average of resampled pd rows, starting from (0, 0)."""
    mean_pd = np.mean(np.asarray(rows), axis=0)
    return RocCurve(np.r_[0.0, grid], np.r_[0.0, mean_pd])


# ---------------------------------------------------------------------------
# reference images


def synthetic_reference(rows: int = 60, cols: int = 60, bands: int = 30, K: int = 5,
                        seed: int = 0, smoothness: float = 4.0, sharpness: float = 8.0,
                        snr_db: Optional[float] = 40.0) -> ImageCube:
    """Smooth, blocky linear-mixture scene standing in for a real HR-HS cube.

    Endmembers are smooth positive spectra; abundances are a softmax of
    smoothed Gaussian fields, which yields large near-pure patches.
    """
    rng = np.random.default_rng(seed)
    wl = np.linspace(430.0, 860.0, bands)
    M = np.empty((bands, K))
    for k in range(K):
        base = rng.uniform(0.05, 0.3)
        spec = np.full(bands, base)
        for _ in range(3):
            centre = rng.uniform(430.0, 860.0)
            width = rng.uniform(30.0, 150.0)
            spec += rng.uniform(0.05, 0.5) * np.exp(-0.5 * ((wl - centre) / width) ** 2)
        spec += rng.uniform(-0.15, 0.15) * (wl - 430.0) / 430.0
        M[:, k] = np.clip(spec, 0.02, None)
    fields_ = np.stack([
        ndimage.gaussian_filter(rng.standard_normal((rows, cols)), smoothness, mode="wrap")
        for _ in range(K)
    ])
    fields_ /= fields_.std(axis=(1, 2), keepdims=True)
    z = sharpness * fields_
    z -= z.max(axis=0, keepdims=True)
    A = np.exp(z)
    A /= A.sum(axis=0, keepdims=True)
    X = M @ A.reshape(K, -1)
    if snr_db is not None:
        X = X + rng.standard_normal(X.shape) * np.sqrt(np.mean(X ** 2) / 10 ** (snr_db / 10))
    return ImageCube(X, rows, cols, tuple(wl))


# ---------------------------------------------------------------------------
# manifest


def _csv_list(s: str) -> list:
    return [x.strip() for x in s.split(",") if x.strip()]


def _parse_groups(s: str) -> list:
    groups = []
    for part in s.split(";"):
        part = part.strip()
        if not part:
            continue
        lo, _, hi = part.partition("-")
        groups.append(list(range(int(lo), int(hi or lo) + 1)))
    return groups


@dataclass
class ExperimentManifest:
    reference: str = "synthetic"
    reference_format: Optional[str] = None
    synthetic_rows: int = 60
    synthetic_cols: int = 60
    synthetic_bands: int = 30
    synthetic_endmembers: int = 5
    synthetic_seed: int = 0
    synthetic_snr_db: Optional[float] = 40.0
    endmembers: Optional[int] = None
    energy_fraction: float = 0.999
    regions: int = 10
    region_min: int = 3
    region_max: int = 15
    rules: list = field(default_factory=lambda: list(RULES))
    configs: list = field(default_factory=lambda: [1, 2])
    mode: str = "ms"
    pan_bands: Optional[int] = None
    ms_groups: Optional[list] = None
    detectors: list = field(default_factory=lambda: ["cva", "scva7", "mad", "irmad"])
    factor: int = 5
    kernel_size: int = 5
    kernel_sigma: float = 1.0
    lambda_reg: float = 1e-4
    fusion_var_hr: float = 1.0
    fusion_var_lr: float = 1.0
    max_iter: int = 500
    tol: float = 1e-6
    snr_db: Optional[float] = None
    pfa_points: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("ms", "pan"):
            raise ValueError("mode must be 'ms' or 'pan'")
        for c in self.configs:
            if c not in (1, 2):
                raise ValueError("configs must be drawn from {1, 2}")
        for r in self.rules:
            if r not in RULES:
                raise ValueError(f"unknown rule {r!r}")
        for d in self.detectors:
            cfg = DetectorConfig.from_name(d)
            if self.mode == "pan" and cfg.method in ("mad", "irmad"):
                raise ValueError(f"detector {d!r} needs multi-band images; not available in pan mode")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentManifest":
        kw = {}
        known = {f.name: f for f in fields(cls)}
        for key, value in raw.items():
            if key not in known:
                raise ValueError(f"unknown manifest key {key!r}")
            if value.lower() in ("", "none"):
                kw[key] = None
            elif key in ("rules", "detectors"):
                kw[key] = _csv_list(value)
            elif key == "configs":
                kw[key] = [int(x) for x in _csv_list(value)]
            elif key == "ms_groups":
                kw[key] = _parse_groups(value)
            elif key in ("reference", "reference_format", "mode"):
                kw[key] = value
            elif key in ("energy_fraction", "kernel_sigma", "lambda_reg", "tol", "snr_db",
                         "synthetic_snr_db", "fusion_var_hr", "fusion_var_lr"):
                kw[key] = float(value)
            else:
                kw[key] = int(value)
        return cls(**kw)

    @classmethod
    def read(cls, path) -> "ExperimentManifest":
        m = cls.from_dict(read_kv(path))
        if m.reference != "synthetic" and not Path(m.reference).is_absolute():
            m.reference = str(Path(path).parent / m.reference)
        return m

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                out[f.name] = "none"
            elif f.name == "ms_groups":
                out[f.name] = ";".join(f"{g[0]}-{g[-1]}" for g in v)
            elif isinstance(v, list):
                out[f.name] = ",".join(str(x) for x in v)
            else:
                out[f.name] = str(v)
        return out


def load_reference(m: ExperimentManifest) -> ImageCube:
    if m.reference == "synthetic":
        return synthetic_reference(m.synthetic_rows, m.synthetic_cols, m.synthetic_bands,
                                   m.synthetic_endmembers, m.synthetic_seed,
                                   snr_db=m.synthetic_snr_db)
    return read_cube(m.reference, m.reference_format)


def degradation_model(m: ExperimentManifest, ref: ImageCube) -> DegradationModel:
    if m.mode == "pan":
        response = make_pan_response(ref.bands, m.pan_bands or ref.bands // 2)
    else:
        groups = m.ms_groups or landsat_groups(ref.bands, ref.band_centers)
        response = make_ms_response(groups, ref.bands)
    spatial = SpatialDegradation(gaussian_kernel(m.kernel_size, m.kernel_sigma), m.factor, m.factor)
    return DegradationModel(response, spatial)


# ---------------------------------------------------------------------------
# driver


@dataclass
class TrialRecord:
    region: int
    config: int
    rule: str
    detector: str
    map_type: str
    auc: float
    norm_dist: float


@dataclass
class ExperimentReport:
    manifest: ExperimentManifest
    rows: list             # dicts: mode, detector, map_type, auc, norm_dist, auc_trial_mean, n_trials, n_failed
    curves: dict           # (detector, map_type) -> RocCurve
    trials: list           # TrialRecord
    failures: list         # (region, config, detector, message)
    K: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {TRUTH_NOTE}\n")
        buf.write(f"# endmembers={self.K}\n")
        cols = ["mode", "detector", "map_type", "auc", "norm_dist", "auc_trial_mean", "n_trials", "n_failed"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def table(self) -> dict:
        """{(detector, map_type): (auc, norm_dist)}"""
        return {(r["detector"], r["map_type"]): (r["auc"], r["norm_dist"]) for r in self.rows}

    def write(self, out_csv, curves_dir=None) -> None:
        Path(out_csv).write_text(self.to_csv())
        if curves_dir is not None:
            d = Path(curves_dir)
            d.mkdir(parents=True, exist_ok=True)
            for (det, mt), c in self.curves.items():
                np.savetxt(d / f"{self.manifest.mode}_{det}_{mt}.txt", c.points, fmt="%.17g",
                           header="pfa pd")


def _trial_seed(seed: int, *keys) -> int:
    return int(np.random.default_rng([seed, *keys]).integers(0, 2 ** 31 - 1))


def run_experiment(m: ExperimentManifest, progress=None) -> ExperimentReport:
    """One simulated pair per (region, configuration); every detector on every pair."""
    ref = load_reference(m)
    model = degradation_model(m, ref)
    K = m.endmembers
    unmixed = unmix(ref, K, seed=m.seed, energy_fraction=m.energy_fraction)
    master = random_change_spec(ref.rows, ref.cols, m.regions, (m.region_min, m.region_max),
                                m.rules, seed=m.seed)
    detectors = [DetectorConfig.from_name(d) for d in m.detectors]
    fusion_cfg = PipelineFusionConfig(max_iter=m.max_iter, tol=m.tol, lambda_reg=m.lambda_reg,
                                      lambda_hr=m.fusion_var_hr, lambda_lr=m.fusion_var_lr)
    grid = pfa_grid(m.pfa_points)
    resampled = {(d.name, mt): [] for d in detectors for mt in MAP_TYPES}
    aucs = {k: [] for k in resampled}
    failed = {k: 0 for k in resampled}
    trials, failures = [], []

    for i, (region, rule) in enumerate(zip(master.regions, master.rules)):
        spec = ChangeSpec([region], [rule], ref.rows, ref.cols, seed=_trial_seed(m.seed, 10, i))
        for config in m.configs:
            try:
                noise = None
                if m.snr_db is not None:
                    clean = simulate_pair(ref, spec, model, config, unmixed=unmixed)
                    noise = NoiseModel(variances_from_snr(clean.y_hr, m.snr_db),
                                       variances_from_snr(clean.y_lr, m.snr_db),
                                       _trial_seed(m.seed, 20, i, config))
                pair = simulate_pair(ref, spec, model, config, noise, unmixed=unmixed)
                res = fuse_observations(pair.y_hr, pair.y_lr, model, fusion_cfg)
                y_hr_hat, y_lr_hat = predict(res.x_hat, model)
            except Exception as exc:
                msg = f"{type(exc).__name__}: {exc}"
                log.warning("region %d config %d failed: %s", i, config, msg)
                for d in detectors:
                    failures.append((i, config, d.name, msg))
                    for mt in MAP_TYPES:
                        failed[(d.name, mt)] += 1
                continue
            truth = {"HR": pair.d_hr, "LR": pair.d_lr, "aLR": pair.d_lr, "WC": pair.d_lr}
            for d in detectors:
                try:
                    out = decide(pair.y_hr, pair.y_lr, y_hr_hat, y_lr_hat, model.spatial, d, res.x_hat)
                    energies = {"HR": out.v_hr, "LR": out.v_lr, "aLR": out.v_alr,
                                "WC": worst_case_energy(pair.y_hr, pair.y_lr, model, d)}
                    curves = {mt: roc(energies[mt], truth[mt]) for mt in MAP_TYPES}
                except Exception as exc:
                    msg = f"{type(exc).__name__}: {exc}"
                    log.warning("region %d config %d detector %s failed: %s", i, config, d.name, msg)
                    log.debug(traceback.format_exc())
                    failures.append((i, config, d.name, msg))
                    for mt in MAP_TYPES:
                        failed[(d.name, mt)] += 1
                    continue
                for mt, c in curves.items():
                    resampled[(d.name, mt)].append(resample(c, grid))
                    aucs[(d.name, mt)].append(c.auc)
                    trials.append(TrialRecord(i, config, rule, d.name, mt, c.auc, c.norm_dist))
            if progress is not None:
                progress(i, config)

    rows, curves = [], {}
    for d in detectors:
        for mt in MAP_TYPES:
            key = (d.name, mt)
            if resampled[key]:
                c = average_curves(resampled[key], grid)
                curves[key] = c
                a, nd, am = c.auc, c.norm_dist, float(np.mean(aucs[key]))
            else:
                a = nd = am = float("nan")
            rows.append({"mode": m.mode, "detector": d.name, "map_type": mt, "auc": a,
                         "norm_dist": nd, "auc_trial_mean": am,
                         "n_trials": len(resampled[key]), "n_failed": failed[key]})
    return ExperimentReport(m, rows, curves, trials, failures, unmixed.K)
