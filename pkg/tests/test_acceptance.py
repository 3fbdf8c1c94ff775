"""Exit criteria. Run with ``pytest tests/test_acceptance.py``; a PASS/FAIL line
per criterion is printed in the terminal summary.

Criterion 10 needs the Pavia University cube (610 x 330 x 93, ENVI float32 BSQ
or flat-binary). Point ``MRCD_PAVIA`` at it to enable the check.
"""
import os

import numpy as np
import pytest
from scipy import stats

from mrcd.detect import DetectorConfig, change_energy, chi2_threshold, cva_energy, fit_cca, mad_energy, mad_variates, threshold_map
from mrcd.evaluate import ExperimentManifest, run_experiment
from mrcd.fusion import FusionConfig, FusionProblem, fuse, objective, objective_gradient
from mrcd.image import ImageCube
from mrcd.operators import (
    SpatialDegradation,
    SpectralResponse,
    apply_blur,
    apply_spatial,
    apply_spectral,
    blur_adjoint,
    decimate,
    gaussian_kernel,
    spatial_adjoint,
    upsample,
)
from mrcd.unmix import fcls

from oracles import dense_fusion, fcls_enumerate

acceptance = pytest.mark.acceptance


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def _response(rng, n_out, n_in):
    L = rng.uniform(size=(n_out, n_in))
    return SpectralResponse(L / L.sum(axis=1, keepdims=True))


# ---------------------------------------------------------------------------

@acceptance(1, "operator identities: S^T S = I, adjoints < 1e-10, linearity < 1e-10")
def test_c01_operator_identities():
    rng = np.random.default_rng(101)
    cases = [(5, gaussian_kernel(5, 1.0), 5, 5, 20, 30), (3, gaussian_kernel(3, 0.7), 2, 3, 8, 9),
             (4, rng.uniform(size=(5, 5)), 1, 4, 10, 12), (2, np.ones((1, 1)), 3, 1, 9, 4)]
    worst_adj = worst_lin = 0.0
    for bands, kern, d_r, d_c, rows, cols in cases:
        k = SpatialDegradation(kern / kern.sum(), d_r, d_c)
        for _ in range(10):
            W = ImageCube(rng.standard_normal((bands, rows * cols // (d_r * d_c))), rows // d_r, cols // d_c)
            assert np.array_equal(decimate(k, upsample(k, W)).data, W.data)
            X = ImageCube(rng.standard_normal((bands, rows * cols)), rows, cols)
            Z = ImageCube(rng.standard_normal((bands, rows * cols)), rows, cols)
            worst_adj = max(worst_adj,
                            _rel(np.vdot(apply_blur(k, X).data, Z.data), np.vdot(X.data, blur_adjoint(k, Z).data)),
                            _rel(np.vdot(decimate(k, X).data, W.data), np.vdot(X.data, upsample(k, W).data)),
                            _rel(np.vdot(apply_spatial(k, X).data, W.data), np.vdot(X.data, spatial_adjoint(k, W).data)))
            a, b = rng.standard_normal(2)
            L = _response(rng, 2, bands)
            W2 = W.with_data(rng.standard_normal(W.data.shape))
            for op, u, v in ((lambda Y: apply_spectral(L, Y), X, Z), (lambda Y: apply_blur(k, Y), X, Z),
                             (lambda Y: blur_adjoint(k, Y), X, Z), (lambda Y: decimate(k, Y), X, Z),
                             (lambda Y: upsample(k, Y), W, W2), (lambda Y: spatial_adjoint(k, Y), W, W2)):
                lhs = op(u.with_data(a * u.data + b * v.data)).data
                rhs = a * op(u).data + b * op(v).data
                worst_lin = max(worst_lin, np.abs(lhs - rhs).max() / max(np.abs(rhs).max(), 1e-300))
    print(f"\nmax adjoint rel err {worst_adj:.2e}, max linearity rel err {worst_lin:.2e}")
    assert worst_adj < 1e-10
    assert worst_lin < 1e-10


@acceptance(2, "fusion matches dense normal equations (< 1e-6), monotone objective")
def test_c02_fusion_oracle():
    rng = np.random.default_rng(202)
    worst = 0.0
    for bands, n_hr, size, d, ksize in [(2, 1, 4, 2, 3), (4, 1, 8, 2, 3), (4, 2, 8, 4, 5), (3, 2, 6, 3, 5),
                                        (4, 3, 8, 2, 5), (1, 1, 8, 4, 3)]:
        X = ImageCube(rng.uniform(size=(bands, size * size)), size, size)
        L = _response(rng, n_hr, bands)
        k = SpatialDegradation(gaussian_kernel(ksize, 1.0), d, d)
        y_hr = apply_spectral(L, X)
        y_lr = apply_spatial(k, X)
        y_hr = y_hr.with_data(y_hr.data + 0.05 * rng.standard_normal(y_hr.data.shape))
        y_lr = y_lr.with_data(y_lr.data + 0.05 * rng.standard_normal(y_lr.data.shape))
        p = FusionProblem(y_hr, y_lr, L, k, rng.uniform(0.5, 2, n_hr), rng.uniform(0.5, 2, bands), 1e-4)
        res = fuse(p, FusionConfig(max_iter=2000, tol=1e-12))
        ref = dense_fusion(y_hr, y_lr, L.matrix, k.kernel, d, p.lambda_hr, p.lambda_lr, 1e-4, p.prior_mean.data)
        err = np.linalg.norm(res.x_hat.data - ref) / np.linalg.norm(ref)
        worst = max(worst, err)
        trace = np.asarray(res.objective_trace)
        assert np.all(trace[1:] <= trace[:-1] + 1e-12)
    print(f"\nmax relative Frobenius error vs dense oracle {worst:.2e}")
    assert worst < 1e-6


@acceptance(3, "MAP gradient vs central differences (< 1e-5 on 20 directions)")
def test_c03_gradient():
    rng = np.random.default_rng(303)
    X = ImageCube(rng.uniform(size=(6, 400)), 20, 20)
    L = _response(rng, 2, 6)
    k = SpatialDegradation(gaussian_kernel(5, 1.0), 5, 5)
    y_hr = apply_spectral(L, X).data + 0.1 * rng.standard_normal((2, 400))
    y_lr = apply_spatial(k, X).data + 0.1 * rng.standard_normal((6, 16))
    p = FusionProblem(ImageCube(y_hr, 20, 20), ImageCube(y_lr, 4, 4), L, k,
                      rng.uniform(0.5, 2, 2), rng.uniform(0.5, 2, 6), 1e-4)
    X0 = ImageCube(rng.uniform(size=(6, 400)), 20, 20)
    g = objective_gradient(p, X0).data
    worst = 0.0
    for _ in range(20):
        D = rng.standard_normal(g.shape)
        h = 1e-4 * np.linalg.norm(X0.data) / np.linalg.norm(D)
        fd = (objective(p, X0.with_data(X0.data + h * D)) - objective(p, X0.with_data(X0.data - h * D))) / (2 * h)
        an = float(np.vdot(g, D))
        worst = max(worst, _rel(fd, an))
    print(f"\nmax finite-difference rel err {worst:.2e}")
    assert worst < 1e-5


@acceptance(4, "chi2 threshold calibration within 3 binomial standard errors")
def test_c04_chi2_calibration():
    rng = np.random.default_rng(404)
    n = 10 ** 5
    for dof in (1, 4, 30):
        A1 = rng.standard_normal((dof, dof)) + 2 * np.eye(dof)
        A2 = rng.standard_normal((dof, dof)) + 2 * np.eye(dof)
        mu = rng.standard_normal((dof, 1))
        y1 = ImageCube(mu + A1 @ rng.standard_normal((dof, n)), 250, 400)
        y2 = ImageCube(mu + A2 @ rng.standard_normal((dof, n)), 250, 400)
        V = cva_energy(y1, y2)
        for pfa in (0.01, 0.05, 0.1):
            rate = threshold_map(V, chi2_threshold(dof, pfa)).data.mean()
            se = np.sqrt(pfa * (1 - pfa) / n)
            print(f"\ndof={dof:2d} pfa={pfa:.2f} empirical={rate:.5f} ({(rate - pfa) / se:+.2f} se)", end="")
            assert abs(rate - pfa) <= 3 * se


@acceptance(5, "CCA/MAD: identical pair rho = 1, affine invariance, mean MAD energy within 3%")
def test_c05_cca_mad():
    rng = np.random.default_rng(505)
    y = ImageCube(rng.standard_normal((5, 2000)), 40, 50)
    m = fit_cca(y, y)
    assert np.allclose(m.rho, 1.0, rtol=0, atol=1e-8)
    assert np.abs(mad_variates(y, y, m)).max() < 1e-8
    assert mad_energy(y, y, m).data.max() < 1e-8

    A = rng.standard_normal((5, 5)) + 3 * np.eye(5)
    y2 = y.with_data(A @ y.data + rng.standard_normal((5, 1)))
    assert np.allclose(fit_cca(y, y2).rho, 1.0, rtol=0, atol=1e-8)

    for bands in (3, 6, 10):
        Z = rng.standard_normal((bands, 40000))
        B = rng.standard_normal((bands, bands)) + 2 * np.eye(bands)
        y1 = ImageCube(B @ Z + 0.3 * rng.standard_normal(Z.shape), 200, 200)
        y2 = ImageCube(B @ Z + 0.3 * rng.standard_normal(Z.shape), 200, 200)
        mean = change_energy(y1, y2, DetectorConfig("mad")).data.mean()
        assert abs(mean - bands) / bands < 0.03


@acceptance(6, "FCLS matches 2^K support enumeration (< 1e-6), constraints to 1e-9")
def test_c06_fcls_oracle():
    rng = np.random.default_rng(606)
    worst = 0.0
    for K in (2, 3, 4):
        M = rng.uniform(0, 1, (10, K))
        X = rng.uniform(-0.3, 1.3, (10, 200))
        A = fcls(ImageCube(X, 10, 20), M)
        oracle = np.column_stack([fcls_enumerate(X[:, p], M) for p in range(200)])
        worst = max(worst, np.abs(A - oracle).max())
        assert A.min() >= -1e-9
        assert np.abs(A.sum(axis=0) - 1).max() <= 1e-9
    print(f"\nmax |fcls - oracle| {worst:.2e}")
    assert worst < 1e-6


# ---------------------------------------------------------------------------
# desk-scale experiments (synthetic 60 x 60 x 30 reference, 10 regions x 2 configs)

MS_MANIFEST = dict(mode="ms", endmembers=5, regions=10, configs=[1, 2], seed=0,
                   detectors=["cva", "scva7", "mad", "irmad"])
PAN_MANIFEST = dict(mode="pan", endmembers=5, regions=10, configs=[1, 2], seed=0,
                    detectors=["cva", "scva3", "scva5", "scva7"])


def _show(rep):
    for r in rep.rows:
        print(f"\n  {r['mode']} {r['detector']:>6} {r['map_type']:>3} AUC={r['auc']:.4f} dist={r['norm_dist']:.4f}", end="")


@pytest.fixture(scope="module")
def ms_report():
    return run_experiment(ExperimentManifest(**MS_MANIFEST))


@acceptance(7, "MS scenario orderings on the seeded synthetic manifest")
def test_c07_ms_orderings(ms_report):
    rep = ms_report
    _show(rep)
    auc = {k: v[0] for k, v in rep.table().items()}
    assert not rep.failures
    assert all(r["n_trials"] == 20 for r in rep.rows)
    for det in MS_MANIFEST["detectors"]:
        assert auc[(det, "aLR")] > auc[(det, "WC")], det
    for det in ("cva", "irmad"):
        assert auc[(det, "HR")] > auc[(det, "LR")], det
    assert auc[("scva7", "LR")] > auc[("cva", "LR")]
    assert auc[("scva7", "aLR")] >= 0.95


@acceptance(8, "PAN scenario: CVA/sCVA run, MAD rejected, AUC(aLR) > AUC(WC)")
def test_c08_pan():
    for det in ("mad", "irmad"):
        with pytest.raises(ValueError, match="pan mode"):
            ExperimentManifest(**{**PAN_MANIFEST, "detectors": ["cva", det]})
    y = ImageCube(np.random.default_rng(0).standard_normal((1, 100)), 10, 10)
    with pytest.raises(ValueError, match="single band"):
        change_energy(y, y, DetectorConfig("mad"))

    rep = run_experiment(ExperimentManifest(**PAN_MANIFEST))
    _show(rep)
    assert not rep.failures
    auc = {k: v[0] for k, v in rep.table().items()}
    assert {d for d, _ in auc} == {"cva", "scva3", "scva5", "scva7"}
    assert auc[("cva", "aLR")] > auc[("cva", "WC")]


@acceptance(9, "determinism: identical manifests give bit-identical reports")
def test_c09_determinism(ms_report, tmp_path):
    again = run_experiment(ExperimentManifest(**MS_MANIFEST))
    ms_report.write(tmp_path / "a.csv", tmp_path / "a")
    again.write(tmp_path / "b.csv", tmp_path / "b")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    for key, c in ms_report.curves.items():
        assert np.array_equal(c.pd, again.curves[key].pd)


# ---------------------------------------------------------------------------

REFERENCE_AUC = {
    "ms": {("cva", "HR"): 0.988800, ("cva", "aLR"): 0.990373,
           ("scva7", "HR"): 0.991916, ("scva7", "aLR"): 0.992090,
           ("mad", "HR"): 0.988032, ("mad", "aLR"): 0.990971,
           ("irmad", "HR"): 0.989237, ("irmad", "aLR"): 0.991151},
    "pan": {("cva", "HR"): 0.973951, ("cva", "aLR"): 0.991192,
            ("scva3", "HR"): 0.985251, ("scva3", "aLR"): 0.991008,
            ("scva5", "HR"): 0.989493, ("scva5", "aLR"): 0.990435,
            ("scva7", "HR"): 0.991175, ("scva7", "aLR"): 0.991545},
}


@acceptance(10, "full 75-region / 150-pair protocol on the Pavia cube (optional, MRCD_PAVIA)")
@pytest.mark.slow
@pytest.mark.parametrize("mode", ["ms", "pan"])
def test_c10_pavia(mode, tmp_path):
    path = os.environ.get("MRCD_PAVIA")
    if not path:
        pytest.skip("set MRCD_PAVIA to the 610x330x93 Pavia University cube to run this check")
    m = ExperimentManifest(reference=path, mode=mode, regions=75, region_min=1, region_max=61,
                           pan_bands=43, configs=[1, 2], seed=0,
                           detectors=list(dict.fromkeys(d for d, _ in REFERENCE_AUC[mode])))
    rep = run_experiment(m)
    rep.write(tmp_path / f"pavia_{mode}.csv", tmp_path / "curves")
    _show(rep)
    assert all(r["n_trials"] + r["n_failed"] == 150 for r in rep.rows)
    auc = {k: v[0] for k, v in rep.table().items()}
    for key, target in REFERENCE_AUC[mode].items():
        assert abs(auc[key] - target) <= 0.05, (key, auc[key], target)
