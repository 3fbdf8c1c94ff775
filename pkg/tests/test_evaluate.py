import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrcd import evaluate
from mrcd.evaluate import (
    MAP_TYPES,
    ExperimentManifest,
    RocCurve,
    average_curves,
    diagonal_intersection,
    pfa_grid,
    resample,
    roc,
    run_experiment,
    synthetic_reference,
)
from mrcd.image import ChangeEnergyMap, ChangeMask

from oracles import exhaustive_auc


def energy(v):
    return ChangeEnergyMap(np.asarray(v, float).reshape(1, -1), 1)


def mask(t):
    return ChangeMask(np.asarray(t).reshape(1, -1))


def segment_crossing(points):
    """Closed-form crossing of a polyline with pd = 1 - pfa, segment by segment."""
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        # (x0 + t dx) + (y0 + t dy) = 1
        h0, h1 = x0 + y0 - 1, x1 + y1 - 1
        if h0 <= 0 <= h1 and h1 != h0:
            t = -h0 / (h1 - h0)
            return x0 + t * (x1 - x0), y0 + t * (y1 - y0)
        if h0 == 0:
            return x0, y0
    raise AssertionError("no crossing")


def test_perfect_separation():
    c = roc(energy([0.1, 0.2, 5, 6]), mask([0, 0, 1, 1]))
    assert c.auc == 1.0 and c.norm_dist == pytest.approx(1.0)


def test_hand_cases():
    truth = [0, 0, 1, 1]
    assert roc(energy([1, 2, 3, 4]), mask(truth)).auc == 1.0
    c = roc(energy([1, 3, 2, 4]), mask(truth))
    assert c.auc == pytest.approx(0.75)
    assert c.auc == pytest.approx(exhaustive_auc([1, 3, 2, 4], truth))
    x, y = segment_crossing(c.points.tolist())
    assert diagonal_intersection(c) == pytest.approx((x, y))
    assert (x, y) == pytest.approx((0.5, 0.5))
    assert c.norm_dist == pytest.approx(math.hypot(1 - x, y) / math.sqrt(2))


def test_diagonal_and_ideal_curves():
    diag = RocCurve([0, 1], [0, 1])
    assert diag.auc == 0.5 and diag.norm_dist == pytest.approx(0.5)
    assert diagonal_intersection(diag) == pytest.approx((0.5, 0.5))
    ideal = RocCurve([0, 0, 1], [0, 1, 1])
    assert ideal.auc == 1.0 and ideal.norm_dist == pytest.approx(1.0)


def test_random_scores_auc_half():
    rng = np.random.default_rng(5)
    v = rng.uniform(size=10 ** 5)
    t = rng.uniform(size=10 ** 5) < 0.3
    assert abs(roc(energy(v), mask(t.astype(int))).auc - 0.5) < 0.01


def test_degenerate_truth():
    with pytest.raises(ValueError):
        roc(energy([1, 2]), mask([0, 0]))
    with pytest.raises(ValueError):
        roc(energy([1, 2]), mask([1, 1]))
    with pytest.raises(ValueError):
        roc(energy([1, 2, 3]), mask([1, 0]))


scores = st.lists(st.integers(0, 6), min_size=2, max_size=40)


@settings(max_examples=80, deadline=None)
@given(st.data())
def test_roc_properties(data):
    v = data.draw(scores)
    t = data.draw(st.lists(st.integers(0, 1), min_size=len(v), max_size=len(v)))
    if len(set(t)) < 2:
        t[0], t[1] = 0, 1
    c = roc(energy(v), mask(t))
    assert c.pfa[0] == 0 and c.pd[0] == 0 and c.pfa[-1] == 1 and c.pd[-1] == 1
    assert np.all(np.diff(c.pfa) >= 0) and np.all(np.diff(c.pd) >= 0)
    assert 0 <= c.auc <= 1 and 0 <= c.norm_dist <= 1
    assert c.auc == pytest.approx(exhaustive_auc(v, t), abs=1e-12)
    assert diagonal_intersection(c) == pytest.approx(segment_crossing(c.points.tolist()), abs=1e-12)
    # strictly increasing transforms leave the curve unchanged
    for f in (lambda x: 3 * x + 1, np.exp, lambda x: x ** 3 + x):
        c2 = roc(energy(f(np.asarray(v, float))), mask(t))
        assert np.array_equal(c2.pfa, c.pfa) and np.array_equal(c2.pd, c.pd)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2 ** 32 - 1))
def test_average_within_envelope(n_curves, seed):
    rng = np.random.default_rng(seed)
    grid = pfa_grid(64)
    rows = []
    for _ in range(n_curves):
        t = rng.uniform(size=50) < 0.4
        t[:2] = [True, False]
        v = rng.uniform(size=50) + rng.uniform(0, 2) * t
        rows.append(resample(roc(energy(v), mask(t.astype(int))), grid))
    rows = np.asarray(rows)
    avg = average_curves(list(rows), grid)
    assert np.all(avg.pd[1:] >= rows.min(axis=0) - 1e-12)
    assert np.all(avg.pd[1:] <= rows.max(axis=0) + 1e-12)
    assert 0 <= avg.auc <= 1


def test_resample_takes_top_of_vertical_runs():
    c = RocCurve([0, 0, 0.5, 1], [0, 0.8, 0.9, 1])
    assert resample(c, np.array([0.0, 0.25, 1.0])) == pytest.approx([0.8, 0.85, 1.0])


def test_synthetic_reference_shape_and_determinism():
    a = synthetic_reference(30, 30, 12, 4, seed=3)
    b = synthetic_reference(30, 30, 12, 4, seed=3)
    assert a.shape == (12, 30, 30) and np.array_equal(a.data, b.data)
    assert a.band_centers is not None and len(a.band_centers) == 12
    assert np.all(a.data > 0)


# -- manifest and driver -------------------------------------------------------

def test_manifest_roundtrip(tmp_path):
    m = ExperimentManifest(regions=4, configs=[2], mode="ms", ms_groups=[[0, 1, 2], [5, 6]],
                           detectors=["cva", "scva5"], snr_db=30.0)
    path = tmp_path / "m.txt"
    path.write_text("".join(f"{k}={v}\n" for k, v in m.to_dict().items()))
    assert ExperimentManifest.read(path) == m


def test_manifest_validation():
    with pytest.raises(ValueError, match="pan mode"):
        ExperimentManifest(mode="pan", detectors=["cva", "mad"])
    with pytest.raises(ValueError):
        ExperimentManifest(configs=[3])
    with pytest.raises(ValueError):
        ExperimentManifest.from_dict({"colour": "red"})


def small_manifest(**kw):
    base = dict(synthetic_rows=30, synthetic_cols=30, synthetic_bands=12, synthetic_endmembers=3,
                endmembers=3, regions=2, region_min=3, region_max=8, detectors=["cva", "scva3", "mad"],
                pfa_points=64, ms_groups=[[0, 1, 2], [3, 4, 5], [6, 7, 8], [9, 10, 11]])
    base.update(kw)
    return ExperimentManifest(**base)


def test_smoke_run_emits_four_rows_per_detector(tmp_path):
    rep = run_experiment(small_manifest())
    assert len(rep.rows) == 3 * len(MAP_TYPES)
    assert all(r["n_trials"] == 4 and r["n_failed"] == 0 for r in rep.rows)
    assert all(0 <= r["auc"] <= 1 for r in rep.rows)
    rep.write(tmp_path / "out.csv", tmp_path / "curves")
    lines = (tmp_path / "out.csv").read_text().splitlines()
    assert lines[2].startswith("mode,detector,map_type,auc")
    assert len(list((tmp_path / "curves").glob("ms_*.txt"))) == 12


def test_failures_are_recorded_and_run_continues(monkeypatch):
    real = evaluate.fuse_observations
    calls = {"n": 0}

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] == 2:
            raise RuntimeError("boom")
        return real(*a, **k)

    monkeypatch.setattr(evaluate, "fuse_observations", flaky)
    rep = run_experiment(small_manifest(detectors=["cva"]))
    assert len(rep.failures) == 1 and "boom" in rep.failures[0][3]
    assert all(r["n_trials"] == 3 and r["n_failed"] == 1 for r in rep.rows)
