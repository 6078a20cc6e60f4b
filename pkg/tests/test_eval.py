import csv
import json
import math

import numpy as np
import pytest
from PIL import Image

from amodal_compose.core import Rng
from amodal_compose.data.synthetic import generate_synthetic_dataset
from amodal_compose.errors import ConfigurationError, DegenerateMaskError, DimensionError
from amodal_compose.evaluation import (
    MetricReport,
    MetricRow,
    bin_label,
    compare_input_modes,
    emit_report,
    load_report,
    miou,
    psnr,
    region_l1,
    register_metric,
    run_benchmark,
    save_report,
    ssim,
    unregister_metric,
    write_montage,
)

from oracles import oracle_psnr, oracle_ssim_patch


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("evaldata")
    return generate_synthetic_dataset(8, Rng(77), root, 64)


class TestPSNR:
    def test_uniform_offset_is_20db(self):
        x = np.full((8, 8, 3), 0.3)
        assert psnr(x, x + 0.1) == pytest.approx(20.0, abs=0.01)

    def test_identical_is_inf(self):
        x = np.random.default_rng(0).random((8, 8, 3))
        assert psnr(x, x) == math.inf

    def test_full_offset_is_0db(self):
        x = np.zeros((8, 8, 3))
        assert psnr(x, x + 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_matches_oracle_and_symmetric(self):
        rng = np.random.default_rng(1)
        a = rng.random((6, 6, 3))
        b = rng.random((6, 6, 3))
        assert psnr(a, b) == pytest.approx(oracle_psnr(a, b), abs=1e-9)
        assert psnr(a, b) == pytest.approx(psnr(b, a), abs=1e-12)


class TestSSIM:
    def test_identical_is_one(self):
        x = np.random.default_rng(2).random((16, 16, 3))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_single_patch_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        a = rng.random((11, 11, 3))
        b = rng.random((11, 11, 3))
        luma = np.array([0.299, 0.587, 0.114])
        want = oracle_ssim_patch((a @ luma).tolist(), (b @ luma).tolist())
        assert ssim(a, b) == pytest.approx(want, abs=1e-9)

    def test_inverted_midgray_scores_low(self):
        rng = np.random.default_rng(4)
        a = (rng.random((11, 11, 3)) * 0.5 + 0.25)
        b = 1.0 - a
        luma = np.array([0.299, 0.587, 0.114])
        want = oracle_ssim_patch((a @ luma).tolist(), (b @ luma).tolist())
        got = ssim(a, b)
        assert got == pytest.approx(want, abs=1e-9)
        assert got < 0.2

    def test_constant_images_closed_form(self):
        c1, c2 = 0.3, 0.6
        a = np.full((16, 16, 3), c1)
        b = np.full((16, 16, 3), c2)
        want = (2 * c1 * c2 + 0.01**2) / (c1**2 + c2**2 + 0.01**2)
        assert ssim(a, b) == pytest.approx(want, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        a = rng.random((20, 20, 3))
        b = rng.random((20, 20, 3))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_too_small_raises(self):
        x = np.zeros((8, 8, 3))
        with pytest.raises(DimensionError):
            ssim(x, x)


class TestMIoU:
    def test_cases(self):
        a = np.zeros((6, 6))
        b = np.zeros((6, 6))
        a[0, 0] = 1.0
        assert miou(a, a) == 1.0
        c = np.zeros((6, 6))
        c[5, 5] = 1.0
        assert miou(a, c) == 0.0
        assert miou(np.zeros((4, 4)), np.zeros((4, 4))) == 1.0

    def test_nested_rectangles(self):
        pred = np.zeros((5, 5))
        pred[1, 1:3] = 1.0  # 2x1
        target = np.zeros((5, 5))
        target[1, 1] = 1.0  # 1x1 nested
        assert miou(pred, target) == 0.5

    def test_monotone_growing_intersection(self):
        target = np.zeros((6, 6))
        target[1:5, 1:5] = 1.0
        pred = np.zeros((6, 6))
        pred[1:5, 1:5] = 1.0
        pred[0, 0] = 1.0  # fixed union padding
        scores = []
        grown = np.zeros_like(pred)
        grown[0, 0] = 1.0
        for k in range(1, 5):
            grown[1 : 1 + k, 1:5] = 1.0
            scores.append(miou(grown, target))
        assert scores == sorted(scores)


class TestRegionL1:
    def test_cases(self):
        rng = np.random.default_rng(6)
        x = rng.random((8, 8, 3)) * 0.5
        region = np.zeros((8, 8))
        region[2:5, 2:5] = 1.0
        assert region_l1(x, x, region) == 0.0
        offset = x.copy()
        offset[region > 0.5] += 0.1
        assert region_l1(offset, x, region) == pytest.approx(25.5, abs=1e-9)
        outside_only = x.copy()
        outside_only[region < 0.5] += 0.2
        assert region_l1(outside_only, x, region) == 0.0

    def test_empty_region(self):
        x = np.zeros((4, 4, 3))
        with pytest.raises(DegenerateMaskError):
            region_l1(x, x, np.zeros((4, 4)))


class TestBins:
    def test_right_closed_edges(self):
        assert bin_label(0.2) == "(0.05,0.2]"
        assert bin_label(0.05) is None
        assert bin_label(0.051) == "(0.05,0.2]"
        assert bin_label(0.21) == "(0.2,0.4]"
        assert bin_label(0.4) == "(0.2,0.4]"
        assert bin_label(0.45) == "(0.4,0.5]"
        assert bin_label(0.51) is None


class TestBenchmark:
    def test_identity_oracle_completion(self, manifest):
        report = run_benchmark(manifest, "completion", lambda s: s.target, seed=3, resolution=64)
        assert report.rows
        for row in report.rows:
            assert row.l1 == 0.0
            assert row.psnr == math.inf
            assert row.ssim == pytest.approx(1.0, abs=1e-12)

    def test_identity_oracle_composition(self, manifest):
        report = run_benchmark(manifest, "composition", lambda p: p.target, seed=3, resolution=64)
        for row in report.rows:
            assert row.psnr == math.inf and row.l1 == 0.0

    def test_oracle_shape(self, manifest):
        report = run_benchmark(
            manifest, "shape", lambda s: (s.target_vis, s.target_amodal), seed=3, resolution=64
        )
        for row in report.rows:
            assert row.miou == 1.0

    def test_reproducible_reports(self, manifest):
        fn = lambda s: np.clip(s.target + 0.05, 0, 1)
        a = run_benchmark(manifest, "completion", fn, seed=9, resolution=64)
        b = run_benchmark(manifest, "completion", fn, seed=9, resolution=64)
        assert a.to_dict() == b.to_dict()

    def test_aggregates_match_hand_average(self, manifest):
        fn = lambda s: np.clip(s.target + 0.03, 0, 1)
        report = run_benchmark(manifest, "completion", fn, seed=5, resolution=64)
        psnrs = [r.psnr for r in report.rows]
        assert report.aggregates["psnr"]["mean"] == pytest.approx(float(np.mean(psnrs)))
        assert report.aggregates["psnr"]["variance"] == pytest.approx(float(np.var(psnrs)))

    def test_unknown_task(self, manifest):
        with pytest.raises(ConfigurationError):
            run_benchmark(manifest, "nope", lambda s: s)

    def test_metric_plugin_rows(self, manifest):
        register_metric("half_l2", lambda p, t: float(np.mean((p - t) ** 2)) / 2)
        try:
            report = run_benchmark(manifest, "completion", lambda s: s.target, seed=1, resolution=64, limit=3)
            assert all(r.extras["half_l2"] == 0.0 for r in report.rows)
            with pytest.raises(ValueError):
                register_metric("half_l2", lambda p, t: 0.0)
        finally:
            unregister_metric("half_l2")

    def test_workers_do_not_change_results(self, manifest):
        fn = lambda s: np.clip(s.target + 0.02, 0, 1)
        a = run_benchmark(manifest, "completion", fn, seed=4, resolution=64, num_workers=1)
        b = run_benchmark(manifest, "completion", fn, seed=4, resolution=64, num_workers=3)
        assert a.to_dict() == b.to_dict()


class TestReports:
    def _report(self):
        rows = [
            MetricRow(id="a", l1=1.0, psnr=math.inf, ssim=1.0, miou=None, area_ratio=0.1, bin="(0.05,0.2]"),
            MetricRow(id="b", l1=2.0, psnr=30.0, ssim=0.9, miou=None, area_ratio=0.3, bin="(0.2,0.4]"),
        ]
        return MetricReport(
            task="composition",
            seed=1,
            resolution=64,
            rows=rows,
            bins={},
            aggregates={"psnr": {"count": 2, "mean": math.inf, "variance": math.nan}},
        )

    def test_json_roundtrip_with_inf_sentinel(self, tmp_path):
        report = self._report()
        path = tmp_path / "report.json"
        save_report(report, path)
        raw = json.loads(path.read_text())
        assert raw["rows"][0]["psnr"] == "inf"
        loaded = load_report(path)
        assert loaded.rows[0].psnr == math.inf
        assert loaded.task == report.task
        assert loaded.rows[1].as_dict() == report.rows[1].as_dict()

    def test_csv_row_count(self, tmp_path):
        report = self._report()
        paths = emit_report(report, tmp_path)
        with open(paths["csv"]) as f:
            lines = list(csv.reader(f))
        assert len(lines) == len(report.rows) + 1

    def test_montage_grid_dimensions(self, tmp_path):
        h, w = 16, 16
        panels = [(np.zeros((h, w, 3)),) * 3 for _ in range(5)]
        path = tmp_path / "montage.png"
        write_montage(panels, path, cols=2)
        img = Image.open(path)
        rows = math.ceil(5 / 2)
        assert img.size == (2 * 3 * w, rows * h)

    def test_compare_input_modes_row(self):
        a = self._report()
        b = self._report()
        a.aggregates = {"psnr": {"count": 2, "mean": 30.0, "variance": 0.0}}
        b.aggregates = {"psnr": {"count": 2, "mean": 28.0, "variance": 0.0}}
        row = compare_input_modes(a, b)
        assert row["psnr_delta"] == pytest.approx(2.0)
        assert row["concat_not_worse"] is True


def test_env_var_caps_workers(manifest, monkeypatch):
    fn = lambda s: np.clip(s.target + 0.02, 0, 1)
    base = run_benchmark(manifest, "completion", fn, seed=8, resolution=64)
    monkeypatch.setenv("AMODAL_NUM_WORKERS", "3")
    parallel = run_benchmark(manifest, "completion", fn, seed=8, resolution=64)
    assert base.to_dict() == parallel.to_dict()


def test_bbox_crop_helper():
    from amodal_compose.evaluation import _bbox_crop

    mask = np.zeros((32, 32))
    mask[4:20, 6:26] = 1.0
    img = np.random.default_rng(0).random((32, 32, 3))
    (crop,) = _bbox_crop(mask, img)
    assert crop.shape == (16, 20, 3)
    assert np.array_equal(crop, img[4:20, 6:26])
    # tiny masks grow to the SSIM window
    tiny = np.zeros((32, 32))
    tiny[10, 10] = 1.0
    (crop,) = _bbox_crop(tiny, img)
    assert min(crop.shape[:2]) >= 11


def test_metrics_region_bbox(manifest):
    fn = lambda s: s.target  # identity oracle: region choice cannot matter
    full = run_benchmark(manifest, "completion", fn, seed=6, resolution=64, limit=4)
    bbox = run_benchmark(manifest, "completion", fn, seed=6, resolution=64, limit=4, metrics_region="bbox")
    for rf, rb in zip(full.rows, bbox.rows):
        assert rb.psnr == rf.psnr == math.inf
        assert rb.ssim == pytest.approx(1.0, abs=1e-12)
    noisy = lambda s: np.clip(s.target + 0.05, 0, 1)
    out = run_benchmark(manifest, "completion", noisy, seed=6, resolution=64, limit=4, metrics_region="bbox")
    assert all(math.isfinite(r.psnr) and r.psnr > 0 for r in out.rows)
    with pytest.raises(ConfigurationError):
        run_benchmark(manifest, "completion", fn, metrics_region="nope")
