"""PSNR/SSIM/MPS arithmetic and directory evaluation."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from mbnet.errors import PairingError, ShapeError
from mbnet.losses import ssim as loss_ssim
from mbnet.metrics import (
    evaluate_dir,
    load_lpips_plugin,
    mps,
    psnr,
    ssim_metric,
    write_report_csv,
    write_report_text,
)

from oracles import numpy_psnr, numpy_ssim

# (ssim, lpips, published mps) rows from the challenge result table
CHALLENGE_ROWS = [
    ("auy200", 0.6874, 0.1634, 0.7620),
    ("aics", 0.6799, 0.1597, 0.7601),
    ("lifu", 0.6903, 0.1702, 0.7600),
    ("jimmy3505090", 0.6772, 0.1670, 0.7551),
    ("DeepBlueAI", 0.6879, 0.1891, 0.7494),
    ("Ours", 0.6931, 0.1605, 0.7663),
]


class TestPsnr:
    def test_identical_hits_cap(self):
        x = torch.rand(1, 3, 8, 8)
        assert psnr(x, x.clone()) == 100.0

    def test_uniform_tenth(self):
        x = torch.zeros(1, 3, 8, 8)
        assert math.isclose(psnr(x, x + 0.1), 20.0, abs_tol=1e-4)

    def test_uniform_half(self):
        x = torch.zeros(1, 3, 8, 8)
        assert math.isclose(psnr(x, x + 0.5), 10 * math.log10(4.0), abs_tol=1e-4)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 8, 8))

    @given(st.floats(0.01, 0.4), st.floats(0.01, 0.4))
    @settings(max_examples=25, deadline=None)
    def test_monotone_in_uniform_error(self, a, b):
        x = torch.zeros(1, 3, 8, 8)
        lo, hi = sorted((a, b))
        if hi - lo < 1e-4:  # below float32 resolution the MSEs can tie
            return
        assert psnr(x, x + hi) < psnr(x, x + lo)


class TestSsimMetric:
    def test_identical(self):
        x = torch.rand(1, 3, 16, 16)
        assert abs(ssim_metric(x, x.clone()) - 1.0) < 1e-9

    def test_constant_closed_form(self):
        x = torch.full((1, 3, 16, 16), 0.25)
        y = torch.full((1, 3, 16, 16), 0.75)
        assert abs(ssim_metric(x, y) - 0.60007) < 1e-4

    def test_equals_loss_side_ssim(self):
        x = torch.rand(1, 3, 16, 16)
        y = torch.rand(1, 3, 16, 16)
        assert ssim_metric(x, y) == float(loss_ssim(x, y))


class TestMps:
    def test_perfect(self):
        assert mps(1.0, 0.0) == 1.0

    @pytest.mark.parametrize("name,ssim_v,lpips_v,published", CHALLENGE_ROWS)
    def test_reproduces_published_scores(self, name, ssim_v, lpips_v, published):
        assert abs(mps(ssim_v, lpips_v) - published) <= 5e-5 + 1e-12, name


def _save(path, arr):
    Image.fromarray(arr.astype(np.uint8)).save(path)


def _make_dirs(tmp_path, shift=0):
    pred = tmp_path / "pred"
    gt = tmp_path / "gt"
    pred.mkdir()
    gt.mkdir()
    rng = np.random.default_rng(0)
    for i in range(3):
        base = rng.integers(30, 200, size=(16, 16, 3))
        _save(gt / f"im{i}.png", base)
        _save(pred / f"im{i}.png", np.clip(base + shift, 0, 255))
    return pred, gt


class TestEvaluateDir:
    def test_identical_dirs(self, tmp_path):
        pred, gt = _make_dirs(tmp_path, shift=0)
        report = evaluate_dir(pred, gt)
        assert report.count == 3
        assert report.aggregates["psnr"] == 100.0
        assert abs(report.aggregates["ssim"] - 1.0) < 1e-9

    def test_aggregate_is_mean(self, tmp_path):
        pred, gt = _make_dirs(tmp_path, shift=13)
        report = evaluate_dir(pred, gt)
        for col in ("psnr", "ssim"):
            mean = sum(r[col] for r in report.per_image) / report.count
            assert abs(report.aggregates[col] - mean) < 1e-9

    def test_matches_independent_recomputation(self, tmp_path):
        pred, gt = _make_dirs(tmp_path, shift=25)
        report = evaluate_dir(pred, gt)
        for row in report.per_image:
            p = np.asarray(Image.open(pred / row["name"])).astype(np.float64) / 255.0
            g = np.asarray(Image.open(gt / row["name"])).astype(np.float64) / 255.0
            p = p.transpose(2, 0, 1)
            g = g.transpose(2, 0, 1)
            assert abs(row["psnr"] - numpy_psnr(g, p)) < 1e-4
            assert abs(row["ssim"] - numpy_ssim(g, p)) < 1e-6

    def test_unmatched_files_raise(self, tmp_path):
        pred, gt = _make_dirs(tmp_path)
        (pred / "extra.png").write_bytes((pred / "im0.png").read_bytes())
        with pytest.raises(PairingError, match="extra"):
            evaluate_dir(pred, gt)

    def test_lpips_plugin(self, tmp_path):
        pred, gt = _make_dirs(tmp_path, shift=10)
        plugin = tmp_path / "plugin.py"
        plugin.write_text(
            "def score(x, x_hat):\n"
            "    return float(((x - x_hat) ** 2).mean())\n"
        )
        scorer = load_lpips_plugin(plugin)
        report = evaluate_dir(pred, gt, scorer)
        assert all("lpips" in r and "mps" in r for r in report.per_image)
        for r in report.per_image:
            assert abs(r["mps"] - mps(r["ssim"], r["lpips"])) < 1e-12
        assert "mps" in report.aggregates

    def test_no_scorer_omits_lpips(self, tmp_path):
        pred, gt = _make_dirs(tmp_path)
        report = evaluate_dir(pred, gt)
        assert all("lpips" not in r for r in report.per_image)
        assert "lpips" not in report.aggregates


class TestReportFiles:
    def test_text_and_csv(self, tmp_path):
        pred, gt = _make_dirs(tmp_path, shift=5)
        report = evaluate_dir(pred, gt)
        txt = tmp_path / "report.txt"
        csv = tmp_path / "report.csv"
        write_report_text(report, txt)
        write_report_csv(report, csv)
        assert f"count: {report.count}" in txt.read_text()
        lines = csv.read_text().splitlines()
        assert lines[0] == "name,psnr,ssim"
        assert len(lines) == 1 + report.count + 1  # header + rows + aggregate
        assert lines[-1].startswith("aggregate,")
