"""Quantitative evaluation: PSNR, SSIM, optional plugin LPIPS, and the mean
perceptual score over prediction/ground-truth directories."""

from __future__ import annotations

import importlib.util
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .data import load_image
from .errors import ConfigError, PairingError, ShapeError
from .losses import ssim as _ssim


def psnr(x: torch.Tensor, x_hat: torch.Tensor, peak: float = 1.0,
         cap_db: float = 100.0) -> float:
    """10*log10(peak^2 / MSE) in dB, capped at cap_db for identical inputs."""
    if x.shape != x_hat.shape:
        raise ShapeError(f"shapes differ: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    mse = float(((x - x_hat) ** 2).mean())
    if mse == 0.0:
        return cap_db
    return 10.0 * math.log10(peak * peak / mse)


def ssim_metric(x: torch.Tensor, x_hat: torch.Tensor, **kwargs) -> float:
    """Shares the loss-side SSIM implementation so metric and loss agree."""
    return float(_ssim(x, x_hat, **kwargs))


def mps(ssim_value: float, lpips_value: float) -> float:
    """Mean perceptual score: average of SSIM and the complement of LPIPS."""
    return 0.5 * (ssim_value + (1.0 - lpips_value))


@dataclass
class MetricReport:
    per_image: list[dict] = field(default_factory=list)
    aggregates: dict[str, float] = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.per_image)


def load_lpips_plugin(path):
    """Load a scorer from a python file exposing ``score(x, x_hat) -> float``."""
    path = Path(path)
    spec = importlib.util.spec_from_file_location("mbnet_lpips_plugin", path)
    if spec is None or spec.loader is None:
        raise ConfigError(f"cannot load LPIPS plugin from {path}")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    scorer = getattr(module, "score", None)
    if scorer is None or not callable(scorer):
        raise ConfigError(f"LPIPS plugin {path} does not define a callable score(x, x_hat)")
    return scorer


def evaluate_dir(pred_dir, gt_dir, scorer=None) -> MetricReport:
    """Per-image PSNR/SSIM (plus LPIPS and MPS with a scorer) over two
    directories holding identically named images, in name-sorted order."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    pred_names = sorted(p.name for p in pred_dir.glob("*.png"))
    gt_names = sorted(p.name for p in gt_dir.glob("*.png"))
    if pred_names != gt_names:
        extra = sorted(set(pred_names) - set(gt_names))
        missing = sorted(set(gt_names) - set(pred_names))
        raise PairingError(
            f"directories do not pair up (extra predictions: {extra}, missing: {missing})"
        )
    report = MetricReport()
    for name in pred_names:
        pred = load_image(pred_dir / name)
        gt = load_image(gt_dir / name)
        row = {"name": name, "psnr": psnr(gt, pred), "ssim": ssim_metric(gt, pred)}
        if scorer is not None:
            row["lpips"] = float(scorer(gt, pred))
            row["mps"] = mps(row["ssim"], row["lpips"])
        report.per_image.append(row)
    columns = ["psnr", "ssim"] + (["lpips", "mps"] if scorer is not None else [])
    for col in columns:
        report.aggregates[col] = sum(r[col] for r in report.per_image) / len(report.per_image)
    return report


def _row_cells(row):
    cells = [row["name"], f"{row['psnr']:.4f}", f"{row['ssim']:.6f}"]
    if "lpips" in row:
        cells += [f"{row['lpips']:.6f}", f"{row['mps']:.6f}"]
    return cells


def write_report_text(report: MetricReport, path) -> None:
    lines = []
    for row in report.per_image:
        lines.append("  ".join(_row_cells(row)))
    lines.append("")
    lines.append(f"count: {report.count}")
    for col, value in report.aggregates.items():
        lines.append(f"mean {col}: {value:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_report_csv(report: MetricReport, path) -> None:
    has_lpips = report.per_image and "lpips" in report.per_image[0]
    header = "name,psnr,ssim" + (",lpips,mps" if has_lpips else "")
    lines = [header]
    for row in report.per_image:
        lines.append(",".join(_row_cells(row)))
    agg = ["aggregate", f"{report.aggregates['psnr']:.6f}", f"{report.aggregates['ssim']:.6f}"]
    if has_lpips:
        agg += [f"{report.aggregates['lpips']:.6f}", f"{report.aggregates['mps']:.6f}"]
    lines.append(",".join(agg))
    Path(path).write_text("\n".join(lines) + "\n")
