"""Command-line entry point: ``mbnet <command> --config <path> [--set k=v]...``

Commands: index (write a dataset manifest), train (fit and checkpoint),
infer (relight a directory), evaluate (score predictions against ground truth).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import data as data_mod
from .config import RunConfig, describe_keys, model_config_from_echo, parse_config
from .errors import ConfigError, ImageIOError, MBNetError
from .metrics import evaluate_dir, load_lpips_plugin, write_report_csv, write_report_text
from .model import build_model
from .trainer import fit, load_checkpoint, restore

log = logging.getLogger(__name__)


def emit_loss_curve(history, path) -> Path | None:
    """Write (step, loss) history as two-column text, sorted by step."""
    if not history:
        log.warning("empty loss history; no curve file written")
        return None
    path = Path(path)
    lines = ["# step loss"]
    for step, loss in sorted(history, key=lambda r: r[0]):
        lines.append(f"{step} {loss!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_loss_curve(path) -> list[tuple[int, float]]:
    history = []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        step, loss = line.split()
        history.append((int(step), float(loss)))
    return history


def write_png(tensor: torch.Tensor, path) -> None:
    """Quantize a [1,3,H,W] tensor in [0,1] to 8-bit PNG (round half away)."""
    arr = tensor.detach().clamp(0.0, 1.0).squeeze(0).permute(1, 2, 0).numpy()
    arr = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(arr).save(path)


def _split_scenes(manifest, list_path):
    if list_path is None:
        return manifest
    wanted = {s.strip() for s in Path(list_path).read_text().splitlines() if s.strip()}
    records = [r for r in manifest.records if r.scene_id in wanted]
    return data_mod.DatasetManifest(records=records, split=manifest.split)


def _cmd_index(cfg: RunConfig) -> None:
    root = cfg.require("data.root", "index")
    manifest = data_mod.index_dataset(
        root, split=cfg["data.split"],
        pattern=cfg["data.pattern"], depth_pattern=cfg["data.depth_pattern"],
    )
    out = cfg["data.manifest_out"]
    data_mod.write_manifest(manifest, out)
    print(f"indexed {len(manifest.records)} records -> {out}")


def _cmd_train(cfg: RunConfig) -> None:
    root = cfg.require("data.root", "train")
    manifest = data_mod.index_dataset(
        root, pattern=cfg["data.pattern"], depth_pattern=cfg["data.depth_pattern"])
    train_manifest = _split_scenes(manifest, cfg["data.train_list"])
    pairs = data_mod.make_pairs(train_manifest, cfg["data.strategies"])
    val_pairs = None
    if cfg["data.val_list"] is not None:
        val_manifest = _split_scenes(manifest, cfg["data.val_list"])
        val_pairs = data_mod.make_pairs(val_manifest, ("direct",))

    train_cfg = cfg.train_config()
    torch.manual_seed(train_cfg.seed)
    model = build_model(cfg.model_config())
    history = []
    ckpt = fit(model, pairs, train_cfg, cfg.loss_weights(),
               loss_eps=cfg["loss.eps"], extractor=cfg.extractor(),
               val_pairs=val_pairs, on_step=lambda s, l: history.append((s, l)))
    curve = emit_loss_curve(history, Path(train_cfg.checkpoint_dir) / "loss_curve.txt")
    print(f"trained {ckpt.epoch} epochs over {len(pairs)} pairs; "
          f"final loss {history[-1][1]:.6f}; checkpoints in {train_cfg.checkpoint_dir}"
          + (f"; loss curve {curve}" if curve else ""))


def _cmd_infer(cfg: RunConfig) -> None:
    ckpt_path = cfg.require("infer.checkpoint", "infer")
    input_dir = Path(cfg.require("infer.input_dir", "infer"))
    output_dir = Path(cfg.require("infer.output_dir", "infer"))
    if not ckpt_path or not Path(ckpt_path).exists():
        raise ImageIOError(f"checkpoint {ckpt_path} does not exist")

    ckpt = load_checkpoint(ckpt_path)
    model = build_model(model_config_from_echo(ckpt.config_echo))
    restore(ckpt, model)
    model.eval()

    manifest = data_mod.index_dataset(
        input_dir, pattern=cfg["data.pattern"], depth_pattern=cfg["data.depth_pattern"])
    output_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    with torch.no_grad():
        for rec in manifest.records:
            image = data_mod.load_image(rec.image_path)
            depth = data_mod.load_depth(rec.depth_path)
            out = model(image, depth, clamp=True)
            write_png(out, output_dir / rec.image_path.name)
            count += 1
    print(f"relighted {count} images -> {output_dir}")


def _cmd_evaluate(cfg: RunConfig) -> None:
    pred = cfg.require("eval.pred_dir", "evaluate")
    gt = cfg.require("eval.gt_dir", "evaluate")
    scorer = None
    if cfg["eval.lpips_plugin"] is not None:
        scorer = load_lpips_plugin(cfg["eval.lpips_plugin"])
    report = evaluate_dir(pred, gt, scorer)
    base = Path(cfg["eval.report"])
    write_report_text(report, base.with_suffix(".txt"))
    write_report_csv(report, base.with_suffix(".csv"))
    summary = ", ".join(f"mean {k} {v:.4f}" for k, v in report.aggregates.items())
    print(f"evaluated {report.count} images: {summary}")
    print(f"reports: {base.with_suffix('.txt')}, {base.with_suffix('.csv')}")


_COMMANDS = {
    "index": _cmd_index,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "evaluate": _cmd_evaluate,
}


def run(command: str, config_path, overrides=()) -> int:
    """Execute one command; returns a process exit status."""
    try:
        if command not in _COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        cfg = parse_config(config_path, overrides)
        _COMMANDS[command](cfg)
        return 0
    except MBNetError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mbnet",
        description="Depth-guided one-to-one image relighting.",
        epilog=describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("index", "scan a dataset directory and write its manifest"),
        ("train", "fit the network and write checkpoints plus a loss curve"),
        ("infer", "relight every (image, depth) pair in a directory"),
        ("evaluate", "score predictions against ground truth"),
    ):
        p = sub.add_parser(name, help=doc, epilog=describe_keys(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", required=True, help="keyed-text config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value (repeatable)")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    return run(args.command, args.config, args.set)


if __name__ == "__main__":
    sys.exit(main())
