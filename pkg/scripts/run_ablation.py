#!/usr/bin/env python3
"""Ablation protocol: baseline (direct pairs, no residual), + extra training
pairs, + residual learning. Trains each variant for the same number of steps
and reports PSNR on the direct pairs.

Full-scale scores from the original study need the complete dataset,
pretrained backbones and GPU-hours; on a synthetic fixture this checks that
each added component does not degrade PSNR.
"""

import argparse
import math
import time

import torch

from mbnet.data import index_dataset, make_pairs
from mbnet.model import ModelConfig, build_model
from mbnet.trainer import TrainConfig, fit, validation_psnr

TINY = dict(base_width=8, stage_channels=(8, 16, 32, 64, 128), stage_blocks=(1, 1, 1, 1),
            mid_channels=16, growth=8)

VARIANTS = [
    ("baseline", ("direct",), False),
    ("+ extra data", ("direct", "extra_angle", "flipped_west"), False),
    ("+ extra data + residual", ("direct", "extra_angle", "flipped_west"), True),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("root", help="dataset directory (see scripts/make_fixture.py)")
    ap.add_argument("--steps", type=int, default=150, help="training steps per variant")
    ap.add_argument("--batch-size", type=int, default=4)
    ap.add_argument("--size", type=int, default=64, help="training resolution")
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    manifest = index_dataset(args.root)
    direct = make_pairs(manifest, ("direct",))
    print(f"{len(manifest.scenes())} scenes, evaluating on {len(direct)} direct pairs\n")

    results = []
    for name, strategies, residual in VARIANTS:
        pairs = make_pairs(manifest, strategies)
        steps_per_epoch = math.ceil(len(pairs) / args.batch_size)
        epochs = max(args.steps // steps_per_epoch, 1)
        cfg = TrainConfig(epochs=epochs, batch_size=args.batch_size, lr0=args.lr,
                          lr_decay_every=epochs, seed=args.seed,
                          checkpoint_dir=None, image_size=(args.size, args.size))
        torch.manual_seed(cfg.seed)
        model = build_model(ModelConfig(**TINY, residual_output=residual))
        t0 = time.time()
        fit(model, pairs, cfg)
        score = validation_psnr(model, direct, cfg)
        results.append((name, score))
        print(f"{name:26s} {score:7.2f} dB   "
              f"({len(pairs)} pairs, {cfg.epochs * steps_per_epoch} steps, "
              f"{time.time() - t0:.0f}s)")

    print()
    degraded = [b for (_, a), (b, s) in zip(results, results[1:]) if s < a - 0.5]
    if degraded:
        print("DEGRADED:", ", ".join(degraded))
        raise SystemExit(1)
    print("each added component is non-degrading")


if __name__ == "__main__":
    main()
