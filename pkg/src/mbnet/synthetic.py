"""Synthetic desk-scale dataset: smooth procedural scenes with the same file
layout as the real illumination-transfer data, plus a depth-aware relighting
transform so small models can actually fit the mapping."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

# channel gains for the 6500K -> 4500K shift
_TARGET_GAINS = np.array([1.05, 0.92, 0.78], dtype=np.float32)


def _pattern(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    y, x = np.mgrid[0:h, 0:w].astype(np.float32)
    y /= h
    x /= w
    img = np.zeros((h, w, 3), np.float32)
    for c in range(3):
        fx, fy = rng.uniform(0.5, 2.5, 2)
        px, py = rng.uniform(0.0, 2.0 * np.pi, 2)
        img[..., c] = 0.5 + 0.2 * np.sin(2 * np.pi * fx * x + px) * np.cos(2 * np.pi * fy * y + py)
        img[..., c] += 0.15 * (x - y)
    # off-center highlight keeps the scene asymmetric under horizontal flips
    cx, cy = rng.uniform(0.2, 0.8, 2)
    blob = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / 0.02)
    img += 0.25 * blob[..., None] * rng.uniform(0.3, 1.0, 3).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def _depth(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    y, x = np.mgrid[0:h, 0:w].astype(np.float32)
    y /= h
    x /= w
    cx, cy = rng.uniform(0.3, 0.7, 2)
    r = np.sqrt((x - cx) ** 2 + (y - cy) ** 2)
    return np.clip(1.0 - r / 0.9, 0.0, 1.0).astype(np.float32)


def relight(img: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Pointwise fixture ground truth: warm color shift plus depth shading."""
    shade = (0.8 + 0.35 * depth)[..., None]
    return np.clip(img * _TARGET_GAINS * shade, 0.0, 1.0)


def _save_rgb(arr: np.ndarray, path: Path) -> None:
    Image.fromarray(np.floor(arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def _save_depth(arr: np.ndarray, path: Path, bits: int) -> None:
    if bits == 16:
        Image.fromarray(np.floor(arr * 65535.0 + 0.5).astype(np.uint16)).save(path)
    else:
        Image.fromarray(np.floor(arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def make_fixture(root, scene_ids=("scene_a", "scene_b", "scene_c", "scene_d"),
                 size=(64, 64), depth_bits=16, seed: int = 0) -> Path:
    """Write a fixture tree with (6500,N), (6500,NE), (4500,E), (4500,W)
    conditions plus one depth map per scene. Deterministic for a given seed."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    h, w = size
    for i, scene in enumerate(scene_ids):
        rng = np.random.default_rng(seed * 10_000 + i)
        base = _pattern(rng, h, w)
        depth = _depth(rng, h, w)
        target = relight(base, depth)
        near_input = np.clip(0.95 * base + 0.03, 0.0, 1.0)  # (6500, NE) look-alike
        _save_rgb(base, root / f"{scene}_6500_N.png")
        _save_rgb(near_input, root / f"{scene}_6500_NE.png")
        _save_rgb(target, root / f"{scene}_4500_E.png")
        # west-lit frame chosen so its horizontal flip matches the flipped input
        _save_rgb(target, root / f"{scene}_4500_W.png")
        _save_depth(depth, root / f"{scene}_depth.png", depth_bits)
    return root
