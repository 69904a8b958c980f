"""Optimization loop: Adam with step-decayed learning rate, seeded shuffling,
per-epoch checkpointing and optional best-by-validation-PSNR selection.

Checkpoint archives are directories holding ``manifest.txt`` (one line per
tensor: name, dtype, shape, blob offset, byte length), ``weights.bin``
(concatenated little-endian float32 blobs) and ``state.txt`` (epoch, seed,
config echo). Archives round-trip byte-identically.
"""

from __future__ import annotations

import logging
import math
import os
import shutil
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .data import TrainingPair, load_pair
from .errors import ConfigError, CorruptionError, DivergenceError
from .losses import LossWeights, total_loss
from .metrics import psnr

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 3
    lr0: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay_every: int = 50
    lr_decay_factor: float = 10.0
    seed: int = 0
    checkpoint_dir: Path | None = Path("checkpoints")
    image_size: tuple[int, int] = (1024, 1024)
    decay_mode: str = "repeated"  # or "single": one division after lr_decay_every
    checkpoint_every: int = 1
    cache_pairs: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be > 0, got {self.lr0}")
        if self.lr_decay_every < 1 or self.lr_decay_factor <= 0:
            raise ConfigError("invalid learning-rate decay settings")
        if self.decay_mode not in ("repeated", "single"):
            raise ConfigError(f"decay_mode must be 'repeated' or 'single', got {self.decay_mode!r}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        h, w = self.image_size
        if h % 32 or w % 32:
            raise ConfigError(f"image_size {self.image_size} must be divisible by 32")
        if self.checkpoint_dir is not None:
            self.checkpoint_dir = Path(self.checkpoint_dir)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for a 0-based epoch index under the step-decay schedule."""
    if cfg.decay_mode == "single":
        steps = 1 if epoch >= cfg.lr_decay_every else 0
    else:
        steps = epoch // cfg.lr_decay_every
    return cfg.lr0 / cfg.lr_decay_factor ** steps


def make_optimizer(model, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        model.parameters(), lr=cfg.lr0, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps
    )


def train_step(model, optimizer, images, depths, targets, weights: LossWeights | None = None,
               loss_eps: float = 1e-3, extractor=None) -> float:
    """One forward/backward/Adam update; returns the pre-update loss value.

    The unclamped prediction feeds the losses so gradients survive saturation.
    """
    pred = model(images, depths, clamp=False)
    loss = total_loss(targets, pred, weights, eps=loss_eps, extractor=extractor)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise DivergenceError(
            f"non-finite loss {value} (inputs finite={bool(torch.isfinite(images).all())}, "
            f"prediction finite={bool(torch.isfinite(pred).all())})"
        )
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return value


# -- checkpoint archive -------------------------------------------------------


@dataclass
class Checkpoint:
    tensors: dict[str, torch.Tensor] = field(default_factory=dict)
    epoch: int = 0
    seed: int = 0
    config_echo: dict[str, str] = field(default_factory=dict)


def _flat_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    if v is None:
        return ""
    return str(v)


def config_echo(model_cfg=None, train_cfg: TrainConfig | None = None) -> dict[str, str]:
    echo = {}
    for prefix, cfg in (("model", model_cfg), ("train", train_cfg)):
        if cfg is None:
            continue
        for f in fields(cfg):
            v = getattr(cfg, f.name)
            if prefix == "train" and f.name == "image_size":
                echo["train.image_size"] = f"{v[0]}x{v[1]}"
            else:
                echo[f"{prefix}.{f.name}"] = _flat_value(v)
    return echo


def snapshot(model, optimizer, epoch: int, cfg: TrainConfig) -> Checkpoint:
    """Capture model parameters/buffers and Adam moments as float32 tensors."""
    tensors = {}
    for name, p in model.named_parameters():
        tensors[f"model.{name}"] = p.detach().to(torch.float32).clone()
    for name, b in model.named_buffers():
        tensors[f"model.{name}"] = b.detach().to(torch.float32).clone()
    if optimizer is not None:
        param_names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                state = optimizer.state.get(p)
                if not state:
                    continue
                n = param_names[id(p)]
                tensors[f"optim.{n}.exp_avg"] = state["exp_avg"].detach().to(torch.float32).clone()
                tensors[f"optim.{n}.exp_avg_sq"] = (
                    state["exp_avg_sq"].detach().to(torch.float32).clone()
                )
                tensors[f"optim.{n}.step"] = torch.as_tensor(
                    float(state["step"]), dtype=torch.float32
                )
    echo = config_echo(getattr(model, "config", None), cfg)
    return Checkpoint(tensors=tensors, epoch=epoch, seed=cfg.seed, config_echo=echo)


def restore(ckpt: Checkpoint, model, optimizer=None) -> None:
    """Load checkpoint tensors back into a model (and optimizer, if given)."""
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    with torch.no_grad():
        for name, tensor in ckpt.tensors.items():
            if not name.startswith("model."):
                continue
            key = name[len("model."):]
            dest = params.get(key, buffers.get(key))
            if dest is None:
                raise CorruptionError(f"checkpoint tensor {name!r} has no destination")
            dest.copy_(tensor.to(dest.dtype).view(dest.shape))
    if optimizer is not None:
        for n, p in model.named_parameters():
            avg = ckpt.tensors.get(f"optim.{n}.exp_avg")
            if avg is None:
                continue
            optimizer.state[p] = {
                "step": torch.tensor(float(ckpt.tensors[f"optim.{n}.step"])),
                "exp_avg": avg.clone().to(p.dtype),
                "exp_avg_sq": ckpt.tensors[f"optim.{n}.exp_avg_sq"].clone().to(p.dtype),
            }


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write the archive atomically (temp dir, then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)

    names = sorted(ckpt.tensors)
    lines = []
    offset = 0
    with open(tmp / "weights.bin", "wb") as blob:
        for name in names:
            arr = ckpt.tensors[name].detach().cpu().numpy().astype("<f4")
            shape = ",".join(str(s) for s in arr.shape) or "-"
            lines.append(f"{name} float32 {shape} {offset} {arr.nbytes}")
            blob.write(arr.tobytes())
            offset += arr.nbytes
    (tmp / "manifest.txt").write_text("\n".join(lines) + ("\n" if lines else ""))

    state = [f"epoch = {ckpt.epoch}", f"seed = {ckpt.seed}"]
    state += [f"{k} = {v}" for k, v in sorted(ckpt.config_echo.items())]
    (tmp / "state.txt").write_text("\n".join(state) + "\n")

    if path.exists():
        shutil.rmtree(path)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    for required in ("manifest.txt", "weights.bin", "state.txt"):
        if not (path / required).exists():
            raise CorruptionError(f"checkpoint {path} is missing {required}")
    blob = (path / "weights.bin").read_bytes()
    tensors = {}
    total = 0
    for line in (path / "manifest.txt").read_text().splitlines():
        if not line.strip():
            continue
        try:
            name, dtype, shape_s, offset_s, nbytes_s = line.split()
        except ValueError as e:
            raise CorruptionError(f"malformed manifest line {line!r}") from e
        if dtype != "float32":
            raise CorruptionError(f"unsupported dtype {dtype!r} for {name}")
        shape = () if shape_s == "-" else tuple(int(s) for s in shape_s.split(","))
        offset, nbytes = int(offset_s), int(nbytes_s)
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if count * 4 != nbytes or offset + nbytes > len(blob):
            raise CorruptionError(f"blob does not cover tensor {name} ({offset}+{nbytes})")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        tensors[name] = torch.from_numpy(arr.copy())
        total = max(total, offset + nbytes)
    if total != len(blob):
        raise CorruptionError(f"blob length {len(blob)} does not match manifest total {total}")

    epoch = seed = 0
    echo = {}
    for line in (path / "state.txt").read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(" = ")
        if key == "epoch":
            epoch = int(value)
        elif key == "seed":
            seed = int(value)
        else:
            echo[key] = value
    return Checkpoint(tensors=tensors, epoch=epoch, seed=seed, config_echo=echo)


# -- training loop ------------------------------------------------------------


def _load_batch(pairs, indices, cfg, cache):
    planes = []
    for i in indices:
        if cache is not None and i in cache:
            planes.append(cache[i])
            continue
        loaded = load_pair(pairs[i], target_size=cfg.image_size)
        if cache is not None:
            cache[i] = loaded
        planes.append(loaded)
    images = torch.cat([p[0] for p in planes])
    depths = torch.cat([p[1] for p in planes])
    targets = torch.cat([p[2] for p in planes])
    return images, depths, targets


def validation_psnr(model, pairs, cfg, cache=None) -> float:
    was_training = model.training
    model.eval()
    values = []
    with torch.no_grad():
        for i in range(len(pairs)):
            img, dep, tgt = _load_batch(pairs, [i], cfg, cache)
            values.append(psnr(tgt, model(img, dep, clamp=True)))
    if was_training:
        model.train()
    return float(sum(values) / len(values))


def fit(model, pairs: list[TrainingPair], cfg: TrainConfig,
        weights: LossWeights | None = None, *, loss_eps: float = 1e-3, extractor=None,
        val_pairs: list[TrainingPair] | None = None, on_step=None) -> Checkpoint:
    """Train for cfg.epochs over seeded per-epoch shuffles of the pairs.

    Writes an archive per (checkpoint_every) epoch plus a ``best`` archive by
    validation PSNR when val_pairs are given. Returns the final checkpoint.
    """
    if not pairs:
        raise ConfigError("cannot train on an empty pair list")
    optimizer = make_optimizer(model, cfg)
    cache = {} if cfg.cache_pairs else None
    val_cache = {} if cfg.cache_pairs else None
    model.train()

    ckpt = None
    best_psnr = -float("inf")
    step = 0
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        g = torch.Generator().manual_seed(cfg.seed + epoch)
        order = torch.randperm(len(pairs), generator=g).tolist()
        for start in range(0, len(order), cfg.batch_size):
            batch_idx = order[start:start + cfg.batch_size]
            images, depths, targets = _load_batch(pairs, batch_idx, cfg, cache)
            loss = train_step(model, optimizer, images, depths, targets,
                              weights, loss_eps=loss_eps, extractor=extractor)
            step += 1
            if on_step is not None:
                on_step(step, loss)

        ckpt = snapshot(model, optimizer, epoch + 1, cfg)
        if cfg.checkpoint_dir is not None and (
                (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs):
            save_checkpoint(ckpt, Path(cfg.checkpoint_dir) / f"epoch_{epoch + 1:04d}")
        if val_pairs:
            score = validation_psnr(model, val_pairs, cfg, val_cache)
            if score > best_psnr:
                best_psnr = score
                if cfg.checkpoint_dir is not None:
                    save_checkpoint(ckpt, Path(cfg.checkpoint_dir) / "best")
            log.info("epoch %d: lr %.3g, val PSNR %.3f dB", epoch + 1, lr, score)
    return ckpt
