"""Flat keyed-text run configuration: ``section.key = value`` lines.

Unknown keys are rejected with the offending key and line; defaults follow
the published training recipe (200 epochs, batch 3, lr 1e-4, loss weights
1/1.1/0.1, 1024x1024 images).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .data import IMAGE_PATTERN, DEPTH_PATTERN, STRATEGIES
from .errors import ConfigError
from .losses import ConvFeatureExtractor, LossWeights
from .model import ModelConfig
from .trainer import TrainConfig


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(","))


def _parse_size(s: str) -> tuple[int, int]:
    if "x" in s:
        h, w = s.lower().split("x")
        return int(h), int(w)
    n = int(s)
    return n, n


def _parse_strategies(s: str) -> tuple[str, ...]:
    items = tuple(x.strip() for x in s.split(",") if x.strip())
    for item in items:
        if item not in STRATEGIES:
            raise ValueError(f"unknown strategy {item!r}")
    return items


def _parse_path(s: str) -> Path:
    return Path(s)


@dataclass
class _Key:
    parse: callable
    default: object
    doc: str


SCHEMA: dict[str, _Key] = {
    # model
    "model.base_width": _Key(int, 64, "encoder stage-1 width"),
    "model.stage_channels": _Key(_parse_ints, None, "conv1..conv5 channels (default from base_width)"),
    "model.stage_blocks": _Key(_parse_ints, (3, 4, 6, 3), "residual blocks per encoder stage"),
    "model.kgu_kernel_size": _Key(int, 3, "predicted kernel size k (odd)"),
    "model.dilations": _Key(_parse_ints, (1, 3, 5), "pyramid dilation rates"),
    "model.mid_channels": _Key(int, 64, "fused/decoder working width"),
    "model.growth": _Key(int, 32, "dense block growth rate"),
    "model.up_channels": _Key(_parse_ints, None, "decoder widths at strides 4/2/1"),
    "model.use_pretrained_backbone": _Key(_parse_bool, False, "require external backbone weights"),
    "model.residual_output": _Key(_parse_bool, True, "predict a residual added to the input"),
    "model.clamp_output": _Key(_parse_bool, True, "clamp inference output to [0,1]"),
    # data
    "data.root": _Key(_parse_path, None, "dataset directory (required by index/train)"),
    "data.split": _Key(str, "train", "split label recorded in the manifest"),
    "data.pattern": _Key(str, IMAGE_PATTERN, "image filename pattern"),
    "data.depth_pattern": _Key(str, DEPTH_PATTERN, "depth filename pattern"),
    "data.strategies": _Key(_parse_strategies, STRATEGIES, "pair strategies to enable"),
    "data.image_size": _Key(_parse_size, (1024, 1024), "training resolution HxW (divisible by 32)"),
    "data.train_list": _Key(_parse_path, None, "file of training scene ids (default: all)"),
    "data.val_list": _Key(_parse_path, None, "file of validation scene ids"),
    "data.manifest_out": _Key(_parse_path, Path("manifest.txt"), "where `index` writes the manifest"),
    # train
    "train.epochs": _Key(int, 200, "training epochs"),
    "train.batch_size": _Key(int, 3, "batch size"),
    "train.lr0": _Key(float, 1e-4, "initial learning rate"),
    "train.beta1": _Key(float, 0.5, "Adam beta1"),
    "train.beta2": _Key(float, 0.999, "Adam beta2"),
    "train.adam_eps": _Key(float, 1e-8, "Adam epsilon"),
    "train.lr_decay_every": _Key(int, 50, "epochs between lr divisions"),
    "train.lr_decay_factor": _Key(float, 10.0, "lr division factor"),
    "train.seed": _Key(int, 0, "RNG seed (env MBNET_SEED is the fallback)"),
    "train.checkpoint_dir": _Key(_parse_path, Path("checkpoints"), "checkpoint directory"),
    "train.decay_mode": _Key(str, "repeated", "lr decay: repeated or single"),
    "train.checkpoint_every": _Key(int, 1, "epochs between checkpoint archives"),
    "train.cache_pairs": _Key(_parse_bool, True, "cache decoded pairs in memory"),
    # loss
    "loss.lambda1": _Key(float, 1.0, "charbonnier weight"),
    "loss.lambda2": _Key(float, 1.1, "SSIM-loss weight"),
    "loss.lambda3": _Key(float, 0.1, "perceptual weight"),
    "loss.eps": _Key(float, 1e-3, "charbonnier epsilon"),
    "loss.extractor": _Key(str, "identity", "perceptual features: identity or conv"),
    "loss.extractor_weights": _Key(_parse_path, None, "weight manifest for the conv extractor"),
    "loss.extractor_seed": _Key(int, 0, "seed for the random conv extractor"),
    # eval
    "eval.pred_dir": _Key(_parse_path, None, "predictions directory (required by evaluate)"),
    "eval.gt_dir": _Key(_parse_path, None, "ground-truth directory (required by evaluate)"),
    "eval.lpips_plugin": _Key(_parse_path, None, "python file exposing score(x, x_hat)"),
    "eval.report": _Key(_parse_path, Path("report"), "report base path (.txt/.csv appended)"),
    # infer
    "infer.checkpoint": _Key(_parse_path, None, "checkpoint archive (required by infer)"),
    "infer.input_dir": _Key(_parse_path, None, "directory of images+depths (required by infer)"),
    "infer.output_dir": _Key(_parse_path, None, "where to write relighted PNGs (required by infer)"),
}


def describe_keys() -> str:
    lines = ["config keys (section.key = value):"]
    for key, spec in SCHEMA.items():
        default = "" if spec.default is None else f" [default: {_fmt_default(spec.default)}]"
        lines.append(f"  {key:28s} {spec.doc}{default}")
    return "\n".join(lines)


def _fmt_default(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    explicit: set = field(default_factory=set)

    def __post_init__(self):
        for key, spec in SCHEMA.items():
            self.values.setdefault(key, spec.default)
        if "train.seed" not in self.explicit and "MBNET_SEED" in os.environ:
            self.values["train.seed"] = int(os.environ["MBNET_SEED"])

    def __getitem__(self, key):
        return self.values[key]

    def set(self, key: str, raw: str, where: str = "") -> None:
        spec = SCHEMA.get(key)
        if spec is None:
            raise ConfigError(f"unknown config key {key!r}{where}")
        try:
            self.values[key] = spec.parse(raw.strip())
        except (ValueError, TypeError) as e:
            raise ConfigError(f"bad value for {key!r}{where}: {e}") from e
        self.explicit.add(key)

    def require(self, key: str, command: str):
        if self.values[key] is None:
            raise ConfigError(f"{key} missing (required by the {command} command)")
        return self.values[key]

    # -- typed section views ---------------------------------------------

    def model_config(self) -> ModelConfig:
        v = self.values
        return ModelConfig(
            base_width=v["model.base_width"],
            stage_channels=v["model.stage_channels"],
            stage_blocks=v["model.stage_blocks"],
            kgu_kernel_size=v["model.kgu_kernel_size"],
            dilations=v["model.dilations"],
            mid_channels=v["model.mid_channels"],
            growth=v["model.growth"],
            up_channels=v["model.up_channels"],
            use_pretrained_backbone=v["model.use_pretrained_backbone"],
            residual_output=v["model.residual_output"],
            clamp_output=v["model.clamp_output"],
        )

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            epochs=v["train.epochs"],
            batch_size=v["train.batch_size"],
            lr0=v["train.lr0"],
            beta1=v["train.beta1"],
            beta2=v["train.beta2"],
            adam_eps=v["train.adam_eps"],
            lr_decay_every=v["train.lr_decay_every"],
            lr_decay_factor=v["train.lr_decay_factor"],
            seed=v["train.seed"],
            checkpoint_dir=v["train.checkpoint_dir"],
            image_size=v["data.image_size"],
            decay_mode=v["train.decay_mode"],
            checkpoint_every=v["train.checkpoint_every"],
            cache_pairs=v["train.cache_pairs"],
        )

    def loss_weights(self) -> LossWeights:
        v = self.values
        return LossWeights(v["loss.lambda1"], v["loss.lambda2"], v["loss.lambda3"])

    def extractor(self):
        kind = self.values["loss.extractor"]
        if kind == "identity":
            return None
        if kind == "conv":
            ext = ConvFeatureExtractor(seed=self.values["loss.extractor_seed"])
            weights = self.values["loss.extractor_weights"]
            if weights is not None:
                ext.load_weights(weights)
            return ext
        raise ConfigError(f"loss.extractor must be 'identity' or 'conv', got {kind!r}")


def parse_config(path, overrides=()) -> RunConfig:
    """Parse a config file and apply --set overrides (which take precedence)."""
    cfg = RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, eq, value = stripped.partition("=")
        if not eq:
            raise ConfigError(f"expected 'section.key = value' (line {lineno}): {line!r}")
        cfg.set(key.strip(), value, where=f" (line {lineno})")
    apply_overrides(cfg, overrides)
    return cfg


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    for item in overrides:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        cfg.set(key.strip(), value, where=" (--set)")
    return cfg


def model_config_from_echo(echo: dict[str, str]) -> ModelConfig:
    """Rebuild a ModelConfig from a checkpoint's config echo."""
    cfg = RunConfig()
    for key, value in echo.items():
        if key.startswith("model.") and value != "":
            cfg.set(key, value, where=" (checkpoint echo)")
    return cfg.model_config()
