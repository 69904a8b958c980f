"""Scene indexing, training-pair construction and image loading.

Directory layout follows the illumination-transfer convention: per scene one
image file per (color temperature, azimuth angle) condition plus a single
depth map. Filenames default to ``<scene>_<temp>_<angle>.png`` and
``<scene>_depth.png`` and are configurable through format patterns.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ConfigError, ImageIOError, IndexingError, ShapeError

log = logging.getLogger(__name__)

ANGLES = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")
COLOR_TEMPS = (2500, 3500, 4500, 5500, 6500)
STRATEGIES = ("direct", "extra_angle", "flipped_west")

# input/output lighting conditions per pair strategy:
#   direct:       (6500, N)          -> (4500, E)
#   extra_angle:  (6500, NE)         -> (4500, E)
#   flipped_west: flipped (6500, N)  -> flipped (4500, W)
STRATEGY_CONDITIONS = {
    "direct": ((6500, "N"), (4500, "E"), False),
    "extra_angle": ((6500, "NE"), (4500, "E"), False),
    "flipped_west": ((6500, "N"), (4500, "W"), True),
}

IMAGE_PATTERN = "{scene}_{temp}_{angle}.png"
DEPTH_PATTERN = "{scene}_depth.png"

# horizontal mirror of the azimuth compass
_FLIP = {"N": "N", "S": "S", "E": "W", "W": "E", "NE": "NW", "NW": "NE", "SE": "SW", "SW": "SE"}


@dataclass(frozen=True)
class SceneRecord:
    scene_id: str
    angle: str
    color_temp: int
    image_path: Path
    depth_path: Path

    def __post_init__(self):
        if self.angle not in ANGLES:
            raise ConfigError(f"unknown angle {self.angle!r}")
        if self.color_temp not in COLOR_TEMPS:
            raise ConfigError(f"unknown color temperature {self.color_temp}")


@dataclass(frozen=True)
class TrainingPair:
    input_image: Path
    depth: Path
    target_image: Path
    provenance: str
    flip_input: bool = False
    scene_id: str = ""


@dataclass
class DatasetManifest:
    records: list[SceneRecord]
    split: str = "train"

    def scenes(self) -> dict[str, dict[tuple[int, str], SceneRecord]]:
        by_scene: dict[str, dict[tuple[int, str], SceneRecord]] = {}
        for rec in self.records:
            by_scene.setdefault(rec.scene_id, {})[(rec.color_temp, rec.angle)] = rec
        return by_scene


def _pattern_to_regex(pattern: str) -> re.Pattern:
    fields = {"scene": r"(?P<scene>.+)", "temp": r"(?P<temp>\d+)", "angle": r"(?P<angle>[A-Z]+)"}
    out = ""
    i = 0
    while i < len(pattern):
        if pattern[i] == "{":
            j = pattern.index("}", i)
            out += fields[pattern[i + 1:j]]
            i = j + 1
        else:
            out += re.escape(pattern[i])
            i += 1
    return re.compile("^" + out + "$")


def index_dataset(root, split: str = "train", pattern: str = IMAGE_PATTERN,
                  depth_pattern: str = DEPTH_PATTERN) -> DatasetManifest:
    """Scan a directory into a manifest, ordered by (scene, angle, temp)."""
    root = Path(root)
    if not root.is_dir():
        raise IndexingError(f"dataset root {root} does not exist")
    img_re = _pattern_to_regex(pattern)
    depth_re = _pattern_to_regex(depth_pattern)

    depths: dict[str, Path] = {}
    images = []
    for path in sorted(root.iterdir()):
        if not path.is_file():
            continue
        m = depth_re.match(path.name)
        if m:
            depths[m.group("scene")] = path
            continue
        m = img_re.match(path.name)
        if m:
            angle, temp = m.group("angle"), int(m.group("temp"))
            if angle in ANGLES and temp in COLOR_TEMPS:
                images.append((m.group("scene"), angle, temp, path))

    missing = sorted({scene for scene, _, _, _ in images if scene not in depths})
    if missing:
        raise IndexingError(f"scenes missing a depth map: {', '.join(missing)}")

    records = [
        SceneRecord(scene_id=s, angle=a, color_temp=t, image_path=p, depth_path=depths[s])
        for s, a, t, p in images
    ]
    records.sort(key=lambda r: (r.scene_id, r.angle, r.color_temp))
    return DatasetManifest(records=records, split=split)


def write_manifest(manifest: DatasetManifest, path) -> None:
    """One record per line: scene_id,angle,temp,image_path,depth_path."""
    lines = [
        f"{r.scene_id},{r.angle},{r.color_temp},{r.image_path},{r.depth_path}"
        for r in manifest.records
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_manifest(path, split: str = "train") -> DatasetManifest:
    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        scene, angle, temp, image_path, depth_path = line.split(",")
        records.append(SceneRecord(scene, angle, int(temp), Path(image_path), Path(depth_path)))
    return DatasetManifest(records=records, split=split)


def make_pairs(manifest: DatasetManifest, strategies=STRATEGIES) -> list[TrainingPair]:
    """One training pair per scene per enabled strategy.

    Scenes lacking a required condition are skipped (counted in a warning).
    """
    strategies = tuple(strategies)
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}; expected subset of {STRATEGIES}")
    pairs = []
    skipped = 0
    for scene_id, conds in sorted(manifest.scenes().items()):
        for strategy in strategies:
            in_cond, out_cond, flip = STRATEGY_CONDITIONS[strategy]
            if in_cond not in conds or out_cond not in conds:
                skipped += 1
                continue
            rec_in, rec_out = conds[in_cond], conds[out_cond]
            pairs.append(TrainingPair(
                input_image=rec_in.image_path,
                depth=rec_in.depth_path,
                target_image=rec_out.image_path,
                provenance=strategy,
                flip_input=flip,
                scene_id=scene_id,
            ))
    if skipped:
        log.warning("skipped %d scene/strategy combinations with missing conditions", skipped)
    if not pairs and set(strategies) == set(STRATEGIES):
        raise ConfigError("no training pairs could be built with all strategies enabled")
    return pairs


def hflip(t: torch.Tensor) -> torch.Tensor:
    """Reverse the width axis of a [B,C,H,W] tensor."""
    return t.flip(-1)


def flip_angle(angle: str) -> str:
    """Azimuth after mirroring the image horizontally (W<->E, N and S fixed)."""
    if angle not in _FLIP:
        raise ConfigError(f"unknown angle {angle!r}")
    return _FLIP[angle]


def load_image(path) -> torch.Tensor:
    """Decode an 8-bit RGB PNG to a [1,3,H,W] float tensor in [0,1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as e:
        raise ImageIOError(f"failed to read image {path}: {e}") from e
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)


def load_depth(path) -> torch.Tensor:
    """Decode an 8- or 16-bit grayscale PNG to a [1,1,H,W] float tensor in [0,1]."""
    try:
        with Image.open(path) as im:
            if im.mode in ("I", "I;16", "I;16B", "I;16L"):
                arr = np.asarray(im, dtype=np.float32) / 65535.0
            else:
                arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    except OSError as e:
        raise ImageIOError(f"failed to read depth map {path}: {e}") from e
    return torch.from_numpy(arr).unsqueeze(0).unsqueeze(0)


def _resize(t: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    if t.shape[2:] == torch.Size(size):
        return t
    return F.interpolate(t, size=size, mode="bilinear", align_corners=False)


def load_pair(pair: TrainingPair, target_size: tuple[int, int] | None = None):
    """Load (input, depth, target) tensors for one training pair.

    Horizontal flips mandated by the pair's provenance are applied to all
    three planes; an optional bilinear resize (H, W divisible by 32) follows.
    """
    if target_size is not None and (target_size[0] % 32 or target_size[1] % 32):
        raise ConfigError(f"target_size {target_size} must be divisible by 32")
    image = load_image(pair.input_image)
    depth = load_depth(pair.depth)
    target = load_image(pair.target_image)
    if image.shape[2:] != depth.shape[2:]:
        raise ShapeError(
            f"depth {tuple(depth.shape)} does not match image {tuple(image.shape)} "
            f"for {pair.input_image}"
        )
    if pair.flip_input:
        image, depth, target = hflip(image), hflip(depth), hflip(target)
    if target_size is not None:
        image, depth, target = (_resize(t, tuple(target_size)) for t in (image, depth, target))
    return image, depth, target
