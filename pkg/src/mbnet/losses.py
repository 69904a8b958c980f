"""Training losses: Charbonnier, SSIM, perceptual, and their weighted sum."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, DegenerateInputError, ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.1
    lambda3: float = 0.1

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
            setattr(self, name, v)


def _check_same_shape(x, x_hat):
    if x.shape != x_hat.shape:
        raise ShapeError(f"shapes differ: {tuple(x.shape)} vs {tuple(x_hat.shape)}")


def charbonnier(x: torch.Tensor, x_hat: torch.Tensor, eps: float = 1e-3) -> torch.Tensor:
    """Smooth L1: mean of sqrt((x - x_hat)^2 + eps^2)."""
    _check_same_shape(x, x_hat)
    if eps <= 0:
        raise ConfigError(f"eps must be > 0, got {eps}")
    return torch.sqrt((x - x_hat) ** 2 + eps * eps).mean()


def _gaussian_1d(size, sigma, dtype, device):
    coords = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def ssim(x: torch.Tensor, x_hat: torch.Tensor, *, window_size: int = SSIM_WINDOW,
         sigma: float = SSIM_SIGMA, c1: float = SSIM_C1, c2: float = SSIM_C2,
         allow_padding: bool = False) -> torch.Tensor:
    """Mean structural similarity over channels and valid window positions.

    Gaussian 11x11 window, sigma 1.5, constants for unit dynamic range. Images
    smaller than the window raise unless `allow_padding` enables a reflection
    padding fallback. Computed in float64: the variance terms cancel two
    nearly equal window sums, and float32 noise there is not small against C2.
    """
    _check_same_shape(x, x_hat)
    if x.ndim != 4:
        raise ShapeError(f"expected [B,C,H,W], got {tuple(x.shape)}")
    x = x.double()
    x_hat = x_hat.double()
    h, w = x.shape[2], x.shape[3]
    if h < window_size or w < window_size:
        if not allow_padding:
            raise DegenerateInputError(
                f"image {h}x{w} is smaller than the {window_size}x{window_size} SSIM window"
            )
        pad = window_size // 2
        x = F.pad(x, (pad, pad, pad, pad), mode="reflect")
        x_hat = F.pad(x_hat, (pad, pad, pad, pad), mode="reflect")

    channels = x.shape[1]
    g = _gaussian_1d(window_size, sigma, x.dtype, x.device)
    win_v = g.view(1, 1, window_size, 1).expand(channels, 1, window_size, 1)
    win_h = g.view(1, 1, 1, window_size).expand(channels, 1, 1, window_size)

    def filt(t):  # separable Gaussian window
        return F.conv2d(F.conv2d(t, win_v, groups=channels), win_h, groups=channels)

    mu_x = filt(x)
    mu_y = filt(x_hat)
    var_x = filt(x * x) - mu_x ** 2
    var_y = filt(x_hat * x_hat) - mu_y ** 2
    cov = filt(x * x_hat) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return (num / den).mean()


def ssim_loss(x: torch.Tensor, x_hat: torch.Tensor, **kwargs) -> torch.Tensor:
    """Negated SSIM; minimized at identical images."""
    return -ssim(x, x_hat, **kwargs)


class IdentityExtractor(nn.Module):
    """Default perceptual feature map: the image itself."""

    def forward(self, x):
        return x


class ConvFeatureExtractor(nn.Module):
    """Frozen convolutional feature extractor.

    `layout` lists conv output widths with "M" for 2x2 max pooling; the default
    reproduces a VGG19 prefix up to the third conv of block 3. Weights come
    either from a seeded random init or from an external weight file.
    """

    VGG19_CONV3_3 = (64, 64, "M", 128, 128, "M", 256, 256, 256)

    def __init__(self, layout=VGG19_CONV3_3, in_channels: int = 3, seed: int = 0):
        super().__init__()
        self.layout = tuple(layout)
        ops = []
        convs = {}
        c = in_channels
        idx = 0
        for item in self.layout:
            if item == "M":
                ops.append(nn.MaxPool2d(2, 2))
            else:
                conv = nn.Conv2d(c, int(item), 3, padding=1)
                convs[f"conv{idx}"] = conv
                ops.append(conv)
                ops.append(nn.ReLU(inplace=True))
                c = int(item)
                idx += 1
        self.features = nn.Sequential(*ops)
        self.convs = convs
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            for conv in convs.values():
                nn.init.kaiming_normal_(conv.weight, mode="fan_out", nonlinearity="relu")
                nn.init.zeros_(conv.bias)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        return self.features(x)

    # External weight archive: flat little-endian float32 blob plus a text
    # manifest with one "name shape byte_offset" line per tensor.

    def save_weights(self, manifest_path):
        manifest_path = Path(manifest_path)
        blob_path = manifest_path.with_suffix(".bin")
        lines = []
        offset = 0
        with open(blob_path, "wb") as blob:
            for name, conv in self.convs.items():
                for pname, tensor in (("weight", conv.weight), ("bias", conv.bias)):
                    arr = tensor.detach().numpy().astype("<f4")
                    shape = ",".join(str(s) for s in arr.shape)
                    lines.append(f"{name}.{pname} {shape} {offset}")
                    blob.write(arr.tobytes())
                    offset += arr.nbytes
        manifest_path.write_text("\n".join(lines) + "\n")

    def load_weights(self, manifest_path):
        manifest_path = Path(manifest_path)
        blob_path = manifest_path.with_suffix(".bin")
        blob = blob_path.read_bytes()
        for line in manifest_path.read_text().splitlines():
            if not line.strip():
                continue
            name, shape_s, offset_s = line.split()
            shape = tuple(int(s) for s in shape_s.split(","))
            count = int(np.prod(shape))
            offset = int(offset_s)
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
            mod_name, pname = name.rsplit(".", 1)
            if mod_name not in self.convs:
                raise ConfigError(f"weight file names unknown layer {mod_name!r}")
            param = getattr(self.convs[mod_name], pname)
            if tuple(param.shape) != shape:
                raise ShapeError(
                    f"{name}: file shape {shape} does not match layer shape {tuple(param.shape)}"
                )
            with torch.no_grad():
                param.copy_(torch.from_numpy(arr.copy()))
        return self


def perceptual(x: torch.Tensor, x_hat: torch.Tensor, extractor=None) -> torch.Tensor:
    """Mean absolute difference between extractor features of x and x_hat."""
    _check_same_shape(x, x_hat)
    if extractor is None:
        extractor = IdentityExtractor()
    return (extractor(x) - extractor(x_hat)).abs().mean()


def total_loss(x: torch.Tensor, x_hat: torch.Tensor, weights: LossWeights | None = None,
               eps: float = 1e-3, extractor=None) -> torch.Tensor:
    """Weighted sum: lambda1*charbonnier + lambda2*ssim_loss + lambda3*perceptual."""
    if weights is None:
        weights = LossWeights()
    return (weights.lambda1 * charbonnier(x, x_hat, eps)
            + weights.lambda2 * ssim_loss(x, x_hat)
            + weights.lambda3 * perceptual(x, x_hat, extractor))
