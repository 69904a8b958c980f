"""Bifurcated RGB-D relighting network.

Two weight-independent encoder streams (RGB and depth) feed densely-connected
fusion blocks at strides 8/16/32. Each fused feature drives a dynamic dilated
pyramid that predicts per-pixel convolution kernels at dilations 1/3/5 and
refines the running decoder feature. The decoder upsamples back to full
resolution with multi-scale (1/3/5) convolution blocks and emits a residual
that is added to the input image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError

# encoder tap level -> stride of that feature map
TAP_STRIDES = {3: 8, 4: 16, 5: 32}


def effective_kernel_size(k: int, dilation: int) -> int:
    """Side length of the dense kernel obtained by dilating a k x k kernel."""
    return dilation * (k - 1) + 1


@dataclass
class ModelConfig:
    base_width: int = 64
    stage_channels: tuple[int, ...] | None = None  # conv1..conv5; default (w,4w,8w,16w,32w)
    stage_blocks: tuple[int, ...] = (3, 4, 6, 3)
    kgu_kernel_size: int = 3
    dilations: tuple[int, ...] = (1, 3, 5)
    mid_channels: int = 64
    growth: int = 32
    up_channels: tuple[int, int, int] | None = None  # decoder widths at strides 4/2/1
    use_pretrained_backbone: bool = False
    residual_output: bool = True
    clamp_output: bool = True

    @property
    def tap_strides(self) -> dict[int, int]:
        return dict(TAP_STRIDES)

    def __post_init__(self):
        if self.stage_channels is None:
            w = self.base_width
            self.stage_channels = (w, 4 * w, 8 * w, 16 * w, 32 * w)
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.stage_blocks = tuple(int(b) for b in self.stage_blocks)
        self.dilations = tuple(int(d) for d in self.dilations)
        if self.up_channels is None:
            m = self.mid_channels
            self.up_channels = (m, max(m // 2, 4), max(m // 4, 4))
        self.up_channels = tuple(int(c) for c in self.up_channels)
        self.validate()

    def validate(self):
        k = self.kgu_kernel_size
        if k < 1 or k % 2 == 0:
            raise ConfigError(f"kgu_kernel_size must be odd and >= 1, got {k}")
        if not self.dilations or any(d < 1 for d in self.dilations):
            raise ConfigError(f"dilations must all be >= 1, got {self.dilations}")
        if len(set(self.dilations)) != len(self.dilations):
            raise ConfigError(f"dilations must be distinct, got {self.dilations}")
        if len(self.stage_channels) != 5 or any(c < 1 for c in self.stage_channels):
            raise ConfigError(f"stage_channels must be 5 positive ints, got {self.stage_channels}")
        if any(a >= b for a, b in zip(self.stage_channels, self.stage_channels[1:])):
            raise ConfigError(f"stage_channels must be strictly increasing, got {self.stage_channels}")
        if self.stage_channels[0] != self.base_width:
            raise ConfigError(
                f"base_width ({self.base_width}) must equal stage_channels[0] "
                f"({self.stage_channels[0]})"
            )
        if any(c % 4 != 0 for c in self.stage_channels[1:]):
            raise ConfigError(f"stage_channels[1:] must be divisible by 4, got {self.stage_channels}")
        if len(self.stage_blocks) != 4 or any(b < 1 for b in self.stage_blocks):
            raise ConfigError(f"stage_blocks must be 4 positive ints, got {self.stage_blocks}")
        if self.mid_channels < 1 or self.growth < 1:
            raise ConfigError("mid_channels and growth must be positive")
        if len(self.up_channels) != 3 or any(c < 1 for c in self.up_channels):
            raise ConfigError(f"up_channels must be 3 positive ints, got {self.up_channels}")


@dataclass
class EncoderTaps:
    """Intermediate encoder features at strides 8, 16 and 32."""

    f3: torch.Tensor
    f4: torch.Tensor
    f5: torch.Tensor

    def at(self, level: int) -> torch.Tensor:
        return {3: self.f3, 4: self.f4, 5: self.f5}[level]


@dataclass
class KernelField:
    """Per-pixel kernel weights [B, k*k, H, W] for one dilation branch."""

    weights: torch.Tensor
    dilation: int

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"kernel field must be rank 4, got {tuple(self.weights.shape)}")
        k = math.isqrt(self.weights.shape[1])
        if k * k != self.weights.shape[1]:
            raise ShapeError(f"kernel channel count {self.weights.shape[1]} is not a perfect square")
        if self.dilation < 1:
            raise ConfigError(f"dilation must be >= 1, got {self.dilation}")

    @property
    def kernel_size(self) -> int:
        return math.isqrt(self.weights.shape[1])


def _as_weights(kernels) -> torch.Tensor:
    return kernels.weights if isinstance(kernels, KernelField) else kernels


def ktu(kernels, dilation: int) -> torch.Tensor:
    """Dense-equivalent dilated kernel obtained by zero insertion.

    Takes per-pixel weights [B, k*k, H, W] and returns [B, S*S, H, W] with
    S = dilation*(k-1)+1, where the k*k source values sit at row/column
    indices {0, d, 2d, ...} and every other entry is zero.
    """
    if dilation < 1:
        raise ConfigError(f"dilation must be >= 1, got {dilation}")
    w = _as_weights(kernels)
    b, k2, h, width = w.shape
    k = math.isqrt(k2)
    if k * k != k2:
        raise ShapeError(f"kernel channel count {k2} is not a perfect square")
    size = effective_kernel_size(k, dilation)
    dense = w.new_zeros(b, size * size, h, width)
    for i in range(k):
        for j in range(k):
            dense[:, i * dilation * size + j * dilation] = w[:, i * k + j]
    return dense


def dynamic_conv(feature: torch.Tensor, kernels, dilation: int) -> torch.Tensor:
    """Per-pixel convolution with predicted channel-shared kernels.

    out[b,c,y,x] = sum_{i,j} kernels[b, i*k+j, y, x]
                   * feature[b, c, y + d*(i-k//2), x + d*(j-k//2)]
    with zero padding outside the image.
    """
    if dilation < 1:
        raise ConfigError(f"dilation must be >= 1, got {dilation}")
    w = _as_weights(kernels)
    if feature.ndim != 4 or w.ndim != 4:
        raise ShapeError("feature and kernels must be rank 4")
    if feature.shape[0] != w.shape[0] or feature.shape[2:] != w.shape[2:]:
        raise ShapeError(
            f"kernel field {tuple(w.shape)} does not match feature {tuple(feature.shape)}"
        )
    b, c, h, width = feature.shape
    k2 = w.shape[1]
    k = math.isqrt(k2)
    if k * k != k2:
        raise ShapeError(f"kernel channel count {k2} is not a perfect square")
    pad = dilation * (k - 1) // 2
    patches = F.unfold(feature, kernel_size=k, dilation=dilation, padding=pad)
    patches = patches.view(b, c, k2, h, width)
    return (patches * w.unsqueeze(1)).sum(dim=2)


def replicate_depth(depth: torch.Tensor) -> torch.Tensor:
    """Replicate a 1-channel depth map to 3 channels for the depth stream stem."""
    if depth.ndim != 4 or depth.shape[1] != 1:
        raise ShapeError(f"depth must be [B,1,H,W], got {tuple(depth.shape)}")
    return depth.expand(-1, 3, -1, -1)


class Bottleneck(nn.Module):
    """1x1 -> 3x3 -> 1x1 residual block (ResNet-50 style)."""

    def __init__(self, in_ch, planes, out_ch, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, planes, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.conv3 = nn.Conv2d(planes, out_ch, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.downsample = None

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return self.relu(out + identity)


class EncoderStream(nn.Module):
    """5-stage residual encoder; exposes taps at strides 8/16/32."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c1, c2, c3, c4, c5 = cfg.stage_channels
        n2, n3, n4, n5 = cfg.stage_blocks
        self.stem = nn.Sequential(
            nn.Conv2d(3, c1, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(c1),
            nn.ReLU(inplace=True),
        )
        self.pool = nn.MaxPool2d(3, stride=2, padding=1)
        self.stage2 = self._make_stage(c1, c2, n2, stride=1)
        self.stage3 = self._make_stage(c2, c3, n3, stride=2)
        self.stage4 = self._make_stage(c3, c4, n4, stride=2)
        self.stage5 = self._make_stage(c4, c5, n5, stride=2)

    @staticmethod
    def _make_stage(in_ch, out_ch, blocks, stride):
        planes = out_ch // 4
        layers = [Bottleneck(in_ch, planes, out_ch, stride=stride)]
        layers += [Bottleneck(out_ch, planes, out_ch) for _ in range(blocks - 1)]
        return nn.Sequential(*layers)

    def forward(self, x) -> EncoderTaps:
        x = self.pool(self.stem(x))
        x = self.stage2(x)
        f3 = self.stage3(x)
        f4 = self.stage4(f3)
        f5 = self.stage5(f4)
        return EncoderTaps(f3=f3, f4=f4, f5=f5)


class DenseBlock(nn.Module):
    """Densely connected 3x3 conv stack: layer i consumes in_ch + i*growth channels."""

    def __init__(self, in_ch, growth, num_layers):
        super().__init__()
        self.layers = nn.ModuleList(
            nn.Conv2d(in_ch + i * growth, growth, 3, padding=1) for i in range(num_layers)
        )
        self.out_channels = in_ch + num_layers * growth

    def forward(self, x):
        feats = [x]
        for conv in self.layers:
            feats.append(F.relu(conv(torch.cat(feats, dim=1))))
        return torch.cat(feats, dim=1)


class FusionBlock(nn.Module):
    """Concatenate RGB and depth taps, run a dense block, project to mid channels."""

    def __init__(self, rgb_ch, depth_ch, mid, growth, num_layers=4):
        super().__init__()
        self.dense = DenseBlock(rgb_ch + depth_ch, growth, num_layers)
        self.proj = nn.Conv2d(self.dense.out_channels, mid, 1)

    def forward(self, rgb_tap, depth_tap):
        if rgb_tap.shape[2:] != depth_tap.shape[2:]:
            raise ShapeError(
                f"tap sizes differ: {tuple(rgb_tap.shape)} vs {tuple(depth_tap.shape)}"
            )
        x = torch.cat([rgb_tap, depth_tap], dim=1)
        return F.relu(self.proj(self.dense(x)))


class KernelGenerator(nn.Module):
    """4-layer dense block plus one 1x1 head per dilation branch."""

    def __init__(self, mid, growth, k, num_branches):
        super().__init__()
        self.kernel_size = k
        self.dense = DenseBlock(mid, growth, num_layers=4)
        self.heads = nn.ModuleList(
            nn.Conv2d(self.dense.out_channels, k * k, 1) for _ in range(num_branches)
        )

    def forward(self, fused):
        x = self.dense(fused)
        return tuple(head(x) for head in self.heads)


class DynamicDilatedPyramid(nn.Module):
    """Refine the decoder feature with predicted kernels at several dilations."""

    def __init__(self, mid, growth, k, dilations, decoder_in_ch):
        super().__init__()
        self.dilations = tuple(dilations)
        self.reduce = nn.Conv2d(decoder_in_ch, mid, 1)
        self.generator = KernelGenerator(mid, growth, k, len(self.dilations))
        self.branch_convs = nn.ModuleList(
            nn.Conv2d(mid, mid, 3, padding=1) for _ in self.dilations
        )
        self.combine = nn.Conv2d(mid, mid, 3, padding=1)

    def kernel_fields(self, fused) -> tuple[KernelField, ...]:
        weights = self.generator(fused)
        return tuple(KernelField(w, d) for w, d in zip(weights, self.dilations))

    def forward(self, fused, decoder_feat):
        if fused.shape[2:] != decoder_feat.shape[2:]:
            raise ShapeError(
                f"fused {tuple(fused.shape)} and decoder feature "
                f"{tuple(decoder_feat.shape)} resolutions differ"
            )
        reduced = self.reduce(decoder_feat)
        acc = reduced
        for fld, conv in zip(self.kernel_fields(fused), self.branch_convs):
            acc = acc + conv(dynamic_conv(reduced, fld.weights, fld.dilation))
        return self.combine(acc)


class MultiScaleConvBlock(nn.Module):
    """Parallel 1/3/5 convolutions, concatenated and projected."""

    KERNEL_SIZES = (1, 3, 5)

    def __init__(self, in_ch, width, out_ch):
        super().__init__()
        self.branches = nn.ModuleList(
            nn.Conv2d(in_ch, width, ks, padding=ks // 2) for ks in self.KERNEL_SIZES
        )
        self.proj = nn.Conv2d(len(self.KERNEL_SIZES) * width, out_ch, 1)

    def forward(self, x):
        x = torch.cat([F.relu(b(x)) for b in self.branches], dim=1)
        return F.relu(self.proj(x))


class MBNet(nn.Module):
    """Depth-guided one-to-one relighting network."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        c3, c4, c5 = config.stage_channels[2:]
        mid, growth, k = config.mid_channels, config.growth, config.kgu_kernel_size

        self.rgb_stream = EncoderStream(config)
        self.depth_stream = EncoderStream(config)
        self.fusions = nn.ModuleDict({
            str(lvl): FusionBlock(ch, ch, mid, growth)
            for lvl, ch in zip((3, 4, 5), (c3, c4, c5))
        })
        self.pyramids = nn.ModuleDict({
            "3": DynamicDilatedPyramid(mid, growth, k, config.dilations, decoder_in_ch=mid),
            "4": DynamicDilatedPyramid(mid, growth, k, config.dilations, decoder_in_ch=mid),
            "5": DynamicDilatedPyramid(mid, growth, k, config.dilations, decoder_in_ch=c5),
        })
        self.stage16 = MultiScaleConvBlock(mid + mid + c4, mid, mid)
        self.stage8 = MultiScaleConvBlock(mid + mid + c3, mid, mid)
        u1, u2, u3 = config.up_channels
        self.up_convs = nn.ModuleList([
            nn.Conv2d(mid, u1, 3, padding=1),
            nn.Conv2d(u1, u2, 3, padding=1),
            nn.Conv2d(u2, u3, 3, padding=1),
        ])
        self.head = nn.Conv2d(u3, 3, 3, padding=1)
        self._init_weights()

    def _init_weights(self):
        # He init + BN for the residual encoders; small-std init for the
        # norm-free fusion/pyramid/decoder convs (the kernel-product path is
        # multiplicative, so unit-variance init blows up activation scale)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.normal_(m.weight, std=0.01)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
        for stream in (self.rgb_stream, self.depth_stream):
            for m in stream.modules():
                if isinstance(m, nn.Conv2d):
                    nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
        if self.config.residual_output:
            # start from the identity mapping
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    # -- encoder ops ---------------------------------------------------------

    def _check_spatial(self, x, what):
        h, w = x.shape[2], x.shape[3]
        if h % 32 != 0 or w % 32 != 0:
            raise ShapeError(f"{what} size {h}x{w} must be divisible by 32")

    def encode_rgb(self, image: torch.Tensor) -> EncoderTaps:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"image must be [B,3,H,W], got {tuple(image.shape)}")
        self._check_spatial(image, "image")
        return self.rgb_stream(image)

    def encode_depth(self, depth: torch.Tensor) -> EncoderTaps:
        self._check_spatial(depth, "depth")
        return self.depth_stream(replicate_depth(depth))

    def fuse(self, rgb_tap, depth_tap, level: int) -> torch.Tensor:
        return self.fusions[str(level)](rgb_tap, depth_tap)

    def generate_kernels(self, fused, level: int) -> tuple[KernelField, ...]:
        return self.pyramids[str(level)].kernel_fields(fused)

    def apply_pyramid(self, fused, decoder_feat, level: int) -> torch.Tensor:
        return self.pyramids[str(level)](fused, decoder_feat)

    # -- decoder -------------------------------------------------------------

    @staticmethod
    def _up2(x):
        return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)

    def _finish(self, x):
        for conv in self.up_convs:
            x = F.relu(conv(self._up2(x)))
        return self.head(x)

    def decode(self, rgb_taps: EncoderTaps, pyramid_outs) -> torch.Tensor:
        """Run the decoder on precomputed pyramid outputs at strides 32/16/8."""
        d32, d16, d8 = pyramid_outs
        x = self._up2(d32)
        if x.shape[2:] != d16.shape[2:] or x.shape[2:] != rgb_taps.f4.shape[2:]:
            raise ShapeError("stride-16 features do not align")
        x = self.stage16(torch.cat([x, d16, rgb_taps.f4], dim=1))
        x = self._up2(x)
        if x.shape[2:] != d8.shape[2:] or x.shape[2:] != rgb_taps.f3.shape[2:]:
            raise ShapeError("stride-8 features do not align")
        x = self.stage8(torch.cat([x, d8, rgb_taps.f3], dim=1))
        return self._finish(x)

    def forward(self, image: torch.Tensor, depth: torch.Tensor,
                clamp: bool | None = None) -> torch.Tensor:
        if depth.ndim != 4 or image.ndim != 4 or image.shape[2:] != depth.shape[2:] \
                or image.shape[0] != depth.shape[0]:
            raise ShapeError(
                f"image {tuple(image.shape)} and depth {tuple(depth.shape)} do not match"
            )
        rgb = self.encode_rgb(image)
        dep = self.encode_depth(depth)
        fe3 = self.fuse(rgb.f3, dep.f3, 3)
        fe4 = self.fuse(rgb.f4, dep.f4, 4)
        fe5 = self.fuse(rgb.f5, dep.f5, 5)

        d32 = self.apply_pyramid(fe5, rgb.f5, 5)
        x = self._up2(d32)
        d16 = self.apply_pyramid(fe4, x, 4)
        x = self.stage16(torch.cat([x, d16, rgb.f4], dim=1))
        x = self._up2(x)
        d8 = self.apply_pyramid(fe3, x, 3)
        x = self.stage8(torch.cat([x, d8, rgb.f3], dim=1))
        residual = self._finish(x)

        out = image + residual if self.config.residual_output else residual
        if clamp is None:
            clamp = self.config.clamp_output
        return out.clamp(0.0, 1.0) if clamp else out


def build_model(config: ModelConfig, backbone_init=None) -> MBNet:
    """Construct the network; `backbone_init(model)` may load pretrained streams."""
    config.validate()
    if config.use_pretrained_backbone and backbone_init is None:
        raise ConfigError(
            "use_pretrained_backbone is set but no backbone initializer was supplied"
        )
    model = MBNet(config)
    if backbone_init is not None:
        backbone_init(model)
    return model
