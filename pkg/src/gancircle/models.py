"""Generators G (LR -> HR), F (HR -> LR) and the Wasserstein critics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .resample import upsample2_torch

MODES = ("supervised", "semi", "unsupervised")
DIRECTIONS = ("G", "F")

FEATURE_FILTERS = (64, 54, 48, 43, 39, 35, 31, 28, 25, 22, 18, 16)
RECON_FILTERS = {"A1": 24, "B1": 8, "B2": 8, "C1": 32, "C2": 16, "output": 1}
CRITIC_FILTERS = (64, 64, 128, 128, 256, 256, 512, 512)
CRITIC_STRIDES = (1, 2, 1, 2, 1, 2, 1, 2)  # alternating from 1: an assumption, the layout only fixes filters


class ShapeError(ValueError):
    pass


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


@dataclass
class GeneratorConfig:
    direction: str = "G"
    mode: str = "supervised"
    feature_filters: tuple = FEATURE_FILTERS
    recon_filters: dict = field(default_factory=lambda: dict(RECON_FILTERS))
    leaky_slope: float = 0.1
    dropout_keep: float = 0.8
    upscale_factor: int = 2
    use_bicubic_skip: Optional[bool] = None

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be 'G' or 'F', got {self.direction!r}")
        _check_mode(self.mode)
        self.feature_filters = tuple(int(n) for n in self.feature_filters)
        if len(self.feature_filters) != 12:
            raise ValueError(f"expected 12 feature filter counts, got {len(self.feature_filters)}")
        missing = set(RECON_FILTERS) - set(self.recon_filters)
        extra = set(self.recon_filters) - set(RECON_FILTERS)
        if missing or extra:
            raise ValueError(f"recon_filters keys must be {sorted(RECON_FILTERS)}")
        self.recon_filters = {k: int(self.recon_filters[k]) for k in RECON_FILTERS}
        for name, n in list(enumerate(self.feature_filters, 1)) + list(self.recon_filters.items()):
            if n <= 0:
                raise ValueError(f"filter count for layer {name} must be positive, got {n}")
        if self.recon_filters["output"] != 1:
            raise ValueError("output layer must produce a single channel")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError(f"dropout_keep must lie in (0, 1], got {self.dropout_keep}")
        if self.upscale_factor != 2:
            raise ValueError("only x2 super-resolution is supported")
        skip = self.direction == "G" and self.mode != "unsupervised"
        if self.use_bicubic_skip is None:
            self.use_bicubic_skip = skip
        elif bool(self.use_bicubic_skip) != skip:
            raise ValueError("bicubic skip is used by G in supervised/semi modes only")

    @property
    def strides(self) -> tuple:
        """Per-feature-block conv strides."""
        s = [1] * 12
        if self.mode == "unsupervised":
            s[0] = 2
        elif self.direction == "F":
            s[0] = s[1] = 2
        return tuple(s)


@dataclass
class DiscriminatorConfig:
    conv_filters: tuple = CRITIC_FILTERS
    strides: tuple = CRITIC_STRIDES
    kernel_size: int = 4
    fc_units: int = 1024
    leaky_slope: float = 0.1
    input_size: int = 64

    def __post_init__(self):
        self.conv_filters = tuple(int(n) for n in self.conv_filters)
        self.strides = tuple(int(s) for s in self.strides)
        if len(self.conv_filters) != len(self.strides):
            raise ValueError("conv_filters and strides must have equal length")
        for i, n in enumerate(self.conv_filters, 1):
            if n <= 0:
                raise ValueError(f"filter count for critic conv {i} must be positive, got {n}")
        if any(s not in (1, 2) for s in self.strides):
            raise ValueError("critic strides must be 1 or 2")
        if self.kernel_size <= 0 or self.fc_units <= 0:
            raise ValueError("kernel_size and fc_units must be positive")
        if self.input_size % self.reduction or self.input_size // self.reduction < 2:
            raise ValueError(f"input_size {self.input_size} must be a multiple of {self.reduction} "
                             f"and at least {2 * self.reduction}")

    @property
    def reduction(self) -> int:
        return 2 ** sum(s == 2 for s in self.strides)


def he_std(filter_size: int, n_filters: int) -> float:
    """sqrt(2 / m) with m = filter_size**2 * n_filters."""
    return math.sqrt(2.0 / (filter_size**2 * n_filters))


class FeatureBlock(nn.Module):
    def __init__(self, cin, cout, stride, slope, keep):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
        self.act = nn.LeakyReLU(slope)
        self.drop = nn.Dropout(p=1.0 - keep)

    def forward(self, x):
        return self.drop(self.act(self.conv(x)))


class Generator(nn.Module):
    """Feature extraction (12 dense-skip blocks) + network-in-network reconstruction.

    Outputs of every feature block are concatenated; blocks that run before a
    stride-2 block are area-pooled to the final feature resolution first.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        slope = cfg.leaky_slope
        self.feat = nn.ModuleDict()
        cin = 1
        for i, (n, s) in enumerate(zip(cfg.feature_filters, cfg.strides), 1):
            self.feat[f"{i:02d}"] = FeatureBlock(cin, n, s, slope, cfg.dropout_keep)
            cin = n
        total = sum(cfg.feature_filters)
        r = cfg.recon_filters
        merged = r["A1"] + r["B2"] + r["C2"]
        self.recon = nn.ModuleDict({
            "A1": nn.Conv2d(total, r["A1"], 1),
            "B1": nn.Conv2d(total, r["B1"], 1),
            "B2": nn.Conv2d(r["B1"], r["B2"], 3, padding=1),
            "C1": nn.Conv2d(total, r["C1"], 1),
            "C2": nn.Conv2d(r["C1"], r["C2"], 3, padding=1),
            "up": nn.ConvTranspose2d(merged, merged, 4, stride=2, padding=1),
            "out": nn.Conv2d(merged, r["output"], 3, padding=1),
        })
        self.act = nn.LeakyReLU(slope)

    @property
    def downsampling(self) -> int:
        return int(np.prod(self.cfg.strides))

    def output_size(self, h: int, w: int) -> tuple:
        self.check_input(h, w)
        return (2 * h // self.downsampling, 2 * w // self.downsampling)

    def check_input(self, h: int, w: int) -> None:
        d = self.downsampling
        for name, n in (("height", h), ("width", w)):
            if n < d or n % d:
                raise ShapeError(
                    f"input {name} {n} is incompatible with generator {self.cfg.direction} "
                    f"({self.cfg.mode}): must be a positive multiple of {d}"
                )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 1:
            raise ShapeError(f"expected an (N, 1, H, W) batch, got shape {tuple(x.shape)}")
        self.check_input(*x.shape[-2:])
        feats = []
        h = x
        for block in self.feat.values():
            h = block(h)
            feats.append(h)
        size = h.shape[-1]
        feats = [f if f.shape[-1] == size else F.avg_pool2d(f, f.shape[-1] // size) for f in feats]
        z = torch.cat(feats, dim=1)
        a = self.act(self.recon["A1"](z))
        b = self.act(self.recon["B2"](self.act(self.recon["B1"](z))))
        c = self.act(self.recon["C2"](self.act(self.recon["C1"](z))))
        u = self.act(self.recon["up"](torch.cat([a, b, c], dim=1)))
        residual = self.recon["out"](u)
        if self.cfg.use_bicubic_skip:
            return residual + upsample2_torch(x, "bicubic")
        return residual


class Discriminator(nn.Module):
    """Critic: 8 x (conv, instance norm, leaky ReLU), FC-1024, FC-1. Unbounded score."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        self.conv = nn.ModuleDict()
        cin = 1
        for i, (n, s) in enumerate(zip(cfg.conv_filters, cfg.strides), 1):
            self.conv[f"{i:02d}"] = nn.ModuleDict({
                "conv": nn.Conv2d(cin, n, cfg.kernel_size, stride=s),
                "norm": nn.InstanceNorm2d(n, eps=1e-5, affine=True),
            })
            cin = n
        side = cfg.input_size // cfg.reduction
        self.fc1 = nn.Linear(cin * side * side, cfg.fc_units)
        self.fc2 = nn.Linear(cfg.fc_units, 1)
        self.act = nn.LeakyReLU(cfg.leaky_slope)

    def _pad(self, stride):
        # zero padding that keeps size (stride 1) or halves it (stride 2)
        k = self.cfg.kernel_size
        total = k - 1 if stride == 1 else k - 2
        lo = total // 2
        return (lo, total - lo, lo, total - lo)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s = self.cfg.input_size
        if x.dim() != 4 or x.shape[1] != 1:
            raise ShapeError(f"expected an (N, 1, H, W) batch, got shape {tuple(x.shape)}")
        for name, n in (("height", x.shape[-2]), ("width", x.shape[-1])):
            if n != s:
                raise ShapeError(f"critic input {name} {n} does not match configured input_size {s}")
        h = x
        for stage, stride in zip(self.conv.values(), self.cfg.strides):
            h = F.pad(h, self._pad(stride))
            h = self.act(stage["norm"](stage["conv"](h)))
        h = self.act(self.fc1(h.flatten(1)))
        return self.fc2(h).squeeze(1)


def init_weights(net: nn.Module, seed: int) -> nn.Module:
    """He-style init: conv kernels ~ N(0, 2 / (fs^2 * n_f)), biases 0.

    Fully connected layers use the fan-in variant sqrt(2 / in_features).
    Draw order follows ``named_modules`` so it is fixed by the config.
    """
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for _, m in net.named_modules():
            if isinstance(m, nn.ConvTranspose2d):
                std = he_std(m.kernel_size[0], m.out_channels)
            elif isinstance(m, nn.Conv2d):
                std = he_std(m.kernel_size[0], m.out_channels)
            elif isinstance(m, nn.Linear):
                std = math.sqrt(2.0 / m.in_features)
            elif isinstance(m, nn.InstanceNorm2d):
                m.weight.fill_(1.0)
                m.bias.zero_()
                continue
            else:
                continue
            m.weight.normal_(0.0, std, generator=gen)
            m.bias.zero_()
    return net


def build_generator(cfg: GeneratorConfig, seed: int) -> Generator:
    return init_weights(Generator(cfg), seed)


def build_discriminator(cfg: DiscriminatorConfig, seed: int) -> Discriminator:
    return init_weights(Discriminator(cfg), seed)


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def layer_parameter_counts(net: nn.Module) -> dict:
    """Parameter count per layer id (weight + bias of one conv/linear/norm)."""
    counts = {}
    for name, p in net.named_parameters():
        layer = name.rsplit(".", 1)[0]
        counts[layer] = counts.get(layer, 0) + p.numel()
    return counts


@dataclass
class ModelParams:
    """Ordered (layer_id, shape, values) records of one network."""

    entries: list
    seed: Optional[int] = None

    @classmethod
    def from_module(cls, net: nn.Module, prefix: str, seed: Optional[int] = None) -> "ModelParams":
        entries = [
            (f"{prefix}.{name}", tuple(t.shape), t.detach().cpu().numpy().copy())
            for name, t in net.state_dict().items()
        ]
        return cls(entries, seed)

    def __eq__(self, other):
        if not isinstance(other, ModelParams) or len(self.entries) != len(other.entries):
            return NotImplemented if not isinstance(other, ModelParams) else False
        for (n1, s1, v1), (n2, s2, v2) in zip(self.entries, other.entries):
            if n1 != n2 or s1 != s2 or v1.dtype != v2.dtype or v1.tobytes() != v2.tobytes():
                return False
        return True

    @property
    def count(self) -> int:
        return sum(int(np.prod(s)) for _, s, _ in self.entries)
