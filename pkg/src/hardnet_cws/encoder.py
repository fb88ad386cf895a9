"""Harmonic densely connected encoder with divisor-based shortcuts."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import torch
from torch import nn

from .norms import IBN, PReLU, SwitchNorm

SD_TOLERANCE = 1e-3
# Sample standard deviation (ddof=1) reproduces the published amplitudes on
# the shipped schedules; population sd does not.
SD_DDOF = 1


class ScheduleError(ValueError):
    pass


def divisors(n: int) -> list[int]:
    return [f for f in range(1, n + 1) if n % f == 0]


def link_set(n: int, k: int) -> list[int]:
    """Indices feeding layer ``k`` of an ``n``-layer block (0 is the block input).

    Layer k receives a shortcut from every layer at a distance equal to a
    divisor of n.
    """
    if n < 1:
        raise ValueError(f"block depth must be >= 1, got {n}")
    if not 1 <= k <= n:
        raise ValueError(f"layer index {k} outside 1..{n}")
    return sorted({k - f for f in divisors(n) if f <= k})


def _round_even(x: float) -> int:
    return max(2, int(round(x / 2.0)) * 2)


@dataclass
class BlockGraph:
    depth: int
    in_channels: int
    links: list[list[int]]
    in_widths: list[int]
    out_widths: list[int]
    outbound: list[int]
    output_layers: list[int]

    @property
    def out_channels(self) -> int:
        return sum(self.out_widths[k - 1] for k in self.output_layers)


def build_block(depth: int, growth: int, multiplier: float, in_channels: int | None = None) -> BlockGraph:
    """Wire an ``depth``-layer harmonic block.

    Each layer's width is ``growth * multiplier ** outbound`` rounded to the
    nearest even integer, where ``outbound`` counts the later layers that
    read it. ``in_channels`` defaults to ``growth``.
    """
    if depth < 1 or growth < 1 or multiplier < 1:
        raise ValueError("depth, growth and multiplier must all be >= 1")
    if in_channels is None:
        in_channels = growth
    links = [link_set(depth, k) for k in range(1, depth + 1)]
    outbound = [sum(1 for later in links[j:] if j in later) for j in range(1, depth + 1)]
    out_widths = [_round_even(growth * multiplier**o) for o in outbound]
    widths = [in_channels] + out_widths
    in_widths = [sum(widths[i] for i in ls) for ls in links]
    output_layers = [k for k in range(1, depth + 1) if k % 2 == 1 or k == depth]
    return BlockGraph(depth, in_channels, links, in_widths, out_widths, outbound, output_layers)


@dataclass
class BlockSpec:
    layers: int
    growth: int
    multiplier: float
    out_channels: int
    downsample: bool = False


@dataclass
class BlockSchedule:
    name: str
    blocks: list[BlockSpec]
    reference_sd: float | None = None

    def __post_init__(self):
        if len(self.blocks) < 4:
            raise ScheduleError(f"schedule {self.name!r} needs at least 4 blocks, has {len(self.blocks)}")
        for i, b in enumerate(self.blocks, 1):
            if b.layers < 1:
                raise ScheduleError(f"block {i} of {self.name!r} has {b.layers} layers")

    @property
    def layer_counts(self) -> list[int]:
        return [b.layers for b in self.blocks]

    @property
    def total_stride(self) -> int:
        return 4 * 2 ** sum(b.downsample for b in self.blocks[:-1])

    def to_dict(self) -> dict:
        return {"name": self.name, "reference_sd": self.reference_sd, "blocks": [asdict(b) for b in self.blocks]}

    @classmethod
    def from_dict(cls, d: dict) -> "BlockSchedule":
        try:
            blocks = [BlockSpec(**b) for b in d["blocks"]]
        except (KeyError, TypeError) as e:
            raise ScheduleError(f"malformed schedule: {e}") from None
        sched = cls(d.get("name", "custom"), blocks, d.get("reference_sd"))
        sched.validate()
        return sched

    def validate(self) -> None:
        if self.reference_sd is None:
            return
        sd = schedule_stats(self)["sd"]
        if abs(sd - self.reference_sd) > SD_TOLERANCE:
            raise ScheduleError(
                f"schedule {self.name!r}: layer-count sd {sd:.4f} differs from reference {self.reference_sd}"
            )


def schedule_stats(s: BlockSchedule | list[int], ddof: int = SD_DDOF) -> dict[str, float]:
    counts = s.layer_counts if isinstance(s, BlockSchedule) else list(s)
    if not counts:
        raise ValueError("empty schedule")
    mean = sum(counts) / len(counts)
    denom = len(counts) - ddof
    if denom <= 0:
        return {"mean": mean, "sd": 0.0}
    return {"mean": mean, "sd": math.sqrt(sum((c - mean) ** 2 for c in counts) / denom)}


def load_schedule(path: str | Path) -> BlockSchedule:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ScheduleError(f"schedule file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ScheduleError(f"{path}: invalid JSON ({e})") from None
    return BlockSchedule.from_dict(data)


def builtin_schedule(name: str) -> BlockSchedule:
    """Shipped schedules: ``"dfus"`` (original) and ``"cws"`` (smoothed)."""
    try:
        text = resources.files("hardnet_cws.configs").joinpath(f"{name}.json").read_text()
    except FileNotFoundError:
        raise ScheduleError(f"no built-in schedule named {name!r}") from None
    return BlockSchedule.from_dict(json.loads(text))


@dataclass
class StemConfig:
    in_channels: int = 4
    widths: tuple[int, int] = (16, 24)
    strides: tuple[int, int] = (2, 2)
    ibn_ratio: float = 0.5

    def to_dict(self) -> dict:
        return {"in_channels": self.in_channels, "widths": list(self.widths),
                "strides": list(self.strides), "ibn_ratio": self.ibn_ratio}

    @classmethod
    def from_dict(cls, d: dict) -> "StemConfig":
        return cls(d["in_channels"], tuple(d["widths"]), tuple(d["strides"]), d.get("ibn_ratio", 0.5))


class ConvNormAct(nn.Sequential):
    def __init__(self, cin: int, cout: int, kernel: int = 3, stride: int = 1, norm: nn.Module | None = None):
        super().__init__()
        self.add_module("conv", nn.Conv2d(cin, cout, kernel, stride, kernel // 2, bias=False))
        self.add_module("norm", norm if norm is not None else nn.BatchNorm2d(cout))
        self.add_module("act", PReLU(cout))


class Stem(nn.Module):
    def __init__(self, cfg: StemConfig):
        super().__init__()
        w1, w2 = cfg.widths
        s1, s2 = cfg.strides
        self.in_channels = cfg.in_channels
        self.block1 = ConvNormAct(cfg.in_channels, w1, 3, s1, IBN(w1, cfg.ibn_ratio))
        self.block2 = ConvNormAct(w1, w2, 3, s2, SwitchNorm(w2))
        self.out_channels = w2
        self.stride = s1 * s2

    def forward(self, x):
        return self.block2(self.block1(x))


class HarDBlock(nn.Module):
    def __init__(self, in_channels: int, spec: BlockSpec):
        super().__init__()
        self.graph = build_block(spec.layers, spec.growth, spec.multiplier, in_channels)
        self.layers = nn.ModuleList(
            ConvNormAct(cin, cout) for cin, cout in zip(self.graph.in_widths, self.graph.out_widths)
        )
        self.transition = ConvNormAct(self.graph.out_channels, spec.out_channels, kernel=1)
        self.out_channels = spec.out_channels

    def forward(self, x):
        outs = [x]
        for layer, links in zip(self.layers, self.graph.links):
            inp = outs[links[0]] if len(links) == 1 else torch.cat([outs[i] for i in links], 1)
            outs.append(layer(inp))
        return self.transition(torch.cat([outs[k] for k in self.graph.output_layers], 1))


class Downsample(nn.Sequential):
    """Stride-2 depthwise 3x3 convolution."""

    def __init__(self, channels: int):
        super().__init__()
        self.add_module("conv", nn.Conv2d(channels, channels, 3, 2, 1, groups=channels, bias=False))
        self.add_module("norm", nn.BatchNorm2d(channels))


class HarDNetEncoder(nn.Module):
    """Stem followed by the scheduled harmonic blocks.

    ``forward`` returns one feature map per stride level, the last block at
    each level, ordered fine to coarse.
    """

    def __init__(self, stem: StemConfig, schedule: BlockSchedule):
        super().__init__()
        self.stem = Stem(stem)
        self.schedule = schedule
        blocks, downs = [], []
        ch = self.stem.out_channels
        self.level_channels: list[int] = []
        for i, spec in enumerate(schedule.blocks):
            block = HarDBlock(ch, spec)
            blocks.append(block)
            ch = block.out_channels
            last = i == len(schedule.blocks) - 1
            if spec.downsample and not last:
                downs.append(Downsample(ch))
                self.level_channels.append(ch)
            else:
                downs.append(nn.Identity())
        self.level_channels.append(ch)
        self.blocks = nn.ModuleList(blocks)
        self.downs = nn.ModuleList(downs)
        self.total_stride = self.stem.stride * 2 ** (len(self.level_channels) - 1)
        self.strides = [self.stem.stride * 2**i for i in range(len(self.level_channels))]

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.shape[1] != self.stem.in_channels:
            raise ValueError(f"encoder expects {self.stem.in_channels} input channels, got {x.shape[1]}")
        h, w = x.shape[-2:]
        if h % self.total_stride or w % self.total_stride:
            raise ValueError(
                f"input size {h}x{w} is not divisible by the encoder's total stride {self.total_stride}"
            )
        x = self.stem(x)
        pyramid = []
        for i, (block, down) in enumerate(zip(self.blocks, self.downs)):
            x = block(x)
            if isinstance(down, Downsample):
                pyramid.append(x)
                x = down(x)
        pyramid.append(x)
        return pyramid


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
