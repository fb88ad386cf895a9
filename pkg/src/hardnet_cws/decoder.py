"""Large-window attention decoder with MLP-Mixer and pyramid pooling context."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn


class DecoderConfigError(ValueError):
    pass


@dataclass
class DecoderConfig:
    embed_dim: int = 32
    heads: int = 2
    patch: int = 2
    ratios: tuple[int, ...] = (2, 4, 8)
    mixer_depth: int = 2
    mixer_tokens: int = 4
    spp_bins: tuple[int, ...] = (1, 2, 3, 6)
    companion_stages: int = 3

    def __post_init__(self):
        self.ratios = tuple(self.ratios)
        self.spp_bins = tuple(self.spp_bins)
        if any(r < 2 for r in self.ratios):
            raise DecoderConfigError(f"window ratios must be >= 2, got {self.ratios}")
        if self.companion_stages < 1:
            raise DecoderConfigError("at least one companion stage is required")
        if self.embed_dim % self.heads:
            raise DecoderConfigError("embed_dim must be divisible by heads")
        if self.patch < 1:
            raise DecoderConfigError("patch size must be >= 1")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "DecoderConfig":
        return cls(**d)


@dataclass
class DecoderOutput:
    main: torch.Tensor
    companions: list[torch.Tensor] = field(default_factory=list)
    edge: torch.Tensor | None = None


def _pad(x: torch.Tensor, pads: tuple[int, int, int, int]) -> torch.Tensor:
    if not any(pads):
        return x
    h, w = x.shape[-2:]
    # reflection needs the pad to be smaller than the padded dimension
    mode = "reflect" if max(pads[:2]) < w and max(pads[2:]) < h else "replicate"
    return F.pad(x, pads, mode=mode)


class LawinAttention(nn.Module):
    """Patch-wise attention from each query patch to a pooled, ``ratio``-times larger window.

    Inputs whose spatial size is not a multiple of ``patch`` are reflection
    padded and cropped back afterwards.
    """

    def __init__(self, dim: int, ratio: int, patch: int = 2, heads: int = 2):
        super().__init__()
        if ratio < 2:
            raise DecoderConfigError(f"window ratio must be >= 2, got {ratio}")
        if dim % heads:
            raise DecoderConfigError("dim must be divisible by heads")
        self.dim, self.ratio, self.patch, self.heads = dim, ratio, patch, heads
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, c, h, w = x.shape
        P, r = self.patch, self.ratio
        ph, pw = (-h) % P, (-w) % P
        x = _pad(x, (0, pw, 0, ph))
        H, W = x.shape[-2:]
        gh, gw = H // P, W // P
        L = gh * gw

        query = F.unfold(x, P, stride=P)  # n, c*P*P, L
        query = query.view(n, c, P * P, L).permute(0, 3, 2, 1).reshape(n * L, P * P, c)

        extra = (r - 1) * P
        lo, hi = extra // 2, extra - extra // 2
        ctx = F.unfold(_pad(x, (lo, hi, lo, hi)), r * P, stride=P)  # n, c*(rP)^2, L
        ctx = ctx.view(n, c, r * P, r * P, L).permute(0, 4, 1, 2, 3).reshape(n * L, c, r * P, r * P)
        ctx = F.avg_pool2d(ctx, r).flatten(2).transpose(1, 2)  # n*L, P*P, c

        d = c // self.heads
        q = self.q(query).view(n * L, P * P, self.heads, d).transpose(1, 2)
        k, v = self.kv(ctx).view(n * L, P * P, 2, self.heads, d).permute(2, 0, 3, 1, 4)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(n * L, P * P, c)
        out = self.proj(out)

        out = out.view(n, L, P * P, c).permute(0, 3, 2, 1).reshape(n, c * P * P, L)
        out = F.fold(out, (H, W), P, stride=P)
        return out[..., :h, :w]


class ConvBNReLU(nn.Sequential):
    def __init__(self, cin: int, cout: int, kernel: int = 1):
        super().__init__(
            nn.Conv2d(cin, cout, kernel, padding=kernel // 2, bias=False),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
        )


class MixerBlock(nn.Module):
    def __init__(self, tokens: int, dim: int, expansion: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.token_mlp = nn.Sequential(
            nn.Linear(tokens, tokens * expansion), nn.GELU(), nn.Linear(tokens * expansion, tokens)
        )
        self.norm2 = nn.LayerNorm(dim)
        self.channel_mlp = nn.Sequential(nn.Linear(dim, dim * expansion), nn.GELU(), nn.Linear(dim * expansion, dim))

    def forward(self, x):  # x: n, tokens, dim
        x = x + self.token_mlp(self.norm1(x).transpose(1, 2)).transpose(1, 2)
        return x + self.channel_mlp(self.norm2(x))


class MLPMixer(nn.Module):
    def __init__(self, dim: int, grid: int, depth: int):
        super().__init__()
        self.grid = grid
        self.blocks = nn.Sequential(*[MixerBlock(grid * grid, dim) for _ in range(depth)])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, c = x.shape[:2]
        tokens = F.adaptive_avg_pool2d(x, self.grid).flatten(2).transpose(1, 2)
        tokens = self.blocks(tokens)
        return tokens.transpose(1, 2).reshape(n, c, self.grid, self.grid)


class SPP(nn.Module):
    def __init__(self, dim: int, bins: tuple[int, ...]):
        super().__init__()
        self.bins = bins
        # no batch norm: a 1x1 bin holds a single value per sample
        self.convs = nn.ModuleList(nn.Sequential(nn.Conv2d(dim, dim, 1), nn.ReLU(inplace=True)) for _ in bins)

    def forward(self, x):
        size = x.shape[-2:]
        return torch.cat(
            [
                F.interpolate(conv(F.adaptive_avg_pool2d(x, b)), size, mode="bilinear", align_corners=False)
                for b, conv in zip(self.bins, self.convs)
            ],
            1,
        )


def _up(x: torch.Tensor, size) -> torch.Tensor:
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    return F.interpolate(x, size, mode="bilinear", align_corners=False)


class LawinDecoder(nn.Module):
    """Fuses a fine-to-coarse feature pyramid into main, companion and edge maps."""

    def __init__(self, level_channels: list[int], cfg: DecoderConfig):
        super().__init__()
        if len(level_channels) < 2:
            raise DecoderConfigError("decoder needs at least two pyramid levels")
        if cfg.companion_stages > len(level_channels) - 1:
            raise DecoderConfigError(
                f"{cfg.companion_stages} companion stages requested but only "
                f"{len(level_channels) - 1} coarse levels exist"
            )
        self.cfg = cfg
        self.level_channels = list(level_channels)
        E = cfg.embed_dim
        self.proj = nn.ModuleList(ConvBNReLU(c, E) for c in level_channels)
        self.fuse = ConvBNReLU(E * (len(level_channels) - 1), E)
        self.shortcut = ConvBNReLU(E, E)
        self.lawin = nn.ModuleList(LawinAttention(E, r, cfg.patch, cfg.heads) for r in cfg.ratios)
        self.mixer = MLPMixer(E, cfg.mixer_tokens, cfg.mixer_depth)
        self.mixer_proj = ConvBNReLU(E, E)
        self.spp = SPP(E, cfg.spp_bins)
        n_branches = 2 + len(cfg.ratios) + len(cfg.spp_bins)
        self.context = ConvBNReLU(E * n_branches, E)
        self.refine = ConvBNReLU(2 * E, E, kernel=3)
        self.head = nn.Conv2d(E, 1, 1)
        self.edge_head = nn.Conv2d(E, 1, 1)
        self.companion_heads = nn.ModuleList(nn.Conv2d(E, 1, 1) for _ in range(cfg.companion_stages))

    def forward(self, pyramid: list[torch.Tensor], out_size=None) -> DecoderOutput:
        if len(pyramid) != len(self.proj):
            raise ValueError(f"decoder expects {len(self.proj)} pyramid levels, got {len(pyramid)}")
        for f, c in zip(pyramid, self.level_channels):
            if f.shape[1] != c:
                raise ValueError(f"pyramid level has {f.shape[1]} channels, decoder expects {c}")
        if out_size is None:
            out_size = tuple(s * 4 for s in pyramid[0].shape[-2:])
        feats = [p(f) for p, f in zip(self.proj, pyramid)]
        low, coarse = feats[0], feats[1:]
        mid = coarse[0].shape[-2:]
        fused = self.fuse(torch.cat([_up(f, mid) for f in coarse], 1))

        branches = [self.shortcut(fused)]
        branches += [att(fused) for att in self.lawin]
        branches.append(_up(self.mixer_proj(self.mixer(coarse[-1])), mid))
        branches.append(self.spp(fused))
        ctx = self.context(torch.cat(branches, 1))
        final = self.refine(torch.cat([low, _up(ctx, low.shape[-2:])], 1))

        main = torch.sigmoid(_up(self.head(final), out_size))
        edge = torch.sigmoid(_up(self.edge_head(final), out_size))
        companions = [
            torch.sigmoid(_up(head(f), out_size))
            for head, f in zip(self.companion_heads, reversed(coarse))
        ]
        return DecoderOutput(main, companions, edge)
