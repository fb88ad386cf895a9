"""End-to-end segmentation network: colour merging, encoder, decoder."""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .colour import EyConfig, channel_count, merge_channels
from .decoder import DecoderConfig, DecoderOutput, LawinDecoder
from .encoder import BlockSchedule, HarDNetEncoder, StemConfig, builtin_schedule


class ModelConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    channel_mode: str = "RGB+eY"
    ey: EyConfig = field(default_factory=EyConfig)
    stem: StemConfig | None = None
    schedule: BlockSchedule = field(default_factory=lambda: builtin_schedule("cws"))
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    seed: int = 0

    def __post_init__(self):
        c = channel_count(self.channel_mode)
        if self.stem is None:
            self.stem = StemConfig(in_channels=c)
        if self.stem.in_channels != c:
            raise ModelConfigError(
                f"stem expects {self.stem.in_channels} channels but mode {self.channel_mode} gives {c}"
            )

    def to_dict(self) -> dict:
        return {
            "channel_mode": self.channel_mode,
            "ey": {"exponent": self.ey.exponent, "swap_rb": self.ey.swap_rb},
            "stem": self.stem.to_dict(),
            "schedule": self.schedule.to_dict(),
            "decoder": self.decoder.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            channel_mode=d["channel_mode"],
            ey=EyConfig(**d["ey"]),
            stem=StemConfig.from_dict(d["stem"]),
            schedule=BlockSchedule.from_dict(d["schedule"]),
            decoder=DecoderConfig.from_dict(d["decoder"]),
            seed=d.get("seed", 0),
        )


class HarDNetCWS(nn.Module):
    """Segmentation network whose input adapter performs the colour merge.

    ``forward`` accepts either a uint8 batch N x H x W x 3 (merged here, so a
    checkpoint always sees the channel mode it was trained with) or an
    already merged float batch N x C x H x W.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = HarDNetEncoder(cfg.stem, cfg.schedule)
        self.decoder = LawinDecoder(self.encoder.level_channels, cfg.decoder)

    @property
    def channel_mode(self) -> str:
        return self.cfg.channel_mode

    def adapt(self, images) -> torch.Tensor:
        if isinstance(images, torch.Tensor):
            images = images.cpu().numpy()
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        merged = [merge_channels(im, self.cfg.channel_mode, self.cfg.ey).data for im in images]
        return torch.from_numpy(np.stack(merged))

    def forward(self, x) -> DecoderOutput:
        if not isinstance(x, torch.Tensor) or x.dtype == torch.uint8:
            x = self.adapt(x)
        x = x.to(next(self.parameters()).dtype)
        return self.decoder(self.encoder(x), out_size=tuple(x.shape[-2:]))

    @torch.no_grad()
    def predict(self, img: np.ndarray) -> np.ndarray:
        """Main probability map (H x W) for one uint8 RGB image, inference mode."""
        was_training = self.training
        self.eval()
        try:
            return self(img).main[0, 0].cpu().numpy()
        finally:
            self.train(was_training)


def build_model(cfg: ModelConfig) -> HarDNetCWS:
    torch.manual_seed(cfg.seed)
    return HarDNetCWS(cfg)


_SCOPE = re.compile(r"^stem(?:\+block(\d+))?$")


def scope_prefixes(model: HarDNetCWS, scope: str) -> list[str]:
    if scope in ("none", "", None):
        return []
    m = _SCOPE.match(scope)
    if not m:
        raise ModelConfigError(f"unknown freeze scope {scope!r}; use 'none', 'stem' or 'stem+blockK'")
    prefixes = ["encoder.stem."]
    if m.group(1):
        k = int(m.group(1))
        if not 1 <= k <= len(model.encoder.blocks):
            raise ModelConfigError(f"freeze scope {scope!r}: encoder has {len(model.encoder.blocks)} blocks")
        prefixes += [f"encoder.blocks.{i}." for i in range(k)] + [f"encoder.downs.{i}." for i in range(k - 1)]
    return prefixes


def freeze_prefix(model: HarDNetCWS, scope: str = "stem+block1") -> list[str]:
    """Exclude the named encoder prefix from gradient updates; everything else stays trainable.

    Returns the names of the frozen parameters.
    """
    prefixes = scope_prefixes(model, scope)
    frozen = []
    for name, p in model.named_parameters():
        hit = any(name.startswith(pre) for pre in prefixes)
        p.requires_grad_(not hit)
        if hit:
            frozen.append(name)
    return frozen


def parameter_inventory(model: nn.Module) -> dict[str, int]:
    total = sum(p.numel() for p in model.parameters())
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    return {"total": total, "trainable": trainable, "frozen": total - trainable}
