"""Versioned checkpoint archives.

An archive is a zip file holding ``checkpoint.json`` (format version, model
config, provenance) and two torch-serialised blobs: ``params.pt`` with the
full state dict and ``ema.pt`` with the EMA shadow parameters.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .model import HarDNetCWS, ModelConfig, build_model

FORMAT_VERSION = 1
_FIXED_TIME = (2000, 1, 1, 0, 0, 0)


class CheckpointError(RuntimeError):
    pass


class ChannelModeMismatch(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    state: dict[str, torch.Tensor]
    ema: dict[str, torch.Tensor] | None = None
    provenance: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model: HarDNetCWS, ema=None, provenance: dict | None = None) -> "Checkpoint":
        state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        shadow = None
        if ema is not None:
            shadow = {k: v.detach().clone() for k, v in ema.shadow.items()}
        return cls(model.cfg, state, shadow, dict(provenance or {}))

    def build(self, use_ema: bool = False) -> HarDNetCWS:
        model = build_model(self.config)
        model.load_state_dict(self.state)
        if use_ema and self.ema:
            with torch.no_grad():
                params = dict(model.named_parameters())
                for name, value in self.ema.items():
                    params[name].copy_(value)
        model.eval()
        return model

    def require_mode(self, mode: str) -> None:
        if mode != self.config.channel_mode:
            raise ChannelModeMismatch(
                f"checkpoint was trained on channel mode {self.config.channel_mode!r}, "
                f"inference requested {mode!r}"
            )


def _blob(tensors: dict) -> bytes:
    buf = io.BytesIO()
    torch.save(tensors, buf)
    return buf.getvalue()


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    meta = {"format_version": ckpt.version, "model_config": ckpt.config.to_dict(), "provenance": ckpt.provenance}
    items = [("checkpoint.json", json.dumps(meta, indent=2, sort_keys=True).encode()),
             ("params.pt", _blob(ckpt.state))]
    if ckpt.ema is not None:
        items.append(("ema.pt", _blob(ckpt.ema)))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, data in items:
            zf.writestr(zipfile.ZipInfo(name, _FIXED_TIME), data)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("checkpoint.json"))
            version = meta.get("format_version")
            if version != FORMAT_VERSION:
                raise CheckpointError(f"{path}: unsupported checkpoint format version {version!r}")
            state = torch.load(io.BytesIO(zf.read("params.pt")), weights_only=True)
            ema = None
            if "ema.pt" in zf.namelist():
                ema = torch.load(io.BytesIO(zf.read("ema.pt")), weights_only=True)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except CheckpointError:
        raise
    except Exception as e:  # zip, json and unpickling failures all mean a corrupt archive
        raise CheckpointError(f"{path}: unreadable checkpoint ({type(e).__name__}: {e})") from None
    try:
        config = ModelConfig.from_dict(meta["model_config"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: invalid model config ({e})") from None
    ckpt = Checkpoint(config, state, ema, meta.get("provenance", {}), version)
    _check_shapes(ckpt, path)
    return ckpt


def _check_shapes(ckpt: Checkpoint, path) -> None:
    expected = build_model(ckpt.config).state_dict()
    if set(expected) != set(ckpt.state):
        raise CheckpointError(f"{path}: parameter names do not match the stored model config")
    for name, t in expected.items():
        if t.shape != ckpt.state[name].shape:
            raise CheckpointError(f"{path}: {name} has shape {tuple(ckpt.state[name].shape)}, expected {tuple(t.shape)}")
    if ckpt.ema is not None:
        for name, t in ckpt.ema.items():
            if name not in expected or expected[name].shape != t.shape:
                raise CheckpointError(f"{path}: EMA entry {name} does not match the model")
