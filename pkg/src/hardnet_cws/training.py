"""Training harness: EMA, cross-validation folds, the fit loop, TTA ensembling and pseudo-labels."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .augment import AugmentConfig, augment
from .checkpoint import Checkpoint, save_checkpoint
from .colour import load_rgb
from .data import DatasetManifest, ManifestEntry, load_mask, save_mask, save_rgb
from .losses import EDGE_WEIGHT, total_loss
from .metrics import THRESHOLD, evaluate_set
from .model import HarDNetCWS, ModelConfig, build_model, freeze_prefix

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    # optimiser settings default to the full-scale AdamW recipe
    lr: float = 1e-5
    eps: float = 1e-7
    weight_decay: float = 0.01
    batch_size: int = 2
    epochs: int = 100
    max_steps: int | None = None
    ema_decay: float = 0.999
    edge_weight: float = EDGE_WEIGHT
    seed: int = 0
    folds: int = 5
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.ema_decay < 1:
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.folds < 1:
            raise ValueError("folds must be >= 1")

    @classmethod
    def preset(cls, budget: str, **overrides) -> "TrainConfig":
        """``full``: 100 epochs at lr 1e-5. ``small``: a minutes-long CPU budget."""
        if budget == "full":
            base = {}
        elif budget == "small":
            base = dict(lr=2e-3, batch_size=5, epochs=100, max_steps=200, ema_decay=0.99, augment=AugmentConfig.off())
        else:
            raise ValueError(f"unknown budget {budget!r}; use 'small' or 'full'")
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)


# -- EMA ---------------------------------------------------------------------

@dataclass
class EmaState:
    shadow: dict[str, torch.Tensor]
    decay: float


def _named(params) -> dict[str, torch.Tensor]:
    if isinstance(params, torch.nn.Module):
        return dict(params.named_parameters())
    return dict(params)


def ema_init(params, decay: float) -> EmaState:
    return EmaState({k: v.detach().clone() for k, v in _named(params).items()}, decay)


@torch.no_grad()
def ema_update(state: EmaState, params) -> EmaState:
    """shadow <- decay * shadow + (1 - decay) * param, in place on the shadow only."""
    params = _named(params)
    if set(params) != set(state.shadow):
        raise ValueError("EMA shadow and parameters have different names")
    for name, p in params.items():
        s = state.shadow[name]
        if s.shape != p.shape:
            raise ValueError(f"EMA shape mismatch for {name}: {tuple(s.shape)} vs {tuple(p.shape)}")
        s.mul_(state.decay).add_(p.detach(), alpha=1 - state.decay)
    return state


# -- folds -------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[tuple, ...]

    def __post_init__(self):
        flat = [i for f in self.folds for i in f]
        if len(flat) != len(set(flat)):
            raise ValueError("folds overlap")
        sizes = [len(f) for f in self.folds]
        if sizes and max(sizes) - min(sizes) > 1:
            raise ValueError(f"unbalanced fold sizes {sizes}")

    @property
    def k(self) -> int:
        return len(self.folds)

    def __len__(self):
        return len(self.folds)

    def __getitem__(self, i):
        return self.folds[i]

    def __iter__(self):
        return iter(self.folds)

    def ids(self) -> list:
        return [i for f in self.folds for i in f]

    def train_ids(self, held_out: int) -> list:
        return [i for j, f in enumerate(self.folds) if j != held_out for i in f]


def make_folds(ids: Sequence, k: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded shuffle followed by round-robin assignment into ``k`` folds."""
    ids = list(ids)
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(ids) < k:
        raise ValueError(f"cannot split {len(ids)} samples into {k} folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    return FoldPlan(tuple(tuple(ids[i] for i in order[f::k]) for f in range(k)))


# -- fit loop ----------------------------------------------------------------

@dataclass
class Sample:
    id: str
    image: np.ndarray
    mask: np.ndarray


def load_samples(manifest: DatasetManifest, entries: Iterable[ManifestEntry]) -> list[Sample]:
    out = []
    for e in entries:
        try:
            img = load_rgb(manifest.resolve(e.image))
            mask = load_mask(manifest.resolve(e.mask)).astype(np.uint8)
        except (OSError, ValueError) as err:
            raise RuntimeError(f"failed to read sample {e.image!r}: {err}") from err
        if img.shape[:2] != mask.shape:
            raise RuntimeError(f"sample {e.image!r}: image {img.shape[:2]} and mask {mask.shape} differ in size")
        out.append(Sample(e.id, img, mask))
    return out


def _sample_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _batch(samples: list[Sample], idx, seed_parts, aug: AugmentConfig):
    imgs, masks = [], []
    for i in idx:
        s = samples[i]
        img, mask = augment(s.image, s.mask, _sample_seed(*seed_parts, i), aug)
        imgs.append(img)
        masks.append(mask)
    return torch.from_numpy(np.stack(imgs)), torch.from_numpy(np.stack(masks)[:, None].astype(np.float32))


@torch.no_grad()
def predict_maps(model: HarDNetCWS, images: Sequence[np.ndarray]) -> list[np.ndarray]:
    was = model.training
    model.eval()
    try:
        return [model(img).main[0, 0].numpy() for img in images]
    finally:
        model.train(was)


def score(model: HarDNetCWS, samples: list[Sample]) -> dict[str, float]:
    maps = predict_maps(model, [s.image for s in samples])
    summary = evaluate_set([(s.mask.astype(bool), m >= THRESHOLD) for s, m in zip(samples, maps)])
    return {"iou": summary.iou, "dsc": summary.dsc}


@dataclass
class FoldResult:
    fold: int
    checkpoint: Checkpoint
    best_epoch: int
    history: list[dict]
    path: Path | None = None


def fit(model: HarDNetCWS, train_samples: list[Sample], val_samples: list[Sample], cfg: TrainConfig,
        fold: int = 0, provenance: dict | None = None) -> FoldResult:
    """Train one model; keep the epoch with the best validation IoU + DSC."""
    torch.manual_seed(_sample_seed(cfg.seed, fold))
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=cfg.lr, eps=cfg.eps, weight_decay=cfg.weight_decay)
    ema = ema_init(model, cfg.ema_decay)
    rng = np.random.default_rng(_sample_seed(cfg.seed, fold, 1))
    history, best, best_key, step = [], None, -np.inf, 0
    bs = min(cfg.batch_size, len(train_samples))
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(len(train_samples))
        losses = []
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            if len(idx) < 2 and len(order) >= 2:
                continue  # batch statistics need at least two samples
            x, y = _batch(train_samples, idx, (cfg.seed, fold, epoch), cfg.augment)
            loss = total_loss(model(x), y, cfg.edge_weight)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            ema_update(ema, model)
            losses.append(loss.item())
            step += 1
            if cfg.max_steps and step >= cfg.max_steps:
                break
        val = score(model, val_samples)
        rec = {"epoch": epoch, "step": step, "train_loss": float(np.mean(losses)) if losses else float("nan"), **val}
        history.append(rec)
        log.info("fold %d epoch %d step %d loss %.4f val iou %.4f dsc %.4f",
                 fold, epoch, step, rec["train_loss"], val["iou"], val["dsc"])
        key = val["iou"] + val["dsc"]
        if key > best_key:
            best_key = key
            prov = dict(provenance or {}, seed=cfg.seed, fold=fold, epoch=epoch, step=step)
            best = Checkpoint.from_model(model, ema, prov)
        if cfg.max_steps and step >= cfg.max_steps:
            break
    return FoldResult(fold, best, best.provenance["epoch"], history)


def train(manifest: DatasetManifest, cfg: TrainConfig, model_cfg: ModelConfig, init: Checkpoint | None = None,
          freeze: str = "none", out_dir: str | Path | None = None) -> list[FoldResult]:
    """Cross-validated training over the labelled train/val entries of ``manifest``.

    With one fold the model trains on the ``train`` split and validates on
    ``val`` (or on the training images if there is no ``val`` split).
    """
    if init is not None and init.config.to_dict() | {"seed": 0} != model_cfg.to_dict() | {"seed": 0}:
        raise ValueError("initial checkpoint was built with a different model config")
    sources = sorted({e.source for e in manifest.entries})
    if cfg.folds == 1:
        train_e = manifest.select(splits={"train"}, labelled=True)
        val_e = manifest.select(splits={"val"}, labelled=True) or train_e
        plans = [(train_e, val_e)]
    else:
        pool = manifest.select(splits={"train", "val"}, labelled=True)
        folds = make_folds(list(range(len(pool))), cfg.folds, cfg.seed)
        plans = [([pool[i] for i in folds.train_ids(k)], [pool[i] for i in folds[k]]) for k in range(folds.k)]
    if not plans[0][0]:
        raise ValueError("manifest has no labelled training entries")
    results = []
    for k, (train_e, val_e) in enumerate(plans):
        model = build_model(model_cfg)
        if init is not None:
            model.load_state_dict(init.state)
        freeze_prefix(model, freeze)
        res = fit(model, load_samples(manifest, train_e), load_samples(manifest, val_e), cfg, k,
                  {"sources": sources, "freeze": freeze, "init": init is not None})
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            res.path = out / f"fold{k}.ckpt"
            save_checkpoint(res.path, res.checkpoint)
        results.append(res)
    return results


# -- inference ---------------------------------------------------------------

FLIPS = {
    "id": lambda a: a,
    "h": lambda a: a[:, ::-1],
    "v": lambda a: a[::-1],
    "hv": lambda a: a[::-1, ::-1],
}
DEFAULT_FLIPS = ("id", "h", "v")
FLIP_GROUP = ("id", "h", "v", "hv")


def tta_infer(models: Sequence, img: np.ndarray, flips: Sequence[str] = DEFAULT_FLIPS) -> np.ndarray:
    """Mean over every (model, flip) pair of the inverse-flipped probability map.

    Every flip here is its own inverse.
    """
    if not models:
        raise ValueError("tta_infer needs at least one model")
    unknown = set(flips) - set(FLIPS)
    if unknown:
        raise ValueError(f"unknown flips {sorted(unknown)}")
    maps = []
    for model in models:
        if isinstance(model, Checkpoint):
            model = model.build(use_ema=False)
        for name in flips:
            t = FLIPS[name]
            pred = predict_maps(model, [np.ascontiguousarray(t(img))])[0]
            maps.append(np.ascontiguousarray(t(pred)))
    return np.stack(maps).mean(axis=0)


def pseudo_label(models: Sequence, images: Sequence[tuple[str, np.ndarray]], threshold: float = THRESHOLD,
                 flips: Sequence[str] = DEFAULT_FLIPS, out_dir: str | Path | None = None,
                 source: str = "meat") -> tuple[dict[str, np.ndarray], list[ManifestEntry]]:
    """Binarised TTA predictions used as training masks for unlabelled images.

    With ``out_dir`` each image and its mask are written to
    ``out_dir/images/<id>.png`` and ``out_dir/masks/<id>.png``, and manifest
    entries (paths relative to ``out_dir``) are returned for them.
    """
    masks, entries = {}, []
    for image_id, img in images:
        masks[image_id] = tta_infer(models, img, flips) >= threshold
        if out_dir is not None:
            out = Path(out_dir)
            (out / "images").mkdir(parents=True, exist_ok=True)
            (out / "masks").mkdir(parents=True, exist_ok=True)
            save_rgb(img, out / "images" / f"{image_id}.png")
            save_mask(masks[image_id], out / "masks" / f"{image_id}.png")
            entries.append(ManifestEntry(f"images/{image_id}.png", f"masks/{image_id}.png", "train", source))
    return masks, entries
