"""Training-time augmentation for image/mask pairs.

Geometric transforms move image and mask together (mask uses nearest
neighbour); photometric transforms only touch the image.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import cv2
import numpy as np


@dataclass
class AugmentConfig:
    center_crop: bool = True
    random_crop: bool = True
    hflip: bool = True
    vflip: bool = True
    shift_scale_rotate: bool = True
    gaussian_noise: bool = True
    brightness_contrast: bool = True
    clahe: bool = True
    multi_scale: bool = True
    p: float = 0.5

    @classmethod
    def off(cls) -> "AugmentConfig":
        return cls(**{f.name: False for f in fields(cls) if f.name != "p"})


def _resize(img, mask, h, w):
    return (
        cv2.resize(img, (w, h), interpolation=cv2.INTER_LINEAR),
        cv2.resize(mask, (w, h), interpolation=cv2.INTER_NEAREST_EXACT),
    )


def hflip(img, mask):
    return img[:, ::-1].copy(), mask[:, ::-1].copy()


def vflip(img, mask):
    return img[::-1].copy(), mask[::-1].copy()


def center_crop(img, mask, frac):
    h, w = mask.shape
    ch, cw = max(1, int(round(h * frac))), max(1, int(round(w * frac)))
    y, x = (h - ch) // 2, (w - cw) // 2
    return _resize(img[y:y + ch, x:x + cw], mask[y:y + ch, x:x + cw], h, w)


def random_crop(img, mask, rng):
    h, w = mask.shape
    frac = rng.uniform(0.7, 1.0)
    ch, cw = max(1, int(h * frac)), max(1, int(w * frac))
    y, x = rng.integers(0, h - ch + 1), rng.integers(0, w - cw + 1)
    return _resize(img[y:y + ch, x:x + cw], mask[y:y + ch, x:x + cw], h, w)


def shift_scale_rotate(img, mask, rng):
    h, w = mask.shape
    angle = rng.uniform(-30, 30)
    scale = 1 + rng.uniform(-0.1, 0.1)
    dx, dy = rng.uniform(-0.0625, 0.0625, size=2) * (w, h)
    M = cv2.getRotationMatrix2D((w / 2, h / 2), angle, scale)
    M[:, 2] += (dx, dy)
    img = cv2.warpAffine(img, M, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT_101)
    mask = cv2.warpAffine(mask, M, (w, h), flags=cv2.INTER_NEAREST, borderMode=cv2.BORDER_REFLECT_101)
    return img, mask


def multi_scale(img, mask, rng):
    h, w = mask.shape
    s = rng.uniform(0.75, 1.25)
    sh, sw = max(1, int(round(h * s))), max(1, int(round(w * s)))
    img, mask = _resize(img, mask, sh, sw)
    if s >= 1:
        y, x = (sh - h) // 2, (sw - w) // 2
        return img[y:y + h, x:x + w].copy(), mask[y:y + h, x:x + w].copy()
    top, left = (h - sh) // 2, (w - sw) // 2
    pads = (top, h - sh - top, left, w - sw - left)
    img = cv2.copyMakeBorder(img, *pads, cv2.BORDER_REFLECT_101)
    mask = cv2.copyMakeBorder(mask, *pads, cv2.BORDER_REFLECT_101)
    return img, mask


def gaussian_noise(img, rng):
    sigma = rng.uniform(3.0, 10.0)
    noisy = img.astype(np.float64) + rng.normal(0.0, sigma, img.shape)
    return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)


def brightness_contrast(img, rng):
    alpha = 1 + rng.uniform(-0.2, 0.2)
    beta = rng.uniform(-0.2, 0.2) * 255
    return np.clip(np.rint(img.astype(np.float64) * alpha + beta), 0, 255).astype(np.uint8)


def clahe(img, clip_limit: float = 2.0, grid: int = 8):
    lab = cv2.cvtColor(img, cv2.COLOR_RGB2LAB)
    op = cv2.createCLAHE(clipLimit=clip_limit, tileGridSize=(grid, grid))
    lab[..., 0] = op.apply(np.ascontiguousarray(lab[..., 0]))
    return cv2.cvtColor(lab, cv2.COLOR_LAB2RGB)


def augment(img: np.ndarray, mask: np.ndarray, seed: int, cfg: AugmentConfig | None = None):
    """Apply the enabled transforms in a fixed order; randomness comes only from ``seed``."""
    cfg = cfg or AugmentConfig()
    rng = np.random.default_rng(seed)
    img = np.ascontiguousarray(img, dtype=np.uint8)
    mask = np.ascontiguousarray(mask, dtype=np.uint8)

    def fire(enabled):
        # draw even when disabled so toggles do not shift later random streams
        u = rng.random()
        return enabled and u < cfg.p

    if fire(cfg.center_crop):
        img, mask = center_crop(img, mask, rng.uniform(0.8, 1.0))
    if fire(cfg.random_crop):
        img, mask = random_crop(img, mask, rng)
    if fire(cfg.hflip):
        img, mask = hflip(img, mask)
    if fire(cfg.vflip):
        img, mask = vflip(img, mask)
    if fire(cfg.shift_scale_rotate):
        img, mask = shift_scale_rotate(img, mask, rng)
    if fire(cfg.gaussian_noise):
        img = gaussian_noise(img, rng)
    if fire(cfg.brightness_contrast):
        img = brightness_contrast(img, rng)
    if fire(cfg.clahe):
        img = clahe(img)
    if fire(cfg.multi_scale):
        img, mask = multi_scale(img, mask, rng)
    return img, mask
