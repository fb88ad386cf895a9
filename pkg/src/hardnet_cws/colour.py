"""Multi-colour-space input tensors for wound images.

Planes are float arrays on the 8-bit scale [0, 255]; merged tensors are
channel-first float32 arrays rescaled to [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

# BT.601 full range, used for the library-style YCrCb luma plane.
BT601 = (0.299, 0.587, 0.114)
# BT.709, used for the exaggerated luminance channel.
BT709 = (0.2126, 0.7152, 0.0722)

# sRGB -> XYZ, D65 reference white.
_RGB_TO_XYZ = np.array(
    [
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ]
)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])

CHANNEL_MODES: dict[str, tuple[str, ...]] = {
    "RGB": ("R", "G", "B"),
    "RGB+A": ("R", "G", "B", "A"),
    "RGB+Y": ("R", "G", "B", "Y"),
    "RGB+Y+A": ("R", "G", "B", "Y", "A"),
    "RGB+eY": ("R", "G", "B", "eY"),
    "RGB+eY+A": ("R", "G", "B", "eY", "A"),
}


class ColourConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EyConfig:
    exponent: int = 5
    swap_rb: bool = False

    def __post_init__(self):
        if int(self.exponent) != self.exponent or self.exponent < 1:
            raise ColourConfigError(f"exponent must be an integer >= 1, got {self.exponent!r}")


@dataclass
class MergedTensor:
    channels: tuple[str, ...]
    data: np.ndarray  # C x H x W, float32 in [0, 1]

    def __post_init__(self):
        if len(self.channels) != self.data.shape[0]:
            raise ValueError("channel tags do not match tensor depth")
        if len(set(self.channels)) != len(self.channels):
            raise ValueError("duplicate channel tags")
        if tuple(self.channels[:3]) != ("R", "G", "B"):
            raise ValueError("R, G, B must be the first three channels")


def channel_count(mode: str) -> int:
    return len(_mode_tags(mode))


def _mode_tags(mode: str) -> tuple[str, ...]:
    try:
        return CHANNEL_MODES[mode]
    except KeyError:
        raise ColourConfigError(
            f"unknown channel mode {mode!r}; expected one of {sorted(CHANNEL_MODES)}"
        ) from None


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 RGB image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be at least 1 x 1")
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got {img.dtype}")
    return img


def rgb_to_ycrcb_y(img: np.ndarray) -> np.ndarray:
    """Luma plane of a full-range BT.601 YCrCb conversion."""
    rgb = check_image(img).astype(np.float64)
    y = BT601[0] * rgb[..., 0] + BT601[1] * rgb[..., 1] + BT601[2] * rgb[..., 2]
    return np.clip(y, 0.0, 255.0)


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def rgb_to_lab(img: np.ndarray) -> np.ndarray:
    """CIELAB (D65) with L* in [0, 100] and unshifted a*, b*."""
    rgb = _srgb_to_linear(check_image(img).astype(np.float64) / 255.0)
    xyz = rgb @ _RGB_TO_XYZ.T / _D65_WHITE
    eps = (6.0 / 29.0) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def rgb_to_lab_a(img: np.ndarray) -> np.ndarray:
    """a* chromaticity plane, offset by +128 and clipped to [0, 255]."""
    a = rgb_to_lab(img)[..., 1]
    return np.clip(a + 128.0, 0.0, 255.0)


def luminance(img: np.ndarray, swap_rb: bool = False) -> np.ndarray:
    rgb = check_image(img).astype(np.float64)
    kr, kg, kb = BT709
    if swap_rb:
        kr, kb = kb, kr
    return kr * rgb[..., 0] + kg * rgb[..., 1] + kb * rgb[..., 2]


def derive_ey(img: np.ndarray, cfg: EyConfig | None = None) -> np.ndarray:
    """Exaggerated luminance: max-normalised luminance raised to ``cfg.exponent``.

    An all-black image yields an all-zero plane.
    """
    cfg = cfg or EyConfig()
    lum = luminance(img, cfg.swap_rb)
    peak = lum.max()
    if peak <= 0:
        return np.zeros_like(lum)
    lum = lum / peak * 255.0
    powered = lum ** cfg.exponent
    return powered / powered.max() * 255.0


def plane_absdiff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"plane sizes differ: {a.shape} vs {b.shape}")
    return np.abs(a - b)


_PLANES = {
    "Y": lambda img, cfg: rgb_to_ycrcb_y(img),
    "A": lambda img, cfg: rgb_to_lab_a(img),
    "eY": derive_ey,
}


def merge_channels(img: np.ndarray, mode: str = "RGB+eY", cfg: EyConfig | None = None) -> MergedTensor:
    tags = _mode_tags(mode)
    img = check_image(img)
    cfg = cfg or EyConfig()
    planes = [img[..., i].astype(np.float64) for i in range(3)]
    planes += [_PLANES[tag](img, cfg) for tag in tags[3:]]
    data = (np.stack(planes, axis=0) / 255.0).astype(np.float32)
    return MergedTensor(channels=tags, data=data)


def load_rgb(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def save_plane(plane: np.ndarray, path: str | Path) -> None:
    arr = np.clip(np.rint(plane), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)
