"""Dataset manifests, mask I/O and the synthetic desk-scale wound set."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

SPLITS = ("train", "val", "testA", "testB")
MANIFEST_VERSION = 1


class ManifestError(ValueError):
    pass


@dataclass
class ManifestEntry:
    image: str
    mask: str | None
    split: str = "train"
    source: str = "wound"

    @property
    def id(self) -> str:
        return Path(self.image).stem


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path = Path(".")

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        path = Path(p)
        return path if path.is_absolute() else self.root / path

    def split_counts(self) -> dict[str, int]:
        c = Counter(e.split for e in self.entries)
        return {s: c.get(s, 0) for s in SPLITS}

    def select(self, splits=None, sources=None, labelled: bool | None = None) -> list[ManifestEntry]:
        out = []
        for e in self.entries:
            if splits is not None and e.split not in splits:
                continue
            if sources is not None and e.source not in sources:
                continue
            if labelled is not None and (e.mask is not None) != labelled:
                continue
            out.append(e)
        return out

    def to_dict(self) -> dict:
        return {"version": MANIFEST_VERSION, "entries": [asdict(e) for e in self.entries]}


def validate_manifest(m: DatasetManifest, check_files: bool = True) -> None:
    if not m.entries:
        raise ManifestError("manifest has no entries")
    for i, e in enumerate(m.entries):
        where = f"entry {i} ({e.image!r})"
        if not e.image:
            raise ManifestError(f"{where}: missing image path")
        if e.split not in SPLITS:
            raise ManifestError(f"{where}: split {e.split!r} not in {SPLITS}")
        if not e.source:
            raise ManifestError(f"{where}: empty source tag")
        if e.split == "testB" and e.mask is not None:
            raise ManifestError(f"{where}: testB images are unlabelled and must not carry a mask")
        if check_files:
            for p in (e.image, e.mask):
                if p is not None and not m.resolve(p).is_file():
                    raise ManifestError(f"{where}: file not found: {m.resolve(p)}")


def manifest_from_dict(data, root: Path = Path("."), check_files: bool = True) -> DatasetManifest:
    raw = data["entries"] if isinstance(data, dict) else data
    if not isinstance(raw, list):
        raise ManifestError("manifest must be a list of entries or an object with an 'entries' list")
    entries = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "image" not in item:
            raise ManifestError(f"entry {i}: expected an object with an 'image' field")
        unknown = set(item) - {"image", "mask", "split", "source"}
        if unknown:
            raise ManifestError(f"entry {i} ({item['image']!r}): unknown fields {sorted(unknown)}")
        entries.append(ManifestEntry(item["image"], item.get("mask"), item.get("split", "train"),
                                     item.get("source", "wound")))
    m = DatasetManifest(entries, root)
    validate_manifest(m, check_files)
    return m


def load_manifest(path: str | Path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: invalid JSON ({e})") from None
    return manifest_from_dict(data, path.parent, check_files)


def save_manifest(m: DatasetManifest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(m.to_dict(), indent=2) + "\n")


def load_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= 128


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path)


def save_rgb(img: np.ndarray, path: str | Path) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path)


def _smooth_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    coarse = rng.random((cells, cells))
    img = Image.fromarray((coarse * 255).astype(np.uint8)).resize((size, size), Image.BICUBIC)
    return np.asarray(img, dtype=np.float64) / 255.0


def _ellipse(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size]
    cy, cx = rng.uniform(0.25, 0.75, 2) * size
    ry, rx = rng.uniform(0.1, 0.3, 2) * size
    t = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(t) + dy * np.sin(t)
    v = -dx * np.sin(t) + dy * np.cos(t)
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def synth_sample(rng: np.random.Generator, size: int, blobs: int,
                 area_bounds=(0.02, 0.35)) -> tuple[np.ndarray, np.ndarray]:
    """One skin-like textured image with ``blobs`` elliptical wound regions."""
    skin = np.array([205.0, 160.0, 130.0]) * rng.uniform(0.6, 1.1)
    tex = _smooth_noise(rng, size, 8)[..., None]
    img = skin * (0.85 + 0.3 * tex) + rng.normal(0, 4, (size, size, 3))
    mask = np.zeros((size, size), dtype=bool)
    if blobs:
        for _ in range(100):
            mask = np.zeros((size, size), dtype=bool)
            for _ in range(blobs):
                mask |= _ellipse(size, rng)
            if area_bounds[0] <= mask.mean() <= area_bounds[1]:
                break
        wound = np.array([150.0, 35.0, 40.0]) * rng.uniform(0.8, 1.2)
        grain = _smooth_noise(rng, size, size // 4)[..., None]
        wound_px = wound * (0.6 + 0.8 * grain) + rng.normal(0, 8, (size, size, 3))
        img = np.where(mask[..., None], wound_px, img)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), mask


def synth_dataset(n: int, size: int, seed: int, out_dir: str | Path, empty_fraction: float = 0.2,
                  area_bounds=(0.02, 0.35), split: str = "train", source: str = "wound") -> DatasetManifest:
    """Write ``n`` synthetic image/mask pairs plus ``manifest.json`` into ``out_dir``.

    Exactly ``round(n * empty_fraction)`` masks are empty; the rest hold one
    or two blobs covering a fraction of the image within ``area_bounds``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot write synthetic dataset to {out}: {e}") from None
    rng = np.random.default_rng(seed)
    n_empty = int(round(n * empty_fraction))
    empty = set(rng.permutation(n)[:n_empty].tolist())
    entries = []
    for i in range(n):
        blobs = 0 if i in empty else int(rng.integers(1, 3))
        img, mask = synth_sample(rng, size, blobs, area_bounds)
        name = f"synth_{i:04d}.png"
        save_rgb(img, out / "images" / name)
        save_mask(mask, out / "masks" / name)
        entries.append(ManifestEntry(f"images/{name}", f"masks/{name}", split, source))
    m = DatasetManifest(entries, out)
    save_manifest(m, out / "manifest.json")
    return m
