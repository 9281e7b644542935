"""Image-folder datasets and a procedural 10-class synthetic generator.

On disk a dataset is ``root/<class_name>/<image files>``; class indices
follow the sorted subdirectory names.
"""
from __future__ import annotations

from dataclasses import dataclass
import os
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import ConfigurationError, ContractError
from .rng import generator, stream_id

IMAGE_SUFFIXES = (".png", ".bmp", ".jpg", ".jpeg", ".ppm")


@dataclass
class ImageDataset:
    images: list  # HWC float32 arrays in [0, 1]
    labels: np.ndarray
    class_names: list

    def __len__(self) -> int:
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def load_image_folder(root) -> ImageDataset:
    root = Path(root)
    if not root.is_dir():
        raise ConfigurationError(f"dataset directory {root} does not exist")
    classes = sorted(d.name for d in root.iterdir() if d.is_dir())
    if not classes:
        raise ContractError(f"no class subdirectories under {root}")
    images, labels = [], []
    for idx, name in enumerate(classes):
        for f in sorted((root / name).iterdir()):
            if f.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            with PILImage.open(f) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
            images.append(arr)
            labels.append(idx)
    if not images:
        raise ContractError(f"no images found under {root}")
    return ImageDataset(images, np.asarray(labels, dtype=np.int64), classes)


def write_image_folder(dataset: ImageDataset, root) -> None:
    root = Path(root)
    for name in dataset.class_names:
        (root / name).mkdir(parents=True, exist_ok=True)
    for i, (img, label) in enumerate(zip(dataset.images, dataset.labels)):
        path = root / dataset.class_names[label] / f"{i:05d}.png"
        tmp = path.with_suffix(".tmp")
        u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
        PILImage.fromarray(u8, "RGB").save(tmp, format="PNG")
        os.replace(tmp, path)


# -- synthetic data ---------------------------------------------------------

SYNTH_CLASSES = ("hstripes", "vstripes", "checker", "rings", "dots",
                 "disk", "square", "cross", "diamonds", "spokes")


def _pattern(kind: int, yy: np.ndarray, xx: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Foreground weight in [0, 1] for one structural class."""
    cy, cx = rng.uniform(-0.25, 0.25, 2)
    y, x = yy - cy, xx - cx
    freq = rng.uniform(3.0, 5.0)
    phase = rng.uniform(0, 2 * np.pi)
    r = np.sqrt(x * x + y * y)
    size = rng.uniform(0.35, 0.6)
    if kind == 0:
        v = np.sin(2 * np.pi * freq * y + phase)
    elif kind == 1:
        v = np.sin(2 * np.pi * freq * x + phase)
    elif kind == 2:
        v = np.sin(2 * np.pi * freq * 0.6 * x + phase) * np.sin(2 * np.pi * freq * 0.6 * y)
    elif kind == 3:
        v = np.sin(2 * np.pi * freq * r + phase)
    elif kind == 4:
        v = np.cos(2 * np.pi * freq * x) * np.cos(2 * np.pi * freq * y) - 0.6
    elif kind == 5:
        v = size - r
    elif kind == 6:
        v = size * 0.85 - np.maximum(np.abs(x), np.abs(y))
    elif kind == 7:
        arm = size * 0.35
        v = np.maximum(arm - np.abs(x), arm - np.abs(y)) * (r < size * 1.6) - (r >= size * 1.6)
    elif kind == 8:
        v = np.sin(2 * np.pi * freq * 0.7 * (x + y) + phase) * np.sin(2 * np.pi * freq * 0.7 * (x - y))
    else:
        theta = np.arctan2(y, x)
        v = np.sin(6 * theta + phase)
    return (v > 0).astype(np.float32)


def synth_image(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    lin = (np.arange(size, dtype=np.float32) + 0.5) / size - 0.5
    yy, xx = np.meshgrid(lin, lin, indexing="ij")
    fg = _pattern(label, yy, xx, rng)[..., None]
    c_fg = rng.uniform(0, 1, 3).astype(np.float32)
    c_bg = rng.uniform(0, 1, 3).astype(np.float32)
    # keep the two colours apart so the structure stays visible
    while np.abs(c_fg - c_bg).sum() < 0.4:
        c_bg = rng.uniform(0, 1, 3).astype(np.float32)
    img = fg * c_fg + (1 - fg) * c_bg
    # nuisance: a linear illumination ramp in a random direction, then pixel noise
    angle = rng.uniform(0, 2 * np.pi)
    ramp = rng.uniform(0, 1.0) * (np.cos(angle) * xx + np.sin(angle) * yy)
    img = img + ramp[..., None].astype(np.float32)
    img = img + rng.normal(0, 0.1, img.shape).astype(np.float32)
    return np.clip(img, 0, 1).astype(np.float32)


def make_synthetic(n: int, size: int = 32, num_classes: int = 10, seed: int = 0) -> ImageDataset:
    """Balanced labelled set of procedurally drawn patterns, one class per motif."""
    if not 1 <= num_classes <= len(SYNTH_CLASSES):
        raise ConfigurationError(f"num_classes must be between 1 and {len(SYNTH_CLASSES)}")
    if n < num_classes:
        raise ConfigurationError("need at least one image per class")
    images, labels = [], []
    for i in range(n):
        label = i % num_classes
        rng = generator(seed, stream_id(0x5EED, i))
        images.append(synth_image(label, size, rng))
        labels.append(label)
    names = [f"{k:02d}_{SYNTH_CLASSES[k]}" for k in range(num_classes)]
    return ImageDataset(images, np.asarray(labels, dtype=np.int64), names)
