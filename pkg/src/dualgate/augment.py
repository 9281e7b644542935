"""Two-view stochastic augmentation for joint-embedding pre-training.

Pipeline, in order: random resized crop (bilinear), horizontal flip,
colour jitter, grayscale, solarize. Images are float32 HWC arrays in [0, 1].
Each view pair is a pure function of ``(config.seed, stream_id)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConfigurationError
from .rng import generator

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclass
class AugmentConfig:
    crop_area_range: tuple = (0.2, 1.0)
    crop_ratio_range: tuple = (3 / 4, 4 / 3)
    output_size: int = 32
    p_flip: float = 0.5
    p_jitter: float = 0.8
    jitter_strengths: tuple = (0.4, 0.4, 0.2, 0.1)
    p_gray: float = 0.2
    p_solarize: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.crop_area_range = tuple(float(v) for v in self.crop_area_range)
        self.crop_ratio_range = tuple(float(v) for v in self.crop_ratio_range)
        self.jitter_strengths = tuple(float(v) for v in self.jitter_strengths)
        for p in (self.p_flip, self.p_jitter, self.p_gray, self.p_solarize):
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"probability {p} outside [0, 1]")
        lo, hi = self.crop_area_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ConfigurationError("crop area range must lie within (0, 1]")
        if len(self.jitter_strengths) != 4 or min(self.jitter_strengths) < 0:
            raise ConfigurationError("jitter strengths are four non-negative values")
        if self.output_size < 1:
            raise ConfigurationError("output_size must be positive")


@dataclass
class ViewParams:
    crop: tuple  # top, left, height, width
    flip: bool
    jitter: tuple | None  # (brightness, contrast, saturation, hue, order)
    gray: bool
    solarize: bool


def _sample_crop(rng: np.random.Generator, h: int, w: int, config: AugmentConfig) -> tuple:
    area = h * w
    log_lo, log_hi = math.log(config.crop_ratio_range[0]), math.log(config.crop_ratio_range[1])
    for _ in range(10):
        target = area * rng.uniform(*config.crop_area_range)
        ratio = math.exp(rng.uniform(log_lo, log_hi))
        cw = int(round(math.sqrt(target * ratio)))
        ch = int(round(math.sqrt(target / ratio)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    # center crop at the closest admissible aspect ratio
    in_ratio = w / h
    if in_ratio < config.crop_ratio_range[0]:
        cw, ch = w, int(round(w / config.crop_ratio_range[0]))
    elif in_ratio > config.crop_ratio_range[1]:
        ch, cw = h, int(round(h * config.crop_ratio_range[1]))
    else:
        ch, cw = h, w
    return (h - ch) // 2, (w - cw) // 2, ch, cw


def sample_params(rng: np.random.Generator, h: int, w: int, config: AugmentConfig) -> ViewParams:
    crop = _sample_crop(rng, h, w, config)
    flip = bool(rng.random() < config.p_flip)
    jitter = None
    if rng.random() < config.p_jitter:
        b, c, s, hue = config.jitter_strengths
        jitter = (rng.uniform(max(0.0, 1 - b), 1 + b), rng.uniform(max(0.0, 1 - c), 1 + c),
                  rng.uniform(max(0.0, 1 - s), 1 + s), rng.uniform(-hue, hue),
                  tuple(int(i) for i in rng.permutation(4)))
    gray = bool(rng.random() < config.p_gray)
    solarize = bool(rng.random() < config.p_solarize)
    return ViewParams(crop, flip, jitter, gray, solarize)


def resized_crop(img: np.ndarray, top: int, left: int, ch: int, cw: int, size: int) -> np.ndarray:
    """Bilinear resize of ``img[top:top+ch, left:left+cw]`` to size×size (half-pixel centers)."""
    h, w = img.shape[:2]

    def axis(start, length, limit):
        src = (np.arange(size, dtype=np.float64) + 0.5) * (length / size) - 0.5
        src = np.clip(src, 0, length - 1) + start
        i0 = np.floor(src).astype(np.intp)
        i1 = np.minimum(i0 + 1, limit - 1)
        return i0, i1, (src - i0).astype(np.float32)

    y0, y1, wy = axis(top, ch, h)
    x0, x1, wx = axis(left, cw, w)
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    rows0, rows1 = img[y0], img[y1]
    top_row = rows0[:, x0] * (1 - wx) + rows0[:, x1] * wx
    bottom_row = rows1[:, x0] * (1 - wx) + rows1[:, x1] * wx
    return (top_row * (1 - wy) + bottom_row * wy).astype(np.float32)


def grayscale(img: np.ndarray) -> np.ndarray:
    return np.repeat((img @ _LUMA)[..., None], 3, axis=2)


def rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    maxc = img.max(axis=2)
    minc = img.min(axis=2)
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1), 0)
    safe = np.where(delta > 0, delta, 1)
    rc, gc, bc = (maxc - r) / safe, (maxc - g) / safe, (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, maxc], axis=2)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    i = i.astype(np.int64) % 6
    choices = [np.stack(c, axis=2) for c in
               ((v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q))]
    out = np.zeros_like(hsv)
    for k, c in enumerate(choices):
        out = np.where((i == k)[..., None], c, out)
    return out


def color_jitter(img: np.ndarray, brightness: float, contrast: float, saturation: float,
                 hue: float, order: tuple = (0, 1, 2, 3)) -> np.ndarray:
    for op in order:
        if op == 0:
            img = np.clip(img * brightness, 0, 1)
        elif op == 1:
            m = float((img @ _LUMA).mean())
            img = np.clip((img - m) * contrast + m, 0, 1)
        elif op == 2:
            gray = (img @ _LUMA)[..., None]
            img = np.clip((img - gray) * saturation + gray, 0, 1)
        elif hue != 0.0:
            hsv = rgb_to_hsv(img)
            hsv[..., 0] = (hsv[..., 0] + hue) % 1.0
            img = hsv_to_rgb(hsv)
    return img.astype(np.float32)


def solarize(img: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return np.where(img > threshold, 1.0 - img, img).astype(np.float32)


def apply_view(img: np.ndarray, params: ViewParams, size: int) -> np.ndarray:
    out = resized_crop(img, *params.crop, size)
    if params.flip:
        out = out[:, ::-1]
    if params.jitter is not None:
        out = color_jitter(out, *params.jitter)
    if params.gray:
        out = grayscale(out)
    if params.solarize:
        out = solarize(out)
    return np.ascontiguousarray(np.clip(out, 0.0, 1.0), dtype=np.float32)


def sample_views(anchor: np.ndarray, config: AugmentConfig, stream_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Two independently augmented views of ``anchor`` (HWC, values in [0, 1])."""
    if anchor.ndim != 3 or anchor.shape[2] != 3:
        raise ConfigurationError("anchor must be an H×W×3 image")
    rng = generator(config.seed, stream_id)
    h, w = anchor.shape[:2]
    p1 = sample_params(rng, h, w, config)
    p2 = sample_params(rng, h, w, config)
    return apply_view(anchor, p1, config.output_size), apply_view(anchor, p2, config.output_size)


def center_resize(img: np.ndarray, size: int) -> np.ndarray:
    """Deterministic square center crop followed by a bilinear resize."""
    h, w = img.shape[:2]
    side = min(h, w)
    if side == size and h == w:
        return np.ascontiguousarray(img, dtype=np.float32)
    return resized_crop(img, (h - side) // 2, (w - side) // 2, side, side, size)
