"""Training-time augmentation of (image, wrench) inputs.

Each sample gets exactly one color transform (HSV jitter, grayscale or a
random convolution), then a random translation inside a zero frame followed by
a random crop resized back with nearest-neighbor sampling. The wrench is
scaled by a single random factor so that only its direction is reliable.
Labels are never touched.

Single-sample functions are the reference; :func:`augment_batch` is the
vectorized form used inside the training loop.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._kernels import gather_crop, hsv_jitter, random_conv

LUMA = np.array([0.299, 0.587, 0.114])
COLOR_MODES = ("jitter", "gray", "randconv")


@dataclass
class AugmentConfig:
    jitter_h: float = 0.05
    jitter_s: float = 0.2
    jitter_v: float = 0.2
    kernel_std: float = 1.0 / 3.0
    pad: int = 8
    crop_min_fraction: float = 0.8
    color_mode_probs: tuple = (0.4, 0.4, 0.2)
    alpha_low: float = 0.0
    alpha_high: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        p = np.asarray(self.color_mode_probs, float)
        if p.shape != (3,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("color_mode_probs must be three non-negative numbers summing to 1")
        if self.pad < 0:
            raise ValueError("pad must be non-negative")
        if not 0 < self.crop_min_fraction <= 1:
            raise ValueError("crop_min_fraction must lie in (0, 1]")
        if min(self.jitter_h, self.jitter_s, self.jitter_v, self.kernel_std) < 0:
            raise ValueError("jitter ranges and kernel std must be non-negative")
        if not 0 <= self.alpha_low <= self.alpha_high:
            raise ValueError("alpha range must satisfy 0 <= low <= high")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


# -- color transforms -----------------------------------------------------------


def gray_scale(img: np.ndarray) -> np.ndarray:
    y = img @ LUMA.astype(img.dtype)
    return np.repeat(y[..., None], 3, axis=-1)


def color_jitter(img: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig | None = None) -> np.ndarray:
    cfg = cfg or AugmentConfig()
    noise = rng.uniform(-1.0, 1.0, 3) * [cfg.jitter_h, cfg.jitter_s, cfg.jitter_v]
    return _jitter(img[None], noise[None])[0]


def _jitter(imgs: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """HSV shift of a batch (B, H, W, 3) by per-image noise (B, 3)."""
    return hsv_jitter(np.ascontiguousarray(imgs), np.asarray(noise, np.float64))


def random_kernel(rng: np.random.Generator, cfg: AugmentConfig | None = None) -> np.ndarray:
    """(3, 3, C_in, C_out) weights drawn from N(0, std^2)."""
    cfg = cfg or AugmentConfig()
    return rng.normal(0.0, cfg.kernel_std, (3, 3, 3, 3))


def random_convolution(
    img: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig | None = None, kernel=None
) -> np.ndarray:
    k = random_kernel(rng, cfg) if kernel is None else np.asarray(kernel, float)
    return _randconv(img[None], k[None])[0]


def _randconv(imgs: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    return random_conv(np.ascontiguousarray(imgs), np.asarray(kernels, np.float64))


# -- geometric transform -------------------------------------------------------


def _crop_maps(h: int, w: int, cfg: AugmentConfig, rng: np.random.Generator, n: int):
    """Source row/column indices (n, h), (n, w) into the original image; -1 marks fill."""
    p = cfg.pad
    oy = rng.integers(0, 2 * p + 1, n)
    ox = rng.integers(0, 2 * p + 1, n)
    frac = rng.uniform(cfg.crop_min_fraction, 1.0, n)
    sh = np.clip(np.ceil(frac * h - 1e-9).astype(int), 1, h)
    sw = np.clip(np.ceil(frac * w - 1e-9).astype(int), 1, w)
    cy = (rng.random(n) * (h + 2 * p - sh + 1)).astype(int)
    cx = (rng.random(n) * (w + 2 * p - sw + 1)).astype(int)
    rows = cy[:, None] + ((np.arange(h)[None, :] + 0.5) * sh[:, None] / h).astype(int) - oy[:, None]
    cols = cx[:, None] + ((np.arange(w)[None, :] + 0.5) * sw[:, None] / w).astype(int) - ox[:, None]
    rows[(rows < 0) | (rows >= h)] = -1
    cols[(cols < 0) | (cols >= w)] = -1
    return rows, cols


def crop_from_maps(imgs: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return gather_crop(np.ascontiguousarray(imgs), rows, cols)


def translate_and_crop(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    h, w, _ = img.shape
    rows, cols = _crop_maps(h, w, cfg, rng, 1)
    return crop_from_maps(img[None], rows, cols)[0]


# -- wrench --------------------------------------------------------------------


def augment_wrench(w, rng: np.random.Generator, cfg: AugmentConfig | None = None, alpha: float | None = None):
    """Scale force and moment together by one alpha ~ U[low, high]."""
    from .sim import WrenchReading

    cfg = cfg or AugmentConfig()
    a = rng.uniform(cfg.alpha_low, cfg.alpha_high) if alpha is None else float(alpha)
    if isinstance(w, WrenchReading):
        return WrenchReading(a * w.f, a * w.m)
    return a * np.asarray(w, float)


# -- composition ---------------------------------------------------------------


def sample_color_modes(cfg: AugmentConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    """Indices into COLOR_MODES, one per sample."""
    return rng.choice(3, size=n, p=np.asarray(cfg.color_mode_probs, float))


def augment_sample(s, cfg: AugmentConfig, rng: np.random.Generator):
    """Augmented copy of a collector Sample; the label is carried over unchanged."""
    img = s.image
    mode = COLOR_MODES[int(sample_color_modes(cfg, rng, 1)[0])]
    if mode == "jitter":
        img = color_jitter(img, rng, cfg)
    elif mode == "gray":
        img = gray_scale(img)
    else:
        img = random_convolution(img, rng, cfg)
    img = translate_and_crop(img, cfg, rng)
    return replace(s, image=img, wrench=augment_wrench(s.wrench, rng, cfg))


def augment_batch(images: np.ndarray, wrenches: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator):
    """Vectorized augmentation of (B, H, W, 3) images and (B, 6) wrench arrays."""
    n, h, w, _ = images.shape
    modes = sample_color_modes(cfg, rng, n)
    out = np.empty_like(images)
    sel = modes == 0
    if sel.any():
        noise = rng.uniform(-1.0, 1.0, (int(sel.sum()), 3)) * [cfg.jitter_h, cfg.jitter_s, cfg.jitter_v]
        out[sel] = _jitter(images[sel], noise)
    sel = modes == 1
    if sel.any():
        out[sel] = gray_scale(images[sel])
    sel = modes == 2
    if sel.any():
        k = rng.normal(0.0, cfg.kernel_std, (int(sel.sum()), 3, 3, 3, 3))
        out[sel] = _randconv(images[sel], k)
    rows, cols = _crop_maps(h, w, cfg, rng, n)
    out = crop_from_maps(out, rows, cols)
    alpha = rng.uniform(cfg.alpha_low, cfg.alpha_high, n)
    return out, (wrenches * alpha[:, None]).astype(wrenches.dtype)


def expected_mode_counts(cfg: AugmentConfig, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Multinomial mean and standard deviation of color-mode counts over n draws."""
    p = np.asarray(cfg.color_mode_probs, float)
    return n * p, np.sqrt(n * p * (1 - p))

