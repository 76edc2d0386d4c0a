"""Color-jitter domain randomization for RGB panoramas.

Images are ``uint8`` arrays of shape (height, width, 3). Work is done in
float64 with a clamp to [0, 255] after every transform and a single
round-half-to-even at the end.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class JitterFactors:
    brightness: float = 0.3
    contrast: float = 0.3
    saturation: float = 0.3
    hue: float = 0.01

    def __post_init__(self):
        for name in ("brightness", "contrast", "saturation"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} factor must be non-negative")
        if not 0.0 <= self.hue < 1.0:
            raise ValueError("hue factor must lie in [0, 1)")


def as_image(buffer, width, height):
    """View a flat row-major RGB byte buffer as an image array."""
    arr = np.frombuffer(bytes(buffer), dtype=np.uint8) if not isinstance(buffer, np.ndarray) else buffer
    if arr.size != width * height * 3:
        raise ValueError(f"buffer holds {arr.size} bytes, expected {width * height * 3}")
    return np.asarray(arr, dtype=np.uint8).reshape(height, width, 3)


def draw_factors(factors: JitterFactors, seed):
    """Multipliers (b, c, s) from [1-f, 1+f] and hue shift h from [-f_h, f_h], in that order."""
    rng = np.random.default_rng(seed)
    b = rng.uniform(1.0 - factors.brightness, 1.0 + factors.brightness)
    c = rng.uniform(1.0 - factors.contrast, 1.0 + factors.contrast)
    s = rng.uniform(1.0 - factors.saturation, 1.0 + factors.saturation)
    h = rng.uniform(-factors.hue, factors.hue)
    return float(b), float(c), float(s), float(h)


def rgb_to_hsv(rgb):
    """Vectorized HSV conversion for values in [0, 1]; hue in [0, 1)."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    delta = maxc - minc
    chroma = delta > 0
    safe = np.where(chroma, delta, 1.0)
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(chroma, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv):
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    out = np.stack([r, g, b], axis=-1)
    return np.where((s == 0)[..., None], v[..., None], out)


def apply_jitter(img, brightness=1.0, contrast=1.0, saturation=1.0, hue=0.0):
    """Apply explicit multipliers; an identity multiplier skips its transform."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    x = img.astype(np.float64)
    if brightness != 1.0:
        x = np.clip(x * brightness, 0.0, 255.0)
    if contrast != 1.0:
        mean = float((x @ LUMA).mean())
        x = np.clip(contrast * x + (1.0 - contrast) * mean, 0.0, 255.0)
    if saturation != 1.0:
        gray = (x @ LUMA)[..., None]
        x = np.clip(saturation * x + (1.0 - saturation) * gray, 0.0, 255.0)
    if hue != 0.0:
        hsv = rgb_to_hsv(x / 255.0)
        hsv[..., 0] = (hsv[..., 0] + hue) % 1.0
        x = np.clip(hsv_to_rgb(hsv) * 255.0, 0.0, 255.0)
    return np.rint(x).astype(np.uint8)


def color_jitter(img, factors: JitterFactors | None = None, seed=0):
    """Randomized brightness, contrast, saturation and hue, deterministic in ``seed``."""
    factors = factors or JitterFactors()
    b, c, s, h = draw_factors(factors, seed)
    return apply_jitter(img, b, c, s, h)


def read_image(path):
    """Load a PNG or PPM file as an RGB array."""
    from PIL import Image

    with Image.open(path) as im:
        return np.array(im.convert("RGB"))


def write_image(img, path):
    """Save losslessly; format chosen from the extension (.png or .ppm)."""
    from PIL import Image

    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path)
