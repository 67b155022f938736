"""Image buffers, soft masks, and mask-analysis primitives.

All pixel data is float64 numpy, row-major, top-left origin. Color images are
kept in linear radiance; sRGB conversion happens only at PNG boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import (
    DegenerateRange,
    DimensionMismatch,
    EmptyRegion,
)


@dataclass
class ImageF:
    """Float image, shape (height, width, channels) with channels 1 or 3."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3 or a.shape[2] not in (1, 3):
            raise ValueError(f"expected (h, w, 1|3) data, got shape {a.shape}")
        if not np.isfinite(a).all():
            raise ValueError("image contains non-finite values")
        self.data = np.ascontiguousarray(a)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def plane(self) -> np.ndarray:
        """Return the (h, w) array of a single-channel image."""
        if self.channels != 1:
            raise ValueError("plane() requires a 1-channel image")
        return self.data[:, :, 0]

    def same_size(self, other: "ImageF") -> bool:
        return self.width == other.width and self.height == other.height


def soft_mask(data: np.ndarray) -> ImageF:
    """Build a 1-channel coverage mask, validating the [0, 1] range."""
    img = ImageF(np.asarray(data, dtype=np.float64))
    if img.channels != 1:
        raise ValueError("soft mask must be single-channel")
    p = img.plane()
    if p.size and (p.min() < -1e-9 or p.max() > 1 + 1e-9):
        raise ValueError("mask values outside [0, 1]")
    np.clip(p, 0.0, 1.0, out=p)
    return img


@dataclass(frozen=True)
class Rect:
    """Integer pixel rectangle, x/y is the top-left corner."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError("rect must be at least 1x1")

    def clipped_to(self, width: int, height: int) -> bool:
        return 0 <= self.x and 0 <= self.y and self.x + self.w <= width and self.y + self.h <= height

    def slice(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.h), slice(self.x, self.x + self.w)

    def area(self) -> int:
        return self.w * self.h


# -- reductions over masks ------------------------------------------------------


def soft_iou(a: ImageF, b: ImageF) -> float:
    """Fuzzy intersection-over-union of two coverage masks: sum(min)/sum(max).

    Both masks all-zero returns 1.0 by convention.
    """
    if not a.same_size(b):
        raise DimensionMismatch(f"{a.width}x{a.height} vs {b.width}x{b.height}")
    pa, pb = a.plane(), b.plane()
    inter = np.minimum(pa, pb).sum()
    union = np.maximum(pa, pb).sum()
    if union == 0.0:
        return 1.0
    return float(inter / union)


def median_color(img: ImageF, mask: ImageF, threshold: float = 0.5) -> np.ndarray:
    """Per-channel median of `img` over pixels with mask coverage >= threshold."""
    if not img.same_size(mask):
        raise DimensionMismatch("image and mask size differ")
    sel = mask.plane() >= threshold
    if not sel.any():
        raise EmptyRegion("no pixel reaches the coverage threshold")
    return np.median(img.data[sel], axis=0)


def normalize_unit(depth: ImageF, valid: ImageF) -> ImageF:
    """Affine-map valid depths to [0, 1]; invalid pixels become 0."""
    if not depth.same_size(valid):
        raise DimensionMismatch("depth and validity mask size differ")
    sel = valid.plane() > 0.5
    vals = depth.plane()[sel]
    if vals.size < 2:
        raise DegenerateRange("fewer than 2 valid depth pixels")
    lo, hi = vals.min(), vals.max()
    if hi == lo:
        raise DegenerateRange("constant depth over valid region")
    out = np.zeros_like(depth.plane())
    out[sel] = (depth.plane()[sel] - lo) / (hi - lo)
    return ImageF(out)


# -- gaussian pyramid -----------------------------------------------------------


def gaussian_taps(sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian kernel truncated at ceil(3*sigma)."""
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def clamped_taps(sigma: float, size: int) -> np.ndarray:
    """Gaussian taps whose radius never exceeds size-1 (mirror pad limit)."""
    taps = gaussian_taps(sigma)
    radius = len(taps) // 2
    r = min(radius, max(0, size - 1))
    t = taps[radius - r: radius + r + 1]
    return t / t.sum()


def _blur2d(plane: np.ndarray, sigma: float) -> np.ndarray:
    from scipy.ndimage import correlate1d

    for axis in range(2):
        t = clamped_taps(sigma, plane.shape[axis])
        plane = correlate1d(plane, t, axis=axis, mode="mirror")
    return plane


def gaussian_pyramid(m: ImageF, levels: int = 4, sigma: float = 2.0) -> list[ImageF]:
    """Blurred mask pyramid: level 0 is the blurred input, then blur+halve."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    cur = _blur2d(m.plane(), sigma)
    out = [ImageF(cur)]
    for _ in range(1, levels):
        cur = _blur2d(cur, sigma)[::2, ::2]
        out.append(ImageF(cur))
    return out


# -- maximal inscribed rectangle --------------------------------------------------


def _rect_key(area: int, y: int, x: int, h: int, w: int):
    # Total order: larger area first, then smaller y, x, h, w.
    return (-area, y, x, h, w)


def max_inscribed_rect(m: ImageF, threshold: float) -> Rect | None:
    """Largest axis-aligned rectangle whose pixels all have coverage >= threshold.

    Stack-based maximal-rectangle-in-histogram scan, O(w*h). Ties broken by
    smaller y, then smaller x (then smaller h, w).
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    binary = m.plane() >= threshold
    h_img, w_img = binary.shape
    heights = np.zeros(w_img, dtype=np.int64)
    best = None
    best_key = None
    for row in range(h_img):
        heights = np.where(binary[row], heights + 1, 0)
        # histogram scan with a sentinel flush
        stack: list[tuple[int, int]] = []  # (left index, height)
        for i in range(w_img + 1):
            cur = int(heights[i]) if i < w_img else 0
            start = i
            while stack and stack[-1][1] >= cur:
                left, bar = stack.pop()
                if bar > 0:
                    area = bar * (i - left)
                    key = _rect_key(area, row - bar + 1, left, bar, i - left)
                    if best_key is None or key < best_key:
                        best_key = key
                        best = Rect(left, row - bar + 1, i - left, bar)
                start = left
            if cur > 0 and (not stack or stack[-1][1] < cur):
                stack.append((start, cur))
    return best


# -- resampling -------------------------------------------------------------------


def resize_box(img: ImageF, k: int) -> ImageF:
    """Box-filter downsample by integer factor k; ragged edges area-weighted."""
    if k < 1:
        raise ValueError("factor must be >= 1")
    if k == 1:
        return ImageF(img.data.copy())
    h, w, c = img.data.shape
    oh, ow = (h + k - 1) // k, (w + k - 1) // k
    out = np.empty((oh, ow, c), dtype=np.float64)
    for oy in range(oh):
        y0, y1 = oy * k, min((oy + 1) * k, h)
        for ox in range(ow):
            x0, x1 = ox * k, min((ox + 1) * k, w)
            out[oy, ox] = img.data[y0:y1, x0:x1].mean(axis=(0, 1))
    return ImageF(out)


def area_resample(plane: np.ndarray, oh: int, ow: int) -> np.ndarray:
    """Area-weighted resample of a (h, w) plane to (oh, ow) via summed areas."""
    h, w = plane.shape
    ys = np.linspace(0, h, oh + 1).astype(int)
    xs = np.linspace(0, w, ow + 1).astype(int)
    csum = np.zeros((h + 1, w + 1))
    csum[1:, 1:] = plane.cumsum(0).cumsum(1)
    out = np.empty((oh, ow))
    for i in range(oh):
        y0, y1 = ys[i], max(ys[i + 1], ys[i] + 1)
        for j in range(ow):
            x0, x1 = xs[j], max(xs[j + 1], xs[j] + 1)
            s = csum[y1, x1] - csum[y0, x1] - csum[y1, x0] + csum[y0, x0]
            out[i, j] = s / ((y1 - y0) * (x1 - x0))
    return out


# -- color transfer ----------------------------------------------------------------


def srgb_to_linear(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(v: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    return np.where(v <= 0.0031308, v * 12.92, 1.055 * v ** (1 / 2.4) - 0.055)


def luminance(img: ImageF) -> ImageF:
    """Rec.709 luminance of a linear RGB image."""
    if img.channels != 3:
        raise ValueError("luminance requires 3 channels")
    w = np.array([0.2126, 0.7152, 0.0722])
    return ImageF(img.data @ w)


# -- file I/O ----------------------------------------------------------------------


def load_png(path, *, srgb: bool = True) -> ImageF:
    """Read an 8-bit PNG; color images are decoded from sRGB to linear."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I"):
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            return ImageF(arr)
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return ImageF(srgb_to_linear(arr) if srgb else arr)


def save_png(path, img: ImageF, *, srgb: bool = True) -> None:
    """Write an 8-bit PNG; color data is encoded to sRGB unless srgb=False."""
    data = img.data
    if img.channels == 3:
        enc = linear_to_srgb(data) if srgb else np.clip(data, 0.0, 1.0)
        arr = np.round(enc * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(path)
    else:
        arr = np.round(np.clip(data[:, :, 0], 0.0, 1.0) * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(path)


def write_pfm(path, img: ImageF) -> None:
    """Write a PFM file: 'Pf' (1ch) or 'PF' (3ch), little-endian, bottom-up rows."""
    header = b"PF\n" if img.channels == 3 else b"Pf\n"
    with open(path, "wb") as f:
        f.write(header)
        f.write(f"{img.width} {img.height}\n".encode())
        f.write(b"-1.0\n")  # negative scale: little-endian
        flipped = np.ascontiguousarray(img.data[::-1], dtype="<f4")
        f.write(flipped.tobytes())


def read_pfm(path) -> ImageF:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"PF", b"Pf"):
            raise ValueError(f"not a PFM file: magic {magic!r}")
        dims = f.readline().split()
        width, height = int(dims[0]), int(dims[1])
        scale = float(f.readline())
        channels = 3 if magic == b"PF" else 1
        count = width * height * channels
        dtype = "<f4" if scale < 0 else ">f4"
        raw = np.frombuffer(f.read(count * 4), dtype=dtype, count=count)
    arr = raw.reshape(height, width, channels)[::-1].astype(np.float64)
    return ImageF(arr)
