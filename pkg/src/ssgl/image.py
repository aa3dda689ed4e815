"""8-bit raster images: PNM I/O, preprocessing, augmentation, features.

Pixel (x, y) is column x, row y. All 8-bit outputs round half away from
zero, once, at the end of each operation.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SSGLError
from .fileio import atomic_write
from .rng import SplitMix64


@dataclass(frozen=True)
class RasterImage:
    """Image stored as a read-only uint8 array of shape (height, width, channels)."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.pixels, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise SSGLError("image must be (height, width, 1|3)")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise SSGLError("image dimensions must be >= 1")
        if arr.dtype != np.uint8:
            if np.any(arr < 0) or np.any(arr > 255) or np.any(arr != np.floor(arr)):
                raise SSGLError("samples must be integers in [0, 255]")
            arr = arr.astype(np.uint8)
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def samples(self) -> bytes:
        """Row-major, channel-interleaved sample bytes."""
        return self.pixels.tobytes()

    @classmethod
    def from_samples(cls, width: int, height: int, channels: int, samples) -> RasterImage:
        data = np.frombuffer(bytes(samples), dtype=np.uint8)
        if data.size != width * height * channels:
            raise SSGLError("sample count does not match width * height * channels")
        return cls(data.reshape(height, width, channels))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.all(self.pixels == other.pixels))

    __hash__ = None  # type: ignore[assignment]


def round_half_away(values: np.ndarray) -> np.ndarray:
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def _to_u8(values: np.ndarray) -> RasterImage:
    return RasterImage(np.clip(round_half_away(values), 0, 255).astype(np.uint8))


# ---------------------------------------------------------------- PNM I/O

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_pnm(data: bytes) -> RasterImage:
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise SSGLError("truncated PNM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise SSGLError(f"unsupported magic {magic.decode(errors='replace')!r}, expected P5 or P6")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise SSGLError("malformed PNM header") from exc
    if maxval != 255:
        raise SSGLError(f"unsupported maxval {maxval}")
    if width < 1 or height < 1:
        raise SSGLError("PNM dimensions must be >= 1")
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise SSGLError("truncated body")
    pos += 1
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    body = data[pos:pos + need]
    if len(body) < need:
        raise SSGLError(f"truncated body: expected {need} bytes, got {len(body)}")
    return RasterImage.from_samples(width, height, channels, body)


def encode_pnm(image: RasterImage) -> bytes:
    magic = "P5" if image.channels == 1 else "P6"
    return f"{magic}\n{image.width} {image.height}\n255\n".encode("ascii") + image.samples


def read_pnm(path: str | Path) -> RasterImage:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise SSGLError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return decode_pnm(data)
    except SSGLError as exc:
        raise SSGLError(f"{path}: {exc}") from None


def write_pnm(image: RasterImage, path: str | Path) -> None:
    with atomic_write(path, "wb") as fh:
        fh.write(encode_pnm(image))


# ---------------------------------------------------------- geometry ops


def crop(image: RasterImage, x: int, y: int, w: int, h: int) -> RasterImage:
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > image.width or y + h > image.height:
        raise SSGLError(
            f"crop rectangle ({x}, {y}, {w}, {h}) outside {image.width}x{image.height} image"
        )
    return RasterImage(image.pixels[y:y + h, x:x + w])


def flip(image: RasterImage, axis: str) -> RasterImage:
    if axis == "horizontal":
        return RasterImage(image.pixels[:, ::-1])
    if axis == "vertical":
        return RasterImage(image.pixels[::-1, :])
    raise SSGLError(f"unknown flip axis {axis!r}")


def rotate90(image: RasterImage, quarter_turns: int = 1) -> RasterImage:
    """Rotate clockwise by 90 degrees `quarter_turns` times (exact)."""
    return RasterImage(np.rot90(image.pixels, k=-(quarter_turns % 4), axes=(0, 1)))


def _source_axis(out_size: int, in_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    d = np.arange(out_size, dtype=np.float64)
    s = (d + 0.5) * (in_size / out_size) - 0.5
    s = np.clip(s, 0.0, in_size - 1)
    lo = np.floor(s).astype(np.intp)
    hi = np.minimum(lo + 1, in_size - 1)
    return lo, hi, s - lo


def _resize_real(values: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    in_h, in_w = values.shape[:2]
    x0, x1, fx = _source_axis(out_w, in_w)
    y0, y1, fy = _source_axis(out_h, in_h)
    fx = fx[None, :, None]
    fy = fy[:, None, None]
    top = values[y0][:, x0] * (1 - fx) + values[y0][:, x1] * fx
    bottom = values[y1][:, x0] * (1 - fx) + values[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def resize_bilinear(image: RasterImage, out_w: int, out_h: int) -> RasterImage:
    """Bilinear resize with the pixel-center convention s = (d + 0.5) * in/out - 0.5."""
    if out_w < 1 or out_h < 1:
        raise SSGLError("output dimensions must be >= 1")
    if (out_w, out_h) == (image.width, image.height):
        return image
    return _to_u8(_resize_real(image.pixels.astype(np.float64), out_w, out_h))


def rotate(image: RasterImage, angle_degrees: float) -> RasterImage:
    """Rotate clockwise about the image center.

    Multiples of 90 degrees permute indices exactly. Other angles keep the
    input size, inverse-map each output pixel, sample bilinearly and read
    zeros outside the frame.
    """
    if not math.isfinite(angle_degrees):
        raise SSGLError("rotation angle must be finite")
    angle = math.fmod(angle_degrees, 360.0)
    if angle < 0:
        angle += 360.0
    if angle % 90.0 == 0.0:
        return rotate90(image, int(angle // 90.0))

    h, w, c = image.pixels.shape
    theta = math.radians(angle)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    sx = cos_t * dx + sin_t * dy + cx
    sy = -sin_t * dx + cos_t * dy + cy

    padded = np.zeros((h + 2, w + 2, c), dtype=np.float64)
    padded[1:-1, 1:-1] = image.pixels
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]

    def tap(yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
        # shift by one for the zero border; anything further out is zero too
        xi = np.clip(xx.astype(np.intp) + 1, 0, w + 1)
        yi = np.clip(yy.astype(np.intp) + 1, 0, h + 1)
        inside = ((xx >= -1) & (xx <= w) & (yy >= -1) & (yy <= h))[..., None]
        return np.where(inside, padded[yi, xi], 0.0)

    out = (
        tap(y0, x0) * (1 - fx) * (1 - fy)
        + tap(y0, x0 + 1) * fx * (1 - fy)
        + tap(y0 + 1, x0) * (1 - fx) * fy
        + tap(y0 + 1, x0 + 1) * fx * fy
    )
    return _to_u8(out)


# ---------------------------------------------------------- intensity ops


def contrast_stretch(image: RasterImage) -> RasterImage:
    """Per-channel min-max stretch to [0, 255]; flat channels are left alone."""
    values = image.pixels.astype(np.float64)
    out = values.copy()
    for ch in range(image.channels):
        plane = values[:, :, ch]
        lo, hi = plane.min(), plane.max()
        if hi > lo:
            out[:, :, ch] = (plane - lo) / (hi - lo) * 255.0
    return _to_u8(out)


@dataclass(frozen=True)
class NoiseSpec:
    sigma_fraction: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not math.isfinite(self.sigma_fraction) or self.sigma_fraction < 0:
            raise SSGLError("sigma_fraction must be finite and >= 0")


def add_gaussian_noise(image: RasterImage, spec: NoiseSpec) -> RasterImage:
    if spec.sigma_fraction == 0:
        return image
    flat = image.pixels.reshape(-1).astype(np.float64)
    z = SplitMix64(spec.seed).normal_array(flat.size)
    noisy = flat + z * (spec.sigma_fraction * 255.0)
    return _to_u8(noisy.reshape(image.pixels.shape))


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return weights / weights.sum()


def gaussian_blur(image: RasterImage, sigma: float) -> RasterImage:
    """Separable blur, radius ceil(3 sigma), clamp-to-edge, one final rounding."""
    if not sigma > 0 or not math.isfinite(sigma):
        raise SSGLError("blur sigma must be > 0")
    kernel = gaussian_kernel(sigma)
    radius = kernel.size // 2
    values = image.pixels.astype(np.float64)
    h, w = values.shape[:2]

    cols = np.clip(np.arange(w)[:, None] + np.arange(-radius, radius + 1)[None, :], 0, w - 1)
    horiz = np.einsum("ywkc,k->ywc", values[:, cols], kernel)
    rows = np.clip(np.arange(h)[:, None] + np.arange(-radius, radius + 1)[None, :], 0, h - 1)
    vert = np.einsum("ykwc,k->ywc", horiz[rows], kernel)
    return _to_u8(vert)


def to_gray(image: RasterImage) -> RasterImage:
    if image.channels == 1:
        return image
    rgb = image.pixels.astype(np.float64)
    gray = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    return _to_u8(gray[:, :, None])


def extract_features(image: RasterImage, grid: int, hist_bins: int) -> np.ndarray:
    """Downsampled gray thumbnail (grid x grid, scaled to [0, 1]) plus a
    normalized intensity histogram of the full gray image."""
    if grid < 1 or hist_bins < 1:
        raise SSGLError("grid and hist_bins must be >= 1")
    gray = to_gray(image)
    thumb = resize_bilinear(gray, grid, grid).pixels.reshape(-1).astype(np.float64) / 255.0
    bins = gray.pixels.reshape(-1).astype(np.intp) * hist_bins // 256
    hist = np.bincount(bins, minlength=hist_bins).astype(np.float64)
    return np.concatenate([thumb, hist / hist.sum()])


# ---------------------------------------------------------- op strings


def parse_ops(text: str) -> list[tuple[str, tuple]]:
    """Parse a comma-separated augmentation string such as ``rot90,blur:1.5``."""
    ops = []
    for raw in text.split(","):
        token = raw.strip()
        if not token:
            raise SSGLError(f"empty op in {text!r}")
        name, *args = token.split(":")
        try:
            if name in ("rot90", "flip-h", "flip-v", "stretch") and not args:
                ops.append((name, ()))
            elif name in ("rot", "noise", "blur") and len(args) == 1:
                ops.append((name, (float(args[0]),)))
            elif name == "resize" and len(args) == 2:
                ops.append((name, tuple(int(a) for a in args)))
            elif name == "crop" and len(args) == 4:
                ops.append((name, tuple(int(a) for a in args)))
            else:
                raise SSGLError(f"unknown or malformed op {token!r}")
        except ValueError as exc:
            raise SSGLError(f"bad argument in op {token!r}") from exc
    return ops


def apply_ops(image: RasterImage, ops: list[tuple[str, tuple]], seed: int = 0) -> RasterImage:
    """Apply parsed ops left to right; the i-th op that adds noise uses seed ^ i."""
    for position, (name, args) in enumerate(ops):
        if name == "rot90":
            image = rotate90(image)
        elif name == "rot":
            image = rotate(image, args[0])
        elif name == "flip-h":
            image = flip(image, "horizontal")
        elif name == "flip-v":
            image = flip(image, "vertical")
        elif name == "crop":
            image = crop(image, *args)
        elif name == "resize":
            image = resize_bilinear(image, *args)
        elif name == "stretch":
            image = contrast_stretch(image)
        elif name == "noise":
            image = add_gaussian_noise(image, NoiseSpec(args[0], seed ^ position))
        elif name == "blur":
            image = gaussian_blur(image, args[0])
        else:
            raise SSGLError(f"unknown op {name!r}")
    return image
