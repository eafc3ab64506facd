"""Image decoding and the geometric primitives shared by every stage.

All pixel math happens in 32-bit floats from decode onward; values are
only rounded back to 8-bit at encode time. Every function here is pure:
it never mutates its input buffer.

Supported codecs: PPM (P6) and PGM (P5) with maxval 255, written by hand
so fixtures stay fully specifiable, and 8-bit PNG via Pillow.
"""

import io
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    CropLargerThanImage,
    MalformedHeader,
    TruncatedData,
    UnsupportedBitDepth,
    ZeroStd,
)


class ImageFormat(Enum):
    PPM = "ppm"
    PNG = "png"


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Decoded raster image: (height, width, channels) float32, row-major.

    The flat C-order view of ``pixels`` is channel-interleaved, and decode
    guarantees every value lies in [0, 255].
    """

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] not in (1, 3):
            raise ValueError(f"pixels must be (h, w, 1|3), got {p.shape}")
        if p.dtype != np.float32:
            object.__setattr__(self, "pixels", p.astype(np.float32))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def data(self) -> np.ndarray:
        """Flat row-major channel-interleaved view."""
        return np.ascontiguousarray(self.pixels).reshape(-1)


def _parse_pnm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read `count` whitespace/comment-separated integer tokens after the
    magic, returning (tokens, offset-one-past-the-final-whitespace)."""
    tokens: list[int] = []
    i = 2  # skip magic
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i] not in (0x0A, 0x0D):
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise MalformedHeader("unterminated PNM header")
        tok = data[start:i]
        if not tok.isdigit():
            raise MalformedHeader(f"non-numeric PNM header token {tok!r}")
        tokens.append(int(tok))
    if i >= n:
        raise TruncatedData("PNM header not followed by sample data")
    return tokens, i + 1  # single whitespace byte separates header from raster


def _decode_pnm(data: bytes) -> ImageBuffer:
    magic = data[:2]
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise MalformedHeader(f"not a P5/P6 PNM stream (magic {magic!r})")
    (w, h, maxval), offset = _parse_pnm_tokens(data, 3)
    if w < 1 or h < 1:
        raise MalformedHeader(f"invalid PNM dimensions {w}x{h}")
    if maxval != 255:
        raise UnsupportedBitDepth(f"only maxval 255 supported, got {maxval}")
    need = w * h * channels
    raster = data[offset : offset + need]
    if len(raster) < need:
        raise TruncatedData(f"expected {need} raster bytes, got {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8).astype(np.float32)
    return ImageBuffer(arr.reshape(h, w, channels))


def _decode_png(data: bytes) -> ImageBuffer:
    from PIL import Image, UnidentifiedImageError

    if data[:8] != b"\x89PNG\r\n\x1a\n":
        raise MalformedHeader("missing PNG signature")
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except UnidentifiedImageError as e:
        raise MalformedHeader(str(e)) from e
    except (OSError, SyntaxError) as e:
        raise TruncatedData(str(e)) from e
    if img.mode in ("I", "I;16", "I;16B", "I;16L", "F", "1"):
        raise UnsupportedBitDepth(f"only 8-bit samples supported, got mode {img.mode}")
    if img.mode == "L":
        arr = np.asarray(img, dtype=np.uint8)[:, :, None]
    else:
        if img.mode != "RGB":
            img = img.convert("RGB")  # palette / alpha collapse to 8-bit RGB
        arr = np.asarray(img, dtype=np.uint8)
    return ImageBuffer(arr.astype(np.float32))


def decode_image(data: bytes, fmt: ImageFormat | str) -> ImageBuffer:
    """Decode PPM/PGM or PNG bytes; 8-bit samples widen to float32 unscaled."""
    if not data:
        raise MalformedHeader("empty byte stream")
    fmt = ImageFormat(fmt) if not isinstance(fmt, ImageFormat) else fmt
    if fmt is ImageFormat.PPM:
        return _decode_pnm(data)
    return _decode_png(data)


def sniff_format(data: bytes) -> ImageFormat:
    if data[:2] in (b"P5", b"P6"):
        return ImageFormat.PPM
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return ImageFormat.PNG
    raise MalformedHeader(f"unrecognized magic bytes {data[:8]!r}")


def load_image(path) -> ImageBuffer:
    with open(path, "rb") as f:
        data = f.read()
    return decode_image(data, sniff_format(data))


def probe_channels(head: bytes) -> int:
    """Channel count from header bytes alone (no raster decode).

    PNG gray / gray+alpha report 1; palette and RGB(A) report 3, matching
    what decode_image produces.
    """
    fmt = sniff_format(head)
    if fmt is ImageFormat.PPM:
        return 3 if head[:2] == b"P6" else 1
    if len(head) < 26:
        raise TruncatedData("PNG header shorter than IHDR")
    color_type = head[25]
    return 1 if color_type in (0, 4) else 3


def encode_ppm(img: ImageBuffer) -> bytes:
    """Encode as P6 (3-channel) or P5 (1-channel), maxval 255.

    The only rounding site of the pipeline's image path: values are
    clamped to [0, 255] and rounded half-away-from-zero to 8 bits.
    """
    arr = np.clip(img.pixels, 0.0, 255.0)
    arr = np.floor(arr + 0.5).astype(np.uint8)  # half-away == half-up for x >= 0
    magic = b"P6" if img.channels == 3 else b"P5"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    return header + arr.tobytes()


def save_image(img: ImageBuffer, path) -> None:
    path = str(path)
    if path.endswith(".png"):
        from PIL import Image

        arr = np.clip(img.pixels, 0.0, 255.0)
        arr = np.floor(arr + 0.5).astype(np.uint8)
        pil = Image.fromarray(arr[:, :, 0] if img.channels == 1 else arr)
        pil.save(path, format="PNG")
    else:
        with open(path, "wb") as f:
            f.write(encode_ppm(img))


def resize_bilinear(img: ImageBuffer, out_w: int, out_h: int) -> ImageBuffer:
    """Resize with half-pixel-center sampling.

    Source coordinate for output index d along an axis of source length s
    and output length t is (d + 0.5) * (s / t) - 0.5, clamped to
    [0, s - 1]; the four neighbors blend bilinearly per channel.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be >= 1, got {out_w}x{out_h}")
    src = img.pixels
    h, w = img.height, img.width
    if (out_w, out_h) == (w, h):
        return ImageBuffer(src.copy())

    def axis_coords(dst_len: int, src_len: int) -> np.ndarray:
        c = (np.arange(dst_len, dtype=np.float64) + 0.5) * (src_len / dst_len) - 0.5
        return np.clip(c, 0.0, src_len - 1)

    ys = axis_coords(out_h, h)
    xs = axis_coords(out_w, w)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]

    p = src.astype(np.float64)
    top = p[y0][:, x0] * (1.0 - wx) + p[y0][:, x1] * wx
    bot = p[y1][:, x0] * (1.0 - wx) + p[y1][:, x1] * wx
    out = top * (1.0 - wy) + bot * wy
    return ImageBuffer(out.astype(np.float32))


def center_crop(img: ImageBuffer, cw: int, ch: int) -> ImageBuffer:
    """Crop cw x ch from origin (floor((w-cw)/2), floor((h-ch)/2))."""
    if cw > img.width or ch > img.height:
        raise CropLargerThanImage(
            f"crop {cw}x{ch} exceeds image {img.width}x{img.height}"
        )
    if cw < 1 or ch < 1:
        raise ValueError(f"crop size must be >= 1, got {cw}x{ch}")
    x0 = (img.width - cw) // 2
    y0 = (img.height - ch) // 2
    return ImageBuffer(img.pixels[y0 : y0 + ch, x0 : x0 + cw].copy())


def normalize(img: ImageBuffer, mean, std) -> np.ndarray:
    """(pixel - mean) / std as a (h, w, c) float32 tensor.

    mean/std may be scalars or per-channel sequences (broadcast over the
    channel axis), so a model's metadata can encode its whole evaluation
    transform as one mean/std pair.
    """
    mean = np.asarray(mean, dtype=np.float32)
    std = np.asarray(std, dtype=np.float32)
    if np.any(std == 0.0):
        raise ZeroStd("std must be nonzero")
    return ((img.pixels - mean) / std).astype(np.float32)
