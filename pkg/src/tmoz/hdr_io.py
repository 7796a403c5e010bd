"""HDR ingestion (Radiance RGBE, PFM), matrix colour conversion and 8-bit PNG output."""
from __future__ import annotations

import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

Space = Literal["rgb", "xyz"]

# IEC 61966-2-1 linear sRGB (D65) -> CIE XYZ
SRGB_TO_XYZ = np.array([
    [0.4124, 0.3576, 0.1805],
    [0.2126, 0.7152, 0.0722],
    [0.0193, 0.1192, 0.9505],
])
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)


class HdrFormatError(ValueError):
    """Raised when an HDR container cannot be decoded."""


@dataclass(frozen=True)
class HdrImage:
    """Linear floating point tristimulus raster, shape (height, width, 3)."""

    data: np.ndarray
    space: Space = "rgb"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError(f"expected (height, width, 3) data, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if not np.all(np.isfinite(data)):
            raise ValueError("image contains non-finite samples")
        if np.any(data < 0):
            raise ValueError("image contains negative samples")
        if self.space not in ("rgb", "xyz"):
            raise ValueError(f"unknown colour space tag {self.space!r}")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SdrImage:
    """8-bit device RGB raster, shape (height, width, 3)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError(f"expected (height, width, 3) data, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if data.dtype != np.uint8:
            if np.any(data < 0) or np.any(data > 255):
                raise ValueError("samples must lie in [0, 255]")
            data = data.astype(np.uint8)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def check_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"colour matrix must be 3x3, got {m.shape}")
    if abs(np.linalg.det(m)) <= 1e-12:
        raise ValueError("colour matrix is singular")
    return m


# --------------------------------------------------------------------------
# Radiance RGBE

_MAGIC = (b"#?RADIANCE", b"#?RGBE")
_RES_RE = re.compile(rb"^([-+])([XY])\s+(\d+)\s+([-+])([XY])\s+(\d+)\s*$")


def rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    """Decode (..., 4) RGBE bytes; a zero exponent means black."""
    rgbe = np.asarray(rgbe, dtype=np.uint8)
    mant = rgbe[..., :3].astype(np.float64) + 0.5
    exp = rgbe[..., 3].astype(np.int64)
    out = np.ldexp(mant, (exp - 136)[..., None])
    out[exp == 0] = 0.0
    return out


def float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    """Encode (..., 3) floats with the largest-component shared exponent rule."""
    rgb = np.asarray(rgb, dtype=np.float64)
    vmax = rgb.max(axis=-1)
    frac, exp = np.frexp(vmax)
    ok = vmax > 1e-32
    scale = np.where(ok, frac * 256.0 / np.where(ok, vmax, 1.0), 0.0)
    out = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    out[..., :3] = np.clip(np.floor(rgb * scale[..., None]), 0, 255).astype(np.uint8)
    out[..., 3] = np.where(ok, exp + 128, 0).astype(np.uint8)
    return out


def _parse_header(buf: bytes) -> tuple[dict, int]:
    if not buf.startswith(_MAGIC):
        raise HdrFormatError("missing #?RADIANCE / #?RGBE magic")
    pos = 0
    info = {"format": None, "exposure": 1.0}
    while True:
        end = buf.find(b"\n", pos)
        if end < 0:
            raise HdrFormatError("header is not terminated by a blank line")
        line = buf[pos:end].rstrip(b"\r")
        pos = end + 1
        if not line:
            break
        if line.startswith(b"FORMAT="):
            info["format"] = line[7:].strip().decode("ascii", "replace")
        elif line.startswith(b"EXPOSURE="):
            try:
                info["exposure"] *= float(line[9:])
            except ValueError:
                raise HdrFormatError(f"bad EXPOSURE line {line!r}") from None
    end = buf.find(b"\n", pos)
    if end < 0:
        raise HdrFormatError("missing resolution line")
    m = _RES_RE.match(buf[pos:end].rstrip(b"\r"))
    if not m:
        raise HdrFormatError(f"malformed resolution line {buf[pos:end]!r}")
    s1, a1, n1, s2, a2, n2 = m.groups()
    if (s1, a1, s2, a2) != (b"-", b"Y", b"+", b"X"):
        raise HdrFormatError("unsupported pixel ordering, only '-Y h +X w' is handled")
    info["height"], info["width"] = int(n1), int(n2)
    if info["height"] < 1 or info["width"] < 1:
        raise HdrFormatError("image dimensions must be positive")
    return info, end + 1


def _read_rle_scanline(buf: bytes, pos: int, width: int, out: np.ndarray) -> int:
    # out: (4, width) uint8, channel planar
    for ch in range(4):
        x = 0
        row = out[ch]
        while x < width:
            if pos >= len(buf):
                raise HdrFormatError("truncated RLE scanline")
            count = buf[pos]
            pos += 1
            if count > 128:
                count -= 128
                if x + count > width:
                    raise HdrFormatError("RLE run overruns scanline width")
                if pos >= len(buf):
                    raise HdrFormatError("truncated RLE scanline")
                row[x:x + count] = buf[pos]
                pos += 1
            else:
                if count == 0:
                    raise HdrFormatError("zero-length RLE literal")
                if x + count > width:
                    raise HdrFormatError("RLE run overruns scanline width")
                if pos + count > len(buf):
                    raise HdrFormatError("truncated RLE scanline")
                row[x:x + count] = np.frombuffer(buf, np.uint8, count, pos)
                pos += count
            x += count
    return pos


def read_radiance_hdr(data: bytes) -> HdrImage:
    """Decode a Radiance ``.hdr`` byte stream (flat or new-style RLE scanlines)."""
    info, pos = _parse_header(data)
    width, height = info["width"], info["height"]
    space: Space = "xyz" if info["format"] == "32-bit_rle_xyze" else "rgb"
    rgbe = np.empty((height, width, 4), dtype=np.uint8)
    planar = np.empty((4, width), dtype=np.uint8)
    for y in range(height):
        head = data[pos:pos + 4]
        if (
            8 <= width <= 0x7FFF
            and len(head) == 4
            and head[0] == 2 and head[1] == 2 and head[2] < 128
        ):
            if (head[2] << 8 | head[3]) != width:
                raise HdrFormatError(f"scanline {y}: RLE width does not match header")
            pos = _read_rle_scanline(data, pos + 4, width, planar)
            rgbe[y] = planar.T
        else:
            n = 4 * width
            if pos + n > len(data):
                raise HdrFormatError(f"truncated scanline {y}")
            rgbe[y] = np.frombuffer(data, np.uint8, n, pos).reshape(width, 4)
            pos += n
    pixels = rgbe_to_float(rgbe)
    if info["exposure"] != 1.0:
        if info["exposure"] <= 0:
            raise HdrFormatError("EXPOSURE must be positive")
        pixels /= info["exposure"]
    return HdrImage(pixels, space)


def _rle_encode_channel(row: np.ndarray) -> bytearray:
    out = bytearray()
    n = len(row)
    x = 0
    while x < n:
        # find a run of >= 3 equal bytes starting somewhere ahead
        run_start = x
        run_len = 1
        while run_start < n:
            run_len = 1
            while run_start + run_len < n and run_len < 127 and row[run_start + run_len] == row[run_start]:
                run_len += 1
            if run_len >= 3:
                break
            run_start += run_len
        while x < run_start:
            k = min(128, run_start - x)
            out.append(k)
            out += bytes(row[x:x + k])
            x += k
        if run_start < n and run_len >= 3:
            out.append(128 + run_len)
            out.append(int(row[run_start]))
            x = run_start + run_len
    return out


def write_radiance_hdr(img: HdrImage, rle: bool = True, exposure: float | None = None) -> bytes:
    """Encode an image as Radiance RGBE bytes."""
    rgbe = float_to_rgbe(img.data if exposure is None else img.data * exposure)
    fmt = "32-bit_rle_xyze" if img.space == "xyz" else "32-bit_rle_rgbe"
    head = f"#?RADIANCE\nFORMAT={fmt}\n"
    if exposure is not None:
        head += f"EXPOSURE={exposure!r}\n"
    head += f"\n-Y {img.height} +X {img.width}\n"
    out = bytearray(head.encode("ascii"))
    use_rle = rle and 8 <= img.width <= 0x7FFF
    for y in range(img.height):
        if not use_rle:
            out += rgbe[y].tobytes()
            continue
        out += bytes((2, 2, img.width >> 8, img.width & 0xFF))
        for ch in range(4):
            out += _rle_encode_channel(rgbe[y, :, ch])
    return bytes(out)


# --------------------------------------------------------------------------
# PFM

def _pfm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise HdrFormatError("truncated PFM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the payload
    return tokens, pos + 1


def read_pfm(data: bytes) -> HdrImage:
    """Decode a colour ``PF`` portable float map; rows are returned top to bottom."""
    if data[:2] == b"Pf":
        raise HdrFormatError("grayscale 'Pf' PFM files are not supported, expected 3-channel 'PF'")
    if data[:2] != b"PF":
        raise HdrFormatError("missing 'PF' magic")
    try:
        (_, w, h, s), pos = _pfm_tokens(data, 4)
        width, height, scale = int(w), int(h), float(s)
    except (ValueError, IndexError):
        raise HdrFormatError("malformed PFM header") from None
    if width < 1 or height < 1:
        raise HdrFormatError("PFM dimensions must be positive")
    if scale == 0 or not np.isfinite(scale):
        raise HdrFormatError("PFM scale must be a finite non-zero number")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    n = width * height * 3
    if len(data) - pos < n * 4:
        raise HdrFormatError("truncated PFM payload")
    pix = np.frombuffer(data, dtype, n, pos).astype(np.float64)
    if np.any(np.isnan(pix)) or np.any(np.isinf(pix)):
        raise HdrFormatError("PFM payload contains NaN or Inf samples")
    if np.any(pix < 0):
        raise HdrFormatError("PFM payload contains negative samples")
    pix = pix.reshape(height, width, 3)[::-1] * abs(scale)
    return HdrImage(np.ascontiguousarray(pix), "rgb")


def write_pfm(img: HdrImage, little_endian: bool = True, scale: float = 1.0) -> bytes:
    dtype = "<f4" if little_endian else ">f4"
    head = f"PF\n{img.width} {img.height}\n{-abs(scale) if little_endian else abs(scale):.6f}\n"
    payload = np.ascontiguousarray(img.data[::-1] / abs(scale), dtype=dtype)
    return head.encode("ascii") + payload.tobytes()


def read_hdr_file(path: str | os.PathLike) -> HdrImage:
    """Read ``.hdr``/``.pic`` or ``.pfm`` from disk, sniffing the magic bytes."""
    path = Path(path)
    data = path.read_bytes()
    try:
        if data.startswith(_MAGIC):
            return read_radiance_hdr(data)
        if data[:2] in (b"PF", b"Pf"):
            return read_pfm(data)
    except HdrFormatError as exc:
        raise HdrFormatError(f"{path}: {exc}") from None
    raise HdrFormatError(f"{path}: unrecognised HDR container")


# --------------------------------------------------------------------------
# colour conversion

def _apply_matrix(data: np.ndarray, m: np.ndarray, counters: dict | None) -> np.ndarray:
    out = data @ m.T
    neg = out < 0
    if counters is not None:
        counters["negative_clamped"] = counters.get("negative_clamped", 0) + int(neg.any(axis=-1).sum())
    out[neg] = 0.0
    return out


def rgb_to_xyz(img: HdrImage, m=None, counters: dict | None = None) -> HdrImage:
    """Per-pixel matrix product to XYZ; negative results are clamped to zero and counted."""
    if img.space != "rgb":
        raise TypeError("rgb_to_xyz expects a linear RGB image")
    m = SRGB_TO_XYZ if m is None else check_matrix(m)
    return HdrImage(_apply_matrix(img.data, m, counters), "xyz")


def xyz_to_rgb(img: HdrImage, m=None, counters: dict | None = None) -> HdrImage:
    """Inverse of :func:`rgb_to_xyz` for the RGB->XYZ matrix ``m``."""
    if img.space != "xyz":
        raise TypeError("xyz_to_rgb expects an XYZ image")
    m = SRGB_TO_XYZ if m is None else check_matrix(m)
    return HdrImage(_apply_matrix(img.data, np.linalg.inv(m), counters), "rgb")


# --------------------------------------------------------------------------
# PNG

def _atomic_write(path: Path, write) -> None:
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            write(fh)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise OSError(f"cannot write {path}: {exc}") from exc
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_sdr_png(img: SdrImage, path: str | os.PathLike) -> None:
    """Write an sRGB-tagged 8-bit RGB PNG atomically (temp file + rename)."""
    from PIL import Image, PngImagePlugin

    info = PngImagePlugin.PngInfo()
    info.add(b"sRGB", b"\x00")  # perceptual rendering intent
    im = Image.fromarray(np.ascontiguousarray(img.data), "RGB")
    _atomic_write(Path(path), lambda fh: im.save(fh, format="PNG", pnginfo=info))


def read_png(path: str | os.PathLike) -> SdrImage:
    from PIL import Image

    with Image.open(path) as im:
        return SdrImage(np.asarray(im.convert("RGB")))


def write_text_atomic(path: str | os.PathLike, text: str) -> None:
    _atomic_write(Path(path), lambda fh: fh.write(text.encode("utf-8")))
