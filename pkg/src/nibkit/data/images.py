"""PGM (P5), PBM (P4) and PNG image I/O with values mapped to [0, 1]."""

from __future__ import annotations

import io
import os
import warnings
from typing import Optional, Tuple, Union

import numpy as np

from ..autodiff.tensor import Tensor

PathLike = Union[str, os.PathLike]

_WHITESPACE = b" \t\n\r\x0b\x0c"


class ImageFormatError(ValueError):
    """Malformed or unsupported image file; ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def _header_tokens(buf: bytes, count: int, start: int) -> Tuple[list, int]:
    tokens = []
    pos = start
    while len(tokens) < count:
        while pos < len(buf) and (buf[pos] in _WHITESPACE or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < len(buf) and buf[pos] not in b"\n\r":
                    pos += 1
            else:
                pos += 1
        if pos >= len(buf):
            raise ImageFormatError("truncated header", pos)
        begin = pos
        while pos < len(buf) and buf[pos] not in _WHITESPACE and buf[pos] != ord("#"):
            pos += 1
        tok = buf[begin:pos]
        if not tok.isdigit():
            raise ImageFormatError(f"expected a decimal number, found {tok[:16]!r}", begin)
        tokens.append(int(tok))
    if pos >= len(buf) or buf[pos] not in _WHITESPACE:
        raise ImageFormatError("header must end with a single whitespace byte", pos)
    return tokens, pos + 1


def decode_pnm(buf: bytes) -> np.ndarray:
    """Decode P5/P4 bytes to a float array in [0, 1] of shape (h, w)."""
    magic = buf[:2]
    if magic == b"P5":
        (w, h, maxval), pos = _header_tokens(buf, 3, 2)
        if not 0 < maxval < 256:
            raise ImageFormatError(f"only 8-bit PGM is supported, maxval={maxval}", pos - 1)
        need = w * h
        if len(buf) - pos < need:
            raise ImageFormatError(f"raster needs {need} bytes, file has {len(buf) - pos}", len(buf))
        raster = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(h, w)
        return raster.astype(np.float64) / maxval
    if magic == b"P4":
        (w, h), pos = _header_tokens(buf, 2, 2)
        row_bytes = (w + 7) // 8
        need = row_bytes * h
        if len(buf) - pos < need:
            raise ImageFormatError(f"raster needs {need} bytes, file has {len(buf) - pos}", len(buf))
        packed = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(h, row_bytes)
        bits = np.unpackbits(packed, axis=1)[:, :w]
        # 1 is black in PBM
        return 1.0 - bits.astype(np.float64)
    raise ImageFormatError(f"unknown magic {magic!r}; expected P5 or P4", 0)


def encode_pgm(values: np.ndarray) -> bytes:
    h, w = values.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + values.astype(np.uint8).tobytes()


def encode_pbm(binary: np.ndarray) -> bytes:
    h, w = binary.shape
    bits = (binary < 0.5).astype(np.uint8)
    return f"P4\n{w} {h}\n".encode("ascii") + np.packbits(bits, axis=1).tobytes()


def _to_bytes(x: np.ndarray) -> Tuple[np.ndarray, int]:
    clamped = int(np.count_nonzero((x < 0) | (x > 1)))
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8), clamped


def _format_for(path: PathLike, fmt: Optional[str]) -> str:
    if fmt:
        return fmt.lower()
    ext = os.path.splitext(os.fspath(path))[1].lower().lstrip(".")
    return {"pgm": "pgm", "pbm": "pbm", "png": "png"}.get(ext, "pgm")


def read_image(path: PathLike) -> Tensor:
    """Read a PGM, PBM or PNG file as a (1, c, h, w) float32 tensor."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image

        img = Image.open(io.BytesIO(buf))
        if img.mode not in ("L", "RGB", "1"):
            raise ImageFormatError(f"unsupported PNG mode {img.mode}", 0)
        arr = np.asarray(img.convert("L" if img.mode == "1" else img.mode), dtype=np.float64) / 255.0
        arr = arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
        return Tensor(arr[None].astype(np.float32))
    return Tensor(decode_pnm(buf)[None, None].astype(np.float32))


def write_image(path: PathLike, image: Union[Tensor, np.ndarray], fmt: Optional[str] = None) -> int:
    """Write one image; returns how many values had to be clamped into [0, 1]."""
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    arr = np.asarray(arr, dtype=np.float64)
    while arr.ndim > 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    fmt = _format_for(path, fmt)
    clamped = int(np.count_nonzero((arr < 0) | (arr > 1)))
    if fmt == "pbm":
        if arr.ndim != 2:
            raise ValueError(f"PBM needs a single-channel image, got shape {arr.shape}")
        data = encode_pbm(arr)
    elif fmt == "pgm":
        if arr.ndim != 2:
            raise ValueError(f"PGM needs a single-channel image, got shape {arr.shape}")
        data = encode_pgm(_to_bytes(arr)[0])
    elif fmt == "png":
        from PIL import Image

        u8, _ = _to_bytes(arr)
        img = Image.fromarray(u8 if u8.ndim == 2 else u8.transpose(1, 2, 0))
        out = io.BytesIO()
        img.save(out, format="PNG")
        data = out.getvalue()
    else:
        raise ValueError(f"unknown image format {fmt!r}; expected pgm, pbm or png")
    if clamped:
        warnings.warn(f"{clamped} values outside [0, 1] clamped while writing {os.fspath(path)}", stacklevel=2)
    with open(path, "wb") as fh:
        fh.write(data)
    return clamped
