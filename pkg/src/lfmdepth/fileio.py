"""PFM / PGM readers and writers and the dataset manifest."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    """Malformed or unsupported file; ``offset`` is the byte position of the problem."""

    def __init__(self, msg: str, offset: int = 0, path=None):
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{msg} (byte offset {offset})")
        self.offset = offset


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited header token, skipping '#' comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of header", start)
    return buf[start:pos], pos


def encode_pfm(img: np.ndarray) -> bytes:
    """Little-endian PFM; 2D -> 'Pf' greyscale, (3, H, W) -> 'PF' colour. Rows bottom-up."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        tag, pix = b"Pf", img
    elif img.ndim == 3 and img.shape[0] == 3:
        tag, pix = b"PF", img.transpose(1, 2, 0)
    else:
        raise ValueError(f"PFM holds (H, W) or (3, H, W) arrays, got {img.shape}")
    h, w = pix.shape[:2]
    header = tag + b"\n" + f"{w} {h}\n-1.0\n".encode("ascii")
    return header + np.ascontiguousarray(pix[::-1], dtype="<f4").tobytes()


def decode_pfm(buf: bytes, path=None) -> np.ndarray:
    if not buf:
        raise FormatError("empty file", 0, path)
    tag, pos = _read_token(buf, 0)
    if tag not in (b"Pf", b"PF"):
        raise FormatError(f"bad magic {tag!r}, expected Pf or PF", 0, path)
    channels = 1 if tag == b"Pf" else 3
    try:
        wtok, pos = _read_token(buf, pos)
        htok, pos = _read_token(buf, pos)
        stok, pos = _read_token(buf, pos)
    except FormatError as err:
        raise FormatError("truncated header", err.offset, path) from None
    try:
        w, h = int(wtok), int(htok)
        scale = float(stok)
    except ValueError:
        raise FormatError("non-numeric header field", pos, path) from None
    if w <= 0 or h <= 0:
        raise FormatError(f"invalid dimensions {w}x{h}", pos, path)
    if scale >= 0:
        raise FormatError("big-endian PFM (positive scale) is not supported", pos, path)
    pos += 1  # single whitespace byte after the scale
    need = w * h * channels * 4
    if len(buf) - pos < need:
        raise FormatError(f"truncated payload: need {need} bytes, have {len(buf) - pos}", pos, path)
    data = np.frombuffer(buf, dtype="<f4", count=w * h * channels, offset=pos).astype(np.float32)
    if channels == 1:
        return data.reshape(h, w)[::-1].copy()
    return data.reshape(h, w, 3)[::-1].transpose(2, 0, 1).copy()


def write_pfm(path, img: np.ndarray) -> None:
    atomic_write_bytes(path, encode_pfm(img))


def read_pfm(path) -> np.ndarray:
    return decode_pfm(Path(path).read_bytes(), path)


def encode_pgm(img: np.ndarray, maxval: int = 65535) -> bytes:
    """Binary 'P5' greyscale; values already quantized to 0..maxval."""
    if not (0 < maxval < 65536):
        raise ValueError(f"unsupported maxval {maxval}")
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"PGM holds 2D arrays, got {img.shape}")
    q = np.clip(np.rint(img), 0, maxval)
    h, w = img.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    dt = ">u2" if maxval > 255 else "u1"
    return header + q.astype(dt).tobytes()


def decode_pgm(buf: bytes, path=None) -> tuple[np.ndarray, int]:
    if not buf:
        raise FormatError("empty file", 0, path)
    tag, pos = _read_token(buf, 0)
    if tag != b"P5":
        raise FormatError(f"bad magic {tag!r}, expected P5", 0, path)
    try:
        wtok, pos = _read_token(buf, pos)
        htok, pos = _read_token(buf, pos)
        mtok, pos = _read_token(buf, pos)
    except FormatError as err:
        raise FormatError("truncated header", err.offset, path) from None
    try:
        w, h, maxval = int(wtok), int(htok), int(mtok)
    except ValueError:
        raise FormatError("non-numeric header field", pos, path) from None
    if not (0 < maxval < 65536):
        raise FormatError(f"unsupported max value {maxval}", pos, path)
    pos += 1
    bpp = 2 if maxval > 255 else 1
    need = w * h * bpp
    if len(buf) - pos < need:
        raise FormatError(f"truncated payload: need {need} bytes, have {len(buf) - pos}", pos, path)
    dt = ">u2" if bpp == 2 else "u1"
    return np.frombuffer(buf, dtype=dt, count=w * h, offset=pos).reshape(h, w).astype(np.int64), maxval


def write_pgm(path, img: np.ndarray, maxval: int = 65535) -> None:
    atomic_write_bytes(path, encode_pgm(img, maxval))


def read_pgm(path) -> tuple[np.ndarray, int]:
    return decode_pgm(Path(path).read_bytes(), path)


def to_preview(values: np.ndarray, lo: float | None = None, hi: float | None = None,
               maxval: int = 255) -> np.ndarray:
    """Linear rescale of a float map onto 0..maxval for PGM previews."""
    v = np.asarray(values, dtype=np.float64)
    lo = float(np.nanmin(v)) if lo is None else lo
    hi = float(np.nanmax(v)) if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    return np.clip((v - lo) / span, 0.0, 1.0) * maxval


# ---------------------------------------------------------------------------
# manifest: image path <TAB> depth path <TAB> seed, paths relative to the file
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.tsv"


def write_manifest(path, rows: list[tuple[str, str, int]]) -> None:
    lines = [f"{img}\t{depth}\t{seed}" for img, depth, seed in rows]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_manifest(path) -> list[tuple[Path, Path, int]]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    root = path.parent
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"manifest line {lineno}: expected 3 tab-separated fields", 0, path)
        rows.append((root / parts[0], root / parts[1], int(parts[2])))
    return rows
