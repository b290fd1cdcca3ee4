"""
File codecs: PGM images (P2/P5), PGM label maps and the EDR1 vector-field format.

EDR1 layout: magic b"EDR1", then little-endian u32 width, u32 height,
u32 channels (=2), then width*height*channels little-endian f32, row-major,
channel-interleaved (dx, dy).
"""

import struct
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np

from edgereg.errors import CodecError, ConfigError, RangeError
from edgereg.grid import Image2D, LabelMap2D, VectorField2D

PathLike = Union[str, Path]

_WHITESPACE = b" \t\n\r\v\f"
_EDR1_MAGIC = b"EDR1"
_EDR1_HEADER = struct.Struct("<4sIII")
_PGM_MAXVALS = (255, 65535)


class _PgmTokenizer:
    """Reads whitespace-separated ASCII integers, skipping '#' comments."""

    def __init__(self, raw: bytes, pos: int):
        self.raw = raw
        self.pos = pos

    def _skip_blanks(self) -> None:
        raw = self.raw
        while self.pos < len(raw):
            ch = raw[self.pos:self.pos + 1]
            if ch in _WHITESPACE:
                self.pos += 1
            elif ch == b"#":
                end = raw.find(b"\n", self.pos)
                self.pos = len(raw) if end < 0 else end + 1
            else:
                break

    def next_int(self, what: str, section: str = "header") -> int:
        self._skip_blanks()
        if self.pos >= len(self.raw):
            raise CodecError(f"truncated {section}: missing {what}", self.pos)
        start = self.pos
        while self.pos < len(self.raw):
            ch = self.raw[self.pos:self.pos + 1]
            if ch in _WHITESPACE or ch == b"#":
                break
            self.pos += 1
        text = self.raw[start:self.pos]
        if not text.isdigit():
            raise CodecError(f"malformed {section}: bad {what} {text!r}", start)
        return int(text)


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise CodecError(f"missing file {path}")
    return path.read_bytes()


def read_pgm_raw(path: PathLike) -> tuple[np.ndarray, int]:
    """
    Decode a P2 or P5 PGM file.

    Returns:
        (samples, maxval) with samples an int64 array of shape (height, width).
    """
    raw = _read_bytes(path)
    magic = raw[:2]
    if magic not in (b"P2", b"P5"):
        raise CodecError(f"unsupported magic {magic!r}", 0)

    tokens = _PgmTokenizer(raw, 2)
    width = tokens.next_int("width")
    height = tokens.next_int("height")
    maxval_pos = tokens.pos
    maxval = tokens.next_int("maxval")
    if width < 1 or height < 1:
        raise CodecError(f"malformed header: dimensions {width}x{height}", 2)
    if not 1 <= maxval <= 65535:
        raise CodecError(f"malformed header: maxval {maxval}", maxval_pos)

    count = width * height
    if magic == b"P5":
        pos = tokens.pos
        if pos >= len(raw) or raw[pos:pos + 1] not in _WHITESPACE:
            raise CodecError("malformed header: no separator after maxval", pos)
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        if len(raw) - pos < need:
            raise CodecError(f"truncated payload: expected {need} bytes, found {len(raw) - pos}", len(raw))
        samples = np.frombuffer(raw, dtype=dtype, count=count, offset=pos).astype(np.int64)
        over = np.flatnonzero(samples > maxval)
        if over.size:
            raise CodecError(f"sample exceeds maxval {maxval}", pos + int(over[0]) * dtype.itemsize)
    else:
        samples = np.empty(count, dtype=np.int64)
        for i in range(count):
            start = tokens.pos
            value = tokens.next_int("sample", section="payload")
            if value > maxval:
                raise CodecError(f"sample exceeds maxval {maxval}", start)
            samples[i] = value

    return samples.reshape(height, width), maxval


def load_pgm(path: PathLike) -> Image2D:
    samples, maxval = read_pgm_raw(path)
    return Image2D(samples / float(maxval))


def _write_p5(path: PathLike, samples: np.ndarray, maxval: int) -> None:
    height, width = samples.shape
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    dtype = ">u2" if maxval > 255 else "u1"
    Path(path).write_bytes(header + samples.astype(dtype).tobytes())


def save_pgm(img: Image2D, path: PathLike, maxval: int = 255) -> None:
    """Quantize intensities in [0, 1] by round(v * maxval) and write binary P5."""
    if maxval not in _PGM_MAXVALS:
        raise ConfigError(f"maxval must be one of {_PGM_MAXVALS}, got {maxval}")
    data = img.data
    if data.min() < 0.0 or data.max() > 1.0:
        raise RangeError(f"intensity out of range [{data.min():g}, {data.max():g}], expected [0, 1]")
    _write_p5(path, np.floor(data * maxval + 0.5).astype(np.int64), maxval)


def load_labels_pgm(path: PathLike) -> LabelMap2D:
    """Labels are stored as raw gray values."""
    samples, _ = read_pgm_raw(path)
    return LabelMap2D(samples)


def save_labels_pgm(labels: LabelMap2D, path: PathLike) -> None:
    top = int(labels.labels.max())
    if top > 65535:
        raise RangeError(f"label {top} does not fit in a PGM")
    _write_p5(path, labels.labels, 255 if top <= 255 else 65535)


def write_field(field: VectorField2D, path: PathLike) -> None:
    header = _EDR1_HEADER.pack(_EDR1_MAGIC, field.width, field.height, 2)
    Path(path).write_bytes(header + field.vectors.astype("<f4").tobytes())


def read_field(path: PathLike) -> VectorField2D:
    raw = _read_bytes(path)
    if raw[:4] != _EDR1_MAGIC:
        raise CodecError(f"bad magic {raw[:4]!r}", 0)
    if len(raw) < _EDR1_HEADER.size:
        raise CodecError("truncated header", len(raw))
    _, width, height, channels = _EDR1_HEADER.unpack_from(raw)
    if channels != 2:
        raise CodecError(f"unsupported channel count {channels}", 12)
    if width == 0 or height == 0:
        raise CodecError(f"dimension/payload mismatch: dimensions {width}x{height}", 4)
    need = 4 * channels * width * height
    have = len(raw) - _EDR1_HEADER.size
    if have < need:
        raise CodecError(f"truncated field: expected {need} payload bytes, found {have}", len(raw))
    if have > need:
        raise CodecError(f"dimension/payload mismatch: {have - need} trailing bytes", _EDR1_HEADER.size + need)
    values = np.frombuffer(raw, dtype="<f4", count=channels * width * height, offset=_EDR1_HEADER.size)
    return VectorField2D(values.astype(np.float64).reshape(height, width, channels))


def field_io(
    field: Optional[VectorField2D],
    path: PathLike,
    direction: Literal["read", "write"],
) -> Optional[VectorField2D]:
    if direction == "read":
        return read_field(path)
    if direction == "write":
        if field is None:
            raise ConfigError("field_io(write) needs a field")
        write_field(field, path)
        return None
    raise ConfigError(f"direction must be 'read' or 'write', got {direction!r}")
