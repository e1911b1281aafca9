"""Image file I/O: PGM (P2 ASCII, P5 binary) and CSV float grids.

PGM payloads are raw integer samples in [0, maxval]; reading returns them as
floats without rescaling. CSV stores decimal floats and round-trips exactly.
Writers are atomic (temp file + rename).
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .image import Micrograph
from .percolation import BinaryImage

_WHITESPACE = b" \t\r\n\x0b\x0c"
_FORMATS = ("pgm", "csv")


class ImageParseError(ValueError):
    """Malformed image file; carries byte offset and (for text formats) line."""

    def __init__(self, message: str, offset: int | None = None, line: int | None = None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if offset is not None:
            loc.append(f"byte {offset}")
        super().__init__(message + (f" ({', '.join(loc)})" if loc else ""))
        self.offset = offset
        self.line = line


def _line_of(data: bytes, offset: int) -> int:
    return data.count(b"\n", 0, offset) + 1


class _PgmScanner:
    """Token scanner over a PGM header/body, tracking byte offsets."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def skip_separators(self):
        d, n = self.data, len(self.data)
        while self.pos < n:
            c = d[self.pos : self.pos + 1]
            if c in (b" ", b"\t", b"\r", b"\n", b"\x0b", b"\x0c"):
                self.pos += 1
            elif c == b"#":
                nl = d.find(b"\n", self.pos)
                self.pos = n if nl < 0 else nl + 1
            else:
                return

    def next_token(self, what: str) -> tuple[bytes, int]:
        self.skip_separators()
        if self.pos >= len(self.data):
            raise ImageParseError(
                f"unexpected end of file while reading {what}",
                offset=self.pos,
                line=_line_of(self.data, self.pos),
            )
        start = self.pos
        d, n = self.data, len(self.data)
        while self.pos < n and d[self.pos : self.pos + 1] not in (
            b" ", b"\t", b"\r", b"\n", b"\x0b", b"\x0c", b"#",
        ):
            self.pos += 1
        return d[start : self.pos], start

    def next_int(self, what: str, low: int, high: int) -> int:
        tok, start = self.next_token(what)
        try:
            value = int(tok)
        except ValueError:
            raise ImageParseError(
                f"non-numeric token {tok!r} for {what}",
                offset=start,
                line=_line_of(self.data, start),
            ) from None
        if not low <= value <= high:
            raise ImageParseError(
                f"{what} {value} outside allowed range {low}..{high}",
                offset=start,
                line=_line_of(self.data, start),
            )
        return value


def _read_pgm(data: bytes) -> Micrograph:
    sc = _PgmScanner(data)
    magic, start = sc.next_token("magic number")
    if magic not in (b"P2", b"P5"):
        raise ImageParseError(
            f"unsupported magic {magic!r}, expected P2 or P5",
            offset=start,
            line=_line_of(data, start),
        )
    width = sc.next_int("width", 1, 10**9)
    height = sc.next_int("height", 1, 10**9)
    maxval = sc.next_int("maxval", 1, 65535)
    count = width * height

    if magic == b"P2":
        rest = data[sc.pos :]
        tokens = rest.split()
        if len(tokens) < count:
            raise ImageParseError(
                f"expected {count} pixel values, found {len(tokens)}",
                offset=len(data),
                line=_line_of(data, len(data) - 1) if data else 1,
            )
        if len(tokens) > count:
            # locate the first extra token for the diagnostic
            for _ in range(count):
                sc.next_token("pixel value")
            _, extra = sc.next_token("pixel value")
            raise ImageParseError(
                "trailing data after pixel values",
                offset=extra,
                line=_line_of(data, extra),
            )
        try:
            values = np.array(tokens, dtype=np.int64)
        except ValueError:
            # slow path only to pinpoint the offending token
            for i in range(count):
                sc.next_int("pixel value", 0, maxval)
            raise  # pragma: no cover - next_int always raises first
        if values.min() < 0 or values.max() > maxval:
            bad = int(np.argmax((values < 0) | (values > maxval)))
            for _ in range(bad):
                sc.next_token("pixel value")
            tok, off = sc.next_token("pixel value")
            raise ImageParseError(
                f"pixel value {tok.decode('ascii', 'replace')} outside 0..{maxval}",
                offset=off,
                line=_line_of(data, off),
            )
        return Micrograph(values.astype(np.float64).reshape(height, width))

    # P5: exactly one separator byte between maxval and the payload
    if sc.pos >= len(data) or data[sc.pos : sc.pos + 1] not in (
        b" ", b"\t", b"\r", b"\n", b"\x0b", b"\x0c",
    ):
        raise ImageParseError(
            "missing whitespace after maxval in P5 header",
            offset=sc.pos,
            line=_line_of(data, sc.pos),
        )
    payload = data[sc.pos + 1 :]
    two_byte = maxval > 255
    needed = count * (2 if two_byte else 1)
    if len(payload) < needed:
        raise ImageParseError(
            f"truncated P5 payload: expected {needed} bytes, found {len(payload)}",
            offset=len(data),
        )
    if len(payload) > needed:
        raise ImageParseError(
            "trailing bytes after P5 payload",
            offset=sc.pos + 1 + needed,
        )
    dtype = np.dtype(">u2") if two_byte else np.uint8
    values = np.frombuffer(payload, dtype=dtype).astype(np.int64)
    if values.max(initial=0) > maxval:
        bad = int(np.argmax(values > maxval))
        raise ImageParseError(
            f"pixel value {int(values[bad])} exceeds maxval {maxval}",
            offset=sc.pos + 1 + bad * (2 if two_byte else 1),
        )
    return Micrograph(values.astype(np.float64).reshape(height, width))


def _read_csv(data: bytes) -> Micrograph:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ImageParseError(f"CSV is not valid UTF-8: {exc}", offset=exc.start) from None
    rows = []
    width = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if raw.strip() == "":
            raise ImageParseError("empty row", line=lineno)
        cells = raw.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise ImageParseError(
                f"row has {len(cells)} values, expected {width}", line=lineno
            )
        row = []
        for cell in cells:
            try:
                value = float(cell)
            except ValueError:
                raise ImageParseError(
                    f"non-numeric token {cell.strip()!r}", line=lineno
                ) from None
            if not np.isfinite(value):
                raise ImageParseError(
                    f"non-finite value {cell.strip()!r}", line=lineno
                )
            row.append(value)
        rows.append(row)
    if not rows:
        raise ImageParseError("empty file", line=1)
    return Micrograph(np.array(rows, dtype=np.float64))


def _resolve_format(path: str | Path, format: str | None) -> str:
    if format is not None:
        fmt = format.lower()
        if fmt not in _FORMATS:
            raise ValueError(f"unknown image format {format!r}, expected one of {_FORMATS}")
        return fmt
    suffix = Path(path).suffix.lower()
    if suffix in (".pgm", ".pnm"):
        return "pgm"
    if suffix == ".csv":
        return "csv"
    raise ValueError(
        f"cannot infer image format from {path!r}; pass format='pgm' or 'csv'"
    )


def read_image(path: str | Path, format: str | None = None) -> Micrograph:
    """Read a PGM or CSV image; format inferred from the suffix when omitted."""
    fmt = _resolve_format(path, format)
    data = Path(path).read_bytes()
    if fmt == "pgm":
        return _read_pgm(data)
    return _read_csv(data)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write a file atomically: temp file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _encode_pgm(img: Micrograph, maxval: int, binary: bool) -> bytes:
    if not 1 <= maxval <= 65535:
        raise ValueError(f"maxval must be in 1..65535, got {maxval}")
    quantized = np.rint(img.pixels).astype(np.int64)
    if quantized.min() < 0 or quantized.max() > maxval:
        raise ValueError(
            f"pixel values round to {quantized.min()}..{quantized.max()}, "
            f"outside the declared range 0..{maxval}"
        )
    header = f"{'P5' if binary else 'P2'}\n{img.width} {img.height}\n{maxval}\n"
    if binary:
        dtype = np.dtype(">u2") if maxval > 255 else np.uint8
        return header.encode("ascii") + quantized.astype(dtype).tobytes()
    body = "\n".join(" ".join(str(v) for v in row) for row in quantized)
    return (header + body + "\n").encode("ascii")


def _encode_csv(img: Micrograph) -> bytes:
    # repr() round-trips float64 exactly
    lines = (",".join(repr(v) for v in row) for row in img.pixels.tolist())
    return ("\n".join(lines) + "\n").encode("ascii")


def write_image(
    img: Micrograph,
    path: str | Path,
    format: str | None = None,
    *,
    maxval: int = 255,
    binary: bool = True,
) -> None:
    """Write an image as PGM or CSV.

    PGM quantizes by rounding to the nearest integer; values must already lie
    in [0, maxval] (the caller scales). Samples are 16-bit big-endian when
    maxval > 255. CSV writes exact decimal floats.
    """
    fmt = _resolve_format(path, format)
    if fmt == "pgm":
        payload = _encode_pgm(img, maxval, binary)
    else:
        payload = _encode_csv(img)
    atomic_write_bytes(path, payload)


def write_binary_image(img: BinaryImage, path: str | Path) -> None:
    """Write a thresholded picture as PGM with maxval 1: 0 = white, 1 = black."""
    write_image(Micrograph(img.bits.astype(np.float64)), path, format="pgm",
                maxval=1, binary=True)


def read_binary_image(path: str | Path) -> BinaryImage:
    """Read a maxval-1 PGM written by write_binary_image; 1 = black."""
    img = read_image(path, format="pgm")
    values = np.unique(img.pixels)
    if not np.isin(values, (0.0, 1.0)).all():
        raise ImageParseError(f"expected only 0/1 samples, found values {values[:5]}")
    return BinaryImage(img.pixels == 1.0)
