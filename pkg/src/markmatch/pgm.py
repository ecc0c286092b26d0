"""8-bit grayscale PGM (P2/P5) I/O and the annotation sidecar format.

Sidecar: one line per mark, `mark_id ballot_id x0 y0 x1 y1 writer_id`,
with exclusive upper bbox bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FileFormatError


def write_pgm(path, pixels: np.ndarray, binary: bool = True) -> None:
    """Write float [0,1] intensities as an 8-bit PGM (P5 by default, P2 if not binary)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2:
        raise ValueError(f"expected 2-D image, got shape {pixels.shape}")
    data = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    if binary:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(data.tobytes())
    else:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(f"P2\n{w} {h}\n255\n")
            for row in data:
                fh.write(" ".join(str(v) for v in row) + "\n")


def read_pgm(path_or_bytes) -> np.ndarray:
    """Read a P2 or P5 PGM into float [0,1]; accepts a path or raw bytes."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        blob = bytes(path_or_bytes)
    else:
        with open(path_or_bytes, "rb") as fh:
            blob = fh.read()
    return decode_pgm(blob)


def decode_pgm(blob: bytes) -> np.ndarray:
    if blob[:2] not in (b"P2", b"P5"):
        raise FileFormatError(f"not a PGM file (magic {blob[:2]!r})", line=1)
    binary = blob[:2] == b"P5"

    # Header tokens (magic, width, height, maxval) with # comments allowed.
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4 and pos < len(blob):
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            pos += 1
            continue
        if blob[pos : pos + 1].isspace():
            pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    if len(tokens) < 4:
        raise FileFormatError("truncated PGM header")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise FileFormatError(f"bad PGM header: {exc}") from exc
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise FileFormatError(f"bad PGM dimensions {w}x{h} maxval {maxval}")

    if binary:
        pos += 1  # single whitespace after maxval
        if maxval > 255:
            raise FileFormatError("16-bit binary PGM not supported")
        data = np.frombuffer(blob, dtype=np.uint8, offset=pos, count=w * h if len(blob) - pos >= w * h else -1)
        if data.size != w * h:
            raise FileFormatError(f"expected {w * h} pixels, found {data.size}")
        values = data.astype(np.float64)
    else:
        try:
            values = np.array([int(t) for t in blob[pos:].split()], dtype=np.float64)
        except ValueError as exc:
            raise FileFormatError(f"bad P2 pixel data: {exc}") from exc
        if values.size != w * h:
            raise FileFormatError(f"expected {w * h} pixels, found {values.size}")
    if values.size and (values.min() < 0 or values.max() > maxval):
        raise FileFormatError("pixel value out of range")
    return (values / float(maxval)).reshape(h, w)


@dataclass(frozen=True)
class Annotation:
    mark_id: str
    ballot_id: str
    bbox: tuple  # (x0, y0, x1, y1)
    writer_id: int


def write_annotations(path, annotations) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for a in annotations:
            x0, y0, x1, y1 = a.bbox
            fh.write(f"{a.mark_id} {a.ballot_id} {x0} {y0} {x1} {y1} {a.writer_id}\n")


def read_annotations(path) -> list[Annotation]:
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 7:
                raise FileFormatError(f"expected 7 fields, got {len(parts)}", line=lineno)
            try:
                out.append(
                    Annotation(
                        mark_id=parts[0],
                        ballot_id=parts[1],
                        bbox=tuple(int(p) for p in parts[2:6]),
                        writer_id=int(parts[6]),
                    )
                )
            except ValueError as exc:
                raise FileFormatError(f"bad annotation: {exc}", line=lineno) from exc
    return out
