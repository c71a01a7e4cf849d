"""File formats shared by the library and the command line.

Image/dataset files (``.bin``) are little-endian::

    magic b"EITD" | version u32 | count u32 | side u32 | n_meas u32
    count x ( seed u64 | side*side float32 image | n_meas float32 values )
"""

from __future__ import annotations

import contextlib
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"EITD"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@contextlib.contextmanager
def atomic_open(path, mode="w"):
    """Write to a temporary sibling and rename it over ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_vector_csv(path, values) -> None:
    with atomic_open(path, "w") as fh:
        for v in np.asarray(values, dtype=float).ravel():
            fh.write(f"{float(v)!r}\n")


def read_vector_csv(path) -> np.ndarray:
    with open(path) as fh:
        return np.array([float(ln) for ln in fh if ln.strip()])


def record_dtype(side: int, n_meas: int) -> np.dtype:
    return np.dtype([("seed", "<u8"), ("image", "<f4", (side, side)),
                     ("measurements", "<f4", (n_meas,))])


def pack_records(seeds, images, measurements=None) -> bytes:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    count, side = images.shape[0], images.shape[1]
    if images.shape[2] != side:
        raise ValueError("images must be square")
    if measurements is None:
        measurements = np.zeros((count, 0))
    measurements = np.asarray(measurements, dtype=np.float64)
    measurements = measurements.reshape(count, -1) if count else measurements.reshape(0, measurements.shape[-1])
    rec = np.zeros(count, dtype=record_dtype(side, measurements.shape[1]))
    rec["seed"] = np.asarray(seeds, dtype=np.uint64).reshape(count)
    rec["image"] = images
    rec["measurements"] = measurements
    return _HEADER.pack(MAGIC, VERSION, count, side, measurements.shape[1]) + rec.tobytes()


def write_records(path, seeds, images, measurements=None) -> None:
    data = pack_records(seeds, images, measurements)
    with atomic_open(path, "wb") as fh:
        fh.write(data)


def read_records(path) -> np.ndarray:
    """Structured array with fields ``seed``, ``image``, ``measurements``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, count, side, n_meas = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    dtype = record_dtype(side, n_meas)
    body = raw[_HEADER.size:]
    if len(body) != count * dtype.itemsize:
        raise ValueError(f"{path}: expected {count} records")
    return np.frombuffer(body, dtype=dtype, count=count)


def write_pgm(path, image) -> None:
    """8-bit binary graymap, min-max normalised (constant images map to 0)."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi > lo:
        gray = np.round(255.0 * (img - lo) / (hi - lo))
    else:
        gray = np.zeros_like(img)
    h, w = img.shape
    with atomic_open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(fields[1]), int(fields[2])
    # exactly one whitespace byte separates the header from the raster
    return np.frombuffer(raw[pos + 1: pos + 1 + w * h], dtype=np.uint8).reshape(h, w)


def export_image(image, path) -> tuple[Path, Path]:
    """Write ``image`` as a one-record ``.bin`` file plus a ``.pgm`` preview."""
    path = Path(path)
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or not np.all(np.isfinite(image)):
        raise ValueError("image must be a finite 2-D array")
    write_records(path, [0], image[None])
    pgm = path.with_suffix(".pgm")
    write_pgm(pgm, image)
    return path, pgm
