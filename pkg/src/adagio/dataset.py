"""Point clouds: loading from CSV and IDX files, centering, subsampling."""
from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._runtime import generator
from .errors import DataFormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class PointCloud:
    """n points in d dimensions, one per row, with optional integer labels.

    The arrays are copied on construction and marked read-only.
    """

    data: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 2:
            raise DataFormatError(f"point data must be 2-dimensional, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise DataFormatError(f"point cloud needs n >= 1 and d >= 1, got shape {data.shape}")
        bad = np.argwhere(~np.isfinite(data))
        if bad.size:
            r, c = bad[0]
            raise DataFormatError("non-finite value", row=int(r) + 1, column=int(c) + 1)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

        if self.labels is not None:
            raw = np.asarray(self.labels)
            if raw.ndim != 1 or raw.shape[0] != data.shape[0]:
                raise DataFormatError(
                    f"labels must be a vector of length {data.shape[0]}, got shape {raw.shape}"
                )
            if raw.size and (np.any(raw < 0) or np.any(raw != np.round(raw))):
                raise DataFormatError("labels must be non-negative integers")
            labels = raw.astype(np.int64)
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def take(self, indices) -> "PointCloud":
        indices = np.asarray(indices, dtype=np.int64)
        labels = None if self.labels is None else self.labels[indices]
        return PointCloud(self.data[indices], labels)

    def with_data(self, data: np.ndarray) -> "PointCloud":
        """Same labels, new coordinates (e.g. after an embedding)."""
        return PointCloud(data, self.labels)


@dataclass(frozen=True)
class CenteringInfo:
    mean: np.ndarray = field(repr=False)


def load_csv(path, has_header: bool = False, label_column: int | None = None) -> PointCloud:
    """Read a comma-separated file of reals.

    ``label_column`` is a 0-based column index that is split off into
    ``labels``. Parse failures carry 1-based line and column numbers.
    """
    path = Path(path)
    first_line = 2 if has_header else 1
    try:
        table = np.loadtxt(path, delimiter=",", skiprows=first_line - 1, ndmin=2, dtype=np.float64)
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    except ValueError:
        # re-scan in Python to report where the file is malformed
        table = _parse_csv_slow(path, first_line)
    if table.size == 0:
        raise DataFormatError(f"{path} contains no data rows")
    bad = np.argwhere(~np.isfinite(table))
    if bad.size:
        table = _parse_csv_slow(path, first_line)

    if label_column is None:
        return PointCloud(table)
    if not -table.shape[1] <= label_column < table.shape[1]:
        raise DataFormatError(f"label column {label_column} out of range for {table.shape[1]} columns")
    if table.shape[1] < 2:
        raise DataFormatError("need at least one feature column besides the label column")
    label_column %= table.shape[1]
    labels = table[:, label_column]
    bad = np.flatnonzero((labels < 0) | (labels != np.round(labels)))
    if bad.size:
        raise DataFormatError(
            "label is not a non-negative integer",
            row=int(bad[0]) + first_line,
            column=label_column + 1,
        )
    features = np.delete(table, label_column, axis=1)
    return PointCloud(features, labels.astype(np.int64))


def _parse_csv_slow(path: Path, first_line: int) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[first_line - 1:]
    values: list[list[float]] = []
    width = None
    for offset, row in enumerate(rows):
        line = first_line + offset
        if not row or all(not f.strip() for f in row):
            continue
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DataFormatError(
                f"ragged row: expected {width} fields, found {len(row)}", row=line
            )
        parsed = []
        for col, field_text in enumerate(row):
            try:
                value = float(field_text)
            except ValueError:
                raise DataFormatError(
                    f"non-numeric field {field_text.strip()!r}", row=line, column=col + 1
                ) from None
            if not math.isfinite(value):
                raise DataFormatError("NaN/Inf value", row=line, column=col + 1)
            parsed.append(value)
        values.append(parsed)
    if not values:
        raise DataFormatError(f"{path} contains no data rows")
    return np.array(values, dtype=np.float64)


def save_csv(cloud: PointCloud, path, header: list[str] | None = None, label_last: bool = True) -> None:
    """Write a cloud as CSV with round-trip precision; labels go in the last column."""
    data = cloud.data
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header is not None:
            writer.writerow(header)
        for i in range(cloud.n):
            row = [repr(float(v)) for v in data[i]]
            if cloud.labels is not None and label_last:
                row.append(str(int(cloud.labels[i])))
            writer.writerow(row)


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc


def decode_idx_images(blob: bytes) -> np.ndarray:
    if len(blob) < 16:
        raise DataFormatError(f"truncated IDX image header ({len(blob)} bytes)")
    magic, count, rows, cols = struct.unpack(">IIII", blob[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"bad IDX image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    expected = 16 + count * rows * cols
    if len(blob) < expected:
        raise DataFormatError(f"truncated IDX image file: {len(blob)} of {expected} bytes")
    if len(blob) > expected:
        raise DataFormatError(f"IDX image file has {len(blob) - expected} trailing bytes")
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=16)
    return pixels.reshape(count, rows * cols)


def decode_idx_labels(blob: bytes) -> np.ndarray:
    if len(blob) < 8:
        raise DataFormatError(f"truncated IDX label header ({len(blob)} bytes)")
    magic, count = struct.unpack(">II", blob[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"bad IDX label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(blob) < 8 + count:
        raise DataFormatError(f"truncated IDX label file: {len(blob)} of {8 + count} bytes")
    if len(blob) > 8 + count:
        raise DataFormatError(f"IDX label file has {len(blob) - 8 - count} trailing bytes")
    return np.frombuffer(blob, dtype=np.uint8, offset=8)


def encode_idx_images(images: np.ndarray) -> bytes:
    """Inverse of :func:`decode_idx_images` for a (count, rows, cols) uint8 array."""
    images = np.asarray(images)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise ValueError("expected a (count, rows, cols) uint8 array")
    header = struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape)
    return header + np.ascontiguousarray(images).tobytes()


def encode_idx_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.dtype != np.uint8:
        raise ValueError("expected a 1-d uint8 array")
    return struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes()


def load_idx(images_path, labels_path=None) -> PointCloud:
    """Load IDX (MNIST layout) images as raw byte intensities in [0, 255].

    Gzipped files (``.gz`` suffix) are decompressed transparently.
    """
    pixels = decode_idx_images(_read_bytes(images_path))
    labels = None
    if labels_path is not None:
        labels = decode_idx_labels(_read_bytes(labels_path))
        if labels.shape[0] != pixels.shape[0]:
            raise DataFormatError(
                f"image/label count mismatch: {pixels.shape[0]} images, {labels.shape[0]} labels"
            )
    return PointCloud(pixels.astype(np.float64), labels)


def center(cloud: PointCloud) -> tuple[PointCloud, CenteringInfo]:
    mean = cloud.data.mean(axis=0)
    centered = cloud.data - mean
    # a second pass removes the rounding left over from the first subtraction
    centered -= centered.mean(axis=0)
    mean.setflags(write=False)
    return PointCloud(centered, cloud.labels), CenteringInfo(mean)


def sample_points(cloud: PointCloud, m: int, seed: int) -> PointCloud:
    """m distinct rows drawn uniformly without replacement (Philox-seeded)."""
    if not 1 <= m <= cloud.n:
        raise ValueError(f"sample size must be in [1, {cloud.n}], got {m}")
    idx = generator(seed).choice(cloud.n, size=m, replace=False)
    return cloud.take(idx)
