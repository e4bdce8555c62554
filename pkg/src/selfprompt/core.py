"""Volume containers, SPV file I/O and synthetic label volumes.

Arrays are held in memory indexed ``[x, y, z]`` (``[c, x, y, z]`` for channel
stacks).  On disk the payload is written x-fastest, i.e. Fortran order over
``(x, y, z)``, one channel after another.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from selfprompt.errors import CorruptionError, FormatError, RangeError, ValidationError

Spacing = tuple[float, float, float]
Dims = tuple[int, int, int]

SPV_MAGIC = b"SPV1"
SPV_VERSION = 1
DTYPE_LABEL = 0
DTYPE_SCALAR = 1

# magic, version, dtype, rank, reserved, nx, ny, nz, C, K, sx, sy, sz
_HEADER = struct.Struct("<4sIBBHQQQQQddd")
SPV_HEADER_SIZE = _HEADER.size


def _check_spacing(spacing: Sequence[float]) -> Spacing:
    sp = tuple(float(s) for s in spacing)
    if len(sp) != 3:
        raise ValidationError(f"spacing must have 3 components, got {len(sp)}")
    if not all(np.isfinite(s) and s > 0 for s in sp):
        raise ValidationError(f"spacing components must be finite and > 0, got {sp}")
    return sp  # type: ignore[return-value]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Integer class labels on a 3-D grid.

    ``labels`` has shape ``(nx, ny, nz)`` and dtype uint8; class 0 is background.
    """

    labels: np.ndarray
    spacing: Spacing
    num_classes: int

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels)
        if labels.ndim != 3 or min(labels.shape) < 1:
            raise ValidationError(f"labels must be a non-empty 3-D array, got shape {labels.shape}")
        k = int(self.num_classes)
        if not 1 <= k <= 256:
            raise ValidationError(f"num_classes must be in [1, 256], got {k}")
        if labels.dtype.kind not in "uib" and not np.array_equal(labels, np.round(labels)):
            raise ValidationError(f"labels must be integer valued, got dtype {labels.dtype}")
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise ValidationError(f"labels must lie in [0, {k - 1}]")
        object.__setattr__(self, "labels", _frozen(labels.astype(np.uint8)))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))
        object.__setattr__(self, "num_classes", k)

    @property
    def dims(self) -> Dims:
        return tuple(int(n) for n in self.labels.shape)  # type: ignore[return-value]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelVolume):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.num_classes == other.num_classes
            and np.array_equal(self.labels, other.labels)
        )

    def histogram(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.num_classes)

    def slice(self, z: int) -> "LabelVolume":
        """The single z-slice ``z`` as an ``nz = 1`` volume."""
        return LabelVolume(self.labels[:, :, z : z + 1], self.spacing, self.num_classes)


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    """Real-valued channel stack with shape ``(C, nx, ny, nz)``."""

    values: np.ndarray
    spacing: Spacing

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 3:
            values = values[np.newaxis]
        if values.ndim != 4 or min(values.shape) < 1:
            raise ValidationError(f"values must have shape (C, nx, ny, nz), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("scalar volumes must not contain NaN or Inf")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> Dims:
        return tuple(int(n) for n in self.values.shape[1:])  # type: ignore[return-value]

    @property
    def channels(self) -> int:
        return int(self.values.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScalarVolume):
            return NotImplemented
        # bitwise comparison so -0.0 and 0.0 are told apart
        return (
            self.spacing == other.spacing
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
        )


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """One boolean per voxel, shape ``(nx, ny, nz)``."""

    bits: np.ndarray
    spacing: Spacing

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits)
        if bits.ndim != 3 or min(bits.shape) < 1:
            raise ValidationError(f"bits must be a non-empty 3-D array, got shape {bits.shape}")
        object.__setattr__(self, "bits", _frozen(bits.astype(bool)))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> Dims:
        return tuple(int(n) for n in self.bits.shape)  # type: ignore[return-value]

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.spacing == other.spacing and np.array_equal(self.bits, other.bits)


Volume = Union[LabelVolume, ScalarVolume]


def one_hot(volume: LabelVolume, class_id: int) -> BinaryMask:
    """Binary mask of the voxels labelled ``class_id``."""
    if not 0 <= class_id < volume.num_classes:
        raise RangeError(f"class_id {class_id} outside [0, {volume.num_classes - 1}]")
    return BinaryMask(volume.labels == class_id, volume.spacing)


def one_hot_stack(volume: LabelVolume) -> np.ndarray:
    """All K one-hot masks as a ``(K, nx, ny, nz)`` boolean array."""
    classes = np.arange(volume.num_classes, dtype=np.uint8)
    return volume.labels[np.newaxis] == classes[:, None, None, None]


# ---------------------------------------------------------------------------
# SPV files


def _encode(volume: Volume) -> bytes:
    if isinstance(volume, LabelVolume):
        nx, ny, nz = volume.dims
        header = _HEADER.pack(
            SPV_MAGIC, SPV_VERSION, DTYPE_LABEL, 3, 0,
            nx, ny, nz, 1, volume.num_classes, *volume.spacing,
        )
        payload = volume.labels.astype("<u1").tobytes(order="F")
    elif isinstance(volume, ScalarVolume):
        if not np.all(np.isfinite(volume.values)):
            raise ValidationError("refusing to write non-finite scalar values")
        nx, ny, nz = volume.dims
        c = volume.channels
        header = _HEADER.pack(
            SPV_MAGIC, SPV_VERSION, DTYPE_SCALAR, 3 if c == 1 else 4, 0,
            nx, ny, nz, c, 0, *volume.spacing,
        )
        # channel-major, then x-fastest within each channel
        payload = b"".join(ch.astype("<f8").tobytes(order="F") for ch in volume.values)
    else:
        raise ValidationError(f"cannot write object of type {type(volume).__name__}")
    return header + payload


def write_spv(volume: Volume, path: str | os.PathLike) -> None:
    """Serialize ``volume`` to ``path``; equal volumes give identical bytes."""
    data = _encode(volume)
    with open(path, "wb") as fh:
        fh.write(data)


def decode_spv(data: bytes) -> Volume:
    if len(data) < 4 or data[:4] != SPV_MAGIC:
        raise FormatError("not an SPV file (bad magic)")
    if len(data) < SPV_HEADER_SIZE:
        raise CorruptionError(f"header truncated: {len(data)} < {SPV_HEADER_SIZE} bytes")
    (_, version, dtype, rank, reserved, nx, ny, nz, c, k, sx, sy, sz) = _HEADER.unpack_from(data)
    if version != SPV_VERSION:
        raise FormatError(f"unsupported SPV version {version}")
    if reserved != 0:
        raise FormatError("reserved header field must be zero")
    if rank not in (3, 4):
        raise FormatError(f"unsupported rank {rank}")
    if min(nx, ny, nz, c) < 1:
        raise FormatError("dims and channel count must be positive")
    if rank == 3 and c != 1:
        raise FormatError("rank-3 files must have C = 1")

    n = nx * ny * nz
    body = memoryview(data)[SPV_HEADER_SIZE:]
    spacing = (sx, sy, sz)
    if dtype == DTYPE_LABEL:
        if rank != 3:
            raise FormatError("label volumes must be rank 3")
        if not 1 <= k <= 256:
            raise FormatError(f"label volume declares invalid K = {k}")
        if len(body) != n:
            raise CorruptionError(f"payload is {len(body)} bytes, expected {n}")
        labels = np.frombuffer(body, dtype="<u1").reshape((nx, ny, nz), order="F")
        if labels.max() >= k:
            raise ValidationError(f"label {int(labels.max())} >= declared K = {k}")
        return LabelVolume(labels, spacing, int(k))
    if dtype == DTYPE_SCALAR:
        if k != 0:
            raise FormatError("scalar volumes must declare K = 0")
        if len(body) != 8 * n * c:
            raise CorruptionError(f"payload is {len(body)} bytes, expected {8 * n * c}")
        flat = np.frombuffer(body, dtype="<f8").reshape((c, n))
        values = np.stack([ch.reshape((nx, ny, nz), order="F") for ch in flat])
        return ScalarVolume(values, spacing)
    raise FormatError(f"unknown dtype code {dtype}")


def read_spv(path: str | os.PathLike) -> Volume:
    """Load an SPV file written by :func:`write_spv`."""
    with open(path, "rb") as fh:
        return decode_spv(fh.read())


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]  # voxel index coordinates
    radius: float  # millimetres
    class_id: int


def synth_spheres(
    dims: Sequence[int],
    spacing: Sequence[float],
    spheres: Sequence[Sphere | tuple],
    seed: int = 0,
    num_classes: int | None = None,
) -> LabelVolume:
    """Paint balls of class labels into an all-background volume.

    A voxel belongs to a sphere when its spacing-scaled distance to the centre
    is at most the radius.  Later spheres overwrite earlier ones.  ``seed`` is
    accepted for interface symmetry with :func:`random_spheres`; the painting
    itself uses no randomness.  ``num_classes`` defaults to one more than the
    largest class id.
    """
    del seed
    dims = tuple(int(n) for n in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ValidationError(f"dims must be 3 positive integers, got {dims}")
    sp = _check_spacing(spacing)
    parsed = [s if isinstance(s, Sphere) else Sphere(tuple(s[0]), s[1], s[2]) for s in spheres]
    top = max((s.class_id for s in parsed), default=0)
    k = top + 1 if num_classes is None else int(num_classes)
    labels = np.zeros(dims, dtype=np.uint8)
    grids = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims), indexing="ij")
    for s in parsed:
        if not (np.isfinite(s.radius) and s.radius > 0):
            raise ValidationError(f"sphere radius must be > 0, got {s.radius}")
        if not 1 <= s.class_id < k:
            raise ValidationError(f"sphere class_id {s.class_id} outside [1, {k - 1}]")
        if len(s.center) != 3:
            raise ValidationError("sphere centre needs 3 coordinates")
        d2 = sum((sp[a] * (grids[a] - float(s.center[a]))) ** 2 for a in range(3))
        labels[d2 <= float(s.radius) ** 2] = s.class_id
    return LabelVolume(labels, sp, k)


def random_spheres(
    dims: Sequence[int],
    count: int,
    seed: int = 0,
    radius_range: tuple[float, float] = (2.0, 6.0),
) -> list[Sphere]:
    """Seeded sphere list with voxel-centred centres and classes ``1..count``."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        r = float(rng.uniform(*radius_range))
        center = tuple(float(rng.integers(0, n)) for n in dims)
        out.append(Sphere(center, r, i + 1))  # type: ignore[arg-type]
    return out
