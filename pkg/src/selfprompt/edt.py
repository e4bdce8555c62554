"""Exact squared Euclidean distance transform with anisotropic spacing.

The fast path runs one lower-envelope-of-parabolas pass per axis, so each pass
is linear in the number of voxels.  The voxels one step outside the volume
count as background, which keeps every distance finite.

Axes of extent 1 are treated as absent: no pass runs along them and they get no
virtual border.  A single z-slice stored with ``nz = 1`` therefore gets a
purely in-plane transform.  When every axis has extent 1, the x axis is
transformed so that the single voxel still sees a border.
"""

from __future__ import annotations

import os

import numba
import numpy as np

from selfprompt.core import BinaryMask, ScalarVolume
from selfprompt.errors import SizeError

BRUTEFORCE_MAX_VOXELS = 64**3

# the TBB layer shipped here is too old for numba; workqueue is always present
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "workqueue"


def _configure_threads() -> None:
    cap = os.environ.get("SELFPROMPT_THREADS")
    if cap:
        numba.set_num_threads(max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS)))


@numba.njit(cache=True)
def _envelope_line(f, out, s, v, z, pos, val):
    # lower envelope of parabolas val[k] + (x - pos[k])^2 over the sites of one
    # line; virtual zero-valued sites sit at indices -1 and m
    m = f.shape[0]
    n = 0
    pos[n] = -s
    val[n] = 0.0
    n += 1
    for q in range(m):
        if f[q] != np.inf:
            pos[n] = s * q
            val[n] = f[q]
            n += 1
    pos[n] = s * m
    val[n] = 0.0
    n += 1

    k = 0
    v[0] = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        while True:
            r = v[k]
            x = ((val[q] + pos[q] * pos[q]) - (val[r] + pos[r] * pos[r])) / (2.0 * (pos[q] - pos[r]))
            if x <= z[k] and k > 0:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = x
        z[k + 1] = np.inf

    top = k + 1
    k = 0
    for i in range(m):
        xi = s * i
        while z[k + 1] < xi:
            k += 1
        r = v[k]
        d = xi - pos[r]
        best = val[r] + d * d
        # breakpoints are rounded, so the adjacent parabolas may win by an ulp
        if k > 0:
            r = v[k - 1]
            d = xi - pos[r]
            best = min(best, val[r] + d * d)
        if k + 1 < top:
            r = v[k + 1]
            d = xi - pos[r]
            best = min(best, val[r] + d * d)
        out[i] = best


@numba.njit(parallel=True, cache=True)
def _transform_rows(rows, s):
    nrows, m = rows.shape
    out = np.empty_like(rows)
    for i in numba.prange(nrows):
        v = np.empty(m + 2, dtype=np.int64)
        z = np.empty(m + 3, dtype=np.float64)
        pos = np.empty(m + 2, dtype=np.float64)
        val = np.empty(m + 2, dtype=np.float64)
        _envelope_line(rows[i], out[i], s, v, z, pos, val)
    return out


def _active_axes(shape: tuple[int, ...]) -> list[int]:
    axes = [a for a, n in enumerate(shape) if n > 1]
    return axes or [0]


def _pass(field: np.ndarray, axis: int, s: float) -> np.ndarray:
    moved = np.ascontiguousarray(np.moveaxis(field, axis, -1))
    rows = moved.reshape(-1, moved.shape[-1])
    done = _transform_rows(rows, float(s)).reshape(moved.shape)
    return np.moveaxis(done, -1, axis)


def squared_edt_array(bits: np.ndarray, spacing) -> np.ndarray:
    """Squared distances (mm^2) for a boolean ``(nx, ny, nz)`` array."""
    _configure_threads()
    field = np.where(bits, np.inf, 0.0)
    for axis in _active_axes(bits.shape):
        field = _pass(field, axis, spacing[axis])
    return np.ascontiguousarray(field)


def edt_exact(mask: BinaryMask) -> ScalarVolume:
    """Squared distance from every voxel to the nearest background voxel."""
    return ScalarVolume(squared_edt_array(mask.bits, mask.spacing), mask.spacing)


@numba.njit(parallel=True, cache=True)
def _pairwise_min(fg, bg, scale):
    out = np.empty(fg.shape[0])
    for i in numba.prange(fg.shape[0]):
        best = np.inf
        px = fg[i, 0] * scale[0]
        py = fg[i, 1] * scale[1]
        pz = fg[i, 2] * scale[2]
        for j in range(bg.shape[0]):
            dx = px - bg[j, 0] * scale[0]
            dy = py - bg[j, 1] * scale[1]
            dz = pz - bg[j, 2] * scale[2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < best:
                best = d2
        out[i] = best
    return out


def bruteforce_array(bits: np.ndarray, spacing) -> np.ndarray:
    """Exhaustive pairwise minimum over background and border voxels."""
    _configure_threads()
    shape = bits.shape
    axes = _active_axes(shape)
    pad = [(1, 1) if a in axes else (0, 0) for a in range(3)]
    padded = np.pad(bits, pad, constant_values=False)
    offset = np.array([p[0] for p in pad])
    bg = (np.argwhere(~padded) - offset).astype(np.float64)
    fg_idx = np.argwhere(bits)
    out = np.zeros(shape, dtype=np.float64)
    if len(fg_idx):
        scale = np.asarray(spacing, dtype=np.float64)
        out[tuple(fg_idx.T)] = _pairwise_min(fg_idx.astype(np.float64), bg, scale)
    return out


def edt_bruteforce(mask: BinaryMask) -> ScalarVolume:
    """Quadratic-time reference for :func:`edt_exact`; inputs up to 64^3 voxels."""
    if mask.bits.size > BRUTEFORCE_MAX_VOXELS:
        raise SizeError(f"{mask.bits.size} voxels exceeds the brute-force limit of {BRUTEFORCE_MAX_VOXELS}")
    return ScalarVolume(bruteforce_array(mask.bits, mask.spacing), mask.spacing)
