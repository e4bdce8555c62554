"""Automatic box, point and mask prompts derived from label volumes.

Every foreground class yields one :class:`PromptSet`: the tight bounding box
of its one-hot mask, the mask voxel farthest from the background, and a
reference to the one-hot mask itself.  Classes without voxels keep all box and
point coordinates at zero and are flagged ``present=False``.

In slice mode coordinates are ``(x, y)`` within slice ``slice_index``; in
volume mode they are ``(x, y, z)``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from selfprompt.core import BinaryMask, LabelVolume, ScalarVolume
from selfprompt.edt import squared_edt_array
from selfprompt.errors import FormatError, ValidationError

SCHEMA = "selfprompt/1"
Mode = Literal["slice", "volume"]


@dataclass(frozen=True)
class BoxPrompt:
    min: tuple[int, ...]
    max: tuple[int, ...]  # inclusive

    def __post_init__(self) -> None:
        if len(self.min) != len(self.max):
            raise ValidationError("box corners differ in dimensionality")
        if any(a > b for a, b in zip(self.min, self.max)):
            raise ValidationError(f"box min {self.min} exceeds max {self.max}")

    @classmethod
    def zero(cls, ndim: int) -> "BoxPrompt":
        return cls((0,) * ndim, (0,) * ndim)


@dataclass(frozen=True)
class PointPrompt:
    index: tuple[int, ...]
    sq_distance_mm2: float

    @classmethod
    def zero(cls, ndim: int) -> "PointPrompt":
        return cls((0,) * ndim, 0.0)


@dataclass(frozen=True)
class PromptSet:
    class_id: int
    present: bool
    box: BoxPrompt
    point: PointPrompt
    mask_ref: str
    mode: Mode
    slice_index: Optional[int] = None


def mask_ref_for(class_id: int, slice_index: Optional[int] = None) -> str:
    if slice_index is None:
        return f"onehot/class={class_id}"
    return f"onehot/class={class_id}/z={slice_index}"


def resolve_mask_ref(labels: LabelVolume, ref: str) -> BinaryMask:
    """Rebuild the one-hot mask a prompt refers to."""
    parts = dict(p.split("=", 1) for p in ref.split("/")[1:])
    try:
        cls = int(parts["class"])
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"malformed mask reference {ref!r}") from exc
    vol = labels.slice(int(parts["z"])) if "z" in parts else labels
    return BinaryMask(vol.labels == cls, vol.spacing)


def _drop_z(coords: tuple[int, ...], ndim: int) -> tuple[int, ...]:
    return coords[:ndim]


def extract_box(mask: BinaryMask) -> Optional[BoxPrompt]:
    """Inclusive min/max voxel indices of the true voxels, or None when empty."""
    bits = mask.bits
    if not bits.any():
        return None
    lo, hi = [], []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        hits = np.flatnonzero(bits.any(axis=other))
        lo.append(int(hits[0]))
        hi.append(int(hits[-1]))
    return BoxPrompt(tuple(lo), tuple(hi))


def select_point(mask: BinaryMask, field: ScalarVolume) -> Optional[PointPrompt]:
    """Mask voxel with the largest boundary distance.

    Ties go to the smallest ``(z, y, x)``, which is the first hit in x-fastest
    order.
    """
    if field.dims != mask.dims or field.channels != 1:
        raise ValidationError(f"field dims {field.dims} do not match mask dims {mask.dims}")
    bits = mask.bits.ravel(order="F")
    if not bits.any():
        return None
    values = np.where(bits, field.values[0].ravel(order="F"), -np.inf)
    flat = int(np.argmax(values))
    index = tuple(int(i) for i in np.unravel_index(flat, mask.dims, order="F"))
    return PointPrompt(index, float(values[flat]))


def _prompts_for(labels: LabelVolume, mode: Mode, slice_index: Optional[int]) -> list[PromptSet]:
    ndim = 2 if mode == "slice" else 3
    out = []
    for c in range(1, labels.num_classes):
        mask = BinaryMask(labels.labels == c, labels.spacing)
        ref = mask_ref_for(c, slice_index)
        box = extract_box(mask)
        if box is None:
            out.append(PromptSet(c, False, BoxPrompt.zero(ndim), PointPrompt.zero(ndim), ref, mode, slice_index))
            continue
        field = ScalarVolume(squared_edt_array(mask.bits, mask.spacing), mask.spacing)
        point = select_point(mask, field)
        assert point is not None
        out.append(
            PromptSet(
                c,
                True,
                BoxPrompt(_drop_z(box.min, ndim), _drop_z(box.max, ndim)),
                PointPrompt(_drop_z(point.index, ndim), point.sq_distance_mm2),
                ref,
                mode,
                slice_index,
            )
        )
    return out


def generate_prompts(labels: LabelVolume, mode: Mode = "slice") -> list[PromptSet]:
    """Prompts for classes ``1..K-1``; in slice mode, ordered slice-major."""
    if mode == "volume":
        return _prompts_for(labels, "volume", None)
    if mode != "slice":
        raise ValidationError(f"mode must be 'slice' or 'volume', got {mode!r}")
    out: list[PromptSet] = []
    for z in range(labels.dims[2]):
        out.extend(_prompts_for(labels.slice(z), "slice", z))
    return out


# ---------------------------------------------------------------------------
# JSON


def prompts_to_dict(prompts: Sequence[PromptSet], num_classes: int, mode: Mode) -> dict:
    return {
        "schema": SCHEMA,
        "mode": mode,
        "num_classes": int(num_classes),
        "prompts": [
            {
                "class_id": p.class_id,
                "slice_index": p.slice_index,
                "present": p.present,
                "box": {"min": list(p.box.min), "max": list(p.box.max)},
                "point": {"index": list(p.point.index), "sq_distance_mm2": p.point.sq_distance_mm2},
                "mask_ref": p.mask_ref,
            }
            for p in prompts
        ],
    }


def _ints(value, what: str) -> tuple[int, ...]:
    if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        raise FormatError(f"{what} must be a list of integers")
    return tuple(value)


def prompts_from_dict(doc: dict) -> tuple[list[PromptSet], int, Mode]:
    if not isinstance(doc, dict) or "schema" not in doc:
        raise FormatError("prompt document lacks a 'schema' key")
    if doc["schema"] != SCHEMA:
        raise FormatError(f"unknown prompt schema {doc['schema']!r}")
    mode = doc.get("mode")
    if mode not in ("slice", "volume"):
        raise FormatError(f"invalid mode {mode!r}")
    try:
        k = int(doc["num_classes"])
        out = []
        for item in doc["prompts"]:
            sd = item["point"]["sq_distance_mm2"]
            if not isinstance(sd, (int, float)) or isinstance(sd, bool) or not math.isfinite(sd):
                raise FormatError("sq_distance_mm2 must be a finite number")
            out.append(
                PromptSet(
                    class_id=int(item["class_id"]),
                    present=bool(item["present"]),
                    box=BoxPrompt(_ints(item["box"]["min"], "box.min"), _ints(item["box"]["max"], "box.max")),
                    point=PointPrompt(_ints(item["point"]["index"], "point.index"), float(sd)),
                    mask_ref=str(item["mask_ref"]),
                    mode=mode,
                    slice_index=item["slice_index"],
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed prompt document: {exc}") from exc
    return out, k, mode


def write_prompts(
    prompts: Sequence[PromptSet], path: str | os.PathLike, num_classes: int, mode: Mode
) -> None:
    # json writes floats with repr(), which round-trips every double
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(prompts_to_dict(prompts, num_classes, mode), fh, indent=1)
        fh.write("\n")


def read_prompts(path: str | os.PathLike) -> tuple[list[PromptSet], int, Mode]:
    """Returns ``(prompts, num_classes, mode)``."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON in {path}: {exc}") from exc
    return prompts_from_dict(doc)
