import json

import numpy as np
import pytest
from conftest import random_mask_bits

from selfprompt.core import BinaryMask, LabelVolume, Sphere, synth_spheres
from selfprompt.edt import edt_bruteforce, edt_exact
from selfprompt.errors import FormatError, ValidationError
from selfprompt.prompt import (
    BoxPrompt,
    PointPrompt,
    extract_box,
    generate_prompts,
    read_prompts,
    resolve_mask_ref,
    select_point,
    write_prompts,
)


def mask_from(coords, dims, spacing=(1, 1, 1)):
    bits = np.zeros(dims, dtype=bool)
    for c in coords:
        bits[c] = True
    return BinaryMask(bits, spacing)


def brute_argmax(bits, field):
    """First maximum in (z, y, x) lexicographic order, by explicit loops."""
    best, best_idx = -1.0, None
    nx, ny, nz = bits.shape
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if bits[x, y, z] and field[x, y, z] > best:
                    best, best_idx = field[x, y, z], (x, y, z)
    return best_idx, best


class TestExtractBox:
    def test_definition(self):
        box = extract_box(mask_from([(1, 2, 0), (3, 2, 0)], (5, 5, 2)))
        assert box == BoxPrompt((1, 2, 0), (3, 2, 0))

    def test_empty(self):
        assert extract_box(mask_from([], (3, 3, 3))) is None

    def test_full(self):
        box = extract_box(BinaryMask(np.ones((4, 4, 4)), (1, 1, 1)))
        assert box == BoxPrompt((0, 0, 0), (3, 3, 3))

    def test_tightness(self, rng):
        for _ in range(100):
            bits = random_mask_bits(rng, 10) & (rng.random() < 0.9)
            bits &= rng.random(bits.shape) < 0.1
            box = extract_box(BinaryMask(bits, (1, 1, 1)))
            if box is None:
                assert not bits.any()
                continue
            inner = bits[tuple(slice(lo, hi + 1) for lo, hi in zip(box.min, box.max))]
            assert inner.sum() == bits.sum()
            for axis in range(3):
                assert np.take(inner, 0, axis=axis).any()
                assert np.take(inner, -1, axis=axis).any()


class TestSelectPoint:
    def test_square_slice_centre(self):
        mask = BinaryMask(np.ones((5, 5, 1)), (1, 1, 1))
        field = edt_bruteforce(mask)
        idx, _ = brute_argmax(mask.bits, field.values[0])
        assert idx == (2, 2, 0)
        assert select_point(mask, edt_exact(mask)).index == (2, 2, 0)

    def test_tie_break_y(self):
        mask = mask_from([(1, 1, 0), (3, 3, 0)], (5, 5, 1))
        assert select_point(mask, edt_exact(mask)).index == (1, 1, 0)

    def test_tie_break_z_before_y_before_x(self):
        mask = mask_from([(4, 4, 0), (0, 0, 1)], (5, 5, 2))
        assert select_point(mask, edt_exact(mask)).index == (4, 4, 0)
        mask = mask_from([(3, 0, 0), (0, 1, 0)], (5, 5, 1))
        assert select_point(mask, edt_exact(mask)).index == (3, 0, 0)

    def test_empty(self):
        mask = mask_from([], (3, 3, 3))
        assert select_point(mask, edt_exact(mask)) is None

    def test_dims_mismatch(self):
        a = BinaryMask(np.ones((3, 3, 3)), (1, 1, 1))
        b = BinaryMask(np.ones((3, 3, 2)), (1, 1, 1))
        with pytest.raises(ValidationError):
            select_point(a, edt_exact(b))

    def test_point_in_mask_property(self, rng):
        for _ in range(200):
            bits = random_mask_bits(rng, 9)
            if not bits.any():
                continue
            mask = BinaryMask(bits, (1.0, 1.5, 0.75))
            point = select_point(mask, edt_exact(mask))
            oracle = edt_bruteforce(mask).values[0]
            idx, best = brute_argmax(bits, oracle)
            assert bits[point.index]
            assert point.index == idx
            assert point.sq_distance_mm2 == pytest.approx(best, rel=1e-12)


class TestGeneratePrompts:
    def test_single_sphere_volume_mode(self):
        vol = synth_spheres((21, 21, 21), (1, 1, 1), [Sphere((10, 10, 10), 6.0, 1)], num_classes=3)
        prompts = generate_prompts(vol, "volume")
        assert len(prompts) == vol.num_classes - 1
        p1, p2 = prompts
        oracle = edt_bruteforce(BinaryMask(vol.labels == 1, vol.spacing)).values[0]
        assert brute_argmax(vol.labels == 1, oracle)[0] == (10, 10, 10)
        assert p1.present and p1.point.index == (10, 10, 10)
        assert p1.box == BoxPrompt((4, 4, 4), (16, 16, 16))
        assert not p2.present
        assert p2.box == BoxPrompt.zero(3) and p2.point == PointPrompt.zero(3)

    def test_all_background(self):
        vol = LabelVolume(np.zeros((4, 4, 3)), (1, 1, 1), 4)
        for mode in ("slice", "volume"):
            for p in generate_prompts(vol, mode):
                assert not p.present
                assert set(p.box.min + p.box.max + p.point.index) == {0}

    def test_slice_cardinality(self, rng):
        vol = LabelVolume(rng.integers(0, 4, (6, 5, 3)), (1, 1, 1), 4)
        prompts = generate_prompts(vol, "slice")
        assert len(prompts) == 3 * 3
        assert [p.slice_index for p in prompts] == [0, 0, 0, 1, 1, 1, 2, 2, 2]
        assert all(len(p.box.min) == 2 and len(p.point.index) == 2 for p in prompts)

    def test_default_mode_is_slice(self):
        vol = LabelVolume(np.ones((3, 3, 2)), (1, 1, 1), 2)
        assert all(p.mode == "slice" for p in generate_prompts(vol))

    def test_sentinel_soundness(self, rng):
        for _ in range(20):
            labels = rng.integers(0, 3, (6, 6, 2)) * (rng.random((6, 6, 2)) < 0.3)
            vol = LabelVolume(labels, (1, 1, 1), 5)
            for p in generate_prompts(vol, "volume"):
                assert p.present == bool(np.any(labels == p.class_id))

    def test_mode_consistency(self, rng):
        vol = LabelVolume(rng.integers(0, 3, (7, 6, 4)), (1.2, 0.8, 3.0), 3)
        by_slice = generate_prompts(vol, "slice")
        for z in range(4):
            expected = generate_prompts(vol.slice(z), "volume")
            got = [p for p in by_slice if p.slice_index == z]
            for g, e in zip(got, expected):
                assert g.present == e.present
                assert g.box.min == e.box.min[:2] and g.box.max == e.box.max[:2]
                assert g.point.index == e.point.index[:2]
                assert g.point.sq_distance_mm2 == e.point.sq_distance_mm2

    def test_mask_reference_resolves(self, rng):
        vol = LabelVolume(rng.integers(0, 3, (5, 5, 2)), (1, 1, 1), 3)
        for p in generate_prompts(vol, "slice"):
            m = resolve_mask_ref(vol, p.mask_ref)
            assert np.array_equal(m.bits[:, :, 0], vol.labels[:, :, p.slice_index] == p.class_id)

    def test_invalid_mode(self):
        with pytest.raises(ValidationError):
            generate_prompts(LabelVolume(np.zeros((2, 2, 2)), (1, 1, 1), 2), "planar")


class TestPromptJson:
    def test_round_trip(self, tmp_path, rng):
        vol = LabelVolume(rng.integers(0, 4, (6, 6, 3)), (0.3, 0.7, 1.1), 4)
        for mode in ("slice", "volume"):
            prompts = generate_prompts(vol, mode)
            write_prompts(prompts, tmp_path / "p.json", 4, mode)
            back, k, m = read_prompts(tmp_path / "p.json")
            assert (back, k, m) == (prompts, 4, mode)

    def test_reals_round_trip(self, tmp_path):
        p = generate_prompts(LabelVolume(np.ones((3, 3, 1)), (0.1, 0.3, 1), 2), "volume")
        write_prompts(p, tmp_path / "p.json", 2, "volume")
        assert read_prompts(tmp_path / "p.json")[0][0].point.sq_distance_mm2 == p[0].point.sq_distance_mm2

    def test_volume_mode_array_length(self, tmp_path):
        vol = LabelVolume(np.zeros((3, 3, 3)), (1, 1, 1), 4)
        write_prompts(generate_prompts(vol, "volume"), tmp_path / "p.json", 4, "volume")
        doc = json.loads((tmp_path / "p.json").read_text())
        assert doc["schema"] == "selfprompt/1"
        assert len(doc["prompts"]) == 3

    def test_missing_schema(self, tmp_path):
        (tmp_path / "p.json").write_text(json.dumps({"mode": "volume", "num_classes": 2, "prompts": []}))
        with pytest.raises(FormatError):
            read_prompts(tmp_path / "p.json")

    def test_unknown_schema(self, tmp_path):
        (tmp_path / "p.json").write_text(json.dumps({"schema": "selfprompt/9", "mode": "volume",
                                                     "num_classes": 2, "prompts": []}))
        with pytest.raises(FormatError):
            read_prompts(tmp_path / "p.json")

    def test_malformed_json(self, tmp_path):
        (tmp_path / "p.json").write_text("{not json")
        with pytest.raises(FormatError):
            read_prompts(tmp_path / "p.json")
