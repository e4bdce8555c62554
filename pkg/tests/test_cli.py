import json
import subprocess
import sys

import numpy as np
import pytest

from selfprompt.cli import main
from selfprompt.core import LabelVolume, ScalarVolume, read_spv, write_spv
from selfprompt.edt import edt_bruteforce
from selfprompt.core import one_hot


def run(capsys, *argv):
    code = main(["--json", *argv])
    out = capsys.readouterr()
    return code, (json.loads(out.out) if code == 0 or out.out.strip() else None), out.err


@pytest.fixture
def three_spheres(tmp_path):
    spec = {"spheres": [
        {"center": [6, 6, 6], "radius": 3.5, "class_id": 1},
        {"center": [17, 8, 10], "radius": 4.0, "class_id": 2},
        {"center": [10, 18, 16], "radius": 3.0, "class_id": 3},
    ]}
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    return path


class TestSynth:
    def test_deterministic(self, capsys, tmp_path, three_spheres):
        for name in ("a.spv", "b.spv"):
            code, _, _ = run(capsys, "synth", "--dims", "24", "24", "24", "--spec", str(three_spheres),
                             "--out", str(tmp_path / name))
            assert code == 0
        assert (tmp_path / "a.spv").read_bytes() == (tmp_path / "b.spv").read_bytes()

    def test_empty_spec(self, capsys, tmp_path):
        (tmp_path / "empty.json").write_text(json.dumps({"spheres": []}))
        code, report, _ = run(capsys, "synth", "--dims", "4", "4", "4", "--spec", str(tmp_path / "empty.json"),
                              "--out", str(tmp_path / "v.spv"))
        assert code == 0 and report["histogram"] == {"0": 64}

    def test_negative_radius(self, capsys, tmp_path):
        (tmp_path / "bad.json").write_text(json.dumps([{"center": [1, 1, 1], "radius": -1, "class_id": 1}]))
        code, _, err = run(capsys, "synth", "--dims", "4", "4", "4", "--spec", str(tmp_path / "bad.json"),
                           "--out", str(tmp_path / "v.spv"))
        assert code == 2 and "radius" in err

    def test_malformed_spec(self, capsys, tmp_path):
        (tmp_path / "bad.json").write_text("{oops")
        code, _, _ = run(capsys, "synth", "--dims", "4", "4", "4", "--spec", str(tmp_path / "bad.json"),
                         "--out", str(tmp_path / "v.spv"))
        assert code == 2


class TestPrompts:
    def test_three_present_classes(self, capsys, tmp_path, three_spheres):
        vol = tmp_path / "v.spv"
        run(capsys, "synth", "--dims", "24", "24", "24", "--spec", str(three_spheres), "--out", str(vol))
        code, report, _ = run(capsys, "prompts", str(vol), "--mode", "volume", "--out", str(tmp_path / "p.json"))
        assert code == 0 and report["present_classes"] == [1, 2, 3]
        doc = json.loads((tmp_path / "p.json").read_text())
        assert [p["point"]["index"] for p in doc["prompts"]] == [[6, 6, 6], [17, 8, 10], [10, 18, 16]]

    def test_all_background(self, capsys, tmp_path):
        write_spv(LabelVolume(np.zeros((4, 4, 2)), (1, 1, 1), 3), tmp_path / "bg.spv")
        code, report, _ = run(capsys, "prompts", str(tmp_path / "bg.spv"), "--out", str(tmp_path / "p.json"))
        assert code == 0 and report["present_classes"] == []
        for p in json.loads((tmp_path / "p.json").read_text())["prompts"]:
            assert not p["present"]
            assert p["box"] == {"min": [0, 0], "max": [0, 0]} and p["point"]["index"] == [0, 0]

    def test_scalar_input_rejected(self, capsys, tmp_path):
        write_spv(ScalarVolume(np.zeros((1, 2, 2, 2)), (1, 1, 1)), tmp_path / "s.spv")
        code, _, _ = run(capsys, "prompts", str(tmp_path / "s.spv"), "--out", str(tmp_path / "p.json"))
        assert code == 2

    def test_missing_input(self, capsys, tmp_path):
        code, _, _ = run(capsys, "prompts", str(tmp_path / "nope.spv"), "--out", str(tmp_path / "p.json"))
        assert code == 2


class TestEdt:
    def test_absent_class(self, capsys, tmp_path):
        write_spv(LabelVolume(np.zeros((3, 3, 3)), (1, 1, 1), 2), tmp_path / "v.spv")
        code, _, _ = run(capsys, "edt", str(tmp_path / "v.spv"), "--class-id", "1", "--out", str(tmp_path / "d.spv"))
        assert code == 0 and not read_spv(tmp_path / "d.spv").values.any()

    def test_integer_valued_and_matches_oracle(self, capsys, tmp_path, rng):
        vol = LabelVolume(rng.integers(0, 3, (20, 18, 12)) * (rng.random((20, 18, 12)) < 0.9), (1, 1, 1), 3)
        write_spv(vol, tmp_path / "v.spv")
        run(capsys, "edt", str(tmp_path / "v.spv"), "--class-id", "2", "--out", str(tmp_path / "fast.spv"))
        run(capsys, "edt", str(tmp_path / "v.spv"), "--class-id", "2", "--out", str(tmp_path / "slow.spv"), "--oracle")
        fast = read_spv(tmp_path / "fast.spv").values
        assert np.array_equal(fast, np.round(fast))
        assert (tmp_path / "fast.spv").read_bytes() == (tmp_path / "slow.spv").read_bytes()
        assert np.array_equal(fast, edt_bruteforce(one_hot(vol, 2)).values)

    def test_class_out_of_range(self, capsys, tmp_path):
        write_spv(LabelVolume(np.zeros((3, 3, 3)), (1, 1, 1), 2), tmp_path / "v.spv")
        code, _, _ = run(capsys, "edt", str(tmp_path / "v.spv"), "--class-id", "5", "--out", str(tmp_path / "d.spv"))
        assert code == 2


class TestDice:
    def test_self(self, capsys, tmp_path, rng):
        write_spv(LabelVolume(rng.integers(0, 3, (5, 5, 5)), (1, 1, 1), 3), tmp_path / "a.spv")
        code, report, _ = run(capsys, "dice", str(tmp_path / "a.spv"), str(tmp_path / "a.spv"))
        assert code == 0 and set(report["per_class"].values()) == {1.0}

    def test_disjoint(self, capsys, tmp_path):
        a = np.zeros((4, 4, 1))
        b = np.zeros((4, 4, 1))
        a[:2] = 1
        b[2:] = 1
        write_spv(LabelVolume(a, (1, 1, 1), 2), tmp_path / "a.spv")
        write_spv(LabelVolume(b, (1, 1, 1), 2), tmp_path / "b.spv")
        _, report, _ = run(capsys, "dice", str(tmp_path / "a.spv"), str(tmp_path / "b.spv"))
        assert report["per_class"]["1"] == 0.0

    def test_half_overlap(self, capsys, tmp_path):
        a = np.zeros((4, 4, 1))
        b = np.zeros((4, 4, 1))
        a[0:2] = 1  # 8 voxels
        b[1:3] = 1  # 8 voxels, 4 shared
        write_spv(LabelVolume(a, (1, 1, 1), 2), tmp_path / "a.spv")
        write_spv(LabelVolume(b, (1, 1, 1), 2), tmp_path / "b.spv")
        _, report, _ = run(capsys, "dice", str(tmp_path / "a.spv"), str(tmp_path / "b.spv"))
        assert report["per_class"]["1"] == 0.5


class TestSchedule:
    def test_lr_table(self, capsys):
        code, report, _ = run(capsys, "schedule", "lr", "--init-lr", "0.01", "--max-epoch", "1000")
        table = {row["epoch"]: row["lr"] for row in report["table"]}
        assert code == 0 and table[0] == 0.01 and table[1000] == 0.0

    def test_dsw(self, capsys):
        _, report, _ = run(capsys, "schedule", "dsw", "--levels", "3")
        assert report["weights"] == pytest.approx([4 / 7, 2 / 7, 1 / 7], abs=1e-15)

    def test_dsw_default_levels(self, capsys):
        _, report, _ = run(capsys, "schedule", "dsw")
        assert len(report["weights"]) == 5

    def test_epoch_beyond_max(self, capsys):
        code, _, _ = run(capsys, "schedule", "lr", "--max-epoch", "10", "--epochs", "11")
        assert code == 2

    def test_human_table(self, capsys):
        assert main(["schedule", "dsw", "--levels", "3"]) == 0
        assert "0.5714285714285714" in capsys.readouterr().out


class TestGradcheck:
    def test_default_seed_passes(self, capsys):
        code, report, _ = run(capsys, "gradcheck")
        assert code == 0 and report["max_rel_error"] < 1e-6
        assert set(report["errors"]) == {"x", "W_dn", "W_up", "W_Dup", "W_Ddn"}

    def test_perturbed_fails(self, capsys):
        code, report, _ = run(capsys, "gradcheck", "--perturb")
        assert code == 1 and not report["passed"]


class TestDemo:
    def test_end_to_end(self, capsys, tmp_path):
        code, report, _ = run(capsys, "demo", "--out-dir", str(tmp_path / "d"), "--size", "32")
        assert code == 0 and report["passed"]
        assert all(c["point_is_center"] and c["box_is_tight"] for c in report["classes"])
        assert report["dice_per_class"][1:] == [1.0, 1.0, 1.0]
        for path in report["artifacts"].values():
            assert (tmp_path / "d" / path.split("/")[-1]).exists()

    def test_deterministic(self, capsys, tmp_path):
        run(capsys, "demo", "--out-dir", str(tmp_path / "a"), "--size", "24")
        run(capsys, "demo", "--out-dir", str(tmp_path / "b"), "--size", "24")
        for name in ("labels.spv", "prompts.json", "fused.spv", "probabilities.spv", "report.json"):
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            if name == "report.json":
                a, b = a.replace(str(tmp_path / "a").encode(), b""), b.replace(str(tmp_path / "b").encode(), b"")
            assert a == b


def test_usage_error_exit_code():
    proc = subprocess.run([sys.executable, "-m", "selfprompt", "bogus"], capture_output=True)
    assert proc.returncode == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "selfprompt", "--json", "schedule", "lr", "--epochs", "0"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["table"] == [{"epoch": 0, "lr": 0.01}]
