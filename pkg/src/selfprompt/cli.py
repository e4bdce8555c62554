"""Command-line entry point: ``selfprompt <subcommand> ...``.

Exit codes: 0 success, 1 a check failed, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from selfprompt.core import (
    BinaryMask,
    LabelVolume,
    ScalarVolume,
    Sphere,
    one_hot,
    read_spv,
    synth_spheres,
    write_spv,
)
from selfprompt.edt import edt_bruteforce, edt_exact
from selfprompt.errors import SelfPromptError
from selfprompt.nn.adapters import mcadapter_fuse
from selfprompt.nn.gradcheck import gradcheck_dfused
from selfprompt.prompt import generate_prompts, prompts_to_dict, write_prompts
from selfprompt.trainmath import LrSchedule, ds_weights, per_class_dice, poly_lr

log = logging.getLogger("selfprompt")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _emit(args: argparse.Namespace, payload: dict[str, Any], table: Sequence[str]) -> None:
    if args.json:
        print(json.dumps(payload, indent=1))
    else:
        print("\n".join(table))


def _read_labels(path: str) -> LabelVolume:
    vol = read_spv(path)
    if not isinstance(vol, LabelVolume):
        raise UsageError(f"{path} holds a scalar volume, a label volume is required")
    return vol


def _histogram_rows(vol: LabelVolume) -> tuple[dict[str, int], list[str]]:
    hist = vol.histogram()
    total = int(hist.sum())
    rows = [f"class {c}: {int(n)} voxels ({100.0 * n / total:.2f}%)" for c, n in enumerate(hist)]
    return {str(c): int(n) for c, n in enumerate(hist)}, rows


# ---------------------------------------------------------------------------
# subcommands


def parse_sphere_spec(doc: Any) -> tuple[list[Sphere], Optional[int]]:
    """Sphere spec files: ``{"num_classes": K?, "spheres": [{"center", "radius", "class_id"}]}``."""
    if isinstance(doc, list):
        doc = {"spheres": doc}
    if not isinstance(doc, dict) or not isinstance(doc.get("spheres", []), list):
        raise UsageError("sphere spec must be an object with a 'spheres' list")
    spheres = []
    for item in doc.get("spheres", []):
        try:
            spheres.append(Sphere(tuple(float(v) for v in item["center"]), float(item["radius"]), int(item["class_id"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"bad sphere entry {item!r}: {exc}") from exc
    k = doc.get("num_classes")
    return spheres, None if k is None else int(k)


def cmd_synth(args: argparse.Namespace) -> int:
    if args.spec:
        try:
            doc = json.loads(Path(args.spec).read_text(encoding="utf-8") or "{}")
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read sphere spec {args.spec}: {exc}") from exc
    else:
        doc = {}
    spheres, k = parse_sphere_spec(doc)
    vol = synth_spheres(args.dims, args.spacing, spheres, seed=args.seed, num_classes=k)
    write_spv(vol, args.out)
    hist, rows = _histogram_rows(vol)
    _emit(args, {"out": str(args.out), "dims": list(vol.dims), "num_classes": vol.num_classes, "histogram": hist},
          [f"wrote {args.out} dims={vol.dims} K={vol.num_classes}", *rows])
    return EXIT_OK


def cmd_prompts(args: argparse.Namespace) -> int:
    vol = _read_labels(args.input)
    prompts = generate_prompts(vol, args.mode)
    write_prompts(prompts, args.out, vol.num_classes, args.mode)
    present = sorted({p.class_id for p in prompts if p.present})
    rows = [f"wrote {len(prompts)} prompt sets to {args.out}"]
    for p in prompts:
        where = "" if p.slice_index is None else f" z={p.slice_index}"
        if p.present:
            rows.append(f"class {p.class_id}{where}: box {p.box.min}-{p.box.max} point {p.point.index}")
        elif args.mode == "volume":
            rows.append(f"class {p.class_id}{where}: absent")
    _emit(args, {"out": str(args.out), "count": len(prompts), "present_classes": present}, rows)
    return EXIT_OK


def cmd_edt(args: argparse.Namespace) -> int:
    vol = _read_labels(args.input)
    mask = one_hot(vol, args.class_id)
    field = edt_bruteforce(mask) if args.oracle else edt_exact(mask)
    write_spv(field, args.out)
    vals = field.values
    payload = {
        "out": str(args.out),
        "method": "bruteforce" if args.oracle else "exact",
        "foreground_voxels": mask.count(),
        "max_sq_distance_mm2": float(vals.max()),
    }
    _emit(args, payload, [f"{k}: {v}" for k, v in payload.items()])
    return EXIT_OK


def cmd_dice(args: argparse.Namespace) -> int:
    a, b = _read_labels(args.a), _read_labels(args.b)
    scores = per_class_dice(a, b)
    fg = scores[1:]
    mean = float(np.mean(fg)) if fg else 1.0
    payload = {"per_class": {str(c): s for c, s in enumerate(scores)}, "mean_foreground": mean}
    rows = [f"class {c}: {s:.6f}" for c, s in enumerate(scores)] + [f"mean (foreground): {mean:.6f}"]
    _emit(args, payload, rows)
    return EXIT_OK


def cmd_schedule(args: argparse.Namespace) -> int:
    if args.kind == "lr":
        sched = LrSchedule(args.init_lr, args.max_epoch)
        epochs = args.epochs if args.epochs else list(range(0, args.max_epoch + 1, args.step))
        if epochs[-1] != args.max_epoch and not args.epochs:
            epochs.append(args.max_epoch)
        rows = [(int(e), poly_lr(sched, e)) for e in epochs]
        _emit(args, {"kind": "lr", "init_lr": args.init_lr, "max_epoch": args.max_epoch,
                     "table": [{"epoch": e, "lr": lr} for e, lr in rows]},
              ["epoch  lr"] + [f"{e:5d}  {lr!r}" for e, lr in rows])
    else:
        w = ds_weights(args.levels)
        _emit(args, {"kind": "dsw", "levels": args.levels, "weights": w},
              ["level  weight"] + [f"{i + 1:5d}  {x!r}" for i, x in enumerate(w)])
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    report = gradcheck_dfused(args.seed, perturb=args.perturb)
    rows = [f"{name:6s} max rel err {err:.3e}" for name, err in report.errors.items()]
    rows.append(f"{'PASS' if report.passed else 'FAIL'} (tolerance {report.tolerance:g})")
    _emit(args, report.to_dict(), rows)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def demo_spheres(size: int, seed: int) -> list[Sphere]:
    """Three disjoint voxel-centred spheres on the main diagonal."""
    rng = np.random.default_rng(seed)
    radius = 0.15 * size
    jitter = max(0, int(0.02 * size))
    spheres = []
    for i, frac in enumerate((0.25, 0.5, 0.75)):
        center = tuple(float(round(frac * size) + rng.integers(-jitter, jitter + 1)) for _ in range(3))
        spheres.append(Sphere(center, radius, i + 1))  # type: ignore[arg-type]
    return spheres


def run_demo(out_dir: Path, size: int = 64, seed: int = 0) -> dict[str, Any]:
    """Synthesize, prompt, fuse one-hot logits and score; returns the report."""
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    spheres = demo_spheres(size, seed)
    labels = synth_spheres((size,) * 3, (1.0, 1.0, 1.0), spheres, seed=seed)
    paths = {name: out_dir / name for name in
             ("labels.spv", "prompts.json", "logits.spv", "probabilities.spv", "fused.spv", "report.json")}
    write_spv(labels, paths["labels.spv"])

    prompts = generate_prompts(labels, "volume")
    write_prompts(prompts, paths["prompts.json"], labels.num_classes, "volume")

    logits = ScalarVolume(
        (labels.labels[np.newaxis] == np.arange(labels.num_classes)[:, None, None, None]).astype(np.float64),
        labels.spacing,
    )
    write_spv(logits, paths["logits.spv"])
    probs, fused = mcadapter_fuse(logits)
    write_spv(probs, paths["probabilities.spv"])
    write_spv(fused, paths["fused.spv"])
    dice = per_class_dice(fused, labels)

    checks = []
    for s, p in zip(spheres, prompts):
        center = tuple(int(c) for c in s.center)
        reach = int(math.floor(s.radius))
        box_min = tuple(c - reach for c in center)
        box_max = tuple(c + reach for c in center)
        checks.append({
            "class_id": s.class_id,
            "center": list(center),
            "point": list(p.point.index),
            "point_is_center": p.point.index == center,
            "box": [list(p.box.min), list(p.box.max)],
            "box_is_tight": (p.box.min, p.box.max) == (box_min, box_max),
            "dice": dice[s.class_id],
        })
    ok = all(c["point_is_center"] and c["box_is_tight"] and c["dice"] == 1.0 for c in checks)
    report = {
        "seed": seed,
        "size": size,
        "classes": checks,
        "dice_per_class": dice,
        "passed": ok,
        "seconds": time.perf_counter() - t0,
        "artifacts": {k: str(v) for k, v in paths.items()},
    }
    paths["report.json"].write_text(json.dumps({k: v for k, v in report.items() if k != "seconds"}, indent=1) + "\n")
    return report


def cmd_demo(args: argparse.Namespace) -> int:
    report = run_demo(Path(args.out_dir), args.size, args.seed)
    rows = []
    for c in report["classes"]:
        rows.append(
            f"class {c['class_id']}: point {tuple(c['point'])} centre={c['point_is_center']} "
            f"tight box={c['box_is_tight']} dice={c['dice']:.4f}"
        )
    rows += [f"{name}: {path}" for name, path in report["artifacts"].items()]
    rows.append("PASS" if report["passed"] else "FAIL")
    _emit(args, report, rows)
    return EXIT_OK if report["passed"] else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfprompt", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0, help="global RNG seed (default 0)")
    parser.add_argument("--json", action="store_true", help="print machine-readable JSON")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="paint spheres into a label volume")
    p.add_argument("--dims", type=int, nargs=3, required=True, metavar=("NX", "NY", "NZ"))
    p.add_argument("--spacing", type=float, nargs=3, default=(1.0, 1.0, 1.0), metavar=("SX", "SY", "SZ"))
    p.add_argument("--spec", help="JSON sphere list; omitted means no spheres")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prompts", help="generate box/point/mask prompts")
    p.add_argument("input")
    p.add_argument("--mode", choices=("slice", "volume"), default="slice")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prompts)

    p = sub.add_parser("edt", help="squared distance transform of one class")
    p.add_argument("input")
    p.add_argument("--class-id", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--oracle", action="store_true", help="use the brute-force reference")
    p.set_defaults(func=cmd_edt)

    p = sub.add_parser("dice", help="per-class Dice between two label volumes")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_dice)

    p = sub.add_parser("schedule", help="tabulate poly LR or deep-supervision weights")
    p.add_argument("kind", choices=("lr", "dsw"))
    p.add_argument("--init-lr", type=float, default=0.01)
    p.add_argument("--max-epoch", type=int, default=1000)
    p.add_argument("--step", type=int, default=100)
    p.add_argument("--epochs", type=float, nargs="*")
    p.add_argument("--levels", type=int, default=5)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("gradcheck", help="finite-difference check of adapter gradients")
    p.add_argument("--perturb", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("demo", help="end-to-end synthetic run")
    p.add_argument("--out-dir", default="selfprompt-demo")
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, SelfPromptError, OSError) as exc:
        print(f"selfprompt {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
