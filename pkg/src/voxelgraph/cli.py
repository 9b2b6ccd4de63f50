"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 runtime/training error. The VOXELGRAPH_THREADS environment variable
caps internal parallelism (default 1; the current implementation runs
serially at any setting, so results never depend on it).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .gcn import TrainingDivergedError
from .metrics import compute_report
from .phantom import PhantomSpec, generate_phantom
from .pipeline import PipelineConfig, PipelineError, run_refinement
from .uncertainty import role_masks, uncertain_band
from .volume import connected_components, load_volume, require_mask, save_volume

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    # the exit-code contract reserves 1 for usage errors (argparse uses 2)
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_json(path: str) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def _parse_spacing(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ValueError(f"--spacing must be 'sz,sy,sx', got {text!r}")
    return tuple(float(p) for p in parts)


def threads() -> int:
    raw = os.environ.get("VOXELGRAPH_THREADS", "1")
    try:
        value = int(raw)
    except ValueError as err:
        raise ValueError(f"VOXELGRAPH_THREADS must be an integer, got {raw!r}") from err
    if value < 1:
        raise ValueError(f"VOXELGRAPH_THREADS must be >= 1, got {value}")
    return value


def cmd_refine(args) -> int:
    cfg = PipelineConfig.from_dict(_load_json(args.config))
    ct = load_volume(args.ct)
    pet = load_volume(args.pet)
    prob = load_volume(args.prob)
    threads()

    refined, initial, report = run_refinement(ct, pet, prob, cfg)
    save_volume(refined, args.out)
    if args.initial_out:
        save_volume(initial, args.initial_out)
    if args.report:
        _write_json(args.report, report.to_dict())
    counts = report.node_counts
    print(
        f"nodes pos/neg/test = {counts['train_positive']}/{counts['train_negative']}"
        f"/{counts['test']}, parts = {report.part_count}, "
        f"flips 1->0 = {report.flips_one_to_zero}, 0->1 = {report.flips_zero_to_one}, "
        f"epochs = {report.epochs_run}, final loss = {report.final_loss}"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pred = load_volume(args.pred)
    gt = load_volume(args.gt)
    require_mask(pred, "pred")
    require_mask(gt, "gt")
    spacing = _parse_spacing(args.spacing) if args.spacing else None
    report = compute_report(pred, gt, spacing)
    payload = report.to_dict()
    payload["inputs"] = {"pred": str(args.pred), "gt": str(args.gt)}
    _write_json(args.out, payload)
    print(f"dice = {report.dice:.6f}, hd95 = {report.hd95}, assd = {report.assd}")
    return EXIT_OK


def cmd_phantom(args) -> int:
    spec = PhantomSpec.from_dict(_load_json(args.spec))
    volumes = generate_phantom(spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in ("ct", "pet", "gt", "prob"):
        save_volume(volumes[name], out_dir / f"{name}.nii")
    print(f"wrote ct/pet/gt/prob to {out_dir}")
    return EXIT_OK


def cmd_inspect_nodes(args) -> int:
    cfg = PipelineConfig.from_dict(_load_json(args.config))
    prob = load_volume(args.prob)
    entropy, e_b, u_b, negatives = role_masks(prob, cfg.selection)

    test = u_b.data.astype(bool)
    positive = e_b.data.astype(bool) & ~test
    negative = negatives.data.astype(bool)
    _, part_count = connected_components(e_b, cfg.parts_connectivity)
    p_lo, p_hi = uncertain_band(cfg.selection.alpha)

    counts = {
        "train_positive": int(positive.sum()),
        "train_negative": int(negative.sum()),
        "test": int(test.sum()),
    }
    for role in ("train_positive", "train_negative"):
        if counts[role] == 0:
            print(f"warning: no {role} voxels; refinement would fail on this input",
                  file=sys.stderr)
    _write_json(
        args.out,
        {**counts, "part_count": part_count, "uncertain_band": [p_lo, p_hi]},
    )
    if args.masks_out:
        masks_dir = Path(args.masks_out)
        masks_dir.mkdir(parents=True, exist_ok=True)
        for name, mask in (("train_positive", positive), ("train_negative", negative),
                           ("test", test)):
            save_volume(prob.with_data(mask.astype(np.uint8)), masks_dir / f"{name}.nii")
    print(
        f"nodes pos/neg/test = {counts['train_positive']}/{counts['train_negative']}"
        f"/{counts['test']}, parts = {part_count}, band = ({p_lo:.4f}, {p_hi:.4f})"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="voxelgraph",
        description="Refine 3D segmentation probability maps with a voxel-graph classifier.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("refine", help="run the full refinement pipeline")
    p.add_argument("--ct", required=True, help="CT volume (.nii)")
    p.add_argument("--pet", required=True, help="PET volume (.nii)")
    p.add_argument("--prob", required=True, help="foreground probability map (.nii)")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--out", required=True, help="output path for the refined mask (.nii)")
    p.add_argument("--report", help="output path for the run report JSON")
    p.add_argument("--initial-out", help="also write the unrefined thresholded mask (.nii)")
    p.set_defaults(handler=cmd_refine)

    p = sub.add_parser("evaluate", help="compare a predicted mask against ground truth")
    p.add_argument("--pred", required=True, help="predicted mask (.nii)")
    p.add_argument("--gt", required=True, help="ground-truth mask (.nii)")
    p.add_argument("--spacing", help="override voxel spacing as 'sz,sy,sx' in mm")
    p.add_argument("--out", required=True, help="output path for the metrics JSON")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("phantom", help="generate a synthetic PET/CT/probability phantom")
    p.add_argument("--spec", required=True, help="phantom spec JSON")
    p.add_argument("--out", required=True, help="output directory for ct/pet/gt/prob.nii")
    p.set_defaults(handler=cmd_phantom)

    p = sub.add_parser("inspect-nodes", help="report node-selection statistics for a volume")
    p.add_argument("--prob", required=True, help="foreground probability map (.nii)")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--out", required=True, help="output path for the selection stats JSON")
    p.add_argument("--masks-out", help="optional directory for role masks as .nii")
    p.set_defaults(handler=cmd_inspect_nodes)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except PipelineError as err:
        print(f"error: {err}", file=sys.stderr)
        if isinstance(err.cause, TrainingDivergedError):
            return EXIT_RUNTIME
        return EXIT_DATA
    except TrainingDivergedError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
