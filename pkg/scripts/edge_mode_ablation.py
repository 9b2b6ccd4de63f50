#!/usr/bin/env python3
"""Compare the three edge recipes for test nodes on seeded phantoms.

Rows: no extra test-node edges / extra edges into certain nodes / extra
edges into random nodes. Mirrors the table layout used when ablating the
edge construction.

Usage:
  python scripts/edge_mode_ablation.py --seeds 5
"""

import argparse

import numpy as np

from voxelgraph.gcn import TrainConfig
from voxelgraph.graph import EdgeConfig, UncerMode
from voxelgraph.metrics import compute_report
from voxelgraph.phantom import generate_phantom
from voxelgraph.pipeline import PipelineConfig, run_refinement

from run_phantom_experiment import phantom_spec


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--k-uncer", type=int, default=32)
    parser.add_argument("--epochs", type=int, default=400)
    args = parser.parse_args()

    modes = [
        ("6n+16r only", UncerMode.NONE),
        ("+uncer-cer", UncerMode.TO_CERTAIN),
        ("+uncer-rand", UncerMode.TO_RANDOM),
    ]
    volumes = [generate_phantom(phantom_spec(seed)) for seed in range(args.seeds)]

    print(f"{'edge recipe':<14} {'dice':>8} {'hd95':>8} {'assd':>8}")
    for label, mode in modes:
        dices, hds, assds = [], [], []
        for seed, vols in enumerate(volumes):
            cfg = PipelineConfig(
                seed=seed,
                edges=EdgeConfig(k_uncer=args.k_uncer, uncer_mode=mode),
                train=TrainConfig(max_epochs=args.epochs),
            )
            refined, _, _ = run_refinement(vols["ct"], vols["pet"], vols["prob"], cfg)
            report = compute_report(refined, vols["gt"])
            dices.append(report.dice)
            hds.append(report.hd95)
            assds.append(report.assd)
        print(f"{label:<14} {np.mean(dices):8.4f} {np.mean(hds):8.2f} {np.mean(assds):8.2f}")


if __name__ == "__main__":
    main()
