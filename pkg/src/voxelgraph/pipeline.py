"""End-to-end refinement: selection, graph, training, relabeling.

A single top-level seed derives the sub-stage seeds (edge sampling gets
``seed``, training ``seed + 1``) so one integer reproduces a whole run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .gcn import TrainConfig, TrainingDivergedError, gcn_forward, refine_segmentation, train_gcn
from .graph import EdgeConfig, assemble_features, build_edges, normalize_adjacency, partition_parts
from .uncertainty import NodeRole, SelectionConfig, select_nodes
from .volume import Connectivity, Mask3, StructuringElement, Volume3


class PipelineError(RuntimeError):
    """A stage failed; ``cause`` keeps the original error."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    edges: EdgeConfig = field(default_factory=EdgeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    parts_connectivity: Connectivity = Connectivity.FULL26
    tau: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "parts_connectivity", Connectivity(self.parts_connectivity))
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "tau": self.tau,
            "parts_connectivity": self.parts_connectivity.value,
            "selection": {
                "alpha": self.selection.alpha,
                "beta": self.selection.beta,
                "dilation": {
                    "connectivity": self.selection.dilation.connectivity.value,
                    "radius": self.selection.dilation.radius,
                },
            },
            "edges": {
                "k_rand": self.edges.k_rand,
                "k_uncer": self.edges.k_uncer,
                "uncer_mode": self.edges.uncer_mode.value,
            },
            "train": {
                "learning_rate": self.train.learning_rate,
                "weight_decay": self.train.weight_decay,
                "max_epochs": self.train.max_epochs,
                "patience": self.train.patience,
                "min_delta": self.train.min_delta,
                "pos_weight": self.train.pos_weight,
                "hidden": self.train.hidden,
            },
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        def build(section: str, ctor, transform=None):
            sub = raw.get(section, {})
            if not isinstance(sub, dict):
                raise ValueError(f"config section '{section}' must be an object")
            sub = dict(sub)
            if transform:
                sub = transform(sub)
            # sub-seeds are derived from the top-level seed, never set directly
            allowed = set(ctor.__dataclass_fields__) - {"seed"}
            unknown = set(sub) - allowed
            if unknown:
                raise ValueError(f"unknown keys in config section '{section}': {sorted(unknown)}")
            return ctor(**sub)

        top_unknown = set(raw) - {"seed", "tau", "parts_connectivity", "selection", "edges", "train"}
        if top_unknown:
            raise ValueError(f"unknown config keys: {sorted(top_unknown)}")

        def selection_transform(sub: dict) -> dict:
            if "dilation" in sub:
                d = dict(sub["dilation"])
                unknown = set(d) - {"connectivity", "radius"}
                if unknown:
                    raise ValueError(f"unknown keys in dilation: {sorted(unknown)}")
                sub = dict(sub)
                sub["dilation"] = StructuringElement(**d)
            return sub

        return cls(
            selection=build("selection", SelectionConfig, selection_transform),
            edges=build("edges", EdgeConfig),
            train=build("train", TrainConfig),
            parts_connectivity=raw.get("parts_connectivity", Connectivity.FULL26),
            tau=raw.get("tau", 0.5),
            seed=raw.get("seed", 0),
        )


@dataclass
class RunReport:
    """Machine-readable summary of one refinement run."""

    node_counts: dict
    part_count: int
    edge_counts: dict
    epochs_run: int
    final_loss: float | None
    stop_reason: str
    flips_one_to_zero: int
    flips_zero_to_one: int
    timings: dict
    seed: int

    def to_dict(self) -> dict:
        return {
            "nodes": dict(self.node_counts),
            "part_count": self.part_count,
            "edges": dict(self.edge_counts),
            "training": {
                "epochs_run": self.epochs_run,
                "final_loss": self.final_loss,
                "stop_reason": self.stop_reason,
            },
            "flips": {
                "one_to_zero": self.flips_one_to_zero,
                "zero_to_one": self.flips_zero_to_one,
            },
            "timings": dict(self.timings),
            "seed": self.seed,
        }


def run_refinement(
    ct: Volume3, pet: Volume3, prob: Volume3, cfg: PipelineConfig
) -> tuple[Mask3, Mask3, RunReport]:
    """Refine the thresholded probability map by relabeling uncertain voxels.

    Returns (refined, initial, report) where initial is the plain
    probability threshold at beta. With no uncertain voxels the run is a
    pass-through: training is skipped and refined equals initial.
    """
    for name, vol in (("pet", pet), ("prob", prob)):
        if vol.dims != ct.dims:
            raise ValueError(f"{name} dims {vol.dims} do not match ct dims {ct.dims}")
        if vol.spacing != ct.spacing:
            raise ValueError(f"{name} spacing {vol.spacing} does not match ct {ct.spacing}")

    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    try:
        nodes, entropy, e_b, u_b = select_nodes(prob, cfg.selection)
    except ValueError as err:
        raise PipelineError("selection", err) from err
    timings["selection"] = time.perf_counter() - t0

    node_counts = {
        "train_positive": nodes.count(NodeRole.TRAIN_POSITIVE),
        "train_negative": nodes.count(NodeRole.TRAIN_NEGATIVE),
        "test": nodes.count(NodeRole.TEST),
    }

    t0 = time.perf_counter()
    parts, part_count = partition_parts(e_b, nodes, cfg.parts_connectivity)
    timings["parts"] = time.perf_counter() - t0

    if node_counts["test"] == 0:
        report = RunReport(
            node_counts=node_counts,
            part_count=part_count,
            edge_counts={"neighborhood": 0, "global": 0, "uncertain": 0, "total": 0},
            epochs_run=0,
            final_loss=None,
            stop_reason="skipped_no_test_nodes",
            flips_one_to_zero=0,
            flips_zero_to_one=0,
            timings=timings,
            seed=cfg.seed,
        )
        return e_b.with_data(e_b.data.copy()), e_b, report

    t0 = time.perf_counter()
    edge_cfg = replace(cfg.edges, seed=cfg.seed)
    edges = build_edges(nodes, parts, edge_cfg)
    timings["edges"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    g = normalize_adjacency(edges.edges, nodes.n)
    timings["normalize"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    features = assemble_features(nodes, ct, pet, prob, entropy)
    timings["features"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    train_cfg = replace(cfg.train, seed=cfg.seed + 1)
    try:
        model, train_report = train_gcn(g, features, nodes, train_cfg)
    except (ValueError, TrainingDivergedError) as err:
        raise PipelineError("training", err) from err
    timings["training"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    predictions, _ = gcn_forward(model, g, features)
    refined = refine_segmentation(e_b, nodes, predictions, cfg.tau)
    timings["refine"] = time.perf_counter() - t0

    test_idx = nodes.indices[nodes.roles == NodeRole.TEST]
    before = e_b.data.ravel()[test_idx]
    after = refined.data.ravel()[test_idx]
    report = RunReport(
        node_counts=node_counts,
        part_count=part_count,
        edge_counts={
            "neighborhood": edges.neighborhood_count,
            "global": edges.global_count,
            "uncertain": edges.uncertain_count,
            "total": edges.total,
        },
        epochs_run=train_report.epochs_run,
        final_loss=train_report.final_loss,
        stop_reason=train_report.stop_reason,
        flips_one_to_zero=int(np.count_nonzero((before == 1) & (after == 0))),
        flips_zero_to_one=int(np.count_nonzero((before == 0) & (after == 1))),
        timings=timings,
        seed=cfg.seed,
    )
    return refined, e_b, report
