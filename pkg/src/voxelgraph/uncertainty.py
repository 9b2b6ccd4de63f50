"""Voxelwise entropy, binarization, and train/test node selection.

The upstream segmenter's foreground probability map is scored with the
binary entropy (base 2, so the score lives in [0, 1]); voxels above the
entropy threshold ``alpha`` become unlabeled test nodes, confidently
foreground voxels become positive training nodes, and a dilation shell
around everything becomes the negative training nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy.optimize import brentq

from .volume import (
    Connectivity,
    Mask3,
    StructuringElement,
    Volume3,
    dilate,
    linear_to_zyx,
)


class SelectionError(ValueError):
    """Node selection produced an untrainable split (a class is empty)."""


class NodeRole(IntEnum):
    TRAIN_NEGATIVE = 0
    TRAIN_POSITIVE = 1
    TEST = 2


@dataclass(frozen=True)
class SelectionConfig:
    """Thresholds and negative-sampling element for node selection."""

    alpha: float = 0.8
    beta: float = 0.5
    dilation: StructuringElement = field(
        default_factory=lambda: StructuringElement(Connectivity.FACE6, radius=2)
    )

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must be in (0, 1), got {self.beta}")


@dataclass(frozen=True)
class NodeSet:
    """Graph node population: linear voxel indices plus per-node role.

    Nodes are ordered by ascending linear index; this order is the node
    numbering every downstream matrix and prediction vector uses.
    """

    dims: tuple[int, int, int]
    indices: np.ndarray
    roles: np.ndarray

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64)
        roles = np.asarray(self.roles, dtype=np.uint8)
        if indices.ndim != 1 or roles.shape != indices.shape:
            raise ValueError("indices and roles must be parallel 1-D arrays")
        size = int(np.prod(self.dims))
        if indices.size:
            if indices[0] < 0 or indices[-1] >= size:
                raise ValueError("node indices out of volume bounds")
            if np.any(np.diff(indices) <= 0):
                raise ValueError("node indices must be strictly increasing (unique)")
        if roles.size and roles.max() > NodeRole.TEST:
            raise ValueError("invalid role code")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "roles", roles)

    @property
    def n(self) -> int:
        return self.indices.size

    def role_positions(self, role: NodeRole) -> np.ndarray:
        """Node positions (0..n-1) holding the given role."""
        return np.nonzero(self.roles == role)[0]

    def count(self, role: NodeRole) -> int:
        return int(np.count_nonzero(self.roles == role))

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.roles != NodeRole.TEST

    @property
    def labels(self) -> np.ndarray:
        """0/1 training labels; meaningful only where labeled_mask is true."""
        return (self.roles == NodeRole.TRAIN_POSITIVE).astype(np.float64)


def entropy_map(prob: Volume3) -> Volume3:
    """Binary entropy of a foreground-probability volume, base 2.

    U = -(p*log2(p) + (1-p)*log2(1-p)) with 0*log(0) = 0, computed and
    returned in float64. Values outside [0, 1] are an input-domain error
    naming the first offending voxel.
    """
    p = prob.data.astype(np.float64, copy=False)
    bad = (p < 0.0) | (p > 1.0) | ~np.isfinite(p)
    if bad.any():
        idx = int(np.argmax(bad.ravel()))
        z, y, x = linear_to_zyx(prob.dims, idx)
        raise ValueError(
            f"probability voxel ({z}, {y}, {x}) = {p.ravel()[idx]} outside [0, 1]"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        term_fg = np.where(p > 0.0, p * np.log2(p), 0.0)
        q = 1.0 - p
        term_bg = np.where(q > 0.0, q * np.log2(q), 0.0)
    # + 0.0 turns the -0.0 at p in {0, 1} into a plain zero
    return Volume3(data=-(term_fg + term_bg) + 0.0, spacing=prob.spacing)


def threshold_mask(vol: Volume3, t: float, strict: bool = True) -> Mask3:
    """Binary mask of voxels above ``t`` (strictly, unless strict=False)."""
    hit = vol.data > t if strict else vol.data >= t
    return Volume3(data=hit.astype(np.uint8), spacing=vol.spacing)


def uncertain_band(alpha: float) -> tuple[float, float]:
    """Open probability interval (p_lo, p_hi) where binary entropy > alpha.

    Degenerate cases: alpha >= 1 has no interior (returns (0.5, 0.5));
    alpha <= 0 spans all of (0, 1).
    """
    if alpha >= 1.0:
        return (0.5, 0.5)
    if alpha <= 0.0:
        return (0.0, 1.0)

    def excess(p: float) -> float:
        return -(p * np.log2(p) + (1.0 - p) * np.log2(1.0 - p)) - alpha

    p_lo = brentq(excess, 1e-12, 0.5, xtol=1e-15, rtol=8.882e-16)
    return (float(p_lo), float(1.0 - p_lo))


def role_masks(
    prob: Volume3, cfg: SelectionConfig
) -> tuple[Volume3, Mask3, Mask3, Mask3]:
    """Entropy map plus the three region masks behind node selection.

    Returns (entropy, e_b, u_b, negatives) where e_b thresholds the
    probability at beta, u_b thresholds the entropy at alpha, and the
    negatives are the dilation shell of e_b | u_b. No emptiness checks.
    """
    entropy = entropy_map(prob)
    u_b = threshold_mask(entropy, cfg.alpha)
    e_b = threshold_mask(prob, cfg.beta)
    union = (e_b.data | u_b.data).astype(bool)
    shell = dilate(e_b.with_data(union.astype(np.uint8)), cfg.dilation).data.astype(bool)
    negatives = e_b.with_data((shell & ~union).astype(np.uint8))
    return entropy, e_b, u_b, negatives


def select_nodes(
    prob: Volume3, cfg: SelectionConfig
) -> tuple[NodeSet, Volume3, Mask3, Mask3]:
    """Partition voxels into test / train-positive / train-negative nodes.

    - Test: entropy strictly above alpha (the voxels to re-predict).
    - TrainPositive: probability strictly above beta, minus test voxels.
    - TrainNegative: the dilation shell around e_b | u_b.

    An empty test set is fine (refinement degenerates to a pass-through);
    an empty training class raises SelectionError since the classifier
    would have nothing to learn one side from.
    """
    entropy, e_b, u_b, negatives = role_masks(prob, cfg)

    test_flat = u_b.data.ravel().astype(bool)
    pos_flat = e_b.data.ravel().astype(bool) & ~test_flat
    neg_flat = negatives.data.ravel().astype(bool)

    if not pos_flat.any():
        raise SelectionError(
            f"no train-positive voxels: nothing exceeds beta={cfg.beta} outside the uncertain set"
        )
    if not neg_flat.any():
        raise SelectionError("no train-negative voxels: the dilation shell is empty")

    roles_flat = np.full(prob.size, 255, dtype=np.uint8)
    roles_flat[neg_flat] = NodeRole.TRAIN_NEGATIVE
    roles_flat[pos_flat] = NodeRole.TRAIN_POSITIVE
    roles_flat[test_flat] = NodeRole.TEST
    indices = np.nonzero(roles_flat != 255)[0]
    nodes = NodeSet(dims=prob.dims, indices=indices, roles=roles_flat[indices])
    return nodes, entropy, e_b, u_b
