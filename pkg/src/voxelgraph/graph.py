"""Sparse graph construction over selected voxels.

Edges come from three sources: the 6-neighborhood of every node (local
structure), a per-node batch of random global targets (long-range
structure, stratified across tumor parts when several exist), and extra
random targets for every test node. All edges carry unit weight; the
propagation operator is the symmetrically normalized self-loop-augmented
adjacency D^-1/2 (A + I) D^-1/2.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import sparse

from .uncertainty import NodeRole, NodeSet
from .volume import Connectivity, Mask3, Volume3, connected_components, linear_to_zyx

logger = logging.getLogger(__name__)


class UncerMode(str, Enum):
    """Where the extra test-node edges point."""

    NONE = "none"
    TO_CERTAIN = "to_certain"
    TO_RANDOM = "to_random"


@dataclass(frozen=True)
class EdgeConfig:
    k_rand: int = 16
    k_uncer: int = 16
    uncer_mode: UncerMode = UncerMode.TO_RANDOM
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "uncer_mode", UncerMode(self.uncer_mode))
        if self.k_rand < 0 or self.k_uncer < 0:
            raise ValueError("edge counts must be nonnegative")


@dataclass(frozen=True)
class SparseGraph:
    """Unit-weight symmetric adjacency and its normalized propagation matrix."""

    n: int
    adjacency: sparse.csr_array
    normalized: sparse.csr_array


@dataclass(frozen=True)
class EdgeBuildResult:
    """Deduplicated undirected edge list plus per-source counts.

    An edge produced by several sources is attributed to the first one in
    (neighborhood, global, uncertain) order.
    """

    edges: np.ndarray
    neighborhood_count: int
    global_count: int
    uncertain_count: int

    @property
    def total(self) -> int:
        return self.edges.shape[0]


def partition_parts(
    e_b: Mask3, nodes: NodeSet, connectivity: Connectivity = Connectivity.FULL26
) -> tuple[np.ndarray, int]:
    """Assign each node the connected component of e_b it lies in.

    Nodes outside e_b (negatives, and test voxels past the probability
    threshold's reach) get part 0. Returns (per-node part ids, part count).
    """
    labels, count = connected_components(e_b, connectivity)
    parts = labels.data.ravel()[nodes.indices].astype(np.int64)
    return parts, count


def _draw(rng: np.random.Generator, pool: np.ndarray, k: int, exclude: int = -1) -> list[int]:
    """Sample k distinct entries of pool, skipping ``exclude``.

    ``exclude`` = -1 means the pool is known not to contain the node
    itself. Degrades to every available entry when the pool is too small.
    """
    available = pool.size - (1 if exclude >= 0 else 0)
    if k >= available:
        return [int(p) for p in pool if p != exclude]
    if 2 * k >= pool.size:
        shuffled = rng.permutation(pool)
        out = [int(p) for p in shuffled if p != exclude]
        return out[:k]
    picked: dict[int, None] = {}
    while len(picked) < k:
        for pos in rng.integers(0, pool.size, size=k - len(picked)):
            target = int(pool[pos])
            if target != exclude:
                picked[target] = None
    return list(picked)[:k]


def _round_robin_allocation(capacities: list[int], k: int) -> list[int]:
    alloc = [0] * len(capacities)
    remaining = k
    while remaining > 0:
        grew = False
        for s, cap in enumerate(capacities):
            if remaining == 0:
                break
            if alloc[s] < cap:
                alloc[s] += 1
                remaining -= 1
                grew = True
        if not grew:
            break
    return alloc


def build_edges(nodes: NodeSet, parts: np.ndarray, cfg: EdgeConfig) -> EdgeBuildResult:
    """Build the undirected unit-weight edge list for the node set.

    Neighborhood edges always connect face-adjacent nodes. Global edges
    draw k_rand targets per node without replacement; with two or more
    tumor parts the draws round-robin over the part labels other than the
    node's own, so long-range edges cross parts. Test nodes get k_uncer
    extra targets per ``cfg.uncer_mode``. Deterministic given the seed.
    """
    if nodes.n == 0:
        raise ValueError("node set is empty")
    parts = np.asarray(parts, dtype=np.int64)
    if parts.shape != (nodes.n,):
        raise ValueError("parts must be aligned with the node set")

    edges: set[tuple[int, int]] = set()

    def add(a: int, b: int) -> int:
        if a == b:
            return 0
        key = (a, b) if a < b else (b, a)
        if key in edges:
            return 0
        edges.add(key)
        return 1

    # six-neighborhood edges: +z/+y/+x suffice since edges are undirected
    dims = nodes.dims
    idx = nodes.indices
    z, y, x = linear_to_zyx(dims, idx)
    strides = (dims[1] * dims[2], dims[2], 1)
    n_neigh = 0
    for axis, (coord, extent) in enumerate(zip((z, y, x), dims)):
        valid = coord + 1 < extent
        neighbor_lin = idx[valid] + strides[axis]
        pos = np.searchsorted(idx, neighbor_lin)
        found = (pos < nodes.n) & (idx[np.minimum(pos, nodes.n - 1)] == neighbor_lin)
        sources = np.nonzero(valid)[0][found]
        targets = pos[found]
        for a, b in zip(sources, targets):
            n_neigh += add(int(a), int(b))

    rng = np.random.default_rng(cfg.seed)
    part_count = int(parts.max(initial=0))
    stratified = part_count >= 2
    pools = {int(label): np.nonzero(parts == label)[0] for label in np.unique(parts)}
    all_positions = np.arange(nodes.n)
    degraded = 0

    # global edges, one batch per node in node order
    n_global = 0
    if cfg.k_rand > 0:
        for i in range(nodes.n):
            if stratified:
                strata = [lab for lab in sorted(pools) if lab != parts[i]]
                capacities = [pools[lab].size for lab in strata]
                alloc = _round_robin_allocation(capacities, cfg.k_rand)
                if sum(alloc) < cfg.k_rand:
                    degraded += 1
                for lab, take in zip(strata, alloc):
                    if take:
                        for j in _draw(rng, pools[lab], take):
                            n_global += add(i, j)
            else:
                targets = _draw(rng, all_positions, cfg.k_rand, exclude=i)
                if len(targets) < cfg.k_rand:
                    degraded += 1
                for j in targets:
                    n_global += add(i, j)

    # extra edges for test nodes
    n_uncer = 0
    if cfg.uncer_mode is not UncerMode.NONE and cfg.k_uncer > 0:
        if cfg.uncer_mode is UncerMode.TO_CERTAIN:
            pool = np.nonzero(nodes.roles != NodeRole.TEST)[0]
            self_in_pool = False
        else:
            pool = all_positions
            self_in_pool = True
        test_positions = nodes.role_positions(NodeRole.TEST)
        if pool.size == 0 and test_positions.size:
            logger.info("no certain nodes available for test-node edges")
        else:
            for i in test_positions:
                targets = _draw(rng, pool, cfg.k_uncer, exclude=int(i) if self_in_pool else -1)
                if len(targets) < cfg.k_uncer:
                    degraded += 1
                for j in targets:
                    n_uncer += add(int(i), j)

    if degraded:
        logger.info("random-edge draws degraded for %d nodes (pool smaller than k)", degraded)

    if edges:
        edge_array = np.array(sorted(edges), dtype=np.int64)
    else:
        edge_array = np.empty((0, 2), dtype=np.int64)
    return EdgeBuildResult(
        edges=edge_array,
        neighborhood_count=n_neigh,
        global_count=n_global,
        uncertain_count=n_uncer,
    )


def normalize_adjacency(edges: np.ndarray, n: int) -> SparseGraph:
    """Symmetric adjacency plus D^-1/2 (A + I) D^-1/2.

    Since every weight is 1, each normalized entry (i, j) is exactly
    1/sqrt(d_i * d_j) with d the self-loop-augmented degrees, which makes
    the matrix symmetric bit-for-bit by construction.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise ValueError(f"edge endpoints must lie in [0, {n})")
    if edges.size:
        # canonicalize so stray duplicates or self-edges cannot inflate weights
        canon = np.sort(edges, axis=1)
        edges = np.unique(canon[canon[:, 0] != canon[:, 1]], axis=0)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    data = np.ones(rows.size, dtype=np.float64)
    adjacency = sparse.csr_array(sparse.coo_array((data, (rows, cols)), shape=(n, n)))

    degree = np.asarray(adjacency.sum(axis=1)).ravel() + 1.0
    loop = np.arange(n)
    aug_rows = np.concatenate([rows, loop])
    aug_cols = np.concatenate([cols, loop])
    values = 1.0 / np.sqrt(degree[aug_rows] * degree[aug_cols])
    normalized = sparse.csr_array(
        sparse.coo_array((values, (aug_rows, aug_cols)), shape=(n, n))
    )
    return SparseGraph(n=n, adjacency=adjacency, normalized=normalized)


def assemble_features(
    nodes: NodeSet, ct: Volume3, pet: Volume3, prob: Volume3, entropy: Volume3
) -> np.ndarray:
    """Per-node feature rows [ct_z, pet_z, probability, entropy].

    CT and PET are z-scored over the node population (a zero-variance
    channel becomes all zeros); probability and entropy pass through.
    """
    vols = {"ct": ct, "pet": pet, "prob": prob, "entropy": entropy}
    for name, vol in vols.items():
        if vol.dims != nodes.dims:
            raise ValueError(f"{name} dims {vol.dims} do not match node set dims {nodes.dims}")

    columns = []
    for name, vol in vols.items():
        values = vol.data.ravel()[nodes.indices].astype(np.float64)
        bad = ~np.isfinite(values)
        if bad.any():
            pos = int(np.argmax(bad))
            zyx = tuple(int(c) for c in linear_to_zyx(nodes.dims, nodes.indices[pos]))
            raise ValueError(f"{name} voxel {zyx} is not finite: {values[pos]}")
        if name in ("ct", "pet"):
            sd = values.std()
            values = np.zeros_like(values) if sd == 0.0 else (values - values.mean()) / sd
        columns.append(values)
    return np.stack(columns, axis=1)
