"""Two-layer graph-convolutional classifier over the voxel graph.

Forward pass: H1 = relu(N X W0), y = sigmoid(N H1 W1), with N the
normalized propagation matrix. Training is full-batch Adam on a
weight-decayed binary cross-entropy over the labeled (certain) nodes;
the unlabeled (uncertain) nodes only receive predictions. Everything
runs in float64 and is deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import SparseGraph
from .uncertainty import NodeRole, NodeSet
from .volume import Mask3, require_mask

N_FEATURES = 4

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss = {loss}")
        self.epoch = epoch


@dataclass
class GcnModel:
    """Weights of the two graph-convolution layers."""

    w0: np.ndarray
    w1: np.ndarray

    @property
    def hidden(self) -> int:
        return self.w0.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 200
    patience: int = 20
    min_delta: float = 1e-6
    pos_weight: float = 1.0
    hidden: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ValueError(f"max epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.hidden < 1:
            raise ValueError(f"hidden width must be >= 1, got {self.hidden}")
        if self.weight_decay < 0 or self.pos_weight <= 0:
            raise ValueError("weight decay must be >= 0 and pos_weight > 0")


@dataclass(frozen=True)
class TrainReport:
    losses: tuple[float, ...]
    epochs_run: int
    final_loss: float
    stop_reason: str


def init_model(h: int, seed: int) -> GcnModel:
    """Glorot-uniform initialization, deterministic given the seed."""
    if h < 1:
        raise ValueError(f"hidden width must be >= 1, got {h}")
    rng = np.random.default_rng(seed)
    bound0 = np.sqrt(6.0 / (N_FEATURES + h))
    bound1 = np.sqrt(6.0 / (h + 1))
    w0 = rng.uniform(-bound0, bound0, size=(N_FEATURES, h))
    w1 = rng.uniform(-bound1, bound1, size=(h, 1))
    return GcnModel(w0=w0, w1=w1)


def _sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


def _softplus(s: np.ndarray) -> np.ndarray:
    # log(1 + e^s), safe against overflow for large |s|
    return np.log1p(np.exp(-np.abs(s))) + np.maximum(s, 0.0)


def gcn_forward(
    model: GcnModel, g: SparseGraph, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Predictions in (0, 1) for every node, plus the hidden activations."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape != (g.n, model.w0.shape[0]):
        raise ValueError(
            f"feature matrix shape {x.shape} does not match graph n={g.n}, "
            f"in_dim={model.w0.shape[0]}"
        )
    hidden = np.maximum(g.normalized @ x @ model.w0, 0.0)
    logits = (g.normalized @ hidden @ model.w1).ravel()
    return _sigmoid(logits), hidden


def bce_loss(pred: np.ndarray, nodes: NodeSet, pos_weight: float = 1.0) -> float:
    """Mean binary cross-entropy over the labeled nodes only."""
    pred = np.asarray(pred, dtype=np.float64)
    labeled = nodes.labeled_mask
    if not labeled.any():
        raise ValueError("no labeled nodes to evaluate the loss on")
    p = pred[labeled]
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("predictions must lie strictly in (0, 1)")
    y = nodes.labels[labeled]
    terms = -(pos_weight * y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(terms.mean())


def gcn_gradients(
    model: GcnModel, g: SparseGraph, x: np.ndarray, nodes: NodeSet, cfg: TrainConfig
) -> tuple[np.ndarray, np.ndarray, float]:
    """Exact gradients of the weight-decayed BCE; relu subgradient at 0 is 0.

    Returns (dW0, dW1, regularized loss). The loss is evaluated from the
    logits so saturated predictions cannot produce log(0).
    """
    x = np.asarray(x, dtype=np.float64)
    nx = g.normalized @ x
    z1 = nx @ model.w0
    h1 = np.maximum(z1, 0.0)
    nh = g.normalized @ h1
    logits = (nh @ model.w1).ravel()
    p = _sigmoid(logits)

    labeled = nodes.labeled_mask
    if not labeled.any():
        raise ValueError("no labeled nodes to train on")
    y = nodes.labels
    m = int(labeled.sum())
    pw = cfg.pos_weight

    # -[pw*y*log p + (1-y)*log(1-p)] written in terms of the logits
    per_node = pw * y * _softplus(-logits) + (1.0 - y) * _softplus(logits)
    lam = cfg.weight_decay
    loss = float(per_node[labeled].sum() / m) + lam * (
        float(np.sum(model.w0**2)) + float(np.sum(model.w1**2))
    )

    g_logits = np.zeros_like(logits)
    g_logits[labeled] = ((1.0 - y) * p - pw * y * (1.0 - p))[labeled] / m

    dw1 = nh.T @ g_logits[:, None] + 2.0 * lam * model.w1
    # N (g_logits w1^T) = (N g_logits) w1^T since the outer product is rank 1
    dh1 = (g.normalized @ g_logits)[:, None] * model.w1.ravel()[None, :]
    dz1 = dh1 * (z1 > 0.0)
    dw0 = nx.T @ dz1 + 2.0 * lam * model.w0
    return dw0, dw1, loss


def train_gcn(
    g: SparseGraph, x: np.ndarray, nodes: NodeSet, cfg: TrainConfig
) -> tuple[GcnModel, TrainReport]:
    """Full-batch Adam on the labeled nodes, with loss-plateau early stop."""
    if nodes.count(NodeRole.TRAIN_POSITIVE) == 0 or nodes.count(NodeRole.TRAIN_NEGATIVE) == 0:
        raise ValueError("training requires at least one positive and one negative node")

    model = init_model(cfg.hidden, cfg.seed)
    m0 = np.zeros_like(model.w0)
    v0 = np.zeros_like(model.w0)
    m1 = np.zeros_like(model.w1)
    v1 = np.zeros_like(model.w1)

    losses: list[float] = []
    best = np.inf
    plateau = 0
    stop_reason = "max_epochs"
    for epoch in range(cfg.max_epochs):
        dw0, dw1, loss = gcn_gradients(model, g, x, nodes, cfg)
        if not np.isfinite(loss):
            raise TrainingDivergedError(epoch, loss)
        losses.append(loss)
        if loss < best - cfg.min_delta:
            best = loss
            plateau = 0
        else:
            plateau += 1
            if plateau >= cfg.patience:
                stop_reason = "early_stop"
                break

        t = epoch + 1
        for w, grad, m, v in ((model.w0, dw0, m0, v0), (model.w1, dw1, m1, v1)):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * grad
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * grad**2
            m_hat = m / (1.0 - ADAM_BETA1**t)
            v_hat = v / (1.0 - ADAM_BETA2**t)
            w -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)

    report = TrainReport(
        losses=tuple(losses),
        epochs_run=len(losses),
        final_loss=losses[-1],
        stop_reason=stop_reason,
    )
    return model, report


def refine_segmentation(
    e_b: Mask3, nodes: NodeSet, predictions: np.ndarray, tau: float = 0.5
) -> Mask3:
    """Rewrite only the test voxels of the thresholded segmentation.

    A test voxel becomes foreground iff its prediction is >= tau; every
    other voxel keeps its e_b value.
    """
    require_mask(e_b, "e_b")
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.shape != (nodes.n,):
        raise ValueError(
            f"predictions shape {predictions.shape} does not match node count {nodes.n}"
        )
    refined = e_b.data.copy()
    test_pos = nodes.role_positions(NodeRole.TEST)
    flat = refined.ravel()
    flat[nodes.indices[test_pos]] = (predictions[test_pos] >= tau).astype(np.uint8)
    return e_b.with_data(refined)
