import math

import numpy as np
import pytest

from voxelgraph.gcn import (
    GcnModel,
    TrainConfig,
    bce_loss,
    gcn_forward,
    gcn_gradients,
    init_model,
    refine_segmentation,
    train_gcn,
)
from voxelgraph.graph import normalize_adjacency
from voxelgraph.uncertainty import NodeRole, NodeSet
from voxelgraph.volume import Volume3

from oracles import finite_difference_grads, two_community_fixture

# frozen oracle: mean(-ln 0.8, -ln 0.7) for labels (1, 0), preds (0.8, 0.3)
BCE_TWO_NODE = 0.2899092476264711


def random_fixture(seed, max_n=30, max_h=8):
    """Random graph + features + labeled roles + weight decay."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, max_n + 1))
    edges = rng.integers(0, n, size=(int(rng.integers(0, 2 * n + 1)), 2))
    g = normalize_adjacency(edges, n)
    x = rng.normal(size=(n, 4))
    roles = rng.integers(0, 3, size=n).astype(np.uint8)
    roles[0] = NodeRole.TRAIN_POSITIVE
    roles[1] = NodeRole.TRAIN_NEGATIVE
    nodes = NodeSet(dims=(1, 1, n), indices=np.arange(n), roles=roles)
    cfg = TrainConfig(weight_decay=float(rng.uniform(0.0, 1e-3)),
                      hidden=int(rng.integers(1, max_h + 1)), seed=seed)
    model = init_model(cfg.hidden, seed + 1)
    return model, g, x, nodes, cfg


def labeled_pair_nodes():
    roles = np.array([NodeRole.TRAIN_POSITIVE, NodeRole.TRAIN_NEGATIVE], dtype=np.uint8)
    return NodeSet(dims=(1, 1, 2), indices=np.arange(2), roles=roles)


class TestInitModel:
    def test_deterministic(self):
        a = init_model(16, seed=7)
        b = init_model(16, seed=7)
        assert np.array_equal(a.w0, b.w0) and np.array_equal(a.w1, b.w1)

    def test_shapes(self):
        m = init_model(16, seed=0)
        assert m.w0.shape == (4, 16)
        assert m.w1.shape == (16, 1)

    def test_glorot_bounds(self):
        m = init_model(16, seed=3)
        assert np.abs(m.w0).max() <= math.sqrt(6.0 / 20.0)
        assert np.abs(m.w1).max() <= math.sqrt(6.0 / 17.0)


class TestForward:
    def test_zero_weights_give_half(self):
        model = GcnModel(w0=np.zeros((4, 3)), w1=np.zeros((3, 1)))
        g = normalize_adjacency(np.array([[0, 1]]), 2)
        pred, _ = gcn_forward(model, g, np.ones((2, 4)))
        assert pred.tolist() == [0.5, 0.5]

    def test_single_node_matches_scalar_chain(self):
        rng = np.random.default_rng(11)
        w0 = rng.normal(size=(4, 3))
        w1 = rng.normal(size=(3, 1))
        x = rng.normal(size=(1, 4))
        g = normalize_adjacency(np.empty((0, 2), dtype=np.int64), 1)
        pred, _ = gcn_forward(GcnModel(w0, w1), g, x)
        # independent scalar evaluation of sigmoid(w1 . relu(W0^T x))
        hidden = [max(0.0, sum(x[0][k] * w0[k][j] for k in range(4))) for j in range(3)]
        logit = sum(hidden[j] * w1[j][0] for j in range(3))
        expected = 1.0 / (1.0 + math.exp(-logit))
        assert pred[0] == pytest.approx(expected, abs=1e-12)

    def test_predictions_strictly_inside_unit_interval(self):
        model, g, x, _, _ = random_fixture(4)
        pred, _ = gcn_forward(model, g, x)
        assert np.all(pred > 0.0) and np.all(pred < 1.0)

    def test_shape_mismatch_raises(self):
        model = init_model(4, seed=0)
        g = normalize_adjacency(np.array([[0, 1]]), 2)
        with pytest.raises(ValueError, match="shape"):
            gcn_forward(model, g, np.ones((3, 4)))


class TestBceLoss:
    def test_uniform_half_is_ln2(self):
        loss = bce_loss(np.array([0.5, 0.5]), labeled_pair_nodes())
        assert loss == pytest.approx(math.log(2.0), abs=1e-15)

    def test_perfect_predictions_approach_zero(self):
        loss = bce_loss(np.array([1.0 - 1e-12, 1e-12]), labeled_pair_nodes())
        assert loss < 1e-10

    def test_two_node_oracle_value(self):
        loss = bce_loss(np.array([0.8, 0.3]), labeled_pair_nodes())
        assert loss == pytest.approx(BCE_TWO_NODE, abs=1e-12)

    def test_test_nodes_do_not_contribute(self):
        roles = np.array([1, 0, NodeRole.TEST], dtype=np.uint8)
        nodes = NodeSet(dims=(1, 1, 3), indices=np.arange(3), roles=roles)
        with_test = bce_loss(np.array([0.8, 0.3, 0.999]), nodes)
        assert with_test == pytest.approx(BCE_TWO_NODE, abs=1e-12)

    def test_no_labeled_nodes_raises(self):
        roles = np.array([NodeRole.TEST], dtype=np.uint8)
        nodes = NodeSet(dims=(1, 1, 1), indices=np.array([0]), roles=roles)
        with pytest.raises(ValueError, match="labeled"):
            bce_loss(np.array([0.5]), nodes)

    def test_pos_weight_scales_positive_term(self):
        loss = bce_loss(np.array([0.8, 0.3]), labeled_pair_nodes(), pos_weight=2.0)
        expected = (2.0 * -math.log(0.8) + -math.log(0.7)) / 2.0
        assert loss == pytest.approx(expected, abs=1e-12)


class TestGradients:
    def test_matches_finite_differences(self):
        worst = 0.0
        for seed in range(12):
            model, g, x, nodes, cfg = random_fixture(seed)
            dw0, dw1, _ = gcn_gradients(model, g, x, nodes, cfg)
            n0, n1 = finite_difference_grads(model, g, x, nodes, cfg)
            for analytic, numeric in ((dw0, n0), (dw1, n1)):
                rel = np.abs(analytic - numeric) / np.maximum(
                    np.abs(analytic) + np.abs(numeric), 1e-8)
                worst = max(worst, float(rel.max()))
        assert worst < 1e-5

    def test_saturated_correct_predictions_leave_only_decay(self):
        # strong weights drive the labeled predictions to the right side
        g = normalize_adjacency(np.empty((0, 2), dtype=np.int64), 2)
        x = np.array([[40.0, 0, 0, 0], [-40.0, 0, 0, 0]])
        w0 = np.zeros((4, 2)); w0[0, 0] = 1.0
        w1 = np.array([[40.0], [0.0]])
        model = GcnModel(w0, w1)
        cfg = TrainConfig(weight_decay=0.0)
        dw0, dw1, _ = gcn_gradients(model, g, x, labeled_pair_nodes(), cfg)
        assert np.abs(dw0).max() < 1e-8
        assert np.abs(dw1).max() < 1e-8

    def test_zero_features_reduce_dw1_to_decay_term(self):
        model, g, _, nodes, _ = random_fixture(3)
        x = np.zeros((g.n, 4))
        cfg = TrainConfig(weight_decay=5e-4, hidden=model.hidden)
        dw0, dw1, _ = gcn_gradients(model, g, x, nodes, cfg)
        assert np.allclose(dw1, 2 * cfg.weight_decay * model.w1, rtol=0, atol=0)
        n0, n1 = finite_difference_grads(model, g, x, nodes, cfg)
        assert np.abs(dw1 - n1).max() < 1e-9
        assert np.abs(dw0 - n0).max() < 1e-9

    def test_loss_value_consistent_with_bce(self):
        model, g, x, nodes, cfg = random_fixture(8)
        _, _, loss = gcn_gradients(model, g, x, nodes, cfg)
        pred, _ = gcn_forward(model, g, x)
        expected = bce_loss(pred, nodes, cfg.pos_weight) + cfg.weight_decay * (
            np.sum(model.w0**2) + np.sum(model.w1**2))
        assert loss == pytest.approx(expected, abs=1e-9)


class TestTrainGcn:
    def test_two_community_learning(self):
        g, x, nodes, community = two_community_fixture(0)
        model, report = train_gcn(g, x, nodes, TrainConfig(seed=0))
        pred, _ = gcn_forward(model, g, x)
        want = (community == 0)
        correct = (pred >= 0.5) == want
        test_mask = nodes.roles == NodeRole.TEST
        assert correct[~test_mask].mean() == 1.0
        assert correct[test_mask].mean() >= 0.95
        assert report.final_loss <= report.losses[0]

    def test_zero_epochs_rejected(self):
        with pytest.raises(ValueError, match="epochs"):
            TrainConfig(max_epochs=0)

    def test_missing_class_raises(self):
        roles = np.array([NodeRole.TRAIN_POSITIVE, NodeRole.TEST], dtype=np.uint8)
        nodes = NodeSet(dims=(1, 1, 2), indices=np.arange(2), roles=roles)
        g = normalize_adjacency(np.array([[0, 1]]), 2)
        with pytest.raises(ValueError, match="negative"):
            train_gcn(g, np.zeros((2, 4)), nodes, TrainConfig())

    def test_deterministic_weights(self):
        g, x, nodes, _ = two_community_fixture(2)
        cfg = TrainConfig(seed=5, max_epochs=30)
        m1, r1 = train_gcn(g, x, nodes, cfg)
        m2, r2 = train_gcn(g, x, nodes, cfg)
        assert np.array_equal(m1.w0, m2.w0)
        assert np.array_equal(m1.w1, m2.w1)
        assert r1.losses == r2.losses

    def test_early_stop_on_plateau(self):
        g, x, nodes, _ = two_community_fixture(1)
        cfg = TrainConfig(seed=1, max_epochs=5000, patience=5, min_delta=0.5)
        _, report = train_gcn(g, x, nodes, cfg)
        assert report.stop_reason == "early_stop"
        assert report.epochs_run < 5000
        assert report.epochs_run == len(report.losses)


class TestRefineSegmentation:
    def _mask(self, data):
        return Volume3(np.asarray(data, dtype=np.uint8), (1.0, 1.0, 1.0))

    def test_no_test_nodes_is_identity(self):
        e_b = self._mask([[[1, 0, 1]]])
        roles = np.array([1, 0], dtype=np.uint8)
        nodes = NodeSet(dims=(1, 1, 3), indices=np.array([0, 2]), roles=roles)
        out = refine_segmentation(e_b, nodes, np.array([0.9, 0.1]))
        assert np.array_equal(out.data, e_b.data)

    def test_low_predictions_remove_test_voxels(self):
        e_b = self._mask([[[1, 1, 0]]])
        roles = np.array([NodeRole.TRAIN_POSITIVE, NodeRole.TEST], dtype=np.uint8)
        nodes = NodeSet(dims=(1, 1, 3), indices=np.array([0, 1]), roles=roles)
        out = refine_segmentation(e_b, nodes, np.array([0.9, 0.0]))
        assert out.data.ravel().tolist() == [1, 0, 0]

    def test_tie_at_tau_rounds_up(self):
        e_b = self._mask([[[0]]])
        roles = np.array([NodeRole.TEST], dtype=np.uint8)
        nodes = NodeSet(dims=(1, 1, 1), indices=np.array([0]), roles=roles)
        out = refine_segmentation(e_b, nodes, np.array([0.5]), tau=0.5)
        assert out.data.ravel().tolist() == [1]

    def test_changes_only_test_voxels(self):
        rng = np.random.default_rng(9)
        data = (rng.random((4, 4, 4)) > 0.5).astype(np.uint8)
        e_b = self._mask(data)
        idx = np.sort(rng.choice(64, size=20, replace=False))
        roles = rng.integers(0, 3, size=20).astype(np.uint8)
        nodes = NodeSet(dims=(4, 4, 4), indices=idx, roles=roles)
        out = refine_segmentation(e_b, nodes, rng.random(20))
        test_lin = set(idx[roles == NodeRole.TEST].tolist())
        diff = np.flatnonzero(out.data.ravel() != e_b.data.ravel())
        assert set(diff.tolist()) <= test_lin
