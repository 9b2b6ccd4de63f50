import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxelgraph.metrics import (
    UndefinedMetricError,
    assd,
    compute_report,
    dice,
    hd95,
    surface_distances,
)
from voxelgraph.volume import Volume3

from oracles import brute_force_surface_metrics


def mask_of(data, spacing=(1.0, 1.0, 1.0)):
    return Volume3(np.asarray(data, dtype=np.uint8), spacing)


def random_mask_pair(seed, max_dim=16, density=0.7):
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in rng.integers(3, max_dim + 1, size=3))
    a = (rng.random(dims) > density).astype(np.uint8)
    b = (rng.random(dims) > density).astype(np.uint8)
    spacing = tuple(float(s) for s in rng.uniform(0.5, 4.0, size=3))
    return mask_of(a, spacing), mask_of(b, spacing)


class TestDice:
    def test_identical_nonempty(self):
        m = mask_of([[[1, 0, 1]]])
        assert dice(m, m) == 1.0

    def test_disjoint(self):
        a = mask_of([[[1, 0]]])
        b = mask_of([[[0, 1]]])
        assert dice(a, b) == 0.0

    def test_partial_overlap(self):
        a = mask_of([[[1, 1, 0]]])
        b = mask_of([[[1, 0, 0]]])
        assert dice(a, b) == pytest.approx(2.0 / 3.0)

    def test_both_empty_is_one(self):
        m = mask_of(np.zeros((2, 2, 2)))
        assert dice(m, m) == 1.0

    def test_one_empty_is_zero(self):
        assert dice(mask_of(np.zeros((2, 2, 2))), mask_of(np.ones((2, 2, 2)))) == 0.0

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="dims"):
            dice(mask_of(np.zeros((2, 2, 2))), mask_of(np.zeros((2, 2, 3))))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_symmetric_and_in_range(self, seed):
        a, b = random_mask_pair(seed, max_dim=8)
        assert dice(a, b) == dice(b, a)
        assert 0.0 <= dice(a, b) <= 1.0


def single_voxel_pair(offset=3, spacing=(1.0, 1.0, 1.0)):
    a = np.zeros((7, 7, 7))
    b = np.zeros((7, 7, 7))
    a[1, 3, 3] = 1
    b[1 + offset, 3, 3] = 1
    return mask_of(a, spacing), mask_of(b, spacing)


class TestSurfaceDistances:
    def test_equal_masks_all_zero(self):
        m = mask_of(np.pad(np.ones((2, 2, 2)), 1))
        d_ab, d_ba = surface_distances(m, m)
        assert not d_ab.any() and not d_ba.any()

    def test_three_voxels_apart_on_z(self):
        a, b = single_voxel_pair()
        d_ab, d_ba = surface_distances(a, b)
        assert d_ab.tolist() == [3.0]
        assert d_ba.tolist() == [3.0]

    def test_anisotropic_spacing_scales_z(self):
        a, b = single_voxel_pair(spacing=(2.0, 1.0, 1.0))
        d_ab, d_ba = surface_distances(a, b)
        assert d_ab.tolist() == [6.0]

    def test_empty_mask_is_undefined(self):
        with pytest.raises(UndefinedMetricError):
            surface_distances(mask_of(np.zeros((3, 3, 3))), mask_of(np.ones((3, 3, 3))))


class TestHd95Assd:
    def test_identical_masks_zero(self):
        m = mask_of(np.pad(np.ones((2, 3, 2)), 1))
        assert hd95(m, m) == 0.0
        assert assd(m, m) == 0.0

    def test_single_voxels_d_apart(self):
        a, b = single_voxel_pair()
        assert hd95(a, b) == 3.0
        assert assd(a, b) == 3.0

    def test_matches_brute_force_oracle(self):
        checked = 0
        for seed in range(40):
            a, b = random_mask_pair(seed)
            if not a.data.any() or not b.data.any():
                continue
            hd_o, assd_o = brute_force_surface_metrics(
                a.data, b.data, np.array(a.spacing))
            assert hd95(a, b) == pytest.approx(hd_o, abs=1e-12)
            assert assd(a, b) == pytest.approx(assd_o, abs=1e-12)
            checked += 1
        assert checked >= 30

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_symmetry(self, seed):
        a, b = random_mask_pair(seed, max_dim=8)
        if not a.data.any() or not b.data.any():
            return
        assert hd95(a, b) == hd95(b, a)
        assert assd(a, b) == assd(b, a)

    def test_spacing_doubling_doubles_distances_exactly(self):
        a, b = random_mask_pair(7)
        if not (a.data.any() and b.data.any()):
            pytest.skip("empty draw")
        sp = np.array(a.spacing)
        assert hd95(a, b, 2 * sp) == 2 * hd95(a, b, sp)
        assert assd(a, b, 2 * sp) == 2 * assd(a, b, sp)
        assert dice(a, b) == dice(a, b)

    def test_random_spacing_scales_to_tolerance(self):
        a, b = random_mask_pair(11)
        sp = np.array(a.spacing)
        s = 1.7
        assert hd95(a, b, s * sp) == pytest.approx(s * hd95(a, b, sp), rel=1e-12)
        assert assd(a, b, s * sp) == pytest.approx(s * assd(a, b, sp), rel=1e-12)


class TestComputeReport:
    def test_equal_masks(self):
        m = mask_of(np.pad(np.ones((2, 2, 2)), 1), (2.0, 1.0, 1.5))
        report = compute_report(m, m)
        assert report.dice == 1.0
        assert report.hd95 == 0.0
        assert report.assd == 0.0
        assert report.n_surface_pred == 8
        assert report.spacing == (2.0, 1.0, 1.5)

    def test_empty_pred_yields_null_distances(self):
        report = compute_report(mask_of(np.zeros((3, 3, 3))), mask_of(np.ones((3, 3, 3))))
        assert report.dice == 0.0
        assert report.hd95 is None
        assert report.assd is None
        payload = report.to_dict()
        assert payload["hd95"] is None and payload["assd"] is None

    def test_spacing_mismatch_requires_override(self):
        a = mask_of(np.ones((2, 2, 2)), (1.0, 1.0, 1.0))
        b = mask_of(np.ones((2, 2, 2)), (2.0, 1.0, 1.0))
        with pytest.raises(ValueError, match="spacing"):
            compute_report(a, b)
        report = compute_report(a, b, (1.0, 1.0, 1.0))
        assert report.dice == 1.0
