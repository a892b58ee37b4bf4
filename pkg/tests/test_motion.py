import numpy as np
import pytest

from vcsr import ShapeMismatch
from vcsr.keypoints import NUM_KEYPOINTS, KeypointSet
from vcsr.motion import (MOTION_SIZE, N_MAPS, SIGMA2, UNET_INPUT_CHANNELS,
                         MotionEstimator, deformed_references, estimator_param_specs,
                         gaussian_heatmaps, sparse_motion)
from vcsr.tensor import identity_grid
from vcsr.weights import random_init


def kp_at(locations, jacobians=None):
    locs = np.zeros((NUM_KEYPOINTS, 2), np.float32)
    if len(locations):
        locs[: len(locations)] = locations
    if jacobians is None:
        return KeypointSet.identity(locs)
    jac = np.broadcast_to(np.eye(2, dtype=np.float32), (NUM_KEYPOINTS, 2, 2)).copy()
    jac[: len(jacobians)] = jacobians
    return KeypointSet(locs, jac)


@pytest.fixture(scope="module")
def estimator():
    return MotionEstimator.from_store(random_init(estimator_param_specs(), 42))


class TestHeatmaps:
    def test_identical_keypoints_zero_difference(self, rng):
        kp = kp_at(rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32))
        heat = gaussian_heatmaps(kp, kp)
        np.testing.assert_array_equal(heat, np.zeros_like(heat))

    def test_background_channel_zero(self, rng):
        a = kp_at(rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32))
        b = kp_at(rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32))
        heat = gaussian_heatmaps(a, b)
        assert heat.shape == (N_MAPS, MOTION_SIZE, MOTION_SIZE)
        np.testing.assert_array_equal(heat[NUM_KEYPOINTS], 0.0)

    def test_center_keypoint_peaks_at_center(self):
        ref = kp_at([(-0.9, -0.9)])
        tgt = kp_at([(0.0, 0.0)])
        heat = gaussian_heatmaps(ref, tgt)
        peak = np.unravel_index(np.argmax(heat[0]), heat[0].shape)
        assert peak in {(31, 31), (31, 32), (32, 31), (32, 32)}

    def test_matches_scalar_formula(self):
        ref = kp_at([(0.25, -0.5)])
        tgt = kp_at([(-0.125, 0.375)])
        heat = gaussian_heatmaps(ref, tgt)
        grid = identity_grid(MOTION_SIZE, MOTION_SIZE)
        for (i, j) in ((0, 0), (17, 40), (63, 63)):
            z = grid[i, j]
            want = (np.exp(-((z[0] + 0.125) ** 2 + (z[1] - 0.375) ** 2) / (2 * SIGMA2))
                    - np.exp(-((z[0] - 0.25) ** 2 + (z[1] + 0.5) ** 2) / (2 * SIGMA2)))
            np.testing.assert_allclose(heat[0, i, j], want, atol=1e-6)

    def test_rejects_bad_sigma(self):
        kp = kp_at([])
        with pytest.raises(ShapeMismatch):
            gaussian_heatmaps(kp, kp, sigma2=0.0)


class TestSparseMotion:
    def test_identical_identity_jacobians_gives_identity_maps(self, rng):
        kp = kp_at(rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32))
        maps, degenerate = sparse_motion(kp, kp)
        assert degenerate == 0
        grid = identity_grid(MOTION_SIZE, MOTION_SIZE)
        np.testing.assert_allclose(maps, np.broadcast_to(grid, maps.shape), atol=1e-6)

    def test_pure_translation(self):
        ref = kp_at([(0.2, 0.0)])
        tgt = kp_at([(0.0, 0.0)])
        maps, _ = sparse_motion(ref, tgt)
        grid = identity_grid(MOTION_SIZE, MOTION_SIZE)
        np.testing.assert_allclose(maps[0, ..., 0], grid[..., 0] + 0.2, atol=1e-6)
        np.testing.assert_allclose(maps[0, ..., 1], grid[..., 1], atol=1e-6)

    def test_jacobian_scaling(self):
        ref = kp_at([(0.0, 0.0)], [2.0 * np.eye(2, dtype=np.float32)])
        tgt = kp_at([(0.0, 0.0)])
        maps, _ = sparse_motion(ref, tgt)
        grid = identity_grid(MOTION_SIZE, MOTION_SIZE)
        np.testing.assert_allclose(maps[0], 2.0 * grid, atol=1e-5)

    def test_singular_target_jacobian_flagged(self):
        tgt = kp_at([(0.0, 0.0)], [np.zeros((2, 2), np.float32)])
        ref = kp_at([(0.0, 0.0)])
        maps, degenerate = sparse_motion(ref, tgt)
        assert degenerate == 1
        assert np.isfinite(maps).all()

    def test_background_map_is_identity(self, rng):
        a = kp_at(rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32))
        b = kp_at(rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32))
        maps, _ = sparse_motion(a, b)
        np.testing.assert_array_equal(maps[NUM_KEYPOINTS],
                                      identity_grid(MOTION_SIZE, MOTION_SIZE))


class TestDeformedReferences:
    def test_identity_motion_reproduces_reference(self, rng):
        ref = rng.random((3, 64, 64), dtype=np.float32)
        kp = kp_at(rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32))
        maps, _ = sparse_motion(kp, kp)
        out = deformed_references(ref, maps)
        assert out.shape == (3 * N_MAPS, 64, 64)
        for k in range(N_MAPS):
            np.testing.assert_allclose(out[3 * k:3 * k + 3], ref, atol=1e-5)

    def test_constant_reference_stays_constant(self, rng):
        ref = np.full((3, 64, 64), 0.75, np.float32)
        a = kp_at(rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32))
        b = kp_at(rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32))
        maps, _ = sparse_motion(a, b)
        np.testing.assert_allclose(deformed_references(ref, maps), 0.75, atol=1e-6)

    def test_translation_matches_shift_oracle(self, rng):
        ref = rng.random((3, 64, 64), dtype=np.float32)
        shift = kp_at([(2.0 / 64.0, 0.0)])  # one texel right
        origin = kp_at([(0.0, 0.0)])
        maps, _ = sparse_motion(shift, origin)
        out = deformed_references(ref, maps)[:3]
        want = np.concatenate([ref[:, :, 1:], ref[:, :, -1:]], axis=2)
        np.testing.assert_allclose(out, want, atol=1e-5)


class TestEstimateMotion:
    def test_input_width_is_47_channels(self, estimator, rng):
        ref = rng.random((3, 64, 64), dtype=np.float32)
        tgt = rng.random((3, 64, 64), dtype=np.float32)
        kp = kp_at(rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32))
        stacked, _, _ = estimator.assemble_input(ref, tgt, kp, kp)
        assert stacked.shape[0] == UNET_INPUT_CHANNELS == 47

    def test_masks_sum_to_one(self, estimator, rng):
        ref = rng.random((3, 64, 64), dtype=np.float32)
        tgt = rng.random((3, 64, 64), dtype=np.float32)
        a = kp_at(rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32))
        b = kp_at(rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32))
        result = estimator.estimate(ref, tgt, a, b)
        np.testing.assert_allclose(result.masks.sum(axis=0), 1.0, atol=1e-5)
        assert result.masks.shape == (3, 64, 64)

    def test_forced_background_weights_give_identity_warp(self, rng):
        store = random_init(estimator_param_specs(), 5)
        store.entries["motion.deform.weight"][:] = 0.0
        bias = np.full(N_MAPS, -1000.0, np.float32)
        bias[NUM_KEYPOINTS] = 1000.0  # one-hot on the background candidate
        store.entries["motion.deform.bias"][:] = bias
        est = MotionEstimator.from_store(store)
        ref = rng.random((3, 64, 64), dtype=np.float32)
        tgt = rng.random((3, 64, 64), dtype=np.float32)
        a = kp_at(rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32))
        b = kp_at(rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32))
        result = est.estimate(ref, tgt, a, b)
        np.testing.assert_allclose(result.warp_field, identity_grid(64, 64), atol=1e-6)

    def test_warp_field_inside_candidate_hull(self, estimator, rng):
        ref = rng.random((3, 64, 64), dtype=np.float32)
        tgt = rng.random((3, 64, 64), dtype=np.float32)
        a = kp_at(rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32))
        b = kp_at(rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32))
        stacked, maps, _ = estimator.assemble_input(ref, tgt, a, b)
        result = estimator.estimate(ref, tgt, a, b)
        lo = maps.min(axis=0) - 1e-5
        hi = maps.max(axis=0) + 1e-5
        assert (result.warp_field >= lo).all() and (result.warp_field <= hi).all()

    def test_keypoint_only_mode_forces_zero_lr_mask(self, estimator, rng):
        ref = rng.random((3, 64, 64), dtype=np.float32)
        a = kp_at(rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32))
        b = kp_at(rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32))
        result = estimator.estimate(ref, None, a, b)
        np.testing.assert_array_equal(result.masks[2], 0.0)
        np.testing.assert_allclose(result.masks.sum(axis=0), 1.0, atol=1e-5)

    def test_dimension_mismatch_rejected(self, estimator, rng):
        kp = kp_at([])
        with pytest.raises(ShapeMismatch):
            estimator.estimate(rng.random((3, 32, 32), dtype=np.float32),
                               rng.random((3, 64, 64), dtype=np.float32), kp, kp)
