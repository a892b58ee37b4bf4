import numpy as np
import pytest

from vcsr import MissingParameter, ShapeMismatch
from vcsr.keypoints import (NUM_KEYPOINTS, KeypointDetector, KeypointSet,
                            detector_param_specs, keypoints_from_maps)
from vcsr.weights import random_init


def spike_logits(h, w, at, keypoint=0):
    logits = np.zeros((NUM_KEYPOINTS, h, w), np.float32)
    logits[keypoint, at[0], at[1]] = 1e4
    return logits


class TestLocationExtraction:
    def test_center_spike_maps_to_origin(self):
        # 64 is even, so the "center" is the average of the four middle texels
        logits = np.zeros((NUM_KEYPOINTS, 64, 64), np.float32)
        for at in ((31, 31), (31, 32), (32, 31), (32, 32)):
            logits[0, at[0], at[1]] = 1e4
        jac = np.zeros((4 * NUM_KEYPOINTS, 64, 64), np.float32)
        kp = keypoints_from_maps(logits, jac)
        np.testing.assert_allclose(kp.locations[0], [0.0, 0.0], atol=1e-3)

    def test_uniform_logits_centroid(self):
        logits = np.zeros((NUM_KEYPOINTS, 64, 64), np.float32)
        jac = np.zeros((4 * NUM_KEYPOINTS, 64, 64), np.float32)
        kp = keypoints_from_maps(logits, jac)
        np.testing.assert_allclose(kp.locations, 0.0, atol=1e-5)

    def test_top_left_spike_closed_form(self):
        kp = keypoints_from_maps(spike_logits(64, 64, (0, 0)),
                                 np.zeros((4 * NUM_KEYPOINTS, 64, 64), np.float32))
        expected = 2.0 * 0.5 / 64.0 - 1.0  # half-texel offset from the corner
        np.testing.assert_allclose(kp.locations[0], [expected, expected], atol=1e-6)

    def test_locations_bounded_for_any_logits(self, rng):
        for _ in range(25):
            logits = (50 * rng.standard_normal((NUM_KEYPOINTS, 16, 16))).astype(np.float32)
            jac = rng.standard_normal((4 * NUM_KEYPOINTS, 16, 16)).astype(np.float32)
            kp = keypoints_from_maps(logits, jac)
            assert (np.abs(kp.locations) <= 1.0).all()

    def test_jacobian_aggregation_uniform_weights(self, rng):
        logits = np.zeros((NUM_KEYPOINTS, 8, 8), np.float32)
        jac = rng.standard_normal((4 * NUM_KEYPOINTS, 8, 8)).astype(np.float32)
        kp = keypoints_from_maps(logits, jac)
        want = jac.reshape(NUM_KEYPOINTS, 4, 64).mean(axis=2).reshape(NUM_KEYPOINTS, 2, 2)
        np.testing.assert_allclose(kp.jacobians, want, atol=1e-5)


class TestDetector:
    def test_builds_from_random_store(self, detector256):
        assert detector256.trunk.in_channels == 3

    def test_detect_shapes_and_determinism(self, detector256, rng):
        frame = rng.random((3, 64, 64), dtype=np.float32)
        a = detector256.detect(frame)
        b = detector256.detect(frame)
        assert a.locations.shape == (NUM_KEYPOINTS, 2)
        assert a.jacobians.shape == (NUM_KEYPOINTS, 2, 2)
        np.testing.assert_array_equal(a.locations, b.locations)
        np.testing.assert_array_equal(a.jacobians, b.jacobians)
        assert (np.abs(a.locations) <= 1.0).all()

    def test_wrong_input_rejected(self, detector256):
        with pytest.raises(ShapeMismatch):
            detector256.detect(np.zeros((1, 64, 64), np.float32))

    def test_missing_bias_named(self):
        store = random_init(detector_param_specs(), 0)
        del store.entries["kp.unet.enc3.conv.bias"]
        with pytest.raises(MissingParameter, match="kp.unet.enc3.conv.bias"):
            KeypointDetector.from_store(store)

    def test_trunk_output_spatial_dims_match_input(self, detector256, rng):
        frame = rng.random((3, 64, 64), dtype=np.float32)
        features = detector256.trunk(frame)
        assert features.shape == (64, 64, 64)


class TestKeypointSet:
    def test_validates_shapes(self):
        with pytest.raises(ShapeMismatch):
            KeypointSet(np.zeros((5, 2), np.float32), np.zeros((5, 2, 2), np.float32))

    def test_identity_constructor(self):
        kp = KeypointSet.identity(np.zeros((NUM_KEYPOINTS, 2), np.float32))
        np.testing.assert_array_equal(kp.jacobians[3], np.eye(2))
