"""Keypoint extraction: 10 landmark locations plus 2x2 local motion jacobians.

The detector runs a UNet trunk on a 64x64 RGB frame, then two 7x7
convolutional heads: one produces a per-keypoint logit map whose spatial
softmax gives a probability map (location = probability-weighted average of
the normalized coordinate grid), the other produces 4 values per keypoint per
pixel that are aggregated into a 2x2 jacobian with the same probability map.
"""

from dataclasses import dataclass

import numpy as np

from . import ShapeMismatch
from .tensor import conv2d, identity_grid, softmax_spatial
from .unet import build_unet, unet_param_specs
from .weights import ParamSpec

NUM_KEYPOINTS = 10
HEAD_KERNEL = 7


@dataclass
class KeypointSet:
    """10 (x, y) locations in normalized [-1,1] coords and 10 2x2 jacobians."""

    locations: np.ndarray  # (10, 2) float32
    jacobians: np.ndarray  # (10, 2, 2) float32

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=np.float32)
        self.jacobians = np.asarray(self.jacobians, dtype=np.float32)
        if self.locations.shape != (NUM_KEYPOINTS, 2):
            raise ShapeMismatch(f"locations must be (10, 2), got {self.locations.shape}")
        if self.jacobians.shape != (NUM_KEYPOINTS, 2, 2):
            raise ShapeMismatch(f"jacobians must be (10, 2, 2), got {self.jacobians.shape}")

    @classmethod
    def identity(cls, locations):
        jac = np.broadcast_to(np.eye(2, dtype=np.float32), (NUM_KEYPOINTS, 2, 2)).copy()
        return cls(np.asarray(locations, dtype=np.float32), jac)


def detector_param_specs(prefix="kp", in_channels=3):
    trunk_out = 64
    k2 = HEAD_KERNEL * HEAD_KERNEL
    return unet_param_specs(f"{prefix}.unet", in_channels) + [
        ParamSpec(f"{prefix}.loc.weight", (NUM_KEYPOINTS, trunk_out, HEAD_KERNEL, HEAD_KERNEL),
                  "uniform", trunk_out * k2),
        ParamSpec(f"{prefix}.loc.bias", (NUM_KEYPOINTS,), "uniform", trunk_out * k2),
        ParamSpec(f"{prefix}.jac.weight", (4 * NUM_KEYPOINTS, trunk_out, HEAD_KERNEL, HEAD_KERNEL),
                  "uniform", trunk_out * k2),
        ParamSpec(f"{prefix}.jac.bias", (4 * NUM_KEYPOINTS,), "uniform", trunk_out * k2),
    ]


class KeypointDetector:
    """UNet trunk plus location/jacobian heads; pure and reusable across frames."""

    def __init__(self, trunk, loc_weight, loc_bias, jac_weight, jac_bias):
        self.trunk = trunk
        self.loc_weight = loc_weight
        self.loc_bias = loc_bias
        self.jac_weight = jac_weight
        self.jac_bias = jac_bias

    @classmethod
    def from_store(cls, store, prefix="kp", in_channels=3):
        trunk = build_unet(store, f"{prefix}.unet", in_channels)
        t = trunk.out_channels
        return cls(
            trunk,
            store.get(f"{prefix}.loc.weight", (NUM_KEYPOINTS, t, HEAD_KERNEL, HEAD_KERNEL)),
            store.get(f"{prefix}.loc.bias", (NUM_KEYPOINTS,)),
            store.get(f"{prefix}.jac.weight", (4 * NUM_KEYPOINTS, t, HEAD_KERNEL, HEAD_KERNEL)),
            store.get(f"{prefix}.jac.bias", (4 * NUM_KEYPOINTS,)),
        )

    def detect(self, frame):
        """Extract a KeypointSet from a (3, S, S) frame in [0, 1]."""
        if frame.ndim != 3 or frame.shape[0] != self.trunk.in_channels:
            raise ShapeMismatch(
                f"detector expects ({self.trunk.in_channels}, S, S) input, got {frame.shape}")
        features = self.trunk(frame)
        logits = conv2d(features, self.loc_weight, self.loc_bias)
        jac_maps = conv2d(features, self.jac_weight, self.jac_bias)
        return keypoints_from_maps(logits, jac_maps)


def keypoints_from_maps(logits, jac_maps):
    """Reduce per-keypoint logit and jacobian maps to a KeypointSet.

    Locations are convex combinations of grid coordinates, so they always lie
    inside [-1, 1]^2 for any finite logits.
    """
    if logits.shape[0] != NUM_KEYPOINTS:
        raise ShapeMismatch(f"expected {NUM_KEYPOINTS} logit channels, got {logits.shape[0]}")
    if jac_maps.shape[0] != 4 * NUM_KEYPOINTS:
        raise ShapeMismatch(f"expected {4 * NUM_KEYPOINTS} jacobian channels, got {jac_maps.shape[0]}")
    h, w = logits.shape[1:]
    prob = softmax_spatial(logits)  # (10, h, w), each channel sums to 1
    grid = identity_grid(h, w)  # (h, w, 2)
    locations = np.einsum("khw,hwc->kc", prob, grid).astype(np.float32)
    jac = np.einsum("khw,kjhw->kj", prob, jac_maps.reshape(NUM_KEYPOINTS, 4, h, w))
    return KeypointSet(locations, jac.reshape(NUM_KEYPOINTS, 2, 2).astype(np.float32))
