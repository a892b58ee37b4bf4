"""Dense motion estimation: warping field plus three occlusion masks.

From reference/target keypoint sets the module builds per-keypoint Gaussian
difference heatmaps and first-order candidate coordinate maps (plus an
identity background map), deforms the 64x64 reference with each candidate,
and feeds heatmaps + deformed references + the low-resolution target (47
channels) through a UNet.  A channel-softmaxed 7x7 head blends the candidates
into the final warping field; three sigmoid heads, jointly channel-softmaxed,
emit masks for the warped-HR / unwarped-HR / LR pathways that sum to 1 at
every pixel.

Motion always runs at 64x64 in normal operation; the resolution argument
exists for cost diagnostics only.
"""

from dataclasses import dataclass

import numpy as np

from . import ShapeMismatch
from .keypoints import NUM_KEYPOINTS
from .tensor import conv2d, grid_sample, identity_grid, mat2_inverse, sigmoid, softmax_channels
from .unet import build_unet, unet_param_specs
from .weights import ParamSpec

MOTION_SIZE = 64
HEAD_KERNEL = 7
SIGMA2 = 0.01  # variance of the heatmap bumps, normalized coords
N_MAPS = NUM_KEYPOINTS + 1  # keypoint candidates + identity background
UNET_INPUT_CHANNELS = N_MAPS + 3 * N_MAPS + 3  # heatmaps + deformed refs + LR target


@dataclass
class MotionResult:
    warp_field: np.ndarray        # (S, S, 2) normalized target->reference coords
    masks: np.ndarray             # (3, S, S): warped-HR, unwarped-HR, LR
    degenerate_jacobians: int     # candidates that fell back to the identity


def gaussian_heatmaps(ref_kp, tgt_kp, sigma2=SIGMA2, size=MOTION_SIZE):
    """Per-keypoint target-minus-reference Gaussian bumps plus a zero background."""
    if sigma2 <= 0:
        raise ShapeMismatch(f"sigma2 must be positive, got {sigma2}")
    grid = identity_grid(size, size)
    out = np.zeros((N_MAPS, size, size), np.float32)

    def bump(p):
        d2 = (grid[..., 0] - p[0]) ** 2 + (grid[..., 1] - p[1]) ** 2
        return np.exp(-d2 / (2.0 * sigma2))

    for k in range(NUM_KEYPOINTS):
        out[k] = bump(tgt_kp.locations[k]) - bump(ref_kp.locations[k])
    return out


def sparse_motion(ref_kp, tgt_kp, size=MOTION_SIZE):
    """First-order candidate coordinate maps; background map is the identity grid.

    Candidate k maps target coords z to p_ref + (J_ref . inv(J_tgt)) (z - p_tgt).
    Singular target jacobians fall back to the identity (flagged, never fatal).
    """
    grid = identity_grid(size, size)
    maps = np.empty((N_MAPS, size, size, 2), np.float32)
    degenerate = 0
    for k in range(NUM_KEYPOINTS):
        inv, flag = mat2_inverse(tgt_kp.jacobians[k])
        degenerate += int(flag)
        m = ref_kp.jacobians[k] @ inv
        rel = grid - tgt_kp.locations[k]
        maps[k, ..., 0] = ref_kp.locations[k][0] + m[0, 0] * rel[..., 0] + m[0, 1] * rel[..., 1]
        maps[k, ..., 1] = ref_kp.locations[k][1] + m[1, 0] * rel[..., 0] + m[1, 1] * rel[..., 1]
    maps[NUM_KEYPOINTS] = grid
    return maps, degenerate


def deformed_references(ref, motion_maps):
    """Apply every candidate map to the reference; concatenate along channels."""
    if ref.shape[0] != 3:
        raise ShapeMismatch(f"reference must be RGB, got {ref.shape}")
    return np.concatenate([grid_sample(ref, motion_maps[k]) for k in range(len(motion_maps))],
                          axis=0)


def estimator_param_specs(prefix="motion"):
    trunk_out = 64
    k2 = HEAD_KERNEL * HEAD_KERNEL
    specs = unet_param_specs(f"{prefix}.unet", UNET_INPUT_CHANNELS)
    specs.append(ParamSpec(f"{prefix}.deform.weight", (N_MAPS, trunk_out, HEAD_KERNEL, HEAD_KERNEL),
                           "uniform", trunk_out * k2))
    specs.append(ParamSpec(f"{prefix}.deform.bias", (N_MAPS,), "uniform", trunk_out * k2))
    for head in ("occl_warped", "occl_static", "occl_lr"):
        specs.append(ParamSpec(f"{prefix}.{head}.weight", (1, trunk_out, HEAD_KERNEL, HEAD_KERNEL),
                               "uniform", trunk_out * k2))
        specs.append(ParamSpec(f"{prefix}.{head}.bias", (1,), "uniform", trunk_out * k2))
    return specs


class MotionEstimator:
    """UNet trunk plus deformation/occlusion heads built from a weight store."""

    def __init__(self, trunk, deform_w, deform_b, occl_w, occl_b):
        self.trunk = trunk
        self.deform_w = deform_w
        self.deform_b = deform_b
        self.occl_w = occl_w  # list of three (1, 64, 7, 7) kernels
        self.occl_b = occl_b

    @classmethod
    def from_store(cls, store, prefix="motion"):
        trunk = build_unet(store, f"{prefix}.unet", UNET_INPUT_CHANNELS)
        t = trunk.out_channels
        occl_w, occl_b = [], []
        for head in ("occl_warped", "occl_static", "occl_lr"):
            occl_w.append(store.get(f"{prefix}.{head}.weight", (1, t, HEAD_KERNEL, HEAD_KERNEL)))
            occl_b.append(store.get(f"{prefix}.{head}.bias", (1,)))
        return cls(
            trunk,
            store.get(f"{prefix}.deform.weight", (N_MAPS, t, HEAD_KERNEL, HEAD_KERNEL)),
            store.get(f"{prefix}.deform.bias", (N_MAPS,)),
            occl_w, occl_b,
        )

    def assemble_input(self, ref, target, ref_kp, tgt_kp, size=MOTION_SIZE):
        """Stack heatmaps, deformed references, and the LR target (47 channels).

        target None (keypoint-only operation, no LR stream) feeds zeros for
        the three LR channels.
        """
        if ref.shape != (3, size, size):
            raise ShapeMismatch(f"reference must be (3, {size}, {size}), got {ref.shape}")
        if target is not None and target.shape != (3, size, size):
            raise ShapeMismatch(f"target must be (3, {size}, {size}), got {target.shape}")
        heat = gaussian_heatmaps(ref_kp, tgt_kp, size=size)
        maps, degenerate = sparse_motion(ref_kp, tgt_kp, size=size)
        deformed = deformed_references(ref, maps)
        lr = np.zeros((3, size, size), np.float32) if target is None else target
        return np.concatenate([heat, deformed, lr], axis=0), maps, degenerate

    def estimate(self, ref, target, ref_kp, tgt_kp, size=MOTION_SIZE):
        """Produce the warping field and occlusion masks.

        With target None the LR mask is forced to zero and the joint softmax
        runs over the two HR heads only (the keypoint-only baseline).
        """
        stacked, maps, degenerate = self.assemble_input(ref, target, ref_kp, tgt_kp, size)
        features = self.trunk(stacked)

        deform_logits = conv2d(features, self.deform_w, self.deform_b)
        blend = softmax_channels(deform_logits)  # (11, S, S), sums to 1 per pixel
        warp = np.empty((size, size, 2), np.float32)
        warp[..., 0] = np.einsum("khw,khw->hw", blend, maps[..., 0])
        warp[..., 1] = np.einsum("khw,khw->hw", blend, maps[..., 1])

        heads = [sigmoid(conv2d(features, w, b))[0] for w, b in zip(self.occl_w, self.occl_b)]
        active = np.stack(heads[:2] if target is None else heads, axis=0)
        masks = softmax_channels(active)
        if target is None:
            masks = np.concatenate([masks, np.zeros((1, size, size), np.float32)], axis=0)
        return MotionResult(warp, masks, degenerate)
