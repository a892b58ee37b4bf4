"""Frame synthesis: encode the HR reference, warp, refine, fuse, decode.

The reference encoder is a 7x7 stem to 32 features followed by
log2(R / 64) downsampling blocks, so the bottleneck is always 64x64
regardless of output resolution (256 channels at 1024).  Warped and unwarped
copies of the bottleneck are refined by five residual blocks each, fused with
single-conv LR-target features under the three occlusion masks, and decoded
back up through mirrored upsampling blocks.  The first two encoder blocks
feed skip connections (warped and visibility-scaled) into the last two
decoder blocks.
"""

import contextlib
from dataclasses import dataclass, field

import numpy as np

from . import PipelineError, ShapeMismatch
from .motion import MOTION_SIZE, MotionEstimator, estimator_param_specs
from .keypoints import detector_param_specs
from .tensor import (avgpool2, batchnorm_infer, conv2d, grid_sample, relu,
                     resize_bilinear, upsample2)
from .unet import _conv_bn_specs, _load_conv_bn, unet_macs
from .weights import ParamSpec

STEM_CHANNELS = 32
MAX_FEATURES = 256
RESIDUAL_BLOCKS = 5
SKIP_BLOCKS = 2
STEM_KERNEL = 7
LR_RESOLUTIONS = (64, 128, 256, 512)
OUTPUT_RESOLUTIONS = (256, 512, 1024)


@dataclass
class SynthesizerConfig:
    output_resolution: int

    def __post_init__(self):
        if self.output_resolution not in OUTPUT_RESOLUTIONS:
            raise ShapeMismatch(
                f"output resolution must be one of {OUTPUT_RESOLUTIONS}, "
                f"got {self.output_resolution}")

    @property
    def n_blocks(self):
        return int(np.log2(self.output_resolution // 64))

    @property
    def encoder_widths(self):
        # doubling from the stem, capped so the bottleneck stays manageable
        return tuple(min(MAX_FEATURES, STEM_CHANNELS * 2 ** (k + 1))
                     for k in range(self.n_blocks))

    @property
    def bottleneck_channels(self):
        return self.encoder_widths[-1]

    @property
    def decoder_widths(self):
        return tuple(reversed((STEM_CHANNELS,) + self.encoder_widths[:-1]))


@dataclass
class ReferenceFeatures:
    """Encoded reference, cacheable per session while the reference is unchanged."""

    bottleneck: np.ndarray
    skips: list = field(default_factory=list)  # pre-pool activations of blocks 1..2
    refined_static: np.ndarray = None  # lazily cached unwarped refinement


@dataclass
class ResidualBlock:
    bn1: tuple
    conv1: tuple
    bn2: tuple
    conv2: tuple

    def __call__(self, x):
        h = relu(batchnorm_infer(x, *self.bn1))
        h = conv2d(h, *self.conv1)
        h = relu(batchnorm_infer(h, *self.bn2))
        h = conv2d(h, *self.conv2)
        return x + h


def _residual_specs(prefix, ch):
    specs = []
    for part in ("bn1", "bn2"):
        specs += [
            ParamSpec(f"{prefix}.{part}.gamma", (ch,), "ones"),
            ParamSpec(f"{prefix}.{part}.beta", (ch,), "zeros"),
            ParamSpec(f"{prefix}.{part}.mean", (ch,), "zeros"),
            ParamSpec(f"{prefix}.{part}.var", (ch,), "ones"),
        ]
    for part in ("conv1", "conv2"):
        specs += [
            ParamSpec(f"{prefix}.{part}.weight", (ch, ch, 3, 3), "uniform", ch * 9),
            ParamSpec(f"{prefix}.{part}.bias", (ch,), "uniform", ch * 9),
        ]
    return specs


def synthesizer_param_specs(cfg, prefix="synth"):
    k2 = STEM_KERNEL * STEM_KERNEL
    specs = [
        ParamSpec(f"{prefix}.stem.weight", (STEM_CHANNELS, 3, STEM_KERNEL, STEM_KERNEL),
                  "uniform", 3 * k2),
        ParamSpec(f"{prefix}.stem.bias", (STEM_CHANNELS,), "uniform", 3 * k2),
    ]
    c = STEM_CHANNELS
    for k, out_ch in enumerate(cfg.encoder_widths, start=1):
        specs += _conv_bn_specs(f"{prefix}.enc{k}", c, out_ch)
        c = out_ch
    bott = cfg.bottleneck_channels
    for i in range(1, RESIDUAL_BLOCKS + 1):
        specs += _residual_specs(f"{prefix}.res.{i}", bott)
    specs += [
        ParamSpec(f"{prefix}.lr.weight", (bott, 3, STEM_KERNEL, STEM_KERNEL), "uniform", 3 * k2),
        ParamSpec(f"{prefix}.lr.bias", (bott,), "uniform", 3 * k2),
    ]
    for k, (in_ch, out_ch) in enumerate(_decoder_shapes(cfg), start=1):
        specs += _conv_bn_specs(f"{prefix}.dec{k}", in_ch, out_ch)
    specs += [
        ParamSpec(f"{prefix}.final.weight", (3, STEM_CHANNELS, STEM_KERNEL, STEM_KERNEL),
                  "uniform", STEM_CHANNELS * k2),
        ParamSpec(f"{prefix}.final.bias", (3,), "uniform", STEM_CHANNELS * k2),
    ]
    return specs


def model_param_specs(cfg):
    """All parameters of the full pipeline (detector, motion, synthesizer)."""
    return detector_param_specs() + estimator_param_specs() + synthesizer_param_specs(cfg)


def _decoder_shapes(cfg):
    """(in_ch, out_ch) per decoder block; the last two take encoder skips."""
    n = cfg.n_blocks
    shapes = []
    prev = cfg.bottleneck_channels
    for k in range(1, n + 1):
        in_ch = prev
        if k > n - SKIP_BLOCKS:
            skip_block = n - k + 1  # decoder block n pairs with encoder block 1
            in_ch += cfg.encoder_widths[skip_block - 1]
        out_ch = cfg.decoder_widths[k - 1]
        shapes.append((in_ch, out_ch))
        prev = out_ch
    return shapes


@contextlib.contextmanager
def _stage(name):
    try:
        yield
    except PipelineError as exc:
        raise type(exc)(f"[stage {name}] {exc}") from exc


class Synthesizer:
    """Encoder/decoder pair plus its motion estimator; pure given fixed weights."""

    def __init__(self, cfg, store, motion_estimator, prefix="synth"):
        self.cfg = cfg
        self.motion = motion_estimator
        self.stem_w = store.get(f"{prefix}.stem.weight",
                                (STEM_CHANNELS, 3, STEM_KERNEL, STEM_KERNEL))
        self.stem_b = store.get(f"{prefix}.stem.bias", (STEM_CHANNELS,))
        self.enc = []
        c = STEM_CHANNELS
        for k, out_ch in enumerate(cfg.encoder_widths, start=1):
            self.enc.append(_load_conv_bn(store, f"{prefix}.enc{k}", c, out_ch))
            c = out_ch
        bott = cfg.bottleneck_channels
        # one shared refinement stack: identical pathway inputs must refine
        # identically (the identity-warp property), so the branches share weights
        self.res = []
        for i in range(1, RESIDUAL_BLOCKS + 1):
            p = f"{prefix}.res.{i}"
            self.res.append(ResidualBlock(
                bn1=tuple(store.get(f"{p}.bn1.{s}", (bott,))
                          for s in ("mean", "var", "gamma", "beta")),
                conv1=(store.get(f"{p}.conv1.weight", (bott, bott, 3, 3)),
                       store.get(f"{p}.conv1.bias", (bott,))),
                bn2=tuple(store.get(f"{p}.bn2.{s}", (bott,))
                          for s in ("mean", "var", "gamma", "beta")),
                conv2=(store.get(f"{p}.conv2.weight", (bott, bott, 3, 3)),
                       store.get(f"{p}.conv2.bias", (bott,))),
            ))
        self.lr_w = store.get(f"{prefix}.lr.weight", (bott, 3, STEM_KERNEL, STEM_KERNEL))
        self.lr_b = store.get(f"{prefix}.lr.bias", (bott,))
        self.dec = []
        for k, (in_ch, out_ch) in enumerate(_decoder_shapes(cfg), start=1):
            self.dec.append(_load_conv_bn(store, f"{prefix}.dec{k}", in_ch, out_ch))
        self.final_w = store.get(f"{prefix}.final.weight",
                                 (3, STEM_CHANNELS, STEM_KERNEL, STEM_KERNEL))
        self.final_b = store.get(f"{prefix}.final.bias", (3,))

    @classmethod
    def from_store(cls, store, cfg):
        return cls(cfg, store, MotionEstimator.from_store(store))

    def encode_reference(self, ref_hr):
        """Stem + downsampling blocks; returns the bottleneck and skip tensors."""
        r = self.cfg.output_resolution
        if ref_hr.shape != (3, r, r):
            raise ShapeMismatch(f"reference must be (3, {r}, {r}), got {ref_hr.shape}")
        x = conv2d(ref_hr, self.stem_w, self.stem_b)
        skips = []
        for block in self.enc:
            pre_pool = block(x)
            if len(skips) < SKIP_BLOCKS:
                skips.append(pre_pool)
            x = avgpool2(pre_pool)
        return ReferenceFeatures(bottleneck=x, skips=skips)

    def lr_features(self, tgt_lr):
        """Single 7x7 conv on the LR target, resampled to the 64x64 bottleneck grid."""
        if tgt_lr.ndim != 3 or tgt_lr.shape[0] != 3 or tgt_lr.shape[1] != tgt_lr.shape[2]:
            raise ShapeMismatch(f"LR target must be square RGB, got {tgt_lr.shape}")
        size = tgt_lr.shape[1]
        if size not in LR_RESOLUTIONS:
            raise ShapeMismatch(f"unsupported LR resolution {size}, expected {LR_RESOLUTIONS}")
        feat = conv2d(tgt_lr, self.lr_w, self.lr_b)
        if size != MOTION_SIZE:
            feat = resize_bilinear(feat, MOTION_SIZE, MOTION_SIZE)
        return feat

    def refine(self, features, branch):
        """Five residual blocks; shape preserved; branch is 'warped' or 'static'."""
        if branch not in ("warped", "static"):
            raise ShapeMismatch(f"unknown refinement branch {branch!r}")
        x = features
        for block in self.res:
            x = block(x)
        return x

    def decode(self, combined, skips, warp_field, hr_visibility):
        """Upsampling blocks with warped, visibility-scaled skips on the last two."""
        n = self.cfg.n_blocks
        x = combined
        warp_chw = np.ascontiguousarray(warp_field.transpose(2, 0, 1))
        for k in range(1, n + 1):
            x = upsample2(x, "bilinear")
            if k > n - SKIP_BLOCKS:
                skip = skips[n - k]  # block n uses skip 1, block n-1 uses skip 2
                s = skip.shape[1]
                warp_s = resize_bilinear(warp_chw, s, s).transpose(1, 2, 0)
                vis_s = resize_bilinear(hr_visibility[None, :, :], s, s)
                x = np.concatenate([x, grid_sample(skip, warp_s) * vis_s], axis=0)
            x = self.dec[k - 1](x)
        out = conv2d(x, self.final_w, self.final_b)
        return np.clip(out, 0.0, 1.0)

    def predict(self, ref_hr, tgt_lr, kp_ref, kp_tgt, cache=None,
                lr_pathway=True, motion_resolution=MOTION_SIZE, want_stages=False):
        """Full synthesis flow; output is (3, R, R) clamped to [0, 1].

        cache holds precomputed reference features (reused across frames while
        the reference is unchanged).  lr_pathway False is the keypoint-only
        baseline: the LR mask is forced to zero and no LR features are used.
        motion_resolution other than 64 is a cost-diagnostic mode only.
        """
        from .codec import downsample  # localized: codec is the resampling owner

        with _stage("encode_reference"):
            ref_feat = cache if cache is not None else self.encode_reference(ref_hr)
        with _stage("motion"):
            ref_m = downsample(ref_hr, motion_resolution)
            tgt_m = None
            if lr_pathway:
                tgt_m = tgt_lr
                if tgt_lr.shape[1] != motion_resolution:
                    if tgt_lr.shape[1] > motion_resolution:
                        tgt_m = downsample(tgt_lr, motion_resolution)
                    else:
                        tgt_m = resize_bilinear(tgt_lr, motion_resolution, motion_resolution)
            result = self.motion.estimate(ref_m, tgt_m, kp_ref, kp_tgt,
                                          size=motion_resolution)
            warp, masks = result.warp_field, result.masks
            if motion_resolution != MOTION_SIZE:
                warp = resize_bilinear(
                    np.ascontiguousarray(warp.transpose(2, 0, 1)),
                    MOTION_SIZE, MOTION_SIZE).transpose(1, 2, 0)
                masks = resize_bilinear(masks, MOTION_SIZE, MOTION_SIZE)
        with _stage("warp"):
            warped = grid_sample(ref_feat.bottleneck, warp)
        with _stage("refine"):
            refined_warped = self.refine(warped, "warped")
            if ref_feat.refined_static is None:
                ref_feat.refined_static = self.refine(ref_feat.bottleneck, "static")
            refined_static = ref_feat.refined_static
        with _stage("lr_features"):
            lr_feat = self.lr_features(tgt_lr) if lr_pathway else np.zeros_like(refined_warped)
        with _stage("combine"):
            combined = (masks[0] * refined_warped + masks[1] * refined_static
                        + masks[2] * lr_feat)
        with _stage("decode"):
            frame = self.decode(combined, ref_feat.skips, warp, masks[0] + masks[1])
        if want_stages:
            return frame, {
                "warp_field": warp, "masks": masks, "bottleneck": ref_feat.bottleneck,
                "warped": warped, "refined_warped": refined_warped,
                "refined_static": refined_static, "lr_features": lr_feat,
                "combined": combined,
            }
        return frame


def _conv_macs(out_ch, in_ch, k, size):
    return out_ch * in_ch * k * k * size * size


def multiscale_cost_report(cfg, lr_resolution=64, motion_resolution=MOTION_SIZE):
    """Analytic multiply-accumulate counts per pipeline stage.

    Includes the same stages evaluated with motion at the output resolution,
    the diagnostic configuration the multi-scale design avoids.
    """
    from .keypoints import HEAD_KERNEL as KP_K, NUM_KEYPOINTS
    from .motion import HEAD_KERNEL as M_K, N_MAPS, UNET_INPUT_CHANNELS

    r = cfg.output_resolution

    def motion_stage(size):
        kp = unet_macs(3, size)
        kp += _conv_macs(NUM_KEYPOINTS, 64, KP_K, size) + _conv_macs(4 * NUM_KEYPOINTS, 64, KP_K, size)
        est = unet_macs(UNET_INPUT_CHANNELS, size)
        est += _conv_macs(N_MAPS, 64, M_K, size) + 3 * _conv_macs(1, 64, M_K, size)
        return kp, est

    kp_macs, est_macs = motion_stage(motion_resolution)
    kp_full, est_full = motion_stage(r)

    enc = _conv_macs(STEM_CHANNELS, 3, STEM_KERNEL, r)
    size = r
    c = STEM_CHANNELS
    for out_ch in cfg.encoder_widths:
        enc += _conv_macs(out_ch, c, 3, size)
        c = out_ch
        size //= 2

    bott = cfg.bottleneck_channels
    refinement = 2 * RESIDUAL_BLOCKS * 2 * _conv_macs(bott, bott, 3, MOTION_SIZE)
    lr_stem = _conv_macs(bott, 3, STEM_KERNEL, lr_resolution)

    dec = 0
    size = MOTION_SIZE
    for in_ch, out_ch in _decoder_shapes(cfg):
        size *= 2
        dec += _conv_macs(out_ch, in_ch, 3, size)
    dec += _conv_macs(3, STEM_CHANNELS, STEM_KERNEL, r)

    per_frame = kp_macs + est_macs + refinement + lr_stem + dec
    per_frame_full = kp_full + est_full + refinement + lr_stem + dec
    return {
        "output_resolution": r,
        "motion_resolution": motion_resolution,
        "keypoint_detector_macs": kp_macs,
        "motion_estimator_macs": est_macs,
        "reference_encoder_macs": enc,
        "refinement_macs": refinement,
        "lr_stem_macs": lr_stem,
        "decoder_macs": dec,
        "per_frame_macs": per_frame,
        "per_frame_macs_motion_at_output": per_frame_full,
        "motion_stage_ratio": (kp_full + est_full) / (kp_macs + est_macs),
        "pipeline_ratio": per_frame_full / per_frame,
    }
