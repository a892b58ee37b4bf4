"""Shared UNet trunk used by the keypoint detector and the motion estimator.

Five encoder blocks (3x3 conv, batchnorm, ReLU, 2x average pool) produce 64
features after the first block and double per block up to 1024.  Five decoder
blocks (2x bilinear upsample, 3x3 conv, batchnorm, ReLU) mirror them: each
decoder block k consumes the pre-pool activation of encoder block 6-k as a
skip, halving feature width back down and ending with 64 features at the
input resolution.  Input spatial dims must be divisible by 32.
"""

from dataclasses import dataclass

import numpy as np

from . import ShapeMismatch
from .tensor import avgpool2, batchnorm_infer, conv2d, relu, upsample2
from .weights import ParamSpec

DEPTH = 5
BASE_FEATURES = 64

ENC_WIDTHS = tuple(BASE_FEATURES * 2 ** k for k in range(DEPTH))  # 64..1024
DEC_WIDTHS = (512, 256, 128, 64, 64)


@dataclass
class ConvBn:
    weight: np.ndarray
    bias: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_mean: np.ndarray
    bn_var: np.ndarray

    def __call__(self, x):
        return relu(batchnorm_infer(conv2d(x, self.weight, self.bias),
                                    self.bn_mean, self.bn_var, self.bn_gamma, self.bn_beta))


def _conv_bn_specs(prefix, in_ch, out_ch, k=3):
    return [
        ParamSpec(f"{prefix}.conv.weight", (out_ch, in_ch, k, k), "uniform", in_ch * k * k),
        ParamSpec(f"{prefix}.conv.bias", (out_ch,), "uniform", in_ch * k * k),
        ParamSpec(f"{prefix}.bn.gamma", (out_ch,), "ones"),
        ParamSpec(f"{prefix}.bn.beta", (out_ch,), "zeros"),
        ParamSpec(f"{prefix}.bn.mean", (out_ch,), "zeros"),
        ParamSpec(f"{prefix}.bn.var", (out_ch,), "ones"),
    ]


def _load_conv_bn(store, prefix, in_ch, out_ch, k=3):
    return ConvBn(
        weight=store.get(f"{prefix}.conv.weight", (out_ch, in_ch, k, k)),
        bias=store.get(f"{prefix}.conv.bias", (out_ch,)),
        bn_gamma=store.get(f"{prefix}.bn.gamma", (out_ch,)),
        bn_beta=store.get(f"{prefix}.bn.beta", (out_ch,)),
        bn_mean=store.get(f"{prefix}.bn.mean", (out_ch,)),
        bn_var=store.get(f"{prefix}.bn.var", (out_ch,)),
    )


def _dec_in_widths():
    # decoder input = previous decoder output (or bottleneck) + mirror skip
    prev = ENC_WIDTHS[-1]
    widths = []
    for k in range(DEPTH):
        skip = ENC_WIDTHS[DEPTH - 1 - k]
        widths.append(prev + skip)
        prev = DEC_WIDTHS[k]
    return tuple(widths)


def unet_param_specs(prefix, in_channels):
    specs = []
    c = in_channels
    for k, out_ch in enumerate(ENC_WIDTHS, start=1):
        specs += _conv_bn_specs(f"{prefix}.enc{k}", c, out_ch)
        c = out_ch
    for k, (in_ch, out_ch) in enumerate(zip(_dec_in_widths(), DEC_WIDTHS), start=1):
        specs += _conv_bn_specs(f"{prefix}.dec{k}", in_ch, out_ch)
    return specs


class UNetTrunk:
    """Runnable trunk built from a weight store slice; immutable after build."""

    def __init__(self, encoders, decoders, in_channels):
        self.encoders = encoders
        self.decoders = decoders
        self.in_channels = in_channels
        self.out_channels = DEC_WIDTHS[-1]

    def __call__(self, x):
        if x.shape[0] != self.in_channels:
            raise ShapeMismatch(
                f"trunk expects {self.in_channels} input channels, got {x.shape[0]}")
        if x.shape[1] % 2 ** DEPTH or x.shape[2] % 2 ** DEPTH:
            raise ShapeMismatch(
                f"trunk input dims must be divisible by {2 ** DEPTH}, got {x.shape[1:]}")
        skips = []
        for enc in self.encoders:
            pre_pool = enc(x)
            skips.append(pre_pool)
            x = avgpool2(pre_pool)
        for k, dec in enumerate(self.decoders):
            x = upsample2(x, "bilinear")
            x = np.concatenate([x, skips[DEPTH - 1 - k]], axis=0)
            x = dec(x)
        return x


def build_unet(store, prefix, in_channels):
    """Assemble a UNetTrunk from ``<prefix>.*`` entries; errors name the culprit."""
    encoders = []
    c = in_channels
    for k, out_ch in enumerate(ENC_WIDTHS, start=1):
        encoders.append(_load_conv_bn(store, f"{prefix}.enc{k}", c, out_ch))
        c = out_ch
    decoders = []
    for k, (in_ch, out_ch) in enumerate(zip(_dec_in_widths(), DEC_WIDTHS), start=1):
        decoders.append(_load_conv_bn(store, f"{prefix}.dec{k}", in_ch, out_ch))
    return UNetTrunk(encoders, decoders, in_channels)


def unet_macs(in_channels, resolution):
    """Analytic multiply-accumulate count for one trunk pass at a resolution."""
    total = 0
    h = resolution
    c = in_channels
    for out_ch in ENC_WIDTHS:
        total += out_ch * c * 9 * h * h  # conv before the pool
        c = out_ch
        h //= 2
    for in_ch, out_ch in zip(_dec_in_widths(), DEC_WIDTHS):
        h *= 2
        total += out_ch * in_ch * 9 * h * h
    return total
