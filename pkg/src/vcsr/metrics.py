"""Visual-quality and systems metrics plus CSV/JSON emission.

PSNR is computed over all RGB samples with MAX = 1 and capped at 100 dB.
SSIM uses the standard 11x11 Gaussian window (sigma 1.5) with the original
stability constants, evaluated on luma only, and is reported both raw and as
-10*log10(1 - SSIM) decibels (also capped at 100).
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import FormatError, ShapeMismatch

DB_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2

CSV_COLUMNS = ("frame_id", "psnr_db", "ssim", "ssim_db", "bytes_on_wire",
               "latency_ms", "resolution_id", "mode")


@dataclass
class MetricsRecord:
    frame_id: int
    psnr_db: float
    ssim: float
    ssim_db: float
    bytes_on_wire: int
    latency_ms: float
    resolution_id: int
    mode: str


def luma(frame):
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise ShapeMismatch(f"luma expects an RGB frame, got {frame.shape}")
    return 0.299 * frame[0] + 0.587 * frame[1] + 0.114 * frame[2]


def psnr(a, b):
    """10*log10(MAX^2 / MSE) over all RGB samples; identical frames cap at 100."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"psnr needs equal shapes, got {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return DB_CAP
    return min(DB_CAP, 10.0 * math.log10(1.0 / mse))


def _gauss_kernel():
    half = SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x ** 2) / (2.0 * SSIM_SIGMA ** 2))
    return k / k.sum()


_KERNEL = _gauss_kernel()


def _windowed(x):
    """Separable valid-mode Gaussian filtering with the SSIM window."""
    h, w = x.shape
    ww = w - SSIM_WINDOW + 1
    tmp = np.zeros((h, ww), np.float64)
    for k, wk in enumerate(_KERNEL):
        tmp += wk * x[:, k:k + ww]
    hh = h - SSIM_WINDOW + 1
    out = np.zeros((hh, ww), np.float64)
    for k, wk in enumerate(_KERNEL):
        out += wk * tmp[k:k + hh, :]
    return out


def ssim(a, b):
    """Mean windowed structural similarity on luma, clipped into [0, 1]."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"ssim needs equal shapes, got {a.shape} vs {b.shape}")
    if a.shape[1] < SSIM_WINDOW or a.shape[2] < SSIM_WINDOW:
        raise ShapeMismatch(f"ssim needs frames of at least {SSIM_WINDOW} pixels per side")
    x = luma(a).astype(np.float64)
    y = luma(b).astype(np.float64)
    mu_x = _windowed(x)
    mu_y = _windowed(y)
    var_x = _windowed(x * x) - mu_x * mu_x
    var_y = _windowed(y * y) - mu_y * mu_y
    cov = _windowed(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + _C1) * (2.0 * cov + _C2)
    den = (mu_x ** 2 + mu_y ** 2 + _C1) * (var_x + var_y + _C2)
    return float(np.clip(np.mean(num / den), 0.0, 1.0))


def ssim_to_db(value):
    if not 0.0 <= value <= 1.0:
        raise ShapeMismatch(f"ssim value {value} outside [0, 1]")
    if value >= 1.0:
        return DB_CAP
    return min(DB_CAP, -10.0 * math.log10(1.0 - value))


def ssim_db(a, b):
    return ssim_to_db(ssim(a, b))


def _quantile(sorted_values, q):
    n = len(sorted_values)
    idx = max(0, min(n - 1, math.ceil(q * n) - 1))
    return float(sorted_values[idx])


@dataclass
class Summary:
    mean_bitrate_kbps: float
    duration_s: float
    frames: int
    means: dict
    quantiles: dict  # metric -> {q: value}
    cdfs: dict       # metric -> sorted values

    def to_json(self):
        body = {
            "mean_bitrate_kbps": self.mean_bitrate_kbps,
            "duration_s": self.duration_s,
            "frames": self.frames,
            "means": self.means,
            "quantiles": self.quantiles,
            "cdfs": {k: list(v) for k, v in self.cdfs.items()},
        }
        return json.dumps(body, indent=2, sort_keys=True)


def account(records, duration_s):
    """Aggregate per-frame records: mean bitrate, metric means, CDF arrays."""
    records = list(records)
    if not records:
        raise FormatError("cannot summarize an empty metrics list")
    if duration_s <= 0:
        raise ShapeMismatch(f"duration must be positive, got {duration_s}")
    total_bytes = sum(r.bytes_on_wire for r in records)
    fields = ("psnr_db", "ssim", "ssim_db", "latency_ms", "bytes_on_wire")
    means, quantiles, cdfs = {}, {}, {}
    for f in fields:
        values = sorted(float(getattr(r, f)) for r in records)
        means[f] = float(np.mean(values))
        quantiles[f] = {str(q): _quantile(values, q) for q in (0.05, 0.25, 0.5, 0.75, 0.95)}
        cdfs[f] = values
    return Summary(
        mean_bitrate_kbps=total_bytes * 8.0 / duration_s / 1000.0,
        duration_s=float(duration_s),
        frames=len(records),
        means=means,
        quantiles=quantiles,
        cdfs=cdfs,
    )


def write_records_csv(records, path):
    """One row per frame, stable column order, deterministic float formatting."""
    lines = [",".join(CSV_COLUMNS)]
    for r in records:
        d = asdict(r)
        row = [
            str(d["frame_id"]),
            f"{d['psnr_db']:.6f}",
            f"{d['ssim']:.6f}",
            f"{d['ssim_db']:.6f}",
            str(d["bytes_on_wire"]),
            f"{d['latency_ms']:.6f}",
            str(d["resolution_id"]),
            d["mode"],
        ]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
