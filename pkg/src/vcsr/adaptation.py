"""Map a time-varying target bitrate to a PF-stream operating point.

The default ladder routes <30 Kbps to 128x128, 30-180 to 256x256, 180-550 to
512x512, and everything above 550 to full-resolution codec fallback.  Ranges
are half-open [low, high): a boundary value belongs to the row that starts
there (exactly 30 Kbps picks 256x256).  The controller is memoryless over the
trace; hysteresis is a documented extension point.
"""

import csv
from dataclasses import dataclass

from . import FormatError, ShapeMismatch

MODE_NEURAL = "neural"
MODE_FALLBACK = "fallback"


@dataclass(frozen=True)
class LadderRow:
    low_kbps: float   # inclusive
    high_kbps: float  # exclusive
    resolution: int
    mode: str


@dataclass
class BitrateLadder:
    rows: tuple

    def __post_init__(self):
        res = [r.resolution for r in self.rows]
        lows = [r.low_kbps for r in self.rows]
        if sorted(res) != res or len(set(res)) != len(res):
            raise ShapeMismatch("ladder resolutions must be strictly increasing")
        if sorted(lows) != lows or len(set(lows)) != len(lows):
            raise ShapeMismatch("ladder thresholds must be strictly increasing")
        for a, b in zip(self.rows, self.rows[1:]):
            if a.high_kbps != b.low_kbps:
                raise ShapeMismatch("ladder rows must tile the bitrate axis")

    @classmethod
    def default(cls):
        return cls((
            LadderRow(0.0, 30.0, 128, MODE_NEURAL),
            LadderRow(30.0, 180.0, 256, MODE_NEURAL),
            LadderRow(180.0, 550.0, 512, MODE_NEURAL),
            LadderRow(550.0, float("inf"), 1024, MODE_FALLBACK),
        ))

    @property
    def boundaries(self):
        return tuple(r.low_kbps for r in self.rows[1:])

    def neural_resolutions(self):
        return tuple(r.resolution for r in self.rows if r.mode == MODE_NEURAL)


def resolution_for_bitrate(ladder, target_kbps):
    """Ladder row containing the target; returns (resolution, mode)."""
    if target_kbps <= 0:
        raise ShapeMismatch(f"target bitrate must be positive, got {target_kbps}")
    for row in ladder.rows:
        if row.low_kbps <= target_kbps < row.high_kbps:
            return row.resolution, row.mode
    return ladder.rows[-1].resolution, ladder.rows[-1].mode


@dataclass
class TargetTrace:
    points: tuple  # ((time_s, target_kbps), ...) step-interpolated

    def __post_init__(self):
        times = [t for t, _ in self.points]
        if not times:
            raise FormatError("target trace is empty")
        if sorted(times) != times or len(set(times)) != len(times):
            raise FormatError("trace times must be strictly increasing")

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise FormatError(f"{path}: empty trace file") from None
            if [h.strip().lower() for h in header] != ["time_s", "target_kbps"]:
                raise FormatError(f"{path}: expected header 'time_s,target_kbps'")
            points = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    points.append((float(row[0]), float(row[1])))
                except (IndexError, ValueError) as exc:
                    raise FormatError(f"{path}:{lineno}: malformed trace row") from exc
        return cls(tuple(points))

    @property
    def end_s(self):
        return self.points[-1][0]

    def value_at(self, t):
        if t < self.points[0][0]:
            raise ShapeMismatch(f"trace does not cover time {t}")
        value = self.points[0][1]
        for ts, kbps in self.points:
            if ts <= t:
                value = kbps
            else:
                break
        return value


@dataclass
class ControllerDecision:
    resolution: int
    codec_target_kbps: float
    mode: str
    target_kbps: float


def controller_step(ladder, trace, now_s, profile):
    """Operating point at a trace instant: ladder row + clamped codec target."""
    target = trace.value_at(now_s)
    resolution, mode = resolution_for_bitrate(ladder, target)
    low, high = profile.range_for(resolution)
    codec_target = min(max(target, low), high)
    return ControllerDecision(resolution, codec_target, mode, target)


def model_selector(ladder, resolution):
    """Weight-set name for a neural PF resolution; fallback rows have none."""
    for row in ladder.rows:
        if row.resolution == resolution:
            return None if row.mode == MODE_FALLBACK else f"p{resolution}"
    raise ShapeMismatch(f"resolution {resolution} is not on the ladder")
