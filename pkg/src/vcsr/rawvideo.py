"""Raw video files: interleaved 8-bit RGB frames plus a JSON sidecar.

``clip.rgb`` holds frame-major, row-major, interleaved RGB bytes;
``clip.json`` (same stem) records width, height, fps, and frame_count.
This keeps the artifact free of container parsing; a conversion recipe from
standard containers lives in the README.
"""

import json
import os

import numpy as np

from . import FormatError


def sidecar_path(path):
    base, _ = os.path.splitext(os.fspath(path))
    return base + ".json"


def write_video(path, frames, fps):
    """frames is (N, H, W, 3) uint8; writes the blob and its sidecar."""
    frames = np.ascontiguousarray(frames, dtype=np.uint8)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise FormatError(f"expected (N, H, W, 3) uint8 frames, got {frames.shape}")
    n, h, w, _ = frames.shape
    with open(path, "wb") as fh:
        fh.write(frames.tobytes())
    meta = {"width": w, "height": h, "fps": fps, "frame_count": n}
    with open(sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_video(path):
    """Returns ((N, H, W, 3) uint8, metadata dict); validates sizes."""
    side = sidecar_path(path)
    try:
        with open(side) as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise FormatError(f"missing sidecar {side}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{side}: invalid JSON: {exc}") from exc
    try:
        w, h = int(meta["width"]), int(meta["height"])
        n, fps = int(meta["frame_count"]), float(meta["fps"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{side}: missing or malformed fields: {exc}") from exc
    data = np.fromfile(path, dtype=np.uint8)
    expected = n * h * w * 3
    if data.size != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {data.size}")
    return data.reshape(n, h, w, 3), meta


def to_float(frame_u8):
    """(H, W, 3) uint8 -> (3, H, W) float32 in [0, 1]."""
    return np.ascontiguousarray(frame_u8.transpose(2, 0, 1), dtype=np.float32) / 255.0


def to_uint8(frame):
    """(3, H, W) float -> (H, W, 3) uint8 with rounding and clamping."""
    x = np.clip(frame, 0.0, 1.0) * 255.0
    return np.round(x).astype(np.uint8).transpose(1, 2, 0)
