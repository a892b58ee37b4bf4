"""Deterministic synthetic clips for profiling, tests, and demos.

``make_clip`` renders drifting Gaussian blobs over a slowly moving gradient
with a fixed sinusoidal texture, giving the codec mid-frequency content whose
rate behavior is stationary across frames.  ``make_gradient_clip`` is the
smooth baseline used for upsampling comparisons.  Everything derives from the
seed; the same call always produces identical bytes.

Run as a module to write a demo clip:
    python -m vcsr.synthetic out.rgb --resolution 256 --frames 30 --fps 10
"""

import argparse

import numpy as np


def _grid(size):
    u = (np.arange(size, dtype=np.float32) + 0.5) / size
    return np.meshgrid(u, u, indexing="xy")


def make_clip(resolution, n_frames, fps=30.0, seed=0):
    """(N, H, W, 3) uint8 talking-head-ish moving blobs; fully deterministic."""
    rng = np.random.Generator(np.random.PCG64(seed))
    xx, yy = _grid(resolution)
    n_blobs = 3
    centers = rng.uniform(0.25, 0.75, size=(n_blobs, 2)).astype(np.float32)
    velocity = rng.uniform(-0.04, 0.04, size=(n_blobs, 2)).astype(np.float32)
    radius = rng.uniform(0.08, 0.2, size=n_blobs).astype(np.float32)
    colors = rng.uniform(0.2, 1.0, size=(n_blobs, 3)).astype(np.float32)
    tex_phase = rng.uniform(0, 2 * np.pi, size=2)
    frames = np.empty((n_frames, resolution, resolution, 3), np.uint8)
    for i in range(n_frames):
        t = i / fps
        base_r = 0.25 + 0.5 * xx
        base_g = 0.25 + 0.5 * yy
        base_b = 0.35 + 0.25 * np.sin(2 * np.pi * (xx + yy) / 2 + 0.3 * t)
        img = np.stack([base_r, base_g, base_b], axis=-1).astype(np.float32)
        texture = 0.06 * np.sin(28.0 * np.pi * xx + tex_phase[0]) \
            * np.sin(28.0 * np.pi * yy + tex_phase[1])
        img += texture[..., None]
        for b in range(n_blobs):
            cx = centers[b, 0] + velocity[b, 0] * t
            cy = centers[b, 1] + velocity[b, 1] * t
            # bounce off the frame edges to stay in view
            cx = 1.0 - abs(1.0 - (cx % 2.0))
            cy = 1.0 - abs(1.0 - (cy % 2.0))
            d2 = (xx - cx) ** 2 + (yy - cy) ** 2
            bump = np.exp(-d2 / (2 * radius[b] ** 2))
            img += bump[..., None] * (colors[b] - 0.5)[None, None, :] * 0.8
        frames[i] = np.clip(img * 255.0, 0, 255).astype(np.uint8)
    return frames


def make_gradient_clip(resolution, n_frames, fps=30.0):
    """Smooth drifting gradient, no texture; bicubic-vs-nearest testbed."""
    xx, yy = _grid(resolution)
    frames = np.empty((n_frames, resolution, resolution, 3), np.uint8)
    for i in range(n_frames):
        t = i / fps
        r = 0.5 + 0.45 * np.sin(2 * np.pi * (xx * 0.7 + 0.05 * t))
        g = 0.5 + 0.45 * np.cos(2 * np.pi * (yy * 0.6 - 0.04 * t))
        b = 0.5 + 0.45 * np.sin(2 * np.pi * ((xx + yy) * 0.4 + 0.03 * t))
        img = np.stack([r, g, b], axis=-1)
        frames[i] = np.clip(img * 255.0, 0, 255).astype(np.uint8)
    return frames


def main(argv=None):
    from .rawvideo import write_video

    parser = argparse.ArgumentParser(description="write a deterministic synthetic clip")
    parser.add_argument("output", help="output .rgb path (sidecar written next to it)")
    parser.add_argument("--resolution", type=int, default=256)
    parser.add_argument("--frames", type=int, default=30)
    parser.add_argument("--fps", type=float, default=10.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--gradient", action="store_true", help="smooth gradient variant")
    args = parser.parse_args(argv)
    if args.gradient:
        frames = make_gradient_clip(args.resolution, args.frames, args.fps)
    else:
        frames = make_clip(args.resolution, args.frames, args.fps, args.seed)
    write_video(args.output, frames, args.fps)


if __name__ == "__main__":
    main()
