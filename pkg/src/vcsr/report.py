"""Figure rendering for the report paths; PNGs land next to the CSVs.

All figures strip the writer's Software tag so reruns stay byte-stable.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_SAVE_KW = {"dpi": 110, "metadata": {"Software": None}}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def run_timeline(records, path):
    """Per-frame quality and wire bytes for one replay."""
    frames = [r.frame_id for r in records]
    fig, axes = plt.subplots(3, 1, figsize=(8, 7), sharex=True)
    axes[0].plot(frames, [r.psnr_db for r in records], lw=1.2, color="tab:blue")
    axes[0].set_ylabel("PSNR (dB)")
    axes[1].plot(frames, [r.ssim_db for r in records], lw=1.2, color="tab:green")
    axes[1].set_ylabel("SSIM (dB)")
    axes[2].step(frames, [r.bytes_on_wire for r in records], where="mid", color="tab:red")
    axes[2].set_ylabel("bytes on wire")
    axes[2].set_xlabel("frame")
    for ax in axes:
        ax.grid(alpha=0.3)
    return _finish(fig, path)


def rd_curve_figure(rows, path):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    modes = sorted({r["mode"] for r in rows})
    for mode in modes:
        pts = [r for r in rows if r["mode"] == mode]
        x = [r["bitrate_kbps"] for r in pts]
        ax1.plot(x, [r["psnr_db"] for r in pts], "o-", label=mode)
        ax2.plot(x, [r["ssim_db"] for r in pts], "o-", label=mode)
    for ax, ylabel in ((ax1, "PSNR (dB)"), (ax2, "SSIM (dB)")):
        ax.set_xlabel("bitrate (Kbps)")
        ax.set_ylabel(ylabel)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    return _finish(fig, path)


def adaptation_figure(rows, ladder, path):
    t = [r["time_s"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    ax1.plot(t, [r["target_kbps"] for r in rows], "k-", label="target")
    ax1.plot(t, [r["achieved_kbps"] for r in rows], color="tab:blue", label="achieved")
    for b in ladder.boundaries:
        if b != float("inf"):
            ax1.axhline(b, color="gray", ls=":", lw=0.8)
    ax1.set_ylabel("Kbps")
    ax1.legend(fontsize=8)
    ax1.grid(alpha=0.3)
    ax2.step(t, [r["resolution"] for r in rows], where="post", color="tab:orange")
    ax2.set_ylabel("PF resolution")
    ax2.set_xlabel("time (s)")
    ax2.grid(alpha=0.3)
    return _finish(fig, path)


def profile_figure(prof, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    resolutions = sorted(prof.rows)
    for i, res in enumerate(resolutions):
        row = prof.rows[res]
        ax.plot([i, i], [row["min_kbps"], row["max_kbps"]], lw=6,
                color="tab:blue", solid_capstyle="butt")
    ax.set_xticks(range(len(resolutions)))
    ax.set_xticklabels([f"{r}x{r}" for r in resolutions])
    ax.set_yscale("log")
    ax.set_ylabel("achievable bitrate (Kbps)")
    ax.grid(alpha=0.3, which="both")
    return _finish(fig, path)
