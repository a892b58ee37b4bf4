"""End-to-end experiment drivers shared by the CLI and the test suite.

Each driver replays sender -> channel -> receiver over a raw video file and
emits delimited output (plus figures) under an output directory.  Everything
is deterministic under a fixed seed: weight sets are either loaded from the
weights directory or synthesized there with seeded initialization, channel
latency uses the simulated clock, and CSV/JSON formatting is stable.
"""

import json
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import RESOLUTIONS, FormatError
from .adaptation import (BitrateLadder, LadderRow, MODE_FALLBACK, TargetTrace,
                         controller_step, model_selector)
from .codec import RateProfile, profile as profile_codec
from .keypoints import KeypointDetector
from .metrics import MetricsRecord, account, psnr, ssim, ssim_to_db, write_records_csv
from .rawvideo import read_video, to_float, to_uint8, write_video
from .streaming import (ChannelTrace, ReceiverSession, SendMode, SenderSession,
                        SessionConfig, channel_run)
from .synthesizer import SynthesizerConfig, model_param_specs
from .weights import load as load_weights, random_init, save as save_weights

MODES = ("neural", "keypoints", "bicubic", "fallback", "adaptive")


@dataclass
class RunConfig:
    input: str
    out_dir: str
    mode: str = "neural"
    weights_dir: str = "weights"
    resolution: int = 0            # PF resolution for neural/bicubic modes
    target_kbps: float = 0.0       # codec target for fixed-rate modes
    trace_path: str = ""           # adaptive mode
    ladder_path: str = ""          # optional custom ladder (JSON)
    profile_path: str = ""         # optional precomputed rate profile (JSON)
    fps: float = 0.0               # 0 = use the sidecar value
    seed: int = 0
    mtu: int = 1200
    bandwidth_kbps: float = 0.0    # 0 = unconstrained channel
    propagation_delay_s: float = 0.0
    compute_time_s: float = 0.0
    keypoint_weight_set: str = "p256"

    def validate(self):
        if self.mode not in MODES:
            raise FormatError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.mode in ("neural", "bicubic") and self.resolution not in RESOLUTIONS:
            raise FormatError(f"mode {self.mode} needs a PF --resolution from {RESOLUTIONS}")
        if self.mode in ("neural", "bicubic", "fallback") and self.target_kbps <= 0:
            raise FormatError(f"mode {self.mode} needs a positive --kbps target")
        if self.mode == "adaptive" and not self.trace_path:
            raise FormatError("adaptive mode needs --trace")


def load_ladder(path):
    try:
        with open(path) as fh:
            obj = json.load(fh)
        rows = tuple(LadderRow(float(r["low_kbps"]), float(r["high_kbps"]),
                               int(r["resolution"]), str(r["mode"]))
                     for r in obj["rows"])
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed ladder file: {exc}") from exc
    return BitrateLadder(rows)


def _seed_for(name, seed):
    return (seed * 1000003 + zlib.crc32(name.encode())) % (2 ** 63)


def ensure_weight_sets(weights_dir, names, output_resolution, seed):
    """Load each named set, synthesizing and saving a seeded one when absent."""
    os.makedirs(weights_dir, exist_ok=True)
    cfg = SynthesizerConfig(output_resolution)
    stores = {}
    for name in names:
        prefix = os.path.join(weights_dir, name)
        if os.path.exists(prefix + ".manifest"):
            stores[name] = load_weights(prefix)
        else:
            store = random_init(model_param_specs(cfg), _seed_for(name, seed))
            save_weights(store, prefix)
            stores[name] = store
    return stores


def _load_clip(config):
    frames_u8, meta = read_video(config.input)
    h, w = meta["height"], meta["width"]
    if h != w or h not in RESOLUTIONS:
        raise FormatError(f"input must be square with size in {RESOLUTIONS}, got {w}x{h}")
    fps = config.fps if config.fps > 0 else float(meta["fps"])
    return frames_u8, h, fps


def _weight_names_for(config, ladder, output_resolution):
    if config.mode == "neural":
        return [f"p{config.resolution}"]
    if config.mode == "keypoints":
        return [config.keypoint_weight_set]
    if config.mode == "adaptive":
        names = []
        for row in ladder.rows:
            if row.mode != MODE_FALLBACK:
                if row.resolution >= output_resolution:
                    raise FormatError(
                        f"ladder row at {row.resolution} needs an output resolution "
                        f"above it; pass --ladder matched to this video")
                names.append(f"p{row.resolution}")
        return names
    return []


@dataclass
class RunOutputs:
    records: list
    summary: object
    files: dict = field(default_factory=dict)


def _mode_for_frame(config, ladder, trace, rate_profile, now_s):
    if config.mode in ("neural", "bicubic"):
        return SendMode.neural(config.resolution, config.target_kbps), None
    if config.mode == "fallback":
        return SendMode.fallback(config.target_kbps), None
    if config.mode == "keypoints":
        return SendMode.keypoints(), None
    decision = controller_step(ladder, trace, now_s, rate_profile)
    if decision.mode == MODE_FALLBACK:
        return SendMode.fallback(decision.codec_target_kbps), decision
    return SendMode.neural(decision.resolution, decision.codec_target_kbps), decision


def run_experiment(config, write_figures=True):
    """Full sender -> channel -> receiver replay; returns records and file map."""
    config.validate()
    frames_u8, resolution, fps = _load_clip(config)
    os.makedirs(config.out_dir, exist_ok=True)

    ladder = load_ladder(config.ladder_path) if config.ladder_path else BitrateLadder.default()
    trace = TargetTrace.from_csv(config.trace_path) if config.mode == "adaptive" else None
    rate_profile = None
    if config.mode == "adaptive":
        if config.profile_path:
            with open(config.profile_path) as fh:
                rate_profile = RateProfile.from_json(fh.read())
        else:
            picks = [to_float(frames_u8[i]) for i in
                     sorted({0, len(frames_u8) // 2, len(frames_u8) - 1})]
            rate_profile = profile_codec(picks, fps)

    names = _weight_names_for(config, ladder, resolution)
    stores = ensure_weight_sets(config.weights_dir, names, resolution, config.seed)

    session_cfg = SessionConfig(
        output_resolution=resolution, fps=fps, mtu=config.mtu,
        synthesis="bicubic" if config.mode == "bicubic" else "neural",
        keypoint_weight_set=config.keypoint_weight_set)
    kp_det = None
    if config.mode == "keypoints":
        kp_det = KeypointDetector.from_store(stores[config.keypoint_weight_set])
    sender = SenderSession(session_cfg, kp_detector=kp_det)
    receiver = ReceiverSession(session_cfg, weight_sets=stores,
                               model_selector=lambda r: model_selector(ladder, r)
                               if config.mode == "adaptive" else f"p{r}")

    channel = ChannelTrace(
        bandwidth_kbps=[(0.0, config.bandwidth_kbps)] if config.bandwidth_kbps > 0 else None,
        propagation_delay_s=config.propagation_delay_s,
        compute_time_s=config.compute_time_s)

    n = len(frames_u8)
    if trace is not None:
        n = min(n, int(trace.end_s * fps) + 1)

    sent = []
    decisions = []
    for i in range(n):
        frame = to_float(frames_u8[i])
        mode, decision = _mode_for_frame(config, ladder, trace, rate_profile, i / fps)
        decisions.append(decision)
        sent.append((i, sender.send_frame(frame, mode)))

    latencies = channel_run(sent, fps, channel)

    records = []
    infos = []
    recon = np.empty((n,) + frames_u8.shape[1:], np.uint8)
    for (i, packets), lat in zip(sent, latencies):
        out, info = receiver.receive_frame(packets)
        infos.append(info)
        truth = to_float(frames_u8[i])
        s = ssim(out, truth)
        records.append(MetricsRecord(
            frame_id=i, psnr_db=psnr(out, truth), ssim=s, ssim_db=ssim_to_db(s),
            bytes_on_wire=info.bytes_on_wire, latency_ms=lat.latency_s * 1000.0,
            resolution_id=info.resolution_id, mode=info.mode))
        recon[i] = to_uint8(out)

    summary = account(records, n / fps)
    files = {}
    csv_path = os.path.join(config.out_dir, "metrics.csv")
    write_records_csv(records, csv_path)
    files["metrics_csv"] = csv_path
    summary_path = os.path.join(config.out_dir, "summary.json")
    with open(summary_path, "w") as fh:
        fh.write(summary.to_json() + "\n")
    files["summary_json"] = summary_path
    recon_path = os.path.join(config.out_dir, "reconstruction.rgb")
    write_video(recon_path, recon, fps)
    files["reconstruction"] = recon_path
    if config.mode == "adaptive":
        adapt_rows = _adapt_rows(records, infos, decisions, fps)
        adapt_path = os.path.join(config.out_dir, "adaptation.csv")
        _write_adapt_csv(adapt_rows, adapt_path)
        files["adaptation_csv"] = adapt_path
    if write_figures:
        from . import report
        files["timeline_png"] = report.run_timeline(
            records, os.path.join(config.out_dir, "timeline.png"))
        if config.mode == "adaptive":
            files["adaptation_png"] = report.adaptation_figure(
                adapt_rows, ladder, os.path.join(config.out_dir, "adaptation.png"))
    return RunOutputs(records, summary, files)


def _adapt_rows(records, infos, decisions, fps):
    # achieved rate is codec payload (what the controller budgets); packet
    # headers are accounted separately in metrics.csv bytes_on_wire
    rows = []
    for rec, info, dec in zip(records, infos, decisions):
        achieved = info.payload_bytes * 8.0 * fps / 1000.0
        rows.append({
            "time_s": rec.frame_id / fps,
            "target_kbps": dec.target_kbps if dec else 0.0,
            "achieved_kbps": achieved,
            "resolution": RESOLUTIONS[rec.resolution_id],
            "ssim_db": rec.ssim_db,
        })
    return rows


def _write_adapt_csv(rows, path):
    lines = ["time_s,target_kbps,achieved_kbps,resolution,ssim_db"]
    for r in rows:
        lines.append(f"{r['time_s']:.6f},{r['target_kbps']:.6f},"
                     f"{r['achieved_kbps']:.6f},{r['resolution']},{r['ssim_db']:.6f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def rd_curve(config, points, write_figures=True):
    """One fixed-rate replay per (mode, resolution, kbps); rows sorted by bitrate.

    Rates and quality are steady-state: the one-time reference frame is
    excluded so short clips do not distort the operating point.
    """
    rows = []
    for mode, resolution, kbps in points:
        sub = RunConfig(**{**config.__dict__,
                           "mode": mode, "resolution": resolution, "target_kbps": kbps,
                           "out_dir": os.path.join(config.out_dir,
                                                   f"point_{mode}_{resolution}_{kbps:g}")})
        out = run_experiment(sub, write_figures=False)
        steady = [r for r in out.records if r.mode != "reference"]
        fps = len(out.records) / out.summary.duration_s
        rows.append({
            "mode": mode, "resolution": resolution, "target_kbps": kbps,
            "bitrate_kbps": float(np.mean([r.bytes_on_wire for r in steady]))
            * 8.0 * fps / 1000.0,
            "psnr_db": float(np.mean([r.psnr_db for r in steady])),
            "ssim_db": float(np.mean([r.ssim_db for r in steady])),
        })
    rows.sort(key=lambda r: r["bitrate_kbps"])
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, "rd_curve.csv")
    lines = ["mode,resolution,target_kbps,bitrate_kbps,psnr_db,ssim_db"]
    for r in rows:
        lines.append(f"{r['mode']},{r['resolution']},{r['target_kbps']:.6f},"
                     f"{r['bitrate_kbps']:.6f},{r['psnr_db']:.6f},{r['ssim_db']:.6f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    files = {"rd_csv": path}
    if write_figures:
        from . import report
        files["rd_png"] = report.rd_curve_figure(rows, os.path.join(config.out_dir, "rd_curve.png"))
    return rows, files


def profile_command(video_paths, fps, out_dir, write_figures=True):
    """Profile the codec over a corpus of raw videos; the ladder-calibration artifact."""
    corpus = []
    for path in video_paths:
        frames_u8, meta = read_video(path)
        step = max(1, len(frames_u8) // 4)
        corpus += [to_float(frames_u8[i]) for i in range(0, len(frames_u8), step)]
    if not corpus:
        raise FormatError("profile needs at least one readable video")
    prof = profile_codec(corpus, fps)
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "rate_profile.json")
    with open(json_path, "w") as fh:
        fh.write(prof.to_json() + "\n")
    csv_path = os.path.join(out_dir, "rate_profile.csv")
    lines = ["resolution,quality,kbps"]
    for res in sorted(prof.rows):
        for q, kbps in enumerate(prof.rows[res]["kbps_by_quality"]):
            lines.append(f"{res},{q},{kbps:.6f}")
    with open(csv_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    files = {"profile_json": json_path, "profile_csv": csv_path}
    if write_figures:
        from . import report
        files["profile_png"] = report.profile_figure(prof, os.path.join(out_dir, "rate_profile.png"))
    return prof, files
