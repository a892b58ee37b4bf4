"""Dual-stream session layer: packetization, keypoint wire codec, channel.

Three streams share one packet format: stream 1 carries the per-frame encoded
(usually downsampled) target, stream 2 the sparse high-resolution reference,
stream 3 the 100-byte keypoint payloads of the keypoint-only baseline.  The
PF resolution is tagged in every packet so the receiver can route each frame
to the codec context for that resolution (exactly one context per supported
resolution).

Packet header, little-endian, 10 bytes:
  stream_id u8 | frame_id u32 | frag_index u16 | frag_count u16 | resolution_id u8

Sender and receiver are independent single-owner contexts; the in-process
channel is the only hand-off point.  Channel latency uses a simulated clock
(serialization = bytes/bandwidth, plus propagation and a configurable
per-frame compute term) so replays are reproducible byte for byte.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import RESOLUTIONS, FormatError, PipelineError, ShapeMismatch
from .codec import EncodedFrame, FINEST, decode, downsample, encode, encode_at_bitrate
from .keypoints import NUM_KEYPOINTS, KeypointDetector, KeypointSet
from .synthesizer import Synthesizer, SynthesizerConfig

HEADER = struct.Struct("<BIHHB")
STREAM_PF = 1
STREAM_REFERENCE = 2
STREAM_KEYPOINTS = 3
DEFAULT_MTU = 1200
KEYPOINT_PAYLOAD_BYTES = NUM_KEYPOINTS * (2 + 4 * 2)  # u8 coords + f16 jacobians


@dataclass
class Packet:
    stream_id: int
    frame_id: int
    frag_index: int
    frag_count: int
    resolution_id: int
    payload: bytes

    def to_bytes(self):
        return HEADER.pack(self.stream_id, self.frame_id, self.frag_index,
                           self.frag_count, self.resolution_id) + self.payload

    @classmethod
    def from_bytes(cls, blob):
        if len(blob) < HEADER.size:
            raise FormatError("packet shorter than its header")
        return cls(*HEADER.unpack(blob[:HEADER.size]), blob[HEADER.size:])

    @property
    def wire_bytes(self):
        return HEADER.size + len(self.payload)


def packetize(stream_id, frame_id, resolution_id, payload, mtu=DEFAULT_MTU):
    """Fragment a payload into MTU-sized packets sharing one frame header."""
    if mtu <= HEADER.size:
        raise ShapeMismatch(f"mtu {mtu} does not fit the {HEADER.size}-byte header")
    chunk = mtu - HEADER.size
    count = max(1, -(-len(payload) // chunk))
    if count > 0xFFFF:
        raise ShapeMismatch(f"payload needs {count} fragments, limit is 65535")
    return [Packet(stream_id, frame_id, i, count, resolution_id,
                   payload[i * chunk:(i + 1) * chunk])
            for i in range(count)]


def reassemble(packets):
    """Rebuild one frame payload; rejects gaps, duplicates, and mixed frames."""
    if not packets:
        raise FormatError("cannot reassemble an empty packet list")
    first = packets[0]
    fid = first.frame_id
    if any(p.frame_id != fid for p in packets):
        raise FormatError(f"frame {fid}: fragments from multiple frame_ids mixed")
    if any((p.stream_id, p.resolution_id, p.frag_count)
           != (first.stream_id, first.resolution_id, first.frag_count) for p in packets):
        raise FormatError(f"frame {fid}: inconsistent fragment headers")
    seen = {}
    for p in packets:
        if p.frag_index >= p.frag_count:
            raise FormatError(f"frame {fid}: frag_index {p.frag_index} out of range")
        if p.frag_index in seen:
            raise FormatError(f"frame {fid}: duplicate fragment {p.frag_index}")
        seen[p.frag_index] = p.payload
    if len(seen) != first.frag_count:
        missing = sorted(set(range(first.frag_count)) - set(seen))
        raise FormatError(f"frame {fid}: missing fragments {missing}")
    return b"".join(seen[i] for i in range(first.frag_count))


def encode_keypoints(kp):
    """100-byte wire form: u8-quantized locations, float16 jacobians."""
    loc = np.asarray(kp.locations, dtype=np.float64)
    if np.any(loc < -1.0) or np.any(loc > 1.0):
        raise ShapeMismatch("keypoint locations must lie in [-1, 1]")
    q = np.round((loc + 1.0) * 0.5 * 255.0).astype(np.uint8)
    jac = kp.jacobians.astype("<f2")
    out = bytearray()
    for k in range(NUM_KEYPOINTS):
        out += q[k].tobytes()
        out += jac[k].tobytes()
    assert len(out) == KEYPOINT_PAYLOAD_BYTES
    return bytes(out)


def decode_keypoints(blob):
    if len(blob) != KEYPOINT_PAYLOAD_BYTES:
        raise FormatError(
            f"keypoint payload must be {KEYPOINT_PAYLOAD_BYTES} bytes, got {len(blob)}")
    loc = np.empty((NUM_KEYPOINTS, 2), np.float32)
    jac = np.empty((NUM_KEYPOINTS, 2, 2), np.float32)
    stride = 2 + 8
    for k in range(NUM_KEYPOINTS):
        rec = blob[k * stride:(k + 1) * stride]
        q = np.frombuffer(rec[:2], np.uint8).astype(np.float32)
        loc[k] = q / 255.0 * 2.0 - 1.0
        jac[k] = np.frombuffer(rec[2:], "<f2").astype(np.float32).reshape(2, 2)
    return KeypointSet(loc, jac)


@dataclass
class SendMode:
    kind: str  # "neural" | "fallback" | "keypoints"
    resolution: int = 0
    target_kbps: float = 0.0

    @classmethod
    def neural(cls, resolution, target_kbps):
        return cls("neural", resolution, target_kbps)

    @classmethod
    def fallback(cls, target_kbps):
        return cls("fallback", 0, target_kbps)

    @classmethod
    def keypoints(cls):
        return cls("keypoints")


@dataclass
class SessionConfig:
    output_resolution: int
    fps: float = 30.0
    mtu: int = DEFAULT_MTU
    synthesis: str = "neural"  # receiver LR handling: "neural" | "bicubic"
    reference_refresh: str = "never"  # refresh policy knob; only "never" is defined
    keypoint_weight_set: str = "p256"  # weight set driving the keypoint-only baseline

    def __post_init__(self):
        if self.output_resolution not in RESOLUTIONS:
            raise ShapeMismatch(f"unsupported output resolution {self.output_resolution}")
        if self.reference_refresh != "never":
            raise ShapeMismatch("only the 'never' reference refresh policy is implemented")
        if self.synthesis not in ("neural", "bicubic"):
            raise ShapeMismatch(f"unknown synthesis mode {self.synthesis!r}")


class CodecContext:
    """Per-resolution encoder/decoder context (single stream, single thread)."""

    def __init__(self, resolution):
        self.resolution = resolution
        self.frames = 0
        self.bytes = 0

    def note(self, n_bytes):
        self.frames += 1
        self.bytes += n_bytes


@dataclass
class ReceiveRecord:
    """Wire-side per-frame facts filled in by the receiver.

    bytes_on_wire counts packet headers; payload_bytes is the reassembled
    codec/keypoint payload alone (the quantity rate control budgets).
    """

    frame_id: int
    mode: str
    resolution_id: int
    bytes_on_wire: int
    payload_bytes: int


class SenderSession:
    """Downsamples, encodes, and packetizes frames; owns the reference policy."""

    def __init__(self, config, kp_detector=None):
        self.config = config
        self.kp_detector = kp_detector
        self.contexts = {r: CodecContext(r) for r in RESOLUTIONS
                         if r <= config.output_resolution}
        self.frames_sent = 0
        self.reference_sent = False

    def send_frame(self, frame, mode):
        """Produce this frame's packets; the first frame emits the reference."""
        r = self.config.output_resolution
        if frame.shape != (3, r, r):
            raise ShapeMismatch(f"sender expects (3, {r}, {r}) frames, got {frame.shape}")
        fid = self.frames_sent
        packets = []
        if not self.reference_sent:
            enc = encode(frame, FINEST)
            packets += packetize(STREAM_REFERENCE, fid, RESOLUTIONS.index(r),
                                 enc.to_bytes(), self.config.mtu)
            self.reference_sent = True
        elif mode.kind == "keypoints":
            if self.kp_detector is None:
                raise PipelineError("keypoint mode needs a sender-side detector")
            kp = self.kp_detector.detect(downsample(frame, 64))
            packets += packetize(STREAM_KEYPOINTS, fid, RESOLUTIONS.index(64),
                                 encode_keypoints(kp), self.config.mtu)
        else:
            res = r if mode.kind == "fallback" else mode.resolution
            if res not in self.contexts:
                raise ShapeMismatch(f"resolution {res} not supported by this session")
            lr = frame if res == r else downsample(frame, res)
            rc = encode_at_bitrate(lr, mode.target_kbps, self.config.fps)
            blob = rc.frame.to_bytes()
            self.contexts[res].note(len(blob))
            packets += packetize(STREAM_PF, fid, RESOLUTIONS.index(res), blob,
                                 self.config.mtu)
        self.frames_sent += 1
        return packets


class ReceiverSession:
    """Routes frames to per-resolution decoder contexts and synthesizes output.

    weight_sets maps a set name (e.g. "p256") to a WeightStore; models and
    reference features are built lazily per set and cached until the
    reference changes.
    """

    def __init__(self, config, weight_sets=None, model_selector=None):
        self.config = config
        self.weight_sets = weight_sets or {}
        self.model_selector = model_selector
        self.contexts = {r: CodecContext(r) for r in RESOLUTIONS
                         if r <= config.output_resolution}
        self.reference = None
        self._models = {}
        self._detectors = {}
        self._ref_cache = {}
        self._ref_kp = {}

    def _set_for(self, resolution):
        if self.model_selector is not None:
            return self.model_selector(resolution)
        return f"p{resolution}"

    def _model(self, set_name):
        if set_name not in self._models:
            if set_name not in self.weight_sets:
                raise PipelineError(f"no weight set named {set_name!r} available")
            store = self.weight_sets[set_name]
            cfg = SynthesizerConfig(self.config.output_resolution)
            self._models[set_name] = Synthesizer.from_store(store, cfg)
            self._detectors[set_name] = KeypointDetector.from_store(store)
        return self._models[set_name], self._detectors[set_name]

    def _reference_state(self, set_name):
        if self.reference is None:
            raise PipelineError("no reference frame received before the first PF frame")
        if set_name not in self._ref_cache:
            model, det = self._model(set_name)
            self._ref_cache[set_name] = model.encode_reference(self.reference)
            self._ref_kp[set_name] = det.detect(downsample(self.reference, 64))
        return self._ref_cache[set_name], self._ref_kp[set_name]

    def receive_frame(self, packets):
        """Reassemble one frame's packets and produce (frame, ReceiveRecord)."""
        if not packets:
            raise FormatError("receive_frame needs at least one packet")
        payload = reassemble(packets)
        first = packets[0]
        wire = sum(p.wire_bytes for p in packets)

        if first.stream_id == STREAM_REFERENCE:
            enc = EncodedFrame.from_bytes(payload)
            frame = decode(enc)
            self.reference = np.clip(frame, 0.0, 1.0)
            self._ref_cache.clear()
            self._ref_kp.clear()
            return frame, ReceiveRecord(first.frame_id, "reference",
                                        first.resolution_id, wire, len(payload))

        if first.stream_id == STREAM_KEYPOINTS:
            kp_tgt = decode_keypoints(payload)
            set_name = self.config.keypoint_weight_set
            model, _ = self._model(set_name)
            ref_feat, kp_ref = self._reference_state(set_name)
            frame = model.predict(self.reference, None, kp_ref, kp_tgt,
                                  cache=ref_feat, lr_pathway=False)
            return frame, ReceiveRecord(first.frame_id, "keypoints",
                                        first.resolution_id, wire, len(payload))

        if first.stream_id != STREAM_PF:
            raise FormatError(f"unknown stream id {first.stream_id}")
        if first.resolution_id >= len(RESOLUTIONS):
            raise FormatError(f"unknown resolution id {first.resolution_id}")
        res = RESOLUTIONS[first.resolution_id]
        if res not in self.contexts:
            raise FormatError(f"no decoder context for resolution {res}")
        enc = EncodedFrame.from_bytes(payload)
        decoded = decode(enc)
        self.contexts[res].note(len(payload))

        if res == self.config.output_resolution:
            return decoded, ReceiveRecord(first.frame_id, "fallback",
                                          first.resolution_id, wire, len(payload))

        tgt_lr = np.clip(decoded, 0.0, 1.0)
        if self.config.synthesis == "bicubic":
            from .codec import bicubic_upsample
            frame = bicubic_upsample(tgt_lr, self.config.output_resolution)
            return frame, ReceiveRecord(first.frame_id, "bicubic",
                                        first.resolution_id, wire, len(payload))

        set_name = self._set_for(res)
        model, det = self._model(set_name)
        ref_feat, kp_ref = self._reference_state(set_name)
        tgt64 = tgt_lr if res == 64 else downsample(tgt_lr, 64)
        kp_tgt = det.detect(tgt64)
        frame = model.predict(self.reference, tgt_lr, kp_ref, kp_tgt, cache=ref_feat)
        return frame, ReceiveRecord(first.frame_id, "neural", first.resolution_id,
                                    wire, len(payload))


@dataclass
class ChannelTrace:
    """Step-interpolated bandwidth schedule plus fixed delays.

    bandwidth_kbps None means an unconstrained link.  compute_time_s is the
    deterministic per-frame model of receiver compute used in the latency
    accounting (wall-clock never enters the logs, keeping replays identical).
    """

    bandwidth_kbps: list = None  # [(time_s, kbps)] breakpoints or None
    propagation_delay_s: float = 0.0
    compute_time_s: float = 0.0

    def bandwidth_at(self, t):
        if not self.bandwidth_kbps:
            return None
        value = self.bandwidth_kbps[0][1]
        for ts, kbps in self.bandwidth_kbps:
            if ts <= t:
                value = kbps
            else:
                break
        return value


@dataclass
class FrameLatency:
    frame_id: int
    read_s: float
    arrival_s: float
    latency_s: float
    bytes_on_wire: int


def channel_run(packets_by_frame, fps, trace):
    """Deliver per-frame packet lists over the simulated link, in order.

    Returns one FrameLatency per entry; serialization delay is
    bytes / bandwidth at transmission start, applied packet by packet on a
    busy-until link model.
    """
    link_free = 0.0
    log = []
    for i, (frame_id, packets) in enumerate(packets_by_frame):
        read_s = i / fps
        t = max(read_s, link_free)
        arrival = t
        total = 0
        for p in packets:
            kbps = trace.bandwidth_at(t)
            tx = 0.0 if kbps is None else p.wire_bytes * 8.0 / (kbps * 1000.0)
            t += tx
            arrival = t + trace.propagation_delay_s
            total += p.wire_bytes
        link_free = t
        done = arrival + trace.compute_time_s
        log.append(FrameLatency(frame_id, read_s, arrival, done - read_s, total))
    return log
