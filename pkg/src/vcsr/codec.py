"""Toy intra-only rate-controlled frame codec, resamplers, and rate profiler.

Pipeline: full-range luma/chroma transform with 4:2:0 subsampling, 8x8 block
DCT per plane, uniform quantization by a geometric ladder of step sizes,
zigzag + run-length tokens, and DEFLATE as the adaptive byte-wise entropy
stage.  Every frame is a keyframe; decode inverts exactly to the quantized
reconstruction (no clamping inside the codec), which makes the round trip
idempotent at a fixed quality.

Plane sections are zero-padded to 16-byte multiples: the token stream is
provably non-increasing as quantization coarsens, and the rounding collapses
entropy-coder length noise into ties, keeping payload size monotone in the
quality index.  The rate-controlled entry point fills any leftover per-frame
budget with an explicit padding section (constant-bitrate style), so the
achieved rate tracks a feasible target exactly.

The codec sits behind encode/decode/encode_at_bitrate so a real codec could
be swapped in without touching the streaming or adaptation layers.
"""

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import RESOLUTIONS, FormatError, ShapeMismatch
from .tensor import check_chw

MAGIC = b"VCB1"
QUALITY_LEVELS = 32
FINEST = 0
COARSEST = QUALITY_LEVELS - 1
CUSTOM_RESOLUTION_ID = 255
_EOB = 64  # run byte values 0..63 are zero runs; 64 terminates a block


def quant_step(quality):
    """Quantizer step on the 255 scale; grows geometrically with the index."""
    if not 0 <= quality < QUALITY_LEVELS:
        raise ShapeMismatch(f"quality must be in [0, {QUALITY_LEVELS}), got {quality}")
    return 0.4 * 2.0 ** (quality / 4.0)


def _dct_matrix():
    n = np.arange(8)
    d = np.cos(np.pi * (2 * n[None, :] + 1) * n[:, None] / 16.0)
    d[0] *= np.sqrt(1.0 / 8.0)
    d[1:] *= np.sqrt(2.0 / 8.0)
    return d.astype(np.float64)


_DCT = _dct_matrix()

_ZIGZAG = np.array(sorted(range(64), key=lambda i: (i // 8 + i % 8, (i // 8) if (i // 8 + i % 8) % 2 else (i % 8))),
                   dtype=np.int64)
_UNZIGZAG = np.argsort(_ZIGZAG)


def resolution_id_for(height, width):
    if height == width and height in RESOLUTIONS:
        return RESOLUTIONS.index(height)
    return CUSTOM_RESOLUTION_ID


@dataclass
class EncodedFrame:
    resolution_id: int
    quality: int
    payload: bytes  # three length-prefixed plane sections
    is_key: bool
    width: int
    height: int

    def to_bytes(self):
        head = MAGIC + struct.pack("<BBBHH", self.resolution_id, self.quality,
                                   int(self.is_key), self.width, self.height)
        return head + self.payload

    @classmethod
    def from_bytes(cls, blob):
        if len(blob) < len(MAGIC) + 7:
            raise FormatError("encoded frame truncated before header")
        if blob[:4] != MAGIC:
            raise FormatError(f"bad codec magic {blob[:4]!r}")
        rid, quality, is_key, width, height = struct.unpack("<BBBHH", blob[4:11])
        payload = blob[11:]
        off = 0
        sections = 0
        while off < len(payload):
            if off + 4 > len(payload):
                raise FormatError("encoded frame truncated in plane table")
            (n,) = struct.unpack_from("<I", payload, off)
            off += 4 + n
            sections += 1
        if off != len(payload) or sections not in (3, 4):
            raise FormatError("encoded frame has a malformed section table")
        return cls(rid, quality, payload, bool(is_key), width, height)


def _rgb_to_ycc(frame):
    r, g, b = frame[0], frame[1], frame[2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = (b - y) / 1.772 + 0.5
    cr = (r - y) / 1.402 + 0.5
    return y, cb, cr


def _ycc_to_rgb(y, cb, cr):
    r = y + 1.402 * (cr - 0.5)
    b = y + 1.772 * (cb - 0.5)
    g = (y - 0.299 * r - 0.114 * b) / 0.587
    return np.stack([r, g, b]).astype(np.float32)


def _box2(plane):
    h, w = plane.shape
    return plane.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _pad_to_8(plane):
    h, w = plane.shape
    ph, pw = (-h) % 8, (-w) % 8
    if ph or pw:
        plane = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    return plane


def _blockify(plane):
    h, w = plane.shape
    return plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3).reshape(-1, 8, 8)


def _unblockify(blocks, h, w):
    return blocks.reshape(h // 8, w // 8, 8, 8).transpose(0, 2, 1, 3).reshape(h, w)


def _encode_plane(plane, step):
    """DCT, quantize, zigzag, run-length tokens, DEFLATE."""
    padded = _pad_to_8(plane.astype(np.float64) * 255.0 - 128.0)
    blocks = _blockify(padded)
    coefs = np.einsum("ij,bjk,lk->bil", _DCT, blocks, _DCT)
    q = np.round(coefs / step).astype(np.int64).reshape(-1, 64)[:, _ZIGZAG]

    out = bytearray()
    for row in q:
        (nz,) = np.nonzero(row)
        prev = -1
        for pos in nz:
            out.append(int(pos - prev - 1))
            prev = int(pos)
            v = int(row[pos])
            u = (v << 1) ^ (v >> 63)  # signed -> unsigned zigzag
            while u >= 0x80:
                out.append((u & 0x7F) | 0x80)
                u >>= 7
            out.append(u)
        out.append(_EOB)
    # literal-only DEFLATE: per-block adaptive Huffman over the token bytes.
    # LZ77 matching is disabled because its parse makes compressed size jumpy
    # across adjacent quality steps, which would break rate monotonicity.
    co = zlib.compressobj(9, zlib.DEFLATED, 15, 9, zlib.Z_HUFFMAN_ONLY)
    data = co.compress(bytes(out)) + co.flush()
    return data + bytes(-len(data) % 16)  # round sections up to 16-byte multiples


def _decode_plane(data, step, h, w):
    try:
        raw = zlib.decompressobj().decompress(data)  # trailing pad bytes ignored
    except zlib.error as exc:
        raise FormatError(f"corrupt plane payload: {exc}") from exc
    ph, pw = h + (-h) % 8, w + (-w) % 8
    n_blocks = (ph // 8) * (pw // 8)
    q = np.zeros((n_blocks, 64), np.int64)
    i = 0
    end = len(raw)
    for b in range(n_blocks):
        pos = -1
        while True:
            if i >= end:
                raise FormatError("plane token stream truncated")
            tok = raw[i]
            i += 1
            if tok == _EOB:
                break
            pos += tok + 1
            if pos >= 64:
                raise FormatError("plane token stream overruns a block")
            u = 0
            shift = 0
            while True:
                if i >= end:
                    raise FormatError("plane varint truncated")
                byte = raw[i]
                i += 1
                u |= (byte & 0x7F) << shift
                shift += 7
                if not byte & 0x80:
                    break
            q[b, pos] = (u >> 1) ^ -(u & 1)
    if i != end:
        raise FormatError("plane token stream has trailing bytes")
    coefs = (q[:, _UNZIGZAG].reshape(-1, 8, 8)).astype(np.float64) * step
    blocks = np.einsum("ji,bjk,kl->bil", _DCT, coefs, _DCT)
    return ((_unblockify(blocks, ph, pw)[:h, :w] + 128.0) / 255.0).astype(np.float32)


def encode(frame, quality):
    """Encode an RGB frame (dims divisible by 8) at a quality index."""
    frame = check_chw(frame, "codec input")
    if frame.shape[0] != 3:
        raise ShapeMismatch(f"codec expects RGB, got {frame.shape[0]} channels")
    _, h, w = frame.shape
    if h % 8 or w % 8:
        raise ShapeMismatch(f"codec needs dims divisible by 8, got {h}x{w}")
    step = quant_step(quality)
    y, cb, cr = _rgb_to_ycc(frame)
    sections = []
    for plane in (y, _box2(cb), _box2(cr)):
        data = _encode_plane(plane, step)
        sections.append(struct.pack("<I", len(data)) + data)
    return EncodedFrame(resolution_id_for(h, w), quality, b"".join(sections),
                        is_key=True, width=w, height=h)


def decode(enc):
    """Invert :func:`encode` to the quantized reconstruction.

    The output is not clamped: quantization noise may leave values slightly
    outside [0, 1], and clamping here would break round-trip idempotence.
    """
    step = quant_step(enc.quality)
    h, w = enc.height, enc.width
    payload = enc.payload
    planes = []
    off = 0
    for ph, pw in ((h, w), (h // 2, w // 2), (h // 2, w // 2)):
        (n,) = struct.unpack_from("<I", payload, off)
        off += 4
        planes.append(_decode_plane(payload[off:off + n], step, ph, pw))
        off += n
    y = planes[0]
    cb = np.repeat(np.repeat(planes[1], 2, axis=0), 2, axis=1)[:h, :w]
    cr = np.repeat(np.repeat(planes[2], 2, axis=0), 2, axis=1)[:h, :w]
    return _ycc_to_rgb(y, cb, cr)


@dataclass
class RateControlResult:
    frame: "EncodedFrame"
    payload_bytes: int
    budget_bytes: int
    within_budget: bool


def _fill_budget(enc, size, budget):
    """Append a padding section so the frame occupies its whole rate budget."""
    pad = budget - size
    if pad >= 4:
        enc = EncodedFrame(enc.resolution_id, enc.quality,
                           enc.payload + struct.pack("<I", pad - 4) + bytes(pad - 4),
                           enc.is_key, enc.width, enc.height)
        size = budget
    return enc, size


def encode_at_bitrate(frame, target_kbps, fps):
    """Best quality whose payload fits the per-frame budget (binary search).

    Leftover budget is consumed by a padding section, giving constant-bitrate
    behavior whenever the target is feasible.  When even the coarsest quality
    overshoots, returns it flagged (and unpadded).
    """
    if target_kbps <= 0 or fps <= 0:
        raise ShapeMismatch("target bitrate and fps must be positive")
    budget = int(target_kbps * 1000.0 / 8.0 / fps)

    def size_at(q):
        enc = encode(frame, q)
        return enc, len(enc.to_bytes())

    lo, hi = FINEST, COARSEST
    enc, n = size_at(FINEST)
    if n <= budget:
        return RateControlResult(*_fill_budget(enc, n, budget), budget, True)
    enc, n = size_at(COARSEST)
    if n > budget:
        return RateControlResult(enc, n, budget, False)
    best = (enc, n)
    # payload size is non-increasing in quality index; find the finest fit
    while lo + 1 < hi:
        mid = (lo + hi) // 2
        enc, n = size_at(mid)
        if n <= budget:
            hi = mid
            best = (enc, n)
        else:
            lo = mid
    return RateControlResult(*_fill_budget(best[0], best[1], budget), budget, True)


def downsample(frame, to):
    """Area-average (box) reduction between power-of-two square resolutions."""
    frame = check_chw(frame, "downsample input")
    c, h, w = frame.shape
    if h != w:
        raise ShapeMismatch(f"downsample expects square frames, got {h}x{w}")
    for size in (h, to):
        if size & (size - 1) or not RESOLUTIONS[0] <= size <= RESOLUTIONS[-1]:
            raise ShapeMismatch(f"resolution {size} not a power of two in "
                                f"[{RESOLUTIONS[0]}, {RESOLUTIONS[-1]}]")
    if to > h:
        raise ShapeMismatch(f"downsample cannot upscale {h} -> {to}")
    if to == h:
        return frame.copy()
    f = h // to
    return frame.reshape(c, to, f, to, f).mean(axis=(2, 4), dtype=np.float32)


def _cubic_weights(t):
    # Catmull-Rom coefficients (a = -0.5)
    a = -0.5
    t = np.abs(t)
    w = np.where(t <= 1.0,
                 (a + 2.0) * t ** 3 - (a + 3.0) * t ** 2 + 1.0,
                 np.where(t < 2.0, a * t ** 3 - 5.0 * a * t ** 2 + 8.0 * a * t - 4.0 * a, 0.0))
    return w


def _cubic_axis(src, dst):
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    base = np.floor(pos).astype(np.int64)
    taps = base[:, None] + np.arange(-1, 3)[None, :]
    weights = _cubic_weights(pos[:, None] - taps)
    return np.clip(taps, 0, src - 1), weights.astype(np.float32)


def bicubic_upsample(frame, to):
    """Separable Catmull-Rom upsample; border clamped; output clamped to [0, 1]."""
    frame = check_chw(frame, "bicubic input")
    c, h, w = frame.shape
    if to < h or to < w:
        raise ShapeMismatch(f"bicubic_upsample cannot shrink {h}x{w} -> {to}")
    idx_h, w_h = _cubic_axis(h, to)
    idx_w, w_w = _cubic_axis(w, to)
    rows = (frame[:, idx_h, :] * w_h[None, :, :, None]).sum(axis=2)  # (c, to, w)
    cols = (rows[:, :, idx_w] * w_w[None, None, :, :]).sum(axis=3)  # (c, to, to)
    return np.clip(cols, 0.0, 1.0).astype(np.float32)


def nearest_upsample(frame, to):
    """Integer-factor nearest-neighbor upsample (baseline comparator)."""
    frame = check_chw(frame, "nearest input")
    c, h, w = frame.shape
    if to % h or to % w:
        raise ShapeMismatch(f"nearest_upsample needs an integer factor, {h}x{w} -> {to}")
    return np.repeat(np.repeat(frame, to // h, axis=1), to // w, axis=2)


@dataclass
class RateProfile:
    """Per-resolution achievable bitrate ranges at a frame rate."""

    fps: float
    rows: dict  # resolution -> {"min_kbps", "max_kbps", "kbps_by_quality"}

    def range_for(self, resolution):
        if resolution not in self.rows:
            raise FormatError(f"profile has no row for resolution {resolution}")
        row = self.rows[resolution]
        return row["min_kbps"], row["max_kbps"]

    def to_json(self):
        return json.dumps(
            {"fps": self.fps,
             "rows": {str(r): self.rows[r] for r in sorted(self.rows)}},
            indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        try:
            obj = json.loads(text)
            rows = {int(k): v for k, v in obj["rows"].items()}
            return cls(float(obj["fps"]), rows)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed rate profile: {exc}") from exc


def profile(corpus, fps, resolutions=None):
    """Sweep the quality range per resolution over a corpus of square frames."""
    corpus = list(corpus)
    if not corpus:
        raise FormatError("rate profiling needs a non-empty corpus")
    if fps <= 0:
        raise ShapeMismatch("fps must be positive")
    source = corpus[0].shape[1]
    if resolutions is None:
        resolutions = [r for r in RESOLUTIONS if r <= source]
    rows = {}
    for res in resolutions:
        frames = [downsample(f, res) for f in corpus]
        kbps = []
        for q in range(QUALITY_LEVELS):
            mean_bytes = float(np.mean([len(encode(f, q).to_bytes()) for f in frames]))
            kbps.append(mean_bytes * 8.0 * fps / 1000.0)
        rows[res] = {"min_kbps": min(kbps), "max_kbps": max(kbps), "kbps_by_quality": kbps}
    return RateProfile(float(fps), rows)
