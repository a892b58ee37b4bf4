import numpy as np
import pytest

from vcsr import FormatError, ShapeMismatch
from vcsr import codec
from vcsr.metrics import psnr
from vcsr.rawvideo import to_float
from vcsr.synthetic import make_clip
from vcsr.tensor import avgpool2

import oracles


def textured_frame(size=64, seed=0):
    return to_float(make_clip(size, 1, seed=seed)[0])


class TestDownsample:
    def test_single_block_mean(self):
        x = np.zeros((3, 128, 128), np.float32)
        x[0, :2, :2] = [[1, 2], [3, 4]]
        out = codec.downsample(x, 64)
        assert out[0, 0, 0] == 2.5

    def test_constant_preserved(self):
        x = np.full((3, 256, 256), 0.6, np.float32)
        np.testing.assert_allclose(codec.downsample(x, 64), 0.6, atol=1e-6)

    def test_1024_to_128_matches_repeated_avgpool(self, rng):
        x = rng.random((3, 1024, 1024), dtype=np.float32)
        got = codec.downsample(x, 128)
        want = avgpool2(avgpool2(avgpool2(x)))
        np.testing.assert_allclose(got, want, atol=1e-5)

    def test_upscale_rejected(self):
        with pytest.raises(ShapeMismatch):
            codec.downsample(np.zeros((3, 64, 64), np.float32), 128)


class TestBicubic:
    def test_identity_at_same_size(self, rng):
        x = rng.random((3, 64, 64), dtype=np.float32)
        np.testing.assert_allclose(codec.bicubic_upsample(x, 64), x, atol=1e-6)

    def test_constant_preserved(self):
        x = np.full((3, 32, 32), 0.4, np.float32)
        np.testing.assert_allclose(codec.bicubic_upsample(x, 128), 0.4, atol=1e-6)

    def test_4x4_to_8x8_matches_kernel_oracle(self, rng):
        x = rng.random((2, 4, 4), dtype=np.float32)
        got = codec.bicubic_upsample(x, 8)
        np.testing.assert_allclose(got, oracles.bicubic_loops(x, 8), atol=1e-5)

    def test_output_clamped(self, rng):
        x = rng.random((3, 16, 16), dtype=np.float32)
        out = codec.bicubic_upsample(x, 64)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestEncodeDecode:
    def test_finest_on_constant_frame_near_lossless(self):
        x = np.full((3, 64, 64), 0.5, np.float32)
        dec = codec.decode(codec.encode(x, codec.FINEST))
        assert psnr(np.clip(dec, 0, 1), x) > 50.0

    def test_round_trip_deterministic(self):
        x = textured_frame()
        a = codec.encode(x, 10)
        b = codec.encode(x, 10)
        assert a.to_bytes() == b.to_bytes()
        np.testing.assert_array_equal(codec.decode(a), codec.decode(b))

    def test_round_trip_idempotent(self):
        x = textured_frame(seed=3)
        for q in (0, 9, 20, codec.COARSEST):
            d1 = codec.decode(codec.encode(x, q))
            e2 = codec.encode(d1, q)
            d2 = codec.decode(e2)
            np.testing.assert_array_equal(d1, d2)

    def test_payload_monotone_in_quality(self):
        for seed in range(4):
            x = textured_frame(seed=seed)
            sizes = [len(codec.encode(x, q).to_bytes()) for q in range(codec.QUALITY_LEVELS)]
            assert all(a >= b for a, b in zip(sizes, sizes[1:]))

    def test_psnr_monotone_in_quality(self):
        x = textured_frame(seed=5)
        values = [psnr(np.clip(codec.decode(codec.encode(x, q)), 0, 1), x)
                  for q in range(0, codec.QUALITY_LEVELS, 2)]
        assert all(a >= b - 1e-9 for a, b in zip(values, values[1:]))

    def test_wire_format_parses(self):
        x = textured_frame()
        enc = codec.encode(x, 7)
        again = codec.EncodedFrame.from_bytes(enc.to_bytes())
        assert (again.resolution_id, again.quality, again.width, again.height) == \
            (enc.resolution_id, enc.quality, 64, 64)
        assert again.is_key
        np.testing.assert_array_equal(codec.decode(again), codec.decode(enc))

    def test_corrupt_payload_rejected(self):
        x = textured_frame()
        blob = bytearray(codec.encode(x, 7).to_bytes())
        blob[40] ^= 0xFF
        with pytest.raises(FormatError):
            codec.decode(codec.EncodedFrame.from_bytes(bytes(blob)))

    def test_bad_magic_rejected(self):
        with pytest.raises(FormatError, match="magic"):
            codec.EncodedFrame.from_bytes(b"XXXX" + b"\0" * 16)

    def test_non_multiple_of_8_rejected(self):
        with pytest.raises(ShapeMismatch, match="divisible by 8"):
            codec.encode(np.zeros((3, 60, 60), np.float32), 5)

    def test_dims_divisible_by_8_but_not_16_work(self, rng):
        # grayscale so the 4:2:0 chroma path is exact; exercises plane padding
        plane = rng.random((24, 40), dtype=np.float32)
        x = np.stack([plane, plane, plane])
        dec = codec.decode(codec.encode(x, codec.FINEST))
        assert dec.shape == (3, 24, 40)
        assert psnr(np.clip(dec, 0, 1), x) > 45.0


class TestRateControl:
    def test_generous_budget_picks_finest(self):
        x = textured_frame()
        rc = codec.encode_at_bitrate(x, 1e6, 30.0)
        assert rc.frame.quality == codec.FINEST
        assert rc.within_budget

    def test_impossible_budget_flags_overshoot(self):
        x = textured_frame()
        rc = codec.encode_at_bitrate(x, 0.5, 30.0)
        assert rc.frame.quality == codec.COARSEST
        assert not rc.within_budget
        assert rc.payload_bytes > rc.budget_bytes

    def test_feasible_budgets_respected(self):
        x = textured_frame(seed=2)
        fps = 30.0
        floor = len(codec.encode(x, codec.COARSEST).to_bytes())
        ceil = len(codec.encode(x, codec.FINEST).to_bytes())
        for budget_bytes in np.linspace(floor, ceil, 12):
            kbps = budget_bytes * 8.0 * fps / 1000.0
            rc = codec.encode_at_bitrate(x, kbps, fps)
            assert rc.within_budget
            assert rc.payload_bytes <= rc.budget_bytes
            assert len(rc.frame.to_bytes()) == rc.payload_bytes


class TestProfile:
    def test_ranges_monotone_in_resolution(self):
        corpus = [to_float(f) for f in make_clip(256, 2, seed=1)]
        prof = codec.profile(corpus, 30.0)
        rows = [prof.rows[r] for r in sorted(prof.rows)]
        for a, b in zip(rows, rows[1:]):
            assert a["min_kbps"] < b["min_kbps"]
            assert a["max_kbps"] < b["max_kbps"]
        for row in rows:
            assert row["min_kbps"] < row["max_kbps"]

    def test_single_frame_corpus(self):
        prof = codec.profile([textured_frame()], 30.0)
        assert 64 in prof.rows

    def test_deterministic_and_serializable(self):
        corpus = [textured_frame(seed=4)]
        a = codec.profile(corpus, 30.0)
        b = codec.profile(corpus, 30.0)
        assert a.to_json() == b.to_json()
        again = codec.RateProfile.from_json(a.to_json())
        assert again.range_for(64) == a.range_for(64)

    def test_empty_corpus_rejected(self):
        with pytest.raises(FormatError):
            codec.profile([], 30.0)
