import numpy as np
import pytest

from vcsr import PipelineError, ShapeMismatch
from vcsr.codec import downsample
from vcsr.keypoints import NUM_KEYPOINTS, KeypointSet
from vcsr.synthesizer import (RESIDUAL_BLOCKS, Synthesizer, SynthesizerConfig,
                              model_param_specs, multiscale_cost_report,
                              synthesizer_param_specs)
from vcsr.tensor import batchnorm_infer, conv2d, grid_sample, identity_grid, relu, \
    resize_bilinear, upsample2
from vcsr.weights import random_init


def random_kp(rng, identity_jacobians=True):
    locs = rng.uniform(-0.5, 0.5, (NUM_KEYPOINTS, 2)).astype(np.float32)
    if identity_jacobians:
        return KeypointSet.identity(locs)
    jac = (np.eye(2, dtype=np.float32)
           + 0.1 * rng.standard_normal((NUM_KEYPOINTS, 2, 2)).astype(np.float32))
    return KeypointSet(locs, jac)


class TestConfig:
    def test_block_counts_by_resolution(self):
        assert SynthesizerConfig(256).n_blocks == 2
        assert SynthesizerConfig(512).n_blocks == 3
        assert SynthesizerConfig(1024).n_blocks == 4

    def test_bottleneck_channels(self):
        assert SynthesizerConfig(1024).bottleneck_channels == 256
        assert SynthesizerConfig(512).bottleneck_channels == 256
        assert SynthesizerConfig(256).bottleneck_channels == 128

    def test_unsupported_resolution_rejected(self):
        with pytest.raises(ShapeMismatch):
            SynthesizerConfig(100)


class TestEncodeReference:
    def test_shape_law_512(self):
        cfg = SynthesizerConfig(512)
        model = Synthesizer.from_store(random_init(model_param_specs(cfg), 2), cfg)
        ref = np.random.default_rng(0).random((3, 512, 512), dtype=np.float32)
        feat = model.encode_reference(ref)
        assert feat.bottleneck.shape == (256, 64, 64)
        assert len(feat.skips) == 2
        assert feat.skips[0].shape == (64, 512, 512)
        assert feat.skips[1].shape == (128, 256, 256)

    def test_deterministic(self, model256, rng):
        ref = rng.random((3, 256, 256), dtype=np.float32)
        a = model256.encode_reference(ref)
        b = model256.encode_reference(ref)
        np.testing.assert_array_equal(a.bottleneck, b.bottleneck)

    def test_resolution_mismatch_rejected(self, model256):
        with pytest.raises(ShapeMismatch):
            model256.encode_reference(np.zeros((3, 128, 128), np.float32))


class TestLrFeatures:
    def test_64_input_keeps_grid(self, model256, rng):
        out = model256.lr_features(rng.random((3, 64, 64), dtype=np.float32))
        assert out.shape == (128, 64, 64)

    def test_128_input_resampled(self, model256, rng):
        out = model256.lr_features(rng.random((3, 128, 128), dtype=np.float32))
        assert out.shape == (128, 64, 64)

    def test_constant_input_zero_weights_gives_bias(self):
        cfg = SynthesizerConfig(256)
        store = random_init(model_param_specs(cfg), 3)
        store.entries["synth.lr.weight"][:] = 0.0
        store.entries["synth.lr.bias"][:] = np.linspace(-1, 1, cfg.bottleneck_channels)
        model = Synthesizer.from_store(store, cfg)
        out = model.lr_features(np.full((3, 128, 128), 0.25, np.float32))
        want = np.linspace(-1, 1, cfg.bottleneck_channels, dtype=np.float32)
        np.testing.assert_allclose(out, want[:, None, None] * np.ones((1, 64, 64)), atol=1e-6)

    def test_unsupported_resolution_rejected(self, model256):
        with pytest.raises(ShapeMismatch):
            model256.lr_features(np.zeros((3, 100, 100), np.float32))


class TestRefine:
    def test_zero_final_convs_identity(self):
        cfg = SynthesizerConfig(256)
        store = random_init(model_param_specs(cfg), 4)
        for i in range(1, RESIDUAL_BLOCKS + 1):
            store.entries[f"synth.res.{i}.conv2.weight"][:] = 0.0
            store.entries[f"synth.res.{i}.conv2.bias"][:] = 0.0
        model = Synthesizer.from_store(store, cfg)
        x = np.random.default_rng(1).standard_normal(
            (cfg.bottleneck_channels, 64, 64)).astype(np.float32)
        np.testing.assert_array_equal(model.refine(x, "warped"), x)

    def test_shape_preserved(self, model256, rng):
        x = rng.standard_normal((128, 64, 64)).astype(np.float32)
        assert model256.refine(x, "static").shape == x.shape

    def test_matches_block_by_block_oracle(self, store256, model256, rng):
        x = rng.standard_normal((128, 64, 64)).astype(np.float32)
        got = model256.refine(x, "warped")
        cur = x
        for i in range(1, RESIDUAL_BLOCKS + 1):
            p = f"synth.res.{i}"
            h = relu(batchnorm_infer(cur, store256.get(f"{p}.bn1.mean"),
                                     store256.get(f"{p}.bn1.var"),
                                     store256.get(f"{p}.bn1.gamma"),
                                     store256.get(f"{p}.bn1.beta")))
            h = conv2d(h, store256.get(f"{p}.conv1.weight"), store256.get(f"{p}.conv1.bias"))
            h = relu(batchnorm_infer(h, store256.get(f"{p}.bn2.mean"),
                                     store256.get(f"{p}.bn2.var"),
                                     store256.get(f"{p}.bn2.gamma"),
                                     store256.get(f"{p}.bn2.beta")))
            h = conv2d(h, store256.get(f"{p}.conv2.weight"), store256.get(f"{p}.conv2.bias"))
            cur = cur + h
        np.testing.assert_allclose(got, cur, atol=1e-5)

    def test_unknown_branch_rejected(self, model256, rng):
        with pytest.raises(ShapeMismatch):
            model256.refine(rng.standard_normal((128, 64, 64)).astype(np.float32), "other")


class TestPredict:
    def test_identity_warp_corollary(self, model256, rng):
        ref = rng.random((3, 256, 256), dtype=np.float32)
        kp = random_kp(rng)
        out, stages = model256.predict(ref, downsample(ref, 128), kp, kp,
                                       want_stages=True)
        np.testing.assert_allclose(stages["warp_field"], identity_grid(64, 64), atol=1e-6)
        np.testing.assert_array_equal(stages["warped"], stages["bottleneck"])
        np.testing.assert_array_equal(stages["refined_warped"], stages["refined_static"])
        assert out.shape == (3, 256, 256)
        assert np.isfinite(out).all()

    def test_deterministic_and_bounded(self, model256, rng):
        ref = rng.random((3, 256, 256), dtype=np.float32)
        tgt = rng.random((3, 128, 128), dtype=np.float32)
        kp_a, kp_b = random_kp(rng, False), random_kp(rng, False)
        one = model256.predict(ref, tgt, kp_a, kp_b)
        two = model256.predict(ref, tgt, kp_a, kp_b)
        np.testing.assert_array_equal(one, two)
        assert one.min() >= 0.0 and one.max() <= 1.0

    def test_forced_lr_only_masks_match_stagewise_oracle(self, rng):
        cfg = SynthesizerConfig(256)
        store = random_init(model_param_specs(cfg), 6)
        store.entries["synth.lr.weight"][:] = 0.0
        store.entries["synth.lr.bias"][:] = 0.125
        model = Synthesizer.from_store(store, cfg)
        tgt = rng.random((3, 128, 128), dtype=np.float32)

        combined = model.lr_features(tgt)  # masks A=B=0, C=1 select only this
        np.testing.assert_allclose(combined, 0.125, atol=1e-6)
        warp = identity_grid(64, 64)
        skips = [np.zeros((64, 256, 256), np.float32), np.zeros((128, 128, 128), np.float32)]
        got = model.decode(combined, skips, warp, np.zeros((64, 64), np.float32))

        # independent stagewise recomputation from the raw store entries
        x = combined
        for k, skip in ((1, skips[1]), (2, skips[0])):
            x = upsample2(x, "bilinear")
            s = skip.shape[1]
            warped_skip = grid_sample(skip, resize_bilinear(
                np.ascontiguousarray(warp.transpose(2, 0, 1)), s, s).transpose(1, 2, 0))
            x = np.concatenate([x, warped_skip * 0.0], axis=0)
            p = f"synth.dec{k}"
            x = relu(batchnorm_infer(conv2d(x, store.get(f"{p}.conv.weight"),
                                            store.get(f"{p}.conv.bias")),
                                     store.get(f"{p}.bn.mean"), store.get(f"{p}.bn.var"),
                                     store.get(f"{p}.bn.gamma"), store.get(f"{p}.bn.beta")))
        want = np.clip(conv2d(x, store.get("synth.final.weight"),
                              store.get("synth.final.bias")), 0.0, 1.0)
        np.testing.assert_allclose(got, want, atol=1e-5)

    def test_stage_annotation_on_errors(self, model256, rng):
        ref = rng.random((3, 256, 256), dtype=np.float32)
        kp = random_kp(rng)
        with pytest.raises(PipelineError, match=r"\[stage \w+\]"):
            model256.predict(ref, np.zeros((3, 100, 100), np.float32), kp, kp)


class TestCostReport:
    def test_motion_ratio_is_area_ratio(self):
        for r in (256, 512, 1024):
            rep = multiscale_cost_report(SynthesizerConfig(r))
            assert rep["motion_stage_ratio"] == (r / 64) ** 2

    def test_pipeline_ratio_floor_at_1024(self):
        rep = multiscale_cost_report(SynthesizerConfig(1024))
        assert rep["pipeline_ratio"] >= 2.75

    def test_deterministic(self):
        a = multiscale_cost_report(SynthesizerConfig(512))
        b = multiscale_cost_report(SynthesizerConfig(512))
        assert a == b

    def test_counts_positive_integers(self):
        rep = multiscale_cost_report(SynthesizerConfig(256))
        for key, value in rep.items():
            if key.endswith("_macs"):
                assert isinstance(value, int) and value > 0


class TestParamSpecs:
    def test_unique_names(self):
        specs = model_param_specs(SynthesizerConfig(1024))
        names = [s.name for s in specs]
        assert len(names) == len(set(names))

    def test_resolution_changes_only_synth(self):
        a = {s.name: s.shape for s in synthesizer_param_specs(SynthesizerConfig(256))}
        b = {s.name: s.shape for s in synthesizer_param_specs(SynthesizerConfig(1024))}
        assert a["synth.stem.weight"] == b["synth.stem.weight"]
        assert a["synth.lr.weight"] != b["synth.lr.weight"]
