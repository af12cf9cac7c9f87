"""End-to-end engine tests: configuration checks, identity behaviour of a
fresh model, synthetic pair generation, supervision preparation, and short
training runs."""

import numpy as np
import pytest

from pyraffine import pipeline as P
from pyraffine import regressors
from pyraffine.geometry import flow_from_field, warp_image


def small_config(**overrides):
    """One grid level plus the pixel level at toy sizes."""
    base = dict(grid_levels=1, window_ratios=(0.1, 0.1), strides=(4, 4),
                scale_indices=((0, 1), (0, 1)), iterations=3, batch_size=2,
                sample_floor=4, min_inlier_ratio=0.05, seed=0)
    base.update(overrides)
    return P.PyramidConfig(**base)


def small_dataset(rng, n=3, size=64, mode="global"):
    return [P.synth_pair(P.make_texture_image(rng, size, size), rng, mode)
            for _ in range(n)]


class TestConfig:
    def test_schedule_lengths_must_match_levels(self):
        with pytest.raises(ValueError):
            P.PyramidConfig(grid_levels=2, window_ratios=(0.1, 0.1))
        with pytest.raises(ValueError):
            P.PyramidConfig(grid_levels=1, window_ratios=(0.1, 0.1),
                            strides=(4,), scale_indices=((0,), (0,)))

    def test_grid_levels_positive(self):
        with pytest.raises(ValueError):
            P.PyramidConfig(grid_levels=0, window_ratios=(0.1,),
                            strides=(4,), scale_indices=((0,),))

    def test_work_dims_rounding_and_floor(self):
        cfg = small_config()
        assert cfg.work_dims(1, 128, 128) == (32, 32)
        assert cfg.work_dims(1, 120, 68) == (30, 17)
        # the floor keeps tiny images at the extractor's minimum side
        floored = cfg.work_dims(1, 64, 64)
        assert min(floored) >= 16

    def test_level_index_bounds(self):
        cfg = small_config()
        assert cfg.level_index(1) == 0
        assert cfg.level_index(P.PIXEL_LEVEL) == 1
        with pytest.raises(ValueError):
            cfg.level_index(2)

    def test_level_spec_uses_schedule_entries(self):
        cfg = small_config(window_ratios=(0.2, 0.3),
                           scale_indices=((2,), (0, 1)))
        spec = cfg.level_spec(1)
        assert (spec.level, spec.scale_indices, spec.window_ratio) == (1, [2], 0.2)
        spec = cfg.level_spec(P.PIXEL_LEVEL)
        assert (spec.level, spec.scale_indices, spec.window_ratio) == (2, [0, 1], 0.3)


class TestIdentityModel:
    def test_fresh_model_is_identity_end_to_end(self, rng):
        # zero-initialized heads must give the exact identity at every level
        cfg = small_config()
        src = P.make_texture_image(rng, 64, 64)
        tgt = P.make_texture_image(rng, 64, 64)
        model = P.ModelParams.init(cfg, (64, 64))
        res = P.run_inference(src, tgt, cfg, model)
        identity = np.zeros((64, 64, 6))
        identity[..., 0] = 1.0
        identity[..., 4] = 1.0
        for fld in res.level_fields:
            assert np.array_equal(fld.params, identity)
        assert np.array_equal(res.final_field.params, identity)
        assert np.array_equal(res.warped, src)

    def test_missing_level_params_rejected(self, rng):
        cfg = small_config()
        model = P.ModelParams.init(cfg, (64, 64))
        other = P.PyramidConfig(grid_levels=2, window_ratios=(0.1,) * 3,
                                strides=(4,) * 3, scale_indices=((0,),) * 3)
        src = P.make_texture_image(rng, 64, 64)
        with pytest.raises(ValueError):
            P.run_inference(src, src, other, model)


class TestSynthPair:
    def test_target_is_exact_warp(self, rng):
        pair = P.synth_pair(P.make_texture_image(rng, 64, 64), rng)
        assert np.array_equal(pair.target,
                              warp_image(pair.source, pair.gt_field))
        assert np.array_equal(pair.gt_flow, flow_from_field(pair.gt_field))

    def test_mask_margin_and_validity(self, rng):
        pair = P.synth_pair(P.make_texture_image(rng, 64, 64), rng)
        assert not pair.mask[0].any() and not pair.mask[:, 0].any()
        # masked pixels map to in-bounds source coordinates
        ys, xs = np.nonzero(pair.mask)
        sx = xs + pair.gt_flow[ys, xs, 0]
        sy = ys + pair.gt_flow[ys, xs, 1]
        assert (sx >= 0).all() and (sx <= 63).all()
        assert (sy >= 0).all() and (sy <= 63).all()

    def test_modes_and_validation(self, rng):
        img = P.make_texture_image(rng, 64, 64)
        for mode in P.SYNTH_MODES:
            P.synth_pair(img, rng, mode)
        with pytest.raises(ValueError):
            P.synth_pair(img, rng, "nope")
        with pytest.raises(ValueError):
            P.synth_pair(P.make_texture_image(rng, 32, 32), rng)

    def test_deterministic_for_fixed_seed(self):
        a = P.synth_pair(P.make_texture_image(np.random.default_rng(3), 64, 64),
                         np.random.default_rng(7))
        b = P.synth_pair(P.make_texture_image(np.random.default_rng(3), 64, 64),
                         np.random.default_rng(7))
        assert np.array_equal(a.target, b.target)
        assert np.array_equal(a.gt_flow, b.gt_flow)

    def test_quadsplit_varies_across_quadrants(self, rng):
        # the 2x2 cell grid is interpolated into a dense field, so the field
        # is smooth but the four image corners carry distinct affines
        pair = P.synth_pair(P.make_texture_image(rng, 64, 64), rng, "quadsplit")
        corners = [pair.gt_field.params[0, 0], pair.gt_field.params[0, -1],
                   pair.gt_field.params[-1, 0], pair.gt_field.params[-1, -1]]
        assert any(not np.allclose(corners[0], c) for c in corners[1:])
        globally_constant = np.ptp(
            pair.gt_field.params.reshape(-1, 6), axis=0).max() < 1e-12
        assert not globally_constant

    def test_random_affine_ranges(self, rng):
        for _ in range(50):
            t = P.random_affine(rng, 64, 64, rot_max_deg=20.0,
                                scale_range=(0.8, 1.25), trans_frac=0.0,
                                shear_max=0.0)
            lin = np.array([[t.a11, t.a12], [t.a21, t.a22]])
            s = np.sqrt(np.linalg.det(lin))
            assert 0.8 - 1e-9 <= s <= 1.25 + 1e-9
            theta = np.arctan2(t.a21, t.a11)
            assert abs(np.rad2deg(theta)) <= 20.0 + 1e-9


class TestSupervisionPreparation:
    def test_level_data_shapes(self, rng):
        cfg = small_config()
        pair = small_dataset(rng, n=1)[0]
        model = P.ModelParams.init(cfg, (64, 64))
        data = P.prepare_level_data(pair, 1, cfg, model)
        assert data is not None
        wh, ww = data.work_dims
        assert data.features.shape == (regressors.FEAT_CHANNELS, wh, ww)
        assert data.coords.shape == data.targets.shape
        assert (data.coords[:, 0] < ww).all() and (data.coords[:, 1] < wh).all()
        assert data.in_channels == regressors.in_channels_for(
            P.window_radius(cfg.window_ratios[0], wh, ww))

    def test_all_background_pair_dropped(self, rng):
        cfg = small_config()
        pair = small_dataset(rng, n=1)[0]
        pair.mask = np.zeros_like(pair.mask)
        model = P.ModelParams.init(cfg, (64, 64))
        assert P.prepare_level_data(pair, 1, cfg, model) is None


class TestTraining:
    def test_short_run_returns_curve_and_installs_params(self, rng):
        cfg = small_config()
        dataset = small_dataset(rng, n=3)
        model = P.ModelParams.init(cfg, (64, 64), with_pixel=False)
        params, curve, diag = P.train_level(1, dataset, cfg, model)
        assert len(curve) == cfg.iterations
        assert all(np.isfinite(curve))
        assert model.grids[1] is params
        assert diag["pairs"] == 3

    def test_training_is_deterministic(self, rng):
        dataset = small_dataset(rng, n=3)
        curves = []
        for _ in range(2):
            cfg = small_config()
            model = P.ModelParams.init(cfg, (64, 64), with_pixel=False)
            _, curve, _ = P.train_level(1, dataset, cfg, model)
            curves.append(curve)
        assert curves[0] == curves[1]

    def test_aborts_when_every_pair_is_dropped(self, rng):
        cfg = small_config()
        dataset = small_dataset(rng, n=2)
        for pair in dataset:
            pair.mask = np.zeros_like(pair.mask)
        model = P.ModelParams.init(cfg, (64, 64), with_pixel=False)
        with pytest.raises(P.TrainingAborted):
            P.train_level(1, dataset, cfg, model)

    def test_train_all_covers_all_levels(self, rng):
        cfg = small_config(iterations=2)
        dataset = small_dataset(rng, n=2)
        model, curves = P.train_all(dataset, cfg, with_pixel=True)
        assert set(model.grids) == {1}
        assert model.pixel is not None
        assert len(curves["level1"]) == 2
        assert len(curves["pixel"]) == 2

    def test_model_save_load_round_trip(self, rng, tmp_path):
        cfg = small_config()
        model = P.ModelParams.init(cfg, (64, 64))
        model.save(tmp_path)
        loaded = P.ModelParams.load(tmp_path, cfg.grid_levels)
        for k in model.grids:
            for name, block in model.grids[k].blocks.items():
                assert np.array_equal(block.data, loaded.grids[k].blocks[name].data)
        assert loaded.pixel is not None
