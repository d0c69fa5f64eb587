"""Tests for the multi-level viewport descriptor."""

import numpy as np
import pytest

from src.errors import ShapeError, TapeError
from src.model.descriptor import (
    PYRAMID_PROFILES, FeaturePyramid, compact_level, concat_levels, describe_viewports,
    descriptor_backward, stack_pyramids, synthesize_pyramid,
)
from src.model.gradcheck import numeric_gradient, relative_error
from src.model.params import DescriptorConfig, PredictorConfig, init_params


def _zero_head(channels, reduced=16, grid=8, dim=256):
    flat = reduced * grid * grid
    return np.zeros((channels, reduced)), np.zeros(reduced), np.zeros((flat, dim)), np.zeros(dim)


class TestCompactLevel:

    def test_zero_weights_give_zero_vector(self, rng):
        out, _ = compact_level(rng.normal(size=(64, 32, 32)), *_zero_head(64))
        np.testing.assert_array_equal(out, np.zeros(256))

    def test_constant_input_averaging_head(self):
        reduce_w = np.zeros((64, 16))
        reduce_w[np.arange(16), np.arange(16)] = 1.0
        fc_w = np.full((1024, 256), 1.0 / 1024)
        out, _ = compact_level(np.ones((64, 16, 16)), reduce_w, np.zeros(16), fc_w, np.zeros(256))
        np.testing.assert_allclose(out, 1.0, atol=1e-12)

    @pytest.mark.parametrize('size', [32, 30, 16, 10, 8])
    def test_output_length(self, rng, size):
        reduce_w, reduce_b, fc_w, fc_b = (rng.normal(size=a.shape) for a in _zero_head(64))
        out, _ = compact_level(rng.normal(size=(64, size, size)), reduce_w, reduce_b, fc_w, fc_b)
        assert out.shape == (256,)

    def test_max_pool_matches_block_max(self, rng):
        maps = rng.normal(size=(32, 16, 16))
        reduce_w = np.zeros((32, 4))
        reduce_w[np.arange(4), np.arange(4)] = 1.0
        out, _ = compact_level(maps, reduce_w, np.zeros(4), np.eye(256), np.zeros(256))
        oracle = maps[:4].reshape(4, 8, 2, 8, 2).max(axis=(2, 4)).ravel()
        np.testing.assert_allclose(out, oracle, atol=0)

    def test_positive_homogeneity(self, rng):
        reduce_w = rng.normal(size=(64, 16))
        fc_w = rng.normal(size=(1024, 256))
        maps = rng.normal(size=(64, 16, 16))
        base, _ = compact_level(maps, reduce_w, np.zeros(16), fc_w, np.zeros(256))
        scaled, _ = compact_level(2.5 * maps, reduce_w, np.zeros(16), fc_w, np.zeros(256))
        np.testing.assert_allclose(scaled, 2.5 * base, atol=1e-6)

    def test_stack_matches_single(self, rng):
        head = [rng.normal(size=a.shape) for a in _zero_head(64, reduced=4, grid=4, dim=8)]
        maps = rng.normal(size=(3, 64, 8, 8))
        stacked, _ = compact_level(maps, *head, pool_grid=4)
        for v in range(3):
            single, _ = compact_level(maps[v], *head, pool_grid=4)
            np.testing.assert_allclose(stacked[v], single, atol=1e-12)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            compact_level(rng.normal(size=(32, 16, 16)), *_zero_head(64))


class TestConcatLevels:

    def test_zero_vectors(self):
        out = concat_levels([np.zeros(256)] * 4)
        np.testing.assert_array_equal(out, np.zeros(1024))

    def test_level_order(self):
        out = concat_levels([np.full(256, float(v)) for v in (1, 2, 3, 4)])
        for index in range(4):
            np.testing.assert_array_equal(out[index * 256:(index + 1) * 256], index + 1)

    def test_reversed_order_permutes(self, rng):
        levels = [rng.normal(size=256) for _ in range(4)]
        forward = concat_levels(levels)
        backward = concat_levels(levels[::-1])
        np.testing.assert_array_equal(backward, np.concatenate([forward[768:], forward[512:768],
                                                                forward[256:512], forward[:256]]))

    def test_wrong_count(self):
        with pytest.raises(ShapeError):
            concat_levels([np.zeros(256)] * 3)


class TestSynthesizePyramid:

    def test_deterministic(self):
        a, b = synthesize_pyramid(7), synthesize_pyramid(7)
        for x, y in zip(a.levels, b.levels):
            np.testing.assert_array_equal(x, y)

    def test_seeds_differ(self):
        a, b = synthesize_pyramid(7), synthesize_pyramid(8)
        assert not np.array_equal(a.levels[0], b.levels[0])

    def test_range_and_profile(self):
        pyramid = synthesize_pyramid(3, 'resnet18')
        assert pyramid.shapes == PYRAMID_PROFILES['resnet18']
        for level in pyramid.levels:
            assert level.min() >= -1.0 and level.max() <= 1.0

    def test_pyramid_validation(self):
        with pytest.raises(ShapeError):
            FeaturePyramid([np.zeros((4, 8, 8))] * 3)
        with pytest.raises(ShapeError):
            FeaturePyramid([np.zeros((4, 8, 8))] * 3 + [np.zeros((4, 4, 4))])


class TestDescriptorBackward:

    @pytest.fixture
    def setup(self, rng):
        config = DescriptorConfig(channels=(3, 4, 5, 6), reduced_channels=2, pool_grid=2, level_dim=3)
        params = init_params(config, PredictorConfig(layer_dims=(config.out_dim, 1)), seed=1)
        stacks = [rng.normal(size=(5, c, 8, 8)) for c in config.channels]
        return config, params, stacks

    def test_output_dimension(self, setup):
        config, params, stacks = setup
        x, _ = describe_viewports(stacks, params, config)
        assert x.shape == (5, 12)

    def test_zero_upstream_gradient(self, setup):
        config, params, stacks = setup
        _, tape = describe_viewports(stacks, params, config, record=True)
        grads, maps = descriptor_backward(np.zeros((5, 12)), tape)
        for grad in grads.values():
            assert not np.any(grad)
        for grad in maps.values():
            assert not np.any(grad)

    def test_fc_bias_gradient_is_upstream_slice(self, setup, rng):
        config, params, stacks = setup
        _, tape = describe_viewports(stacks, params, config, record=True)
        upstream = rng.normal(size=(5, 12))
        grads, _ = descriptor_backward(upstream, tape)
        np.testing.assert_allclose(grads['descriptor.level2.fc_b'], upstream[:, 6:9].sum(axis=0), atol=1e-12)

    def test_needs_tape(self):
        with pytest.raises(TapeError):
            descriptor_backward(np.zeros(12), None)

    def test_finite_differences(self, rng):
        maps = rng.uniform(0.0, 0.5, size=(2, 4, 8, 8))
        for v in range(2):
            for gi in range(2):
                for gj in range(2):
                    r, c = rng.integers(0, 4, size=2)
                    maps[v, :, gi * 4 + r, gj * 4 + c] += 2.0
        reduce_w = rng.uniform(0.5, 1.0, size=(4, 2))
        reduce_b = rng.normal(size=2)
        fc_w = rng.normal(size=(8, 5))
        fc_b = rng.normal(size=5)
        upstream = rng.normal(size=(2, 5))

        def loss():
            out, _ = compact_level(maps, reduce_w, reduce_b, fc_w, fc_b, pool_grid=2)
            return float(np.sum(out * upstream))

        config = DescriptorConfig(channels=(4, 4, 4, 4), levels=(0,), reduced_channels=2, pool_grid=2, level_dim=5)
        params = init_params(config, PredictorConfig(layer_dims=(5, 1)), seed=0)
        params.tensors.update({'descriptor.level0.reduce_w': reduce_w, 'descriptor.level0.reduce_b': reduce_b,
                               'descriptor.level0.fc_w': fc_w, 'descriptor.level0.fc_b': fc_b})
        stacks = [maps, None, None, None]
        _, tape = describe_viewports(stacks, params, config, record=True)
        grads, map_grads = descriptor_backward(upstream, tape)

        for name, array in [('reduce_w', reduce_w), ('reduce_b', reduce_b), ('fc_w', fc_w), ('fc_b', fc_b)]:
            indices = list(np.ndindex(array.shape))
            numeric = numeric_gradient(loss, array, indices)
            analytic = np.array([grads[f'descriptor.level0.{name}'][i] for i in indices])
            assert relative_error(analytic, numeric) < 1e-4, name

        indices = [(0, 1, 2, 3), (1, 3, 7, 7), (0, 0, 0, 0)]
        numeric = numeric_gradient(loss, maps, indices)
        analytic = np.array([map_grads[0][i] for i in indices])
        assert relative_error(analytic, numeric) < 1e-4


class TestStackPyramids:

    def test_stacks_levels(self):
        pyramids = [synthesize_pyramid(s, 'compact') for s in range(3)]
        stacks = stack_pyramids(pyramids)
        assert [s.shape for s in stacks] == [(3,) + shape for shape in PYRAMID_PROFILES['compact']]

    def test_mismatched_shapes(self):
        with pytest.raises(ShapeError):
            stack_pyramids([synthesize_pyramid(0, 'compact'), synthesize_pyramid(0, 'resnet18')])
