"""Tests for the manifest reader, dataset manager and prefetch loader."""

import numpy as np
import pytest
from PIL import Image

from src.errors import ManifestError, ShapeError
from src.geometry.sphere_geometry import default_viewport_centers
from src.model.descriptor import PYRAMID_PROFILES, synthesize_pyramid
from src.system.file_operations import FileOperations
from src.training.dataset import (
    DatasetManager, PrefetchLoader, ProjectionFeatureSource, Sample, read_manifest, read_pair_labels,
    viewport_file_name,
)
from tests.conftest import write_manifest


def _feature_dir(root, n=20, profile='compact', seed=0):
    ops = FileOperations(root)
    for index in range(n):
        ops.save_pyramid(viewport_file_name(index), synthesize_pyramid(seed + index, profile))
    return root


def _write_pairs(path, rows):
    path.write_text('first,second,label\n' + ''.join(f'{a},{b},{label}\n' for a, b, label in rows))
    return path


class TestReadManifest:

    def test_reads_rows(self, tmp_path):
        path = write_manifest(tmp_path / 'm.csv', [('a', 'img/a.png', '3.5', 'jpeg'), ('b', '', '4', '')],
                              distortion=True)
        samples = read_manifest(path)
        assert [s.sample_id for s in samples] == ['a', 'b']
        assert samples[0].path == tmp_path / 'img' / 'a.png'
        assert samples[0].mos == 3.5 and samples[0].distortion == 'jpeg'
        assert samples[1].path is None and samples[1].distortion is None
        assert samples[1].line == 3

    def test_absolute_path_kept(self, tmp_path):
        target = tmp_path / 'elsewhere'
        samples = read_manifest(write_manifest(tmp_path / 'm.csv', [('a', str(target), '1')]))
        assert samples[0].path == target

    def test_missing_column(self, tmp_path):
        path = tmp_path / 'm.csv'
        path.write_text('id,mos\na,1\n')
        with pytest.raises(ManifestError, match='missing column'):
            read_manifest(path)

    def test_duplicate_id_reports_line(self, tmp_path):
        path = write_manifest(tmp_path / 'm.csv', [('a', '', '1'), ('b', '', '2'), ('a', '', '3')])
        with pytest.raises(ManifestError, match=r'm\.csv:4: duplicate'):
            read_manifest(path)

    def test_invalid_mos_reports_line(self, tmp_path):
        path = write_manifest(tmp_path / 'm.csv', [('a', '', '1'), ('b', '', 'good')])
        with pytest.raises(ManifestError, match=r':3: invalid MOS'):
            read_manifest(path)

    def test_non_finite_mos(self, tmp_path):
        path = write_manifest(tmp_path / 'm.csv', [('a', '', 'nan')])
        with pytest.raises(ManifestError, match='non-finite'):
            read_manifest(path)

    def test_empty_id(self, tmp_path):
        path = write_manifest(tmp_path / 'm.csv', [(' ', '', '1')])
        with pytest.raises(ManifestError, match='empty sample id'):
            read_manifest(path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestError, match='not found'):
            read_manifest(tmp_path / 'none.csv')


class TestReadPairLabels:

    def test_combination_order_and_reversed_pairs(self, tmp_path):
        path = _write_pairs(tmp_path / 'pairs.csv', [('b', 'c', 0), ('a', 'b', 1), ('c', 'a', 1)])
        labels = read_pair_labels(path, ['a', 'b', 'c'])
        # (c, a, +1): a beats c, so the (a, c) pair is -1
        np.testing.assert_array_equal(labels, [1, -1, 0])

    def test_missing_pair(self, tmp_path):
        path = _write_pairs(tmp_path / 'pairs.csv', [('a', 'b', 1), ('a', 'c', 0)])
        with pytest.raises(ManifestError, match=r'no label for pair \(b, c\)'):
            read_pair_labels(path, ['a', 'b', 'c'])

    def test_pair_listed_twice(self, tmp_path):
        path = _write_pairs(tmp_path / 'pairs.csv', [('a', 'b', 1), ('b', 'a', -1)])
        with pytest.raises(ManifestError, match=r':3: pair \(b, a\) listed twice'):
            read_pair_labels(path, ['a', 'b'])

    @pytest.mark.parametrize('row,message', [
        (('a', 'z', 1), 'unknown sample id'),
        (('a', 'a', 0), 'with itself'),
        (('a', 'b', 2), 'label must be'),
        (('a', 'b', 'yes'), 'label must be'),
    ])
    def test_invalid_rows(self, tmp_path, row, message):
        path = _write_pairs(tmp_path / 'pairs.csv', [row])
        with pytest.raises(ManifestError, match=message):
            read_pair_labels(path, ['a', 'b'])

    def test_missing_column(self, tmp_path):
        path = tmp_path / 'pairs.csv'
        path.write_text('first,second\na,b\n')
        with pytest.raises(ManifestError, match='missing column'):
            read_pair_labels(path, ['a', 'b'])


class TestDatasetManager:

    def test_synthetic_stacks(self, centers):
        dataset = DatasetManager([Sample('a', None, 1.0)], centers, 'synthetic', 'compact')
        stacks = dataset.load(0)
        assert [s.shape for s in stacks] == [(20,) + shape for shape in PYRAMID_PROFILES['compact']]

    def test_synthetic_deterministic_per_id(self, centers):
        samples = [Sample('a', None, 1.0), Sample('b', None, 2.0)]
        first = DatasetManager(samples, centers, 'synthetic', 'compact', seed=3, cache_samples=False)
        second = DatasetManager(samples[::-1], centers, 'synthetic', 'compact', seed=3, cache_samples=False)
        np.testing.assert_array_equal(first.load(0)[0], second.load(1)[0])
        assert not np.array_equal(first.load(0)[0], first.load(1)[0])

    def test_seed_changes_synthetic_features(self, centers):
        samples = [Sample('a', None, 1.0)]
        a = DatasetManager(samples, centers, 'synthetic', 'compact', seed=0).load(0)[0]
        b = DatasetManager(samples, centers, 'synthetic', 'compact', seed=1).load(0)[0]
        assert not np.array_equal(a, b)

    def test_feature_directory(self, tmp_path, centers):
        root = _feature_dir(tmp_path / 'a')
        dataset = DatasetManager([Sample('a', root, 1.0)], centers, 'files', 'compact')
        dataset.validate()
        stacks = dataset.load(0)
        expected = synthesize_pyramid(7, 'compact').levels[2].astype(np.float32)
        np.testing.assert_array_equal(stacks[2][7], expected)

    def test_missing_feature_file_names_sample(self, tmp_path, centers):
        root = _feature_dir(tmp_path / 'a', n=19)
        dataset = DatasetManager([Sample('img_a', root, 1.0, line=2)], centers, 'files', 'compact')
        with pytest.raises(ManifestError, match=r'img_a \(line 2\).*vp_19\.ahgf'):
            dataset.validate()

    def test_missing_path(self, tmp_path, centers):
        dataset = DatasetManager([Sample('a', tmp_path / 'none', 1.0)], centers, 'files', 'compact')
        with pytest.raises(ManifestError, match='path not found'):
            dataset.validate()

    def test_no_path_for_files_source(self, centers):
        with pytest.raises(ManifestError, match='has no path'):
            DatasetManager([Sample('a', None, 1.0)], centers).validate()

    def test_empty_dataset(self, centers):
        with pytest.raises(ManifestError, match='empty'):
            DatasetManager([], centers, 'synthetic').validate()

    def test_channel_profile_mismatch(self, tmp_path, centers):
        root = _feature_dir(tmp_path / 'a', profile='resnet18')
        dataset = DatasetManager([Sample('a', root, 1.0)], centers, 'files', 'compact')
        with pytest.raises(ShapeError, match='channel profile'):
            dataset.load(0)

    def test_rendered_image(self, tmp_path, rng):
        pixels = rng.integers(0, 256, size=(16, 32, 3), dtype=np.uint8)
        Image.fromarray(pixels).save(tmp_path / 'pano.png')
        centers = default_viewport_centers()
        dataset = DatasetManager([Sample('a', tmp_path / 'pano.png', 1.0)], centers, 'files', 'compact',
                                 resolution=16)
        dataset.validate()
        stacks = dataset.load(0)
        assert stacks[0].shape == (20, 64, 16, 16)
        assert np.abs(stacks[3]).max() <= 1.0

    def test_cache_returns_same_stacks(self, centers):
        dataset = DatasetManager([Sample('a', None, 1.0)], centers, 'synthetic', 'compact')
        assert dataset.load(0) is dataset.load(0)

    def test_cache_stays_within_limit(self, centers):
        samples = [Sample(name, None, 1.0) for name in 'abc']
        dataset = DatasetManager(samples, centers, 'synthetic', 'compact', cache_mb=25)
        per_sample = sum(stack.nbytes for stack in dataset.load(0))
        dataset.load(1)
        dataset.load(2)
        assert dataset.cache_bytes == 2 * per_sample <= dataset.cache_limit
        assert dataset.cached_ids() == ['b', 'c']

        dataset.load(1)
        dataset.load(0)
        assert dataset.cached_ids() == ['b', 'a']
        assert dataset.cache_bytes <= dataset.cache_limit

    def test_sample_larger_than_cache_is_not_kept(self, centers):
        dataset = DatasetManager([Sample('a', None, 1.0)], centers, 'synthetic', 'compact', cache_mb=1)
        first = dataset.load(0)
        assert dataset.cache_bytes == 0 and dataset.cached_ids() == []
        np.testing.assert_array_equal(dataset.load(0)[2], first[2])

    def test_cache_disabled(self, centers):
        dataset = DatasetManager([Sample('a', None, 1.0)], centers, 'synthetic', 'compact', cache_samples=False)
        dataset.load(0)
        assert dataset.cached_ids() == []

    def test_cache_limit_must_be_positive(self, centers):
        with pytest.raises(ManifestError, match='Cache limit'):
            DatasetManager([], centers, 'synthetic', cache_mb=0)

    def test_index_of(self, centers):
        dataset = DatasetManager([Sample('a', None, 1.0), Sample('b', None, 2.0)], centers, 'synthetic')
        assert dataset.index_of('b') == 1
        with pytest.raises(ManifestError, match='Unknown sample id'):
            dataset.index_of('c')

    def test_unknown_source(self, centers):
        with pytest.raises(ManifestError):
            DatasetManager([], centers, 'camera')


class TestProjectionFeatureSource:

    def test_constant_viewport_gives_constant_maps(self):
        source = ProjectionFeatureSource(PYRAMID_PROFILES['compact'], seed=2)
        pyramid = source.pyramid(np.full((32, 32, 3), 0.3))
        for level in pyramid.levels:
            np.testing.assert_allclose(level, level[:, :1, :1] * np.ones_like(level), atol=1e-12)

    def test_pooling_averages_blocks(self):
        pixels = np.arange(16.0).reshape(4, 4, 1)
        pooled = ProjectionFeatureSource._pool(pixels, 2, 2)
        np.testing.assert_allclose(pooled[..., 0], [[2.5, 4.5], [10.5, 12.5]])


class TestPrefetchLoader:

    def test_preserves_order(self, centers):
        samples = [Sample(f's{i}', None, float(i)) for i in range(6)]
        dataset = DatasetManager(samples, centers[:3], 'synthetic', 'compact')
        order = [4, 0, 5, 2, 1, 3]
        loaded = list(PrefetchLoader(dataset, order, prefetch=2))
        assert [index for index, _ in loaded] == order
        np.testing.assert_array_equal(loaded[0][1][0], dataset.load(4)[0])

    def test_propagates_errors(self, tmp_path, centers):
        samples = [Sample('ok', _feature_dir(tmp_path / 'ok'), 1.0), Sample('bad', tmp_path / 'bad', 1.0)]
        (tmp_path / 'bad').mkdir()
        dataset = DatasetManager(samples, centers, 'files', 'compact')
        with pytest.raises(ManifestError, match='bad'):
            list(PrefetchLoader(dataset, [0, 1]))

    def test_early_exit(self, centers):
        samples = [Sample(f's{i}', None, 1.0) for i in range(8)]
        dataset = DatasetManager(samples, centers[:2], 'synthetic', 'compact')
        for index, _ in PrefetchLoader(dataset, range(8), prefetch=1):
            if index == 2:
                break
