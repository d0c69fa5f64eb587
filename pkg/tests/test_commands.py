"""End-to-end tests for the command implementations and the entry point."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

import ahgcn
from src.cli.commands import (
    cmd_dump_hypergraph, cmd_evaluate, cmd_gradcheck, cmd_sample_viewports, cmd_train,
)
from src.errors import ConfigError, GeometryError, ManifestError
from src.system.settings_manager import SettingsManager

SMALL_MODEL = {
    'data': {'feature_source': 'synthetic', 'pyramid_profile': 'compact', 'prefetch': 2},
    'model': {'layer_dims': [8, 4, 1], 'level_dim': 2, 'reduced_channels': 2, 'pool_grid': 2},
    'training': {'epochs': 2, 'batch_size': 8, 'lr_predictor': 0.01, 'checkpoint_every': 1},
}


def _settings(tmp_path, manifest=None, **sections):
    data = json.loads(json.dumps(SMALL_MODEL))
    for section, values in sections.items():
        data.setdefault(section, {}).update(values)
    path = tmp_path / 'settings.json'
    path.write_text(json.dumps(data))
    overrides = {'data.manifest': str(manifest)} if manifest else None
    return SettingsManager(str(path), overrides=overrides), str(path)


def _read_csv(path):
    with open(path, newline='') as f:
        return list(csv.reader(f))


@pytest.fixture
def panorama(tmp_path):
    rows, cols = np.mgrid[0:32, 0:64]
    pixels = np.stack([rows * 8, cols * 4, (rows + cols) * 2], axis=-1).astype(np.uint8)
    path = tmp_path / 'pano.png'
    Image.fromarray(pixels).save(path)
    return path


class TestSampleViewports:

    def test_writes_twenty_viewports(self, tmp_path, panorama):
        result = cmd_sample_viewports(str(panorama), SettingsManager(), str(tmp_path / 'out'))
        assert len(result['viewports']) == 20
        with Image.open(result['viewports'][0]) as img:
            assert img.size == (256, 256)
        rows = _read_csv(result['centers'])
        assert rows[0] == ['id', 'lon_deg', 'lat_deg']
        assert len(rows) == 21

    def test_deterministic(self, tmp_path, panorama):
        settings = SettingsManager(overrides={'geometry.resolution': 32})
        first = cmd_sample_viewports(str(panorama), settings, str(tmp_path / 'a'))
        second = cmd_sample_viewports(str(panorama), settings, str(tmp_path / 'b'))
        for a, b in zip(first['viewports'], second['viewports']):
            assert Path(a).read_bytes() == Path(b).read_bytes()

    def test_rejects_non_equirect(self, tmp_path):
        path = tmp_path / 'square.png'
        Image.fromarray(np.zeros((16, 16, 3), dtype=np.uint8)).save(path)
        with pytest.raises(GeometryError, match='2:1'):
            cmd_sample_viewports(str(path), SettingsManager(), str(tmp_path / 'out'))


class TestTrainEvaluate:

    def test_train_then_evaluate(self, tmp_path, synthetic_manifest):
        settings, _ = _settings(tmp_path, synthetic_manifest)
        out = tmp_path / 'run'
        trained = cmd_train(settings, str(out))
        assert (out / 'checkpoint.ahgc').is_file()
        assert (out / 'checkpoint_epoch0001.ahgc').is_file()
        assert (out / 'checkpoint_epoch0002.ahgc').is_file()
        assert json.loads((out / 'effective_config.json').read_text())['training']['epochs'] == 2
        loss_rows = _read_csv(trained['loss_log'])
        assert loss_rows[0] == ['epoch', 'lr', 'train_mse'] and len(loss_rows) == 3

        evaluated = cmd_evaluate(settings, trained['checkpoint'], str(tmp_path / 'eval'))
        report = json.loads(Path(evaluated['report']).read_text())
        assert set(report) == {'n_samples', 'plcc', 'srocc', 'rmse', 'logistic', 'krasula', 'groups', 'samples'}
        assert report['n_samples'] == 16
        assert set(report['krasula']) == {'auc_ds', 'auc_bw', 'c0', 'n_pairs', 'n_different'}
        assert report['krasula']['n_pairs'] == 120
        assert len(_read_csv(evaluated['scatter'])) == 17

    def test_rerun_gives_identical_loss_log(self, tmp_path, synthetic_manifest):
        settings, _ = _settings(tmp_path, synthetic_manifest)
        first = cmd_train(settings, str(tmp_path / 'a'))
        second = cmd_train(settings, str(tmp_path / 'b'))
        assert Path(first['loss_log']).read_bytes() == Path(second['loss_log']).read_bytes()
        assert Path(first['checkpoint']).read_bytes() == Path(second['checkpoint']).read_bytes()

    def test_evaluate_with_pair_labels(self, tmp_path, synthetic_manifest):
        settings, _ = _settings(tmp_path, synthetic_manifest)
        trained = cmd_train(settings, str(tmp_path / 'run'))
        ids = [row[0] for row in _read_csv(synthetic_manifest)[1:]]
        pairs = tmp_path / 'pairs.csv'
        pairs.write_text('first,second,label\n' + ''.join(
            f'{a},{b},0\n' for i, a in enumerate(ids) for b in ids[i + 1:]))

        labelled, _ = _settings(tmp_path, synthetic_manifest, metrics={'pair_labels': str(pairs)})
        evaluated = cmd_evaluate(labelled, trained['checkpoint'], str(tmp_path / 'eval'))
        krasula = json.loads(Path(evaluated['report']).read_text())['krasula']
        assert krasula['n_pairs'] == 120 and krasula['n_different'] == 0
        assert krasula['auc_bw'] is None

        baseline = cmd_evaluate(settings, trained['checkpoint'], str(tmp_path / 'eval-threshold'))
        assert json.loads(Path(baseline['report']).read_text())['krasula']['n_different'] > 0

    def test_incomplete_pair_labels(self, tmp_path, synthetic_manifest):
        settings, _ = _settings(tmp_path, synthetic_manifest)
        trained = cmd_train(settings, str(tmp_path / 'run'))
        pairs = tmp_path / 'pairs.csv'
        pairs.write_text('first,second,label\ns00,s01,1\n')
        labelled, _ = _settings(tmp_path, synthetic_manifest, metrics={'pair_labels': str(pairs)})
        with pytest.raises(ManifestError, match='119 pair'):
            cmd_evaluate(labelled, trained['checkpoint'], str(tmp_path / 'eval'))

    def test_train_needs_manifest(self, tmp_path):
        settings, _ = _settings(tmp_path)
        with pytest.raises(ConfigError, match='manifest'):
            cmd_train(settings, str(tmp_path / 'run'))

    def test_evaluate_rejects_other_dims(self, tmp_path, synthetic_manifest):
        settings, _ = _settings(tmp_path, synthetic_manifest)
        trained = cmd_train(settings, str(tmp_path / 'run'))
        other, _ = _settings(tmp_path, synthetic_manifest, model={'layer_dims': [8, 3, 1]})
        with pytest.raises(Exception, match='shape'):
            cmd_evaluate(other, trained['checkpoint'], str(tmp_path / 'eval'))


class TestGradcheck:

    def test_passes_and_prints(self, tmp_path, capsys):
        result = cmd_gradcheck(0, str(tmp_path))
        assert result['success']
        output = capsys.readouterr().out
        assert output.strip().endswith('PASS')
        assert 'hgcn.layer0.W1' in output
        assert json.loads(Path(result['report']).read_text())['passed'] is True

    def test_corrupt_fails(self, tmp_path, capsys):
        assert not cmd_gradcheck(0, str(tmp_path), corrupt=True)['success']
        assert capsys.readouterr().out.strip().endswith('FAIL')


class TestDumpHypergraph:

    @pytest.mark.parametrize('k,columns', [(5, 40), (0, 20)])
    def test_incidence_columns(self, tmp_path, synthetic_manifest, k, columns):
        settings, _ = _settings(tmp_path, synthetic_manifest, training={'k': k})
        result = cmd_dump_hypergraph(settings, 's03', str(tmp_path / 'dump'))
        rows = _read_csv(result['incidence'])
        assert len(rows[0]) == columns + 1
        assert len(rows) == 21
        summary = json.loads(Path(result['summary']).read_text())
        assert summary['n_edges'] == columns and summary['sample_id'] == 's03'

    def test_operator_symmetric(self, tmp_path, synthetic_manifest):
        settings, _ = _settings(tmp_path, synthetic_manifest)
        result = cmd_dump_hypergraph(settings, 's00', str(tmp_path / 'dump'))
        matrix = np.array([[float(v) for v in row[1:]] for row in _read_csv(result['operator'])[1:]])
        assert matrix.shape == (20, 20)
        np.testing.assert_allclose(matrix, matrix.T, atol=1e-12)

    def test_graph_structure(self, tmp_path, synthetic_manifest):
        settings, _ = _settings(tmp_path, synthetic_manifest, model={'structure': 'graph'})
        result = cmd_dump_hypergraph(settings, 's02', str(tmp_path / 'dump'))
        summary = json.loads(Path(result['summary']).read_text())
        assert summary['structure'] == 'graph' and summary['max_asymmetry'] < 1e-12

    def test_uses_checkpoint_features(self, tmp_path, synthetic_manifest):
        settings, _ = _settings(tmp_path, synthetic_manifest)
        trained = cmd_train(settings, str(tmp_path / 'run'))
        result = cmd_dump_hypergraph(settings, 's01', str(tmp_path / 'dump'), trained['checkpoint'])
        assert result['success']

    def test_unknown_sample(self, tmp_path, synthetic_manifest):
        settings, _ = _settings(tmp_path, synthetic_manifest)
        with pytest.raises(Exception, match='Unknown sample id'):
            cmd_dump_hypergraph(settings, 'nope', str(tmp_path / 'dump'))


class TestMain:

    def test_gradcheck_exit_codes(self, tmp_path):
        assert ahgcn.main(['gradcheck', '--out', str(tmp_path)]) == ahgcn.EXIT_OK
        assert ahgcn.main(['gradcheck', '--corrupt', '--out', str(tmp_path)]) == ahgcn.EXIT_GRADCHECK_FAILED

    def test_error_exit_code(self, tmp_path):
        _, config = _settings(tmp_path)
        assert ahgcn.main(['train', '--config', config, '--out', str(tmp_path / 'run')]) == ahgcn.EXIT_ERROR

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text('{"training": {"lr_descriptor": 1}}')
        assert ahgcn.main(['gradcheck', '--config', str(path), '--out', str(tmp_path)]) == ahgcn.EXIT_ERROR

    def test_train_via_main(self, tmp_path, synthetic_manifest):
        _, config = _settings(tmp_path)
        out = tmp_path / 'run'
        code = ahgcn.main(['train', '--config', config, '--manifest', str(synthetic_manifest),
                           '--seed', '3', '--out', str(out)])
        assert code == ahgcn.EXIT_OK
        assert json.loads((out / 'effective_config.json').read_text())['training']['seed'] == 3

    def test_evaluate_parser_accepts_pair_labels(self):
        args = ahgcn.build_parser().parse_args(['evaluate', '--checkpoint', 'c.ahgc', '--pair-labels', 'p.csv'])
        assert args.pair_labels == 'p.csv'
