"""
Command implementations for the ahgcn entry point.
Each command reads its configuration from a SettingsManager, writes its
artifacts atomically under the output directory and returns a result dictionary.
"""

import logging
import math
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from src.errors import ConfigError, ManifestError
from src.evaluation.metrics import build_report
from src.geometry.sphere_geometry import render_viewport
from src.model.gradcheck import run_gradcheck
from src.model.params import init_params
from src.system.export_manager import ExportManager
from src.system.file_operations import FileOperations, load_checkpoint, load_equirect
from src.system.run_config import RunConfig
from src.system.settings_manager import SettingsManager
from src.training.dataset import read_manifest, read_pair_labels
from src.training.trainer import evaluate, train

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = 'checkpoint.ahgc'


def _require_manifest(config: RunConfig) -> Path:
    if config.manifest is None:
        raise ConfigError("No manifest given (use --manifest or data.manifest)")
    return config.manifest


def _exported(result: Dict[str, Any]) -> str:
    if not result['success']:
        raise OSError(result['error'])
    return result['path']


def cmd_sample_viewports(image_path: str, settings: SettingsManager, out_dir: str) -> Dict[str, Any]:
    """
    Render the configured viewports of one equirectangular image.

    Writes vp_00.png .. vp_NN.png and centers.csv (id, lon_deg, lat_deg).
    """
    config = RunConfig.from_settings(settings, out_dir)
    image = load_equirect(image_path)
    files = FileOperations(out_dir)
    exports = ExportManager(out_dir)

    written = []
    for index, spec in enumerate(config.viewport_specs()):
        written.append(str(files.save_viewport(f'vp_{index:02d}.png', render_viewport(image, spec))))
    centers = _exported(exports.export('centers_csv', config.centers))

    logger.info(f"Sampled {len(written)} viewports from {image_path}")
    return {'success': True, 'viewports': written, 'centers': centers}


def cmd_train(settings: SettingsManager, out_dir: str) -> Dict[str, Any]:
    """Train on the manifest; writes checkpoint.ahgc, loss.csv and effective_config.json."""
    config = RunConfig.from_settings(settings, out_dir)
    samples = read_manifest(_require_manifest(config))
    dataset = config.dataset(samples)
    model = config.quality_model()
    files = FileOperations(out_dir)
    exports = ExportManager(out_dir)
    settings.export_settings(str(files.path('effective_config.json')))

    def save_periodic(epoch, params, adam):
        files.save_checkpoint(f'checkpoint_epoch{epoch + 1:04d}.ahgc', params, config.predictor.n_layers, adam)

    result = train(model, dataset, config.train, prefetch=config.prefetch, on_checkpoint=save_periodic)
    checkpoint = files.save_checkpoint(CHECKPOINT_NAME, result.params, config.predictor.n_layers, result.adam)
    loss_log = _exported(exports.export('loss_csv', result.history))

    return {
        'success': True,
        'checkpoint': str(checkpoint),
        'loss_log': loss_log,
        'final_mse': result.history[-1]['train_mse'],
    }


def cmd_evaluate(settings: SettingsManager, checkpoint: str, out_dir: str) -> Dict[str, Any]:
    """Predict, fit the logistic and report all metrics; writes report.json and scatter.csv."""
    config = RunConfig.from_settings(settings, out_dir)
    samples = read_manifest(_require_manifest(config))
    if not samples:
        raise ManifestError("Evaluation manifest is empty")
    pair_labels = None
    if config.pair_labels is not None:
        pair_labels = read_pair_labels(config.pair_labels, [s.sample_id for s in samples])
    params, _ = load_checkpoint(checkpoint, config.descriptor, config.predictor)
    dataset = config.dataset(samples)
    model = config.quality_model()
    exports = ExportManager(out_dir)
    settings.export_settings(str(Path(out_dir) / 'effective_config.json'))

    predictions = evaluate(model, dataset, params, config.train.mos_scale, config.prefetch)
    distortions = [s.distortion for s in samples]
    report = build_report([s.sample_id for s in samples], predictions, dataset.targets,
                          distortions if any(d is not None for d in distortions) else None,
                          threshold=config.krasula_threshold, pair_labels=pair_labels)

    report_path = _exported(exports.export('report_json', report.to_dict()))
    scatter_path = _exported(exports.export('scatter_csv', report.samples))
    return {'success': True, 'report': report_path, 'scatter': scatter_path,
            'plcc': report.plcc, 'srocc': report.srocc, 'rmse': report.rmse}


def cmd_gradcheck(seed: int, out_dir: str, corrupt: bool = False) -> Dict[str, Any]:
    """Finite-difference check of every backward pass; success is False on any failure."""
    report = run_gradcheck(seed=seed, corrupt=corrupt)
    path = _exported(ExportManager(out_dir).export('gradcheck_json', report.to_dict()))

    for check in report.tensors:
        status = 'ok' if check.passed else 'FAIL'
        print(f"{check.name:32s} {check.block:16s} rel={check.rel_error:.3e} {status}")
    for block, error in report.blocks.items():
        print(f"block {block:16s} max rel={error:.3e}")
    print('PASS' if report.passed else 'FAIL')

    return {'success': report.passed, 'report': path, 'blocks': report.blocks}


def cmd_dump_hypergraph(settings: SettingsManager, sample_id: str, out_dir: str,
                        checkpoint: Optional[str] = None) -> Dict[str, Any]:
    """
    Write the incidence matrix, the normalized operator and a degree summary
    for one manifest sample. Features come from the checkpoint if given, else
    from freshly initialized parameters (training.seed).
    """
    config = RunConfig.from_settings(settings, out_dir)
    samples = read_manifest(_require_manifest(config))
    dataset = config.dataset(samples)
    index = dataset.index_of(sample_id)
    model = config.quality_model()
    if checkpoint:
        params, _ = load_checkpoint(checkpoint, config.descriptor, config.predictor)
    else:
        params = init_params(config.descriptor, config.predictor, config.seed)

    features, _ = model.features([dataset.load(index)], params)
    incidence = model.builder.incidence(features[0])
    operator = config.build_operator(features[0])

    exports = ExportManager(out_dir)
    summary = {
        'sample_id': sample_id,
        'n_nodes': incidence.n_nodes,
        'n_edges': incidence.n_edges,
        'k': config.train.k,
        'delta_deg': math.degrees(config.train.delta),
        'hyperedges': config.hyperedges,
        'structure': config.structure,
        'node_degrees': incidence.node_degrees,
        'edge_degrees': incidence.edge_degrees,
        'operator_node_degrees': operator.node_degrees,
        'max_asymmetry': float(np.max(np.abs(operator.operator - operator.operator.T))),
    }
    return {
        'success': True,
        'incidence': _exported(exports.export('incidence_csv', incidence)),
        'operator': _exported(exports.export('operator_csv', operator.operator)),
        'summary': _exported(exports.export('summary_json', summary)),
    }
