"""
Export Manager for AHGCN
Writes run artifacts: evaluation report, scatter data, loss log, viewport
centers, hypergraph matrices, summaries and gradient-check reports.
"""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from src.system.file_operations import atomic_write

logger = logging.getLogger(__name__)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Cannot serialize {type(value).__name__}")


def _csv_text(header, rows) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)
    return out.getvalue()


def _number(value: float) -> str:
    return repr(float(value))


class ExportManager:
    """Manages artifact exports under one output directory."""

    def __init__(self, output_dir: str = 'runs'):
        """
        Initialize export manager.

        Args:
            output_dir: Directory relative export names resolve against
        """
        self.output_dir = Path(output_dir)
        self._exporters = {
            'report_json': (self._export_json, 'report.json'),
            'summary_json': (self._export_json, 'summary.json'),
            'gradcheck_json': (self._export_json, 'gradcheck.json'),
            'scatter_csv': (self._export_scatter, 'scatter.csv'),
            'loss_csv': (self._export_loss, 'loss.csv'),
            'centers_csv': (self._export_centers, 'centers.csv'),
            'incidence_csv': (self._export_incidence, 'incidence.csv'),
            'operator_csv': (self._export_operator, 'operator.csv'),
        }
        logger.info("Export Manager initialized")

    def export(self, kind: str, data: Any, output_path: Optional[str] = None) -> Dict[str, Any]:
        """
        Export data as the given kind.

        Args:
            kind: One of get_export_kinds()
            data: Payload for that kind
            output_path: Optional path (default file name inside output_dir)

        Returns:
            Result dictionary with success status and file path
        """
        if kind not in self._exporters:
            return {'success': False,
                    'error': f'Unsupported export: {kind} (choose from {", ".join(self.get_export_kinds())})'}

        method, default_name = self._exporters[kind]
        path = Path(output_path or default_name)
        if not path.is_absolute():
            path = self.output_dir / path

        try:
            text = method(data)
            atomic_write(path, text)
            logger.debug(f"Exported {kind} to {path}")
            return {'success': True, 'path': str(path)}
        except Exception as e:
            logger.error(f"Export of {kind} failed: {e}")
            return {'success': False, 'error': str(e)}

    def _export_json(self, data: Dict) -> str:
        return json.dumps(data, indent=2, default=_json_default) + '\n'

    def _export_scatter(self, samples) -> str:
        """Rows of an EvalReport sample table."""
        return _csv_text(['id', 'mos', 'raw_pred', 'mapped_pred'],
                         [[s['id'], _number(s['mos']), _number(s['raw_pred']), _number(s['mapped_pred'])]
                          for s in samples])

    def _export_loss(self, history) -> str:
        return _csv_text(['epoch', 'lr', 'train_mse'],
                         [[row['epoch'], _number(row['lr']), _number(row['train_mse'])] for row in history])

    def _export_centers(self, centers) -> str:
        rows = []
        for index, center in enumerate(centers):
            lon, lat = center.to_degrees()
            rows.append([index, _number(lon), _number(lat)])
        return _csv_text(['id', 'lon_deg', 'lat_deg'], rows)

    def _export_incidence(self, incidence) -> str:
        """IncidenceMatrix with one column per hyperedge."""
        rows = [[f'vp_{i:02d}'] + [int(v) for v in row] for i, row in enumerate(incidence.matrix)]
        return _csv_text(['node'] + incidence.column_names(), rows)

    def _export_operator(self, operator) -> str:
        """Dense normalized operator."""
        matrix = np.asarray(operator)
        names = [f'vp_{i:02d}' for i in range(matrix.shape[0])]
        rows = [[names[i]] + [_number(v) for v in row] for i, row in enumerate(matrix)]
        return _csv_text(['node'] + names, rows)

    def get_export_kinds(self) -> list:
        return sorted(self._exporters)
