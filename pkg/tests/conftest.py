"""Shared fixtures for the AHGCN test suite."""

import csv

import numpy as np
import pytest

from src.geometry.sphere_geometry import default_viewport_centers


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def centers():
    return default_viewport_centers()


def write_manifest(path, rows, distortion=False):
    """rows: (id, path, mos[, distortion]) tuples."""
    header = ['id', 'path', 'mos'] + (['distortion'] if distortion else [])
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    return path


@pytest.fixture
def synthetic_manifest(tmp_path):
    """Sixteen synthetic samples with MOS in [1, 10]."""
    mos = np.random.default_rng(3).uniform(1.0, 10.0, size=16)
    rows = [(f's{i:02d}', '', f'{m:.6f}') for i, m in enumerate(mos)]
    return write_manifest(tmp_path / 'manifest.csv', rows)
