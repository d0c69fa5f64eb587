"""Tests for the finite-difference gradient checker."""

import numpy as np
import pytest

from src.model.gradcheck import DESCRIPTOR, numeric_gradient, relative_error, run_gradcheck
from src.model.params import PredictorConfig, init_params


@pytest.fixture(scope='module')
def report():
    return run_gradcheck(seed=0)


def test_default_seed_passes(report):
    failed = [(t.name, t.rel_error) for t in report.tensors if not t.passed]
    assert report.passed, failed


def test_covers_every_parameter_tensor(report):
    expected = init_params(DESCRIPTOR, PredictorConfig(layer_dims=(DESCRIPTOR.out_dim, 6, 6, 1)), 0).names()
    checked = {t.name for t in report.tensors}
    assert set(expected) <= checked
    assert {'batchnorm.input', 'batchnorm.gamma', 'batchnorm.beta', 'mse.pred'} <= checked


def test_blocks(report):
    assert set(report.blocks) == {'descriptor', 'hgcn.layer0', 'hgcn.layer1', 'hgcn.layer2', 'batchnorm', 'mse'}
    assert all(error < report.threshold for error in report.blocks.values())


def test_corrupted_gradients_fail():
    corrupted = run_gradcheck(seed=0, corrupt=True)
    assert not corrupted.passed
    assert max(corrupted.blocks.values()) > 0.05


@pytest.mark.parametrize('seed', [1, 2])
def test_other_seeds_pass(seed):
    assert run_gradcheck(seed=seed).passed


def test_identity_residual_passes():
    assert run_gradcheck(seed=0, residual='identity').passed


def test_report_dict(report):
    data = report.to_dict()
    assert data['passed'] is True
    assert data['threshold'] == 1e-4
    assert len(data['tensors']) == len(report.tensors)


def test_relative_error_floor():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)


def test_numeric_gradient_of_quadratic():
    x = np.array([1.0, -2.0, 0.5])
    grad = numeric_gradient(lambda: float(np.sum(x ** 2)), x, [(0,), (1,), (2,)])
    np.testing.assert_allclose(grad, 2 * x, atol=1e-9)
    np.testing.assert_array_equal(x, [1.0, -2.0, 0.5])
