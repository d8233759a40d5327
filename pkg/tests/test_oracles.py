import numpy as np
import pytest

from src.core.tensor import NamedTensor
from src.errors import ArgumentError, DimensionError
from src.mamba.layer import SelectiveInputs
from src.oracles.oracles import (
    FdConfig,
    cross_entropy_over_diagonal_saliency,
    exhaustive_best_mask,
    fd_hessian_diag,
    loss_l2,
    mask_reconstruction_error,
    spearman,
)
from src.pruning.ssm_pruner import PruneMask


def _mask(d, n, zeros):
    flat = np.ones(d * n)
    flat[list(zeros)] = 0.0
    return PruneMask(NamedTensor("mask", flat.reshape(d, n)), len(zeros))


def test_loss_l2_examples():
    y = np.array([[3.0, 4.0]])
    assert loss_l2(y, np.zeros((1, 2))) == 25.0
    assert loss_l2(y, y) == 0.0
    # averaged over the batch axis
    assert loss_l2(np.ones((4, 3)), np.zeros((4, 3))) == 3.0
    with pytest.raises(DimensionError):
        loss_l2(np.ones((2, 2)), np.ones((2, 3)))


def test_scalar_mask_error_closed_form(layer_factory):
    layer = layer_factory(1, 1, seed=0, a_log=[[0.7]])
    theta = SelectiveInputs(
        x=np.array([[[1.5], [-0.5]]]),
        delta=np.array([[[0.2], [0.4]]]),
        b=np.array([[[2.0], [1.0]]]),
        c=np.array([[[0.3], [-1.2]]]),
    )
    h0 = 0.2 * 2.0 * 1.5
    decay_dense = np.exp(0.4 * -np.exp(0.7))
    decay_pruned = np.exp(0.4 * -1.0)
    expected = (-1.2 * (decay_pruned - decay_dense) * h0) ** 2
    err = mask_reconstruction_error(layer, _mask(1, 1, [0]), theta=theta)
    assert abs(err - expected) <= 1e-12 * max(1.0, expected)
    assert mask_reconstruction_error(layer, _mask(1, 1, []), theta=theta) == 0.0


def test_fd_diag_zero_for_silent_state(layer_factory, theta_factory):
    layer = layer_factory(3, 3, seed=1)
    theta = theta_factory(3, 3, batch=2, length=6, seed=1)
    b = theta.b.copy()
    b[..., 1] = 0.0
    theta = SelectiveInputs(x=theta.x, delta=theta.delta, b=b, c=theta.c)
    diag = fd_hessian_diag(layer, theta=theta).data
    assert diag.shape == (3, 3)
    assert np.all(np.abs(diag[:, 1]) <= 1e-12)
    assert np.all(diag[:, [0, 2]] >= 0.0)
    assert np.max(diag) > 0.0


def test_fd_diag_is_step_stable(layer_factory, theta_factory):
    layer = layer_factory(2, 3, seed=2)
    theta = theta_factory(2, 3, batch=2, length=6, seed=2)
    coarse = fd_hessian_diag(layer, cfg=FdConfig(step=1e-3), theta=theta).data
    fine = fd_hessian_diag(layer, cfg=FdConfig(step=1e-4), theta=theta).data
    assert np.max(np.abs(coarse - fine)) <= 1e-3 * np.max(np.abs(fine))


def test_fd_config_rejects_bad_step():
    with pytest.raises(ArgumentError):
        FdConfig(step=0.0)


def test_fd_diag_accepts_raw_inputs(layer_factory):
    layer = layer_factory(2, 2, seed=3, d_model=4)
    x = np.random.default_rng(3).normal(size=(1, 5, 2))
    diag = fd_hessian_diag(layer, x=x).data
    assert np.all(np.isfinite(diag))


def test_diagonal_saliency():
    a_log = np.array([[0.5, -2.0], [1.0, 0.1]])
    zero = cross_entropy_over_diagonal_saliency(np.ones((2, 2)), np.zeros((2, 2)))
    assert np.all(zero.saliency.data == 0.0)
    ranked = cross_entropy_over_diagonal_saliency(np.ones((2, 2)), a_log)
    assert list(ranked.ranking) == [3, 0, 2, 1]
    assert np.isclose(ranked.saliency.data[0, 1], 2.0)
    with pytest.raises(DimensionError):
        cross_entropy_over_diagonal_saliency(np.ones((2, 3)), a_log)


def test_exhaustive_trivial_counts(layer_factory, theta_factory):
    layer = layer_factory(2, 2, seed=4)
    theta = theta_factory(2, 2, batch=2, length=5, seed=4)
    mask, err = exhaustive_best_mask(layer, k=0, theta=theta)
    assert np.all(mask.mask.data == 1.0) and err == 0.0
    mask, _ = exhaustive_best_mask(layer, k=4, theta=theta)
    assert np.all(mask.mask.data == 0.0)


def test_exhaustive_picks_cheapest_single_entry(layer_factory, theta_factory):
    layer = layer_factory(2, 2, seed=5)
    theta = theta_factory(2, 2, batch=3, length=6, seed=5)
    mask, err = exhaustive_best_mask(layer, k=1, theta=theta)
    errors = [mask_reconstruction_error(layer, _mask(2, 2, [i]), theta=theta) for i in range(4)]
    assert int(mask.zeros()[0]) == int(np.argmin(errors))
    assert np.isclose(err, min(errors), rtol=1e-12)


def test_exhaustive_size_guard(layer_factory):
    layer = layer_factory(4, 5, seed=6)
    with pytest.raises(ArgumentError):
        exhaustive_best_mask(layer, x=np.zeros((1, 2, 4)), k=1)
    small = layer_factory(2, 2, seed=6)
    with pytest.raises(ArgumentError):
        exhaustive_best_mask(small, x=np.zeros((1, 2, 2)), k=5)


def test_spearman():
    assert np.isclose(spearman([1.0, 2.0, 3.0], [10.0, 20.0, 30.0]), 1.0)
    assert np.isclose(spearman(np.array([[1.0, 2.0], [3.0, 4.0]]), [4.0, 3.0, 2.0, 1.0]), -1.0)
    with pytest.raises(DimensionError):
        spearman([1.0, 2.0], [1.0, 2.0, 3.0])
