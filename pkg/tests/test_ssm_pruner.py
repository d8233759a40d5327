import math

import numpy as np
import pytest

from src.calibration.corpus import make_synthetic_corpus
from src.calibration.runner import run_calibration
from src.calibration.stats import FullScoreAccumulator, HiddenStats
from src.core.tensor import NamedTensor
from src.errors import ArgumentError, DimensionError, StateError
from src.mamba.fixtures import tiny_random_model
from src.mamba.layer import SelectiveInputs
from src.mamba.scan import scan_recurrence, selective_scan
from src.pruning.base_pruner import BasePruner
from src.pruning.ssm_pruner import (
    ImportanceField,
    Pattern,
    PruneMask,
    apply_mask,
    column_scores,
    compact_columns,
    full_field,
    importance_full,
    importance_simplified,
    magnitude_field,
    obs_saliency_diag,
    parse_pattern,
    prune_columns_structured,
    prune_columns_with_mask,
    prune_count,
    select_mask,
    select_mask_columns,
    select_mask_l2,
    select_mask_nm,
    select_mask_time_frequency,
    zero_state_projections,
)


def _field(values) -> ImportanceField:
    return ImportanceField(NamedTensor("importance", np.asarray(values, dtype=np.float64)))


def _random_field(steps, d, n, seed=0) -> ImportanceField:
    return _field(np.random.default_rng(seed).exponential(size=(steps, d, n)))


def test_obs_saliency_diag_examples():
    assert obs_saliency_diag(0.0, 5.0) == 0.0
    assert obs_saliency_diag(3.0, 2.0) == 9.0
    rng = np.random.default_rng(0)
    w, h = rng.normal(size=20), rng.uniform(0.1, 2.0, size=20)
    assert np.array_equal(np.argsort(obs_saliency_diag(w, h), kind="stable"),
                          np.argsort(w ** 2 * h, kind="stable"))
    with pytest.raises(ArgumentError):
        obs_saliency_diag(1.0, -1.0)


def test_prune_count_rounding():
    assert prune_count(0.7, 10) == 7
    assert prune_count(0.25, 10) == 3
    assert prune_count(0.0, 16) == 0
    assert prune_count(1.0, 16) == 16
    with pytest.raises(ArgumentError):
        prune_count(1.5, 4)


def test_importance_simplified_matches_scalar_loop():
    rng = np.random.default_rng(1)
    a_log = rng.normal(size=(2, 2))
    s = rng.uniform(size=(3, 2, 2))
    field = importance_simplified(a_log, HiddenStats(0, s, 1))
    for t in range(3):
        for d in range(2):
            for n in range(2):
                assert math.isclose(field.per_step.data[t, d, n], a_log[d, n] ** 2 * s[t, d, n], rel_tol=1e-15)
    assert np.allclose(field.time_summed(), (a_log ** 2) * s.sum(axis=0))


def test_importance_simplified_zero_cases():
    a_log = np.array([[0.0, 1.0]])
    field = importance_simplified(a_log, HiddenStats(0, np.ones((4, 1, 2)), 1))
    assert np.all(field.per_step.data[:, 0, 0] == 0.0)
    zero = importance_simplified(np.ones((1, 2)), HiddenStats(0, np.zeros((4, 1, 2)), 1))
    assert np.all(zero.per_step.data == 0.0)
    with pytest.raises(DimensionError):
        importance_simplified(np.ones((2, 2)), HiddenStats(0, np.ones((4, 1, 2)), 1))


def test_importance_full_scalar_instance(layer_factory, theta_factory):
    layer = layer_factory(1, 1, seed=2)
    theta = theta_factory(1, 1, batch=1, length=2, seed=2)
    _, trace = scan_recurrence(layer.a_log, layer.d_skip, theta, record=True)
    a_log = float(layer.a_log.data[0, 0])
    a = -math.exp(a_log)
    h0 = float(trace.hidden.data[0, 0, 0, 0])
    delta1 = float(theta.delta[0, 1, 0])
    expected = a ** 2 * a_log ** 2 * delta1 ** 2 * math.exp(2 * delta1 * a) * h0 ** 2
    assert math.isclose(float(importance_full(layer.a_log, trace).data[0, 0]), expected, rel_tol=1e-12)


def test_importance_full_streaming_matches_traces(layer_factory, theta_factory):
    layer = layer_factory(3, 2, seed=3)
    traces = []
    acc = FullScoreAccumulator.empty(0, 6, 3, 2)
    for seed in range(3):
        theta = theta_factory(3, 2, batch=2, length=6, seed=seed)
        _, trace = scan_recurrence(layer.a_log, layer.d_skip, theta, record=True)
        traces.append(trace)
        acc = acc.add(layer.a_log, trace)
    assert np.allclose(importance_full(layer.a_log, acc).data, importance_full(layer.a_log, traces).data,
                       rtol=1e-12)
    per_step = full_field(layer.a_log, acc)
    assert per_step.per_step.shape == (6, 3, 2)
    assert np.all(per_step.per_step.data[0] == 0.0)


def test_importance_full_zero_a_log_and_homogeneity(layer_factory, theta_factory):
    a_log = np.array([[0.0, 0.7], [1.2, 0.3]])
    layer = layer_factory(2, 2, seed=4, a_log=a_log)
    theta = theta_factory(2, 2, batch=2, length=5, seed=4)
    _, trace = scan_recurrence(layer.a_log, layer.d_skip, theta, record=True)
    base = importance_full(layer.a_log, trace).data
    assert base[0, 0] == 0.0
    scaled = SelectiveInputs(x=theta.x * 3.0, delta=theta.delta, b=theta.b, c=theta.c)
    _, trace3 = scan_recurrence(layer.a_log, layer.d_skip, scaled, record=True)
    got = importance_full(layer.a_log, trace3).data
    assert np.allclose(got, 9.0 * base, rtol=1e-12)
    assert np.array_equal(np.argsort(got.ravel(), kind="stable"), np.argsort(base.ravel(), kind="stable"))


def test_importance_full_requires_raw_trace():
    with pytest.raises(StateError):
        importance_full(np.ones((2, 2)), None)
    with pytest.raises(StateError):
        importance_full(np.ones((2, 2)), FullScoreAccumulator.empty(0, 3, 2, 2))
    with pytest.raises(StateError):
        importance_full(np.ones((2, 2)), [])


def test_frequency_mask_p_zero():
    mask = select_mask_time_frequency(_random_field(4, 3, 2), 0.0)
    assert mask.k_pruned == 0
    assert np.all(mask.mask.data == 1.0)


def test_frequency_mask_unanimity():
    rng = np.random.default_rng(5)
    base = rng.uniform(size=(3, 4))
    steps = np.stack([base * c for c in (1.0, 2.0, 0.5, 7.0)])
    mask = select_mask_time_frequency(_field(steps), 0.5)
    expected = np.argsort(base.ravel(), kind="stable")[:6]
    assert sorted(mask.zeros()) == sorted(expected)


def test_frequency_mask_hand_instance():
    steps = np.array([
        [[1.0, 2.0], [3.0, 4.0]],
        [[4.0, 1.0], [2.0, 3.0]],
        [[2.0, 3.0], [1.0, 4.0]],
    ])
    mask = select_mask_time_frequency(_field(steps), 0.5)
    # counts: index 0 -> 2, 1 -> 2, 2 -> 2, 3 -> 0; equal counts go to the lower index
    assert list(mask.zeros()) == [0, 1]


def _counting_oracle(steps, k):
    flat = steps.reshape(steps.shape[0], -1)
    counts = np.zeros(flat.shape[1], dtype=int)
    for row in flat:
        order = sorted(range(row.size), key=lambda i: (row[i], i))
        for i in order[:k]:
            counts[i] += 1
    chosen = sorted(range(counts.size), key=lambda i: (-counts[i], i))[:k]
    return sorted(chosen)


def test_frequency_mask_matches_counting_oracle():
    for seed in range(10):
        field = _random_field(3, 2, 2, seed=seed)
        for p in (0.25, 0.5, 0.75):
            mask = select_mask_time_frequency(field, p)
            assert list(mask.zeros()) == _counting_oracle(field.per_step.data, prune_count(p, 4))


@pytest.mark.parametrize("p", [0.1, 0.25, 0.5, 0.7])
@pytest.mark.parametrize("shape", [(5, 3, 4), (8, 4, 4), (2, 7, 3), (1, 1, 10)])
def test_frequency_mask_exact_count(p, shape):
    steps, d, n = shape
    mask = select_mask_time_frequency(_random_field(steps, d, n, seed=d * n), p)
    assert mask.k_pruned == math.ceil(round(p * d * n, 9))
    assert np.count_nonzero(mask.mask.data == 0.0) == mask.k_pruned


def test_frequency_mask_scale_invariance():
    field = _random_field(6, 4, 4, seed=6)
    mask = select_mask_time_frequency(field, 0.5)
    for c in (1e-6, 0.3, 17.0):
        assert np.array_equal(select_mask_time_frequency(field.scaled(c), 0.5).mask.data, mask.mask.data)


def test_l2_mask():
    steps = np.array([[[3.0, 0.0]], [[0.0, 1.0]], [[0.0, 1.0]]])
    mask = select_mask_l2(_field(steps), 0.5)
    # norms: 3 and sqrt(2); the frequency rule would disagree (two of three steps favour index 0)
    assert list(mask.zeros()) == [1]
    assert list(select_mask_time_frequency(_field(steps), 0.5).zeros()) == [0]


def test_magnitude_field_selects_smallest_abs_a_log():
    a_log = np.random.default_rng(7).normal(size=(4, 4))
    mask = select_mask_time_frequency(magnitude_field(a_log), 0.5)
    assert sorted(mask.zeros()) == sorted(np.argsort(np.abs(a_log).ravel(), kind="stable")[:8])


def _group_zero_counts(mask, m_group):
    d, n = mask.shape
    return (mask.mask.data == 0.0).reshape(d, n // m_group, m_group).sum(axis=-1)


@pytest.mark.parametrize("shape", [(3, 8), (2, 16), (5, 4)])
@pytest.mark.parametrize("nm", [(2, 4), (4, 8)])
def test_nm_masks_have_exact_group_counts(shape, nm):
    d, n = shape
    n_zeros, m_group = nm
    if n % m_group:
        pytest.skip("group does not divide the state width")
    mask = select_mask_nm(_random_field(4, d, n, seed=n), n_zeros, m_group)
    assert np.all(_group_zero_counts(mask, m_group) == n_zeros)
    assert mask.pattern == f"{n_zeros}:{m_group}"
    assert mask.k_pruned == d * n // m_group * n_zeros


def test_nm_single_step_matches_group_sort():
    values = np.random.default_rng(8).normal(size=(1, 2, 8)) ** 2
    mask = select_mask_nm(_field(values), 2, 4)
    for row in range(2):
        for g in range(2):
            group = values[0, row, 4 * g:4 * g + 4]
            expected = set(np.argsort(group, kind="stable")[:2])
            got = set(np.flatnonzero(mask.mask.data[row, 4 * g:4 * g + 4] == 0.0))
            assert got == expected


def test_nm_edge_cases():
    field = _random_field(3, 2, 8)
    assert np.all(select_mask_nm(field, 0, 4).mask.data == 1.0)
    with pytest.raises(ArgumentError):
        select_mask_nm(_random_field(3, 2, 6), 2, 4)
    with pytest.raises(ArgumentError):
        select_mask_nm(field, 5, 4)


def test_parse_pattern():
    assert parse_pattern("2:4") == Pattern("nm", 2, 4)
    assert parse_pattern(" 4 : 8 ").label == "4:8"
    assert parse_pattern("Column").kind == "column"
    assert parse_pattern("unstructured").label == "unstructured"
    for bad in ("5:4", "2-4", "dense"):
        with pytest.raises(ArgumentError):
            parse_pattern(bad)


def test_select_mask_dispatch():
    field = _random_field(4, 2, 8)
    assert select_mask(field, 0.3, parse_pattern("2:4")).pattern == "2:4"
    assert select_mask(field, 0.3, parse_pattern("column")).pattern == "column"
    assert select_mask(field, 0.3, parse_pattern("unstructured"), aggregation="l2").k_pruned == 5


def test_column_mask_zeros_whole_columns():
    field = _random_field(3, 4, 8, seed=9)
    mask = select_mask_columns(field, 0.3)
    assert len(mask.columns) == 2
    zero_cols = np.all(mask.mask.data == 0.0, axis=0)
    assert sorted(np.flatnonzero(zero_cols)) == list(mask.columns)
    assert np.all(mask.mask.data[:, ~zero_cols] == 1.0)
    expected = np.argsort(column_scores(field), kind="stable")[:2]
    assert sorted(expected) == list(mask.columns)


def test_apply_mask(layer_factory):
    layer = layer_factory(3, 4, seed=10)
    ones = PruneMask(NamedTensor("mask", np.ones((3, 4))), 0)
    assert np.array_equal(apply_mask(layer, ones).a_log.data, layer.a_log.data)
    zeros = PruneMask(NamedTensor("mask", np.zeros((3, 4))), 12)
    pruned = apply_mask(layer, zeros)
    assert np.all(pruned.a_log.data == 0.0)
    assert pruned.a_log.name == layer.a_log.name
    for name, tensor in layer.tensors().items():
        if not name.endswith("ssm.A_log"):
            assert pruned.tensors()[name].equals(tensor)
    with pytest.raises(DimensionError):
        apply_mask(layer, PruneMask(NamedTensor("mask", np.ones((4, 3))), 0))


def test_prune_mask_validation():
    with pytest.raises(ArgumentError):
        PruneMask(NamedTensor("mask", [[0.5, 1.0]]), 0)
    with pytest.raises(ArgumentError):
        PruneMask(NamedTensor("mask", [[0.0, 1.0]]), 2)


def test_structured_pruning_small_p_is_noop(layer_factory):
    layer = layer_factory(4, 8, seed=11)
    field = _random_field(3, 4, 8)
    same = prune_columns_structured(layer, field, 0.1)
    assert same.d_state == 8
    assert np.array_equal(same.a_log.data, layer.a_log.data)
    with pytest.raises(ArgumentError):
        prune_columns_structured(layer, field, 1.0)


def test_column_pruning_returns_removed_columns(layer_factory):
    layer = layer_factory(4, 8, seed=13)
    field = _random_field(3, 4, 8, seed=13)
    compact, mask = prune_columns_with_mask(layer, field, 0.3)
    assert mask.columns == select_mask_columns(field, 0.3).columns
    assert np.array_equal(compact.x_proj.data, prune_columns_structured(layer, field, 0.3).x_proj.data)
    with pytest.raises(DimensionError):
        prune_columns_with_mask(layer, _random_field(3, 4, 4), 0.3)


@pytest.mark.parametrize("method", ["sparsessm", "magnitude"])
def test_pruner_column_pattern_uses_structured_pruning(method):
    model = tiny_random_model(0)
    calib = run_calibration(model, make_synthetic_corpus(0, model.config.vocab_size, 4, 16), threads=1)
    pruner = BasePruner.from_method(method)
    for lc in calib.layers:
        layer = model.layers[lc.index]
        pruned, mask = pruner.prune_ssm_layer(layer, lc, 0.3, parse_pattern("column"))
        expected = prune_columns_structured(layer, pruner.ssm_field(layer, lc), 0.3)
        assert len(mask.columns) == layer.d_state - pruned.d_state == 2
        assert np.array_equal(pruned.a_log.data, expected.a_log.data)
        assert np.array_equal(pruned.x_proj.data, expected.x_proj.data)


def test_structured_pruning_matches_zeroed_projections(layer_factory):
    layer = layer_factory(4, 8, seed=12)
    field = _random_field(3, 4, 8, seed=12)
    compact = prune_columns_structured(layer, field, 0.3)
    columns = select_mask_columns(field, 0.3).columns
    assert compact.d_state == 6
    assert layer.a_log.size - compact.a_log.size == 4 * 2
    assert compact.x_proj.shape == (layer.dt_rank + 12, 4)
    x = np.random.default_rng(12).normal(size=(2, 7, 4))
    y_compact, _ = selective_scan(compact, x)
    y_dense, _ = selective_scan(zero_state_projections(layer, columns), x)
    assert np.max(np.abs(y_compact.data - y_dense.data)) <= 1e-10


def test_compact_columns_keeps_dt_rows(layer_factory):
    layer = layer_factory(3, 4, seed=13, dt_rank=2)
    compact = compact_columns(layer, [1])
    x_proj = layer.x_proj.data
    assert np.array_equal(compact.x_proj.data[:2], x_proj[:2])
    assert np.array_equal(compact.x_proj.data[2:5], x_proj[[2, 4, 5]])
    assert np.array_equal(compact.x_proj.data[5:], x_proj[[6, 8, 9]])
    assert np.array_equal(compact.a_log.data, layer.a_log.data[:, [0, 2, 3]])
