"""Attention connectors: the factorization-machine fast path against a naive
double loop, affinity/alignment analytic cases, and compression contracts."""

import numpy as np
import pytest

from decaprop.bac import (BAC, FMKernel, LinearScorer, MLPScorer, affinity, align,
                          bac_forward, bac_one_sided, fm, make_scorer)
from decaprop.errors import ConfigError, ContractError
from decaprop.numerics import ParamStore, Tensor, grad_check, sum_


def naive_fm(x: np.ndarray, w0: float, w: np.ndarray, v: np.ndarray) -> float:
    """Direct second-order evaluation: w0 + sum w_i x_i + sum_{i<j} <v_i,v_j> x_i x_j."""
    n = x.shape[0]
    total = w0 + float(w @ x)
    for i in range(n):
        for j in range(i + 1, n):
            total += float(v[i] @ v[j]) * x[i] * x[j]
    return total


# ---------------------------------------------------------------------------
# factorization machine


def test_fm_zero_kernel_scores_zero(rng):
    store = ParamStore()
    kernel = FMKernel(store, "k", 4, 2, rng)
    for _, p in store.items():
        p.data[:] = 0.0
    out = fm(Tensor(rng.normal(size=4)), kernel)
    assert out.shape == ()
    np.testing.assert_allclose(out.data, 0.0, atol=1e-15)


def test_fm_hand_value(rng):
    # x=[1,2], w0=1, w=[1,1], v=[[1],[1]] -> 1 + (1+2) + 1*1*2 = 6
    store = ParamStore()
    kernel = FMKernel(store, "k", 2, 1, rng)
    kernel.w0.data[:] = 1.0
    kernel.w.data[:] = 1.0
    kernel.v.data[:] = 1.0
    out = fm(Tensor(np.array([1.0, 2.0])), kernel)
    np.testing.assert_allclose(out.data, 6.0, atol=1e-12)


def test_fm_fast_path_matches_naive(rng):
    store = ParamStore()
    kernel = FMKernel(store, "k", 10, 4, rng)
    kernel.w0.data[:] = rng.normal()
    for _ in range(50):
        x = rng.normal(size=10)
        expect = naive_fm(x, float(kernel.w0.data[0]),
                          kernel.w.data[:, 0], kernel.v.data)
        got = fm(Tensor(x), kernel)
        np.testing.assert_allclose(got.data, expect, atol=1e-10)


def test_fm_batched_shapes(rng):
    store = ParamStore()
    kernel = FMKernel(store, "k", 6, 3, rng)
    out = kernel(Tensor(rng.normal(size=(2, 5, 6))))
    assert out.shape == (2, 5, 1)


def test_fm_width_contract(rng):
    kernel = FMKernel(ParamStore(), "k", 6, 3, rng)
    with pytest.raises(ContractError):
        kernel(Tensor(np.zeros((2, 5))))
    with pytest.raises(ContractError):
        fm(Tensor(np.zeros((2, 6))), kernel)  # not a vector


def test_fm_needs_a_factor(rng):
    with pytest.raises(ConfigError):
        FMKernel(ParamStore(), "k", 6, 0, rng)


def test_scorer_variants(rng):
    store = ParamStore()
    x = Tensor(rng.normal(size=(4, 5)))
    for kind, cls in (("linear", LinearScorer), ("nonlinear", MLPScorer)):
        scorer = make_scorer(store, kind, 5, kind, 3, rng)
        assert isinstance(scorer, cls)
        assert scorer(x).shape == (4, 1)
    with pytest.raises(ConfigError):
        make_scorer(store, "s", 5, "quadratic", 3, rng)


# ---------------------------------------------------------------------------
# affinity and alignment


def test_affinity_unit_vectors():
    e = affinity(Tensor(np.array([[1.0, 0.0]])), Tensor(np.array([[1.0, 0.0]])))
    np.testing.assert_allclose(e.data, [[1.0 / np.sqrt(2.0)]], atol=1e-12)


def test_affinity_orthogonal_is_zero():
    e = affinity(Tensor(np.array([[1.0, 1.0]])), Tensor(np.array([[1.0, -1.0]])))
    np.testing.assert_allclose(e.data, [[0.0]], atol=1e-15)


def test_affinity_shape(rng):
    e = affinity(Tensor(rng.normal(size=(5, 8))), Tensor(rng.normal(size=(7, 8))))
    assert e.shape == (5, 7)


def test_affinity_width_mismatch(rng):
    with pytest.raises(ContractError):
        affinity(Tensor(rng.normal(size=(5, 8))), Tensor(rng.normal(size=(7, 9))))


def test_align_uniform_row_gives_column_mean(rng):
    p = Tensor(rng.normal(size=(4, 3)))
    q = Tensor(rng.normal(size=(5, 3)))
    e = Tensor(np.zeros((4, 5)))
    a, b = align(e, p, q)
    np.testing.assert_allclose(b.data, np.tile(q.data.mean(axis=0), (4, 1)), atol=1e-12)
    np.testing.assert_allclose(a.data, np.tile(p.data.mean(axis=0), (5, 1)), atol=1e-12)


def test_align_hard_attention_selects_row(rng):
    p = Tensor(rng.normal(size=(3, 4)))
    q = Tensor(rng.normal(size=(2, 4)))
    e = np.full((3, 2), -1e3)
    e[0, 1] = 1e3
    e[1, 0] = 1e3
    e[2, 1] = 1e3
    _, b = align(Tensor(e), p, q)
    np.testing.assert_allclose(b.data[0], q.data[1], atol=1e-9)
    np.testing.assert_allclose(b.data[1], q.data[0], atol=1e-9)


def test_align_shape_contract(rng):
    with pytest.raises(ContractError):
        align(Tensor(np.zeros((3, 2))), Tensor(np.zeros((4, 5))), Tensor(np.zeros((2, 5))))


# ---------------------------------------------------------------------------
# full connector


def test_bac_output_shapes(rng):
    store = ParamStore()
    bac = BAC(store, "c", 8, 3, rng)
    g_p, g_q = bac_forward(Tensor(rng.normal(size=(5, 8))), Tensor(rng.normal(size=(7, 8))), bac)
    assert g_p.shape == (5, 3)
    assert g_q.shape == (7, 3)


def test_bac_batched_with_masks(rng):
    store = ParamStore()
    bac = BAC(store, "c", 6, 3, rng)
    p = Tensor(rng.normal(size=(2, 4, 6)))
    q = Tensor(rng.normal(size=(2, 3, 6)))
    p_mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=np.float64)
    q_mask = np.array([[1, 1, 1], [1, 0, 0]], dtype=np.float64)
    g_p, g_q = bac(p, q, p_mask, q_mask)
    assert g_p.shape == (2, 4, 3)
    assert g_q.shape == (2, 3, 3)


def test_bac_mask_blocks_padding_influence(rng):
    """Changing values at masked question positions must not move g_p."""
    store = ParamStore()
    bac = BAC(store, "c", 6, 3, rng)
    p = Tensor(rng.normal(size=(1, 4, 6)))
    q1 = rng.normal(size=(1, 3, 6))
    q2 = np.array(q1)
    q2[0, 2] = 77.0
    q_mask = np.array([[1, 1, 0]], dtype=np.float64)
    g1, _ = bac(p, Tensor(q1), q_mask=q_mask)
    g2, _ = bac(p, Tensor(q2), q_mask=q_mask)
    np.testing.assert_allclose(g1.data, g2.data, atol=1e-12)


def test_bac_zero_kernels_give_zero_outputs(rng):
    store = ParamStore()
    bac = BAC(store, "c", 5, 2, rng)
    for name, p in store.items():
        if ".g_" in name:
            p.data[:] = 0.0
    g_p, g_q = bac(Tensor(rng.normal(size=(4, 5))), Tensor(rng.normal(size=(6, 5))))
    np.testing.assert_allclose(g_p.data, np.zeros((4, 3)), atol=1e-15)
    np.testing.assert_allclose(g_q.data, np.zeros((6, 3)), atol=1e-15)


def test_bac_identical_sequences_symmetric(rng):
    store = ParamStore()
    bac = BAC(store, "c", 5, 2, rng)
    p = Tensor(rng.normal(size=(4, 5)))
    g_p, g_q = bac(p, p)
    np.testing.assert_allclose(g_p.data, g_q.data, atol=1e-12)


def test_bac_one_sided_matches_left_output(rng):
    store = ParamStore()
    bac = BAC(store, "c", 6, 3, rng)
    p = Tensor(rng.normal(size=(2, 4, 6)))
    q = Tensor(rng.normal(size=(2, 3, 6)))
    q_mask = np.array([[1, 1, 1], [1, 1, 0]], dtype=np.float64)
    g_p, _ = bac(p, q, q_mask=q_mask)
    solo = bac_one_sided(p, q, bac, q_mask=q_mask)
    np.testing.assert_allclose(solo.data, g_p.data, atol=1e-15)


def test_bac_separate_projections_flag(rng):
    shared = ParamStore()
    BAC(shared, "c", 5, 2, rng, shared_projection=True)
    split = ParamStore()
    BAC(split, "c", 5, 2, np.random.default_rng(0), shared_projection=False)
    assert any("proj_q" in n for n in split.names())
    assert not any("proj_q" in n for n in shared.names())


def test_bac_double_compression_width(rng):
    store = ParamStore()
    bac = BAC(store, "c", 5, 2, rng, double=True)
    assert bac.output_dim == 6
    g_p, g_q = bac(Tensor(rng.normal(size=(4, 5))), Tensor(rng.normal(size=(3, 5))))
    assert g_p.shape == (4, 6)
    assert g_q.shape == (3, 6)


def test_bac_width_contract(rng):
    bac = BAC(ParamStore(), "c", 5, 2, rng)
    with pytest.raises(ContractError):
        bac(Tensor(np.zeros((4, 6))), Tensor(np.zeros((3, 5))))


def test_bac_gradients(rng):
    store = ParamStore()
    bac = BAC(store, "c", 4, 2, rng)
    p = Tensor(rng.normal(0.0, 0.6, size=(3, 4)))
    q = Tensor(rng.normal(0.0, 0.6, size=(2, 4)))

    def forward():
        g_p, g_q = bac(p, q)
        return sum_(g_p) + sum_(g_q)

    assert grad_check(forward, store) < 1e-4
