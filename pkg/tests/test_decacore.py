"""Interaction core: gate forcing identities, attention normalization and
equivariance, connector bank accounting, and fused output widths."""

import numpy as np
import pytest

from decaprop.decacore import DecaCore, GatedAttention, gated_biattention
from decaprop.errors import ContractError
from decaprop.numerics import ParamStore, Tensor, grad_check, sum_


def build_block(dim=6, hidden=4, seed=0, **kwargs):
    store = ParamStore()
    block = GatedAttention(store, "attn", dim, hidden,
                           np.random.default_rng(seed), **kwargs)
    return block, store


def build_core(input_dim=10, hidden=6, layers=2, seed=0, **kwargs):
    store = ParamStore()
    core = DecaCore(store, "core", input_dim, hidden, layers, 2,
                    np.random.default_rng(seed), **kwargs)
    return core, store


# ---------------------------------------------------------------------------
# gated attention


def test_block_output_shape(rng):
    block, _ = build_block()
    p = Tensor(rng.normal(size=(2, 5, 6)))
    q = Tensor(rng.normal(size=(2, 3, 6)))
    out = gated_biattention(block, p, q)
    assert out.shape == (2, 5, 4)


def test_alignment_rows_sum_to_one(rng):
    block, _ = build_block()
    p = Tensor(rng.normal(size=(2, 5, 6)))
    q = Tensor(rng.normal(size=(2, 3, 6)))
    q_mask = np.array([[1, 1, 1], [1, 1, 0]], dtype=np.float64)
    a = block.alignment(p, q, q_mask)
    np.testing.assert_allclose(a.data.sum(axis=-1), np.ones((2, 5)), atol=1e-9)
    np.testing.assert_allclose(a.data[1, :, 2], np.zeros(5), atol=1e-200)


def test_gate_values_strictly_inside_unit_interval(rng):
    block, _ = build_block()
    p = Tensor(rng.normal(size=(1, 4, 6)))
    q = Tensor(rng.normal(size=(1, 3, 6)))
    attended = np.matmul(block.alignment(p, q).data, q.data)
    gate = block.gate(Tensor(np.concatenate([p.data, attended], axis=-1)))
    assert np.all(gate.data > 0.0) and np.all(gate.data < 1.0)


def test_open_gate_reduces_to_plain_rnn(rng):
    block, _ = build_block()
    block.gate.w.data[:] = 0.0
    block.gate.b.data[:] = 50.0  # sigmoid -> 1
    p = Tensor(rng.normal(size=(1, 4, 6)))
    q = Tensor(rng.normal(size=(1, 3, 6)))
    out = block(p, q)
    np.testing.assert_allclose(out.data, block.rnn(p).data, atol=1e-6)


def test_closed_gate_feeds_zeros(rng):
    block, _ = build_block()
    block.gate.w.data[:] = 0.0
    block.gate.b.data[:] = -50.0  # sigmoid -> 0
    p = Tensor(rng.normal(size=(1, 4, 6)))
    q = Tensor(rng.normal(size=(1, 3, 6)))
    out = block(p, q)
    zeros = block.rnn(Tensor(np.zeros((1, 4, 6))))
    np.testing.assert_allclose(out.data, zeros.data, atol=1e-6)


def test_ungated_block_skips_attention(rng):
    block, store = build_block(gated=False)
    assert not any("gate" in n or "proj" in n for n in store.names())
    p = Tensor(rng.normal(size=(1, 4, 6)))
    q = Tensor(rng.normal(size=(1, 3, 6)))
    out = block(p, q)
    np.testing.assert_allclose(out.data, block.rnn(p).data, atol=1e-15)
    with pytest.raises(ContractError):
        block.alignment(p, q)


def test_self_attention_single_position_weight_is_one(rng):
    block, _ = build_block()
    x = Tensor(rng.normal(size=(1, 1, 6)))
    a = block.alignment(x, x)
    np.testing.assert_allclose(a.data, [[[1.0]]], atol=1e-12)


def test_self_attention_permutation_equivariance(rng):
    block, _ = build_block()
    x = rng.normal(size=(1, 4, 6))
    perm = np.array([2, 0, 3, 1])
    a = block.alignment(Tensor(x), Tensor(x)).data[0]
    a_perm = block.alignment(Tensor(x[:, perm]), Tensor(x[:, perm])).data[0]
    np.testing.assert_allclose(a_perm, a[perm][:, perm], atol=1e-12)


# ---------------------------------------------------------------------------
# core


def test_core_output_width_and_counts(rng):
    core, _ = build_core(layers=2, hidden=6)
    assert core.output_dim == 6 + 6 * 2
    p = Tensor(rng.normal(size=(2, 5, 10)))
    q = Tensor(rng.normal(size=(2, 3, 10)))
    states = [Tensor(rng.normal(size=(2, 3, 6))) for _ in range(2)]
    counter = [0]
    m, u1, u2 = core(p, q, states, counter=counter)
    assert counter[0] == 4  # 2n one-sided connectors
    assert m.shape == (2, 5, 18)
    assert u1.shape == (2, 5, 6)
    assert u2.shape == (2, 5, 6)


def test_core_width_fixed_point():
    core, _ = build_core(input_dim=20, hidden=64, layers=3)
    assert core.output_dim == 64 + 18


def test_core_double_one_sided_width():
    core, _ = build_core(layers=2, hidden=6, double_one_sided=True)
    assert core.output_dim == 6 + 12 * 2


def test_core_without_bank_returns_u2(rng):
    core, _ = build_core(layers=2, hidden=6, dense_core=False)
    assert core.output_dim == 6
    p = Tensor(rng.normal(size=(1, 4, 10)))
    q = Tensor(rng.normal(size=(1, 3, 10)))
    m, _, u2 = core(p, q, [], counter=[0])
    np.testing.assert_allclose(m.data, u2.data, atol=1e-15)


def test_core_zero_kernels_leave_u2_block(rng):
    core, store = build_core(layers=2, hidden=6)
    for name, p in store.items():
        if ".bank" in name and ".g_" in name:
            p.data[:] = 0.0
    p = Tensor(rng.normal(size=(1, 4, 10)))
    q = Tensor(rng.normal(size=(1, 3, 10)))
    states = [Tensor(rng.normal(size=(1, 3, 6))) for _ in range(2)]
    m, _, u2 = core(p, q, states)
    np.testing.assert_allclose(m.data[..., :6], u2.data, atol=1e-15)
    np.testing.assert_allclose(m.data[..., 6:], np.zeros((1, 4, 12)), atol=1e-15)


def test_core_ungated_keeps_widths(rng):
    core, _ = build_core(layers=2, hidden=6, gated=False)
    p = Tensor(rng.normal(size=(1, 4, 10)))
    q = Tensor(rng.normal(size=(1, 3, 10)))
    states = [Tensor(rng.normal(size=(1, 3, 6))) for _ in range(2)]
    m, _, _ = core(p, q, states)
    assert m.shape == (1, 4, 18)


def test_core_state_count_contract(rng):
    core, _ = build_core(layers=2, hidden=6)
    p = Tensor(rng.normal(size=(1, 4, 10)))
    q = Tensor(rng.normal(size=(1, 3, 10)))
    with pytest.raises(ContractError):
        core(p, q, [Tensor(rng.normal(size=(1, 3, 6)))])


def test_core_gradients(rng):
    store = ParamStore()
    core = DecaCore(store, "core", 5, 4, 1, 2, np.random.default_rng(0))
    p = Tensor(rng.normal(0.0, 0.6, size=(1, 3, 5)))
    q = Tensor(rng.normal(0.0, 0.6, size=(1, 2, 5)))
    states = [Tensor(rng.normal(0.0, 0.6, size=(1, 2, 4)))]

    def forward():
        m, _, _ = core(p, q, states)
        return sum_(m)

    assert grad_check(forward, store) < 1e-4
