"""Recurrent cells: hand-evaluated fixed points, gate-forcing identities,
mask semantics, direction symmetry, and dropout mask sharing."""

import numpy as np
import pytest

from decaprop.errors import ConfigError, ContractError
from decaprop.numerics import ParamStore, Tensor, grad_check, sum_
from decaprop.recurrent import (BiRNN, GRUCell, LSTMCell, gru_cell, lstm_cell,
                                variational_dropout)


def _zeroed(store: ParamStore) -> None:
    for _, p in store.items():
        p.data[:] = 0.0


# ---------------------------------------------------------------------------
# GRU


def test_gru_zero_params_halves_state(rng):
    store = ParamStore()
    cell = GRUCell(store, "g", 3, 2, rng)
    _zeroed(store)
    h = gru_cell(Tensor(np.zeros(3)), Tensor(np.array([2.0, 4.0])), cell)
    np.testing.assert_allclose(h.data, [1.0, 2.0], atol=1e-15)


def test_gru_closed_update_gate_keeps_state(rng):
    store = ParamStore()
    cell = GRUCell(store, "g", 3, 2, rng)
    cell.b_z.data[:] = -50.0  # z ~ 0 everywhere
    h_prev = Tensor(rng.normal(size=(1, 2)))
    h = cell.step(Tensor(rng.normal(size=(1, 3))), h_prev)
    np.testing.assert_allclose(h.data, h_prev.data, atol=1e-6)


def test_gru_dim_mismatch(rng):
    cell = GRUCell(ParamStore(), "g", 3, 2, rng)
    with pytest.raises(ContractError):
        cell.step(Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 2))))


def test_gru_grad(rng):
    store = ParamStore()
    cell = GRUCell(store, "g", 3, 2, rng)
    x = Tensor(rng.normal(size=(2, 3)))

    def forward():
        h = cell.initial_state(2)
        h = cell.step(x, h)
        h = cell.step(x, h)
        return sum_(h)

    assert grad_check(forward, store) < 1e-4


# ---------------------------------------------------------------------------
# LSTM


def test_lstm_zero_params_hand_value(rng):
    store = ParamStore()
    cell = LSTMCell(store, "l", 3, 1, rng)
    _zeroed(store)
    h, c = lstm_cell(Tensor(np.zeros(3)), Tensor(np.zeros(1)), Tensor(np.array([2.0])), cell)
    np.testing.assert_allclose(c.data, [1.0], atol=1e-15)
    np.testing.assert_allclose(h.data, [0.5 * np.tanh(1.0)], atol=1e-15)


def test_lstm_memory_passthrough(rng):
    store = ParamStore()
    cell = LSTMCell(store, "l", 3, 2, rng)
    cell.b_f.data[:] = 50.0   # forget gate ~ 1
    cell.b_i.data[:] = -50.0  # input gate ~ 0
    c_prev = Tensor(rng.normal(size=(1, 2)))
    _, c = cell.step(Tensor(rng.normal(size=(1, 3))), (Tensor(np.zeros((1, 2))), c_prev))
    np.testing.assert_allclose(c.data, c_prev.data, atol=1e-6)


def test_lstm_grad(rng):
    store = ParamStore()
    cell = LSTMCell(store, "l", 3, 2, rng)
    x = Tensor(rng.normal(size=(2, 3)))

    def forward():
        state = cell.initial_state(2)
        state = cell.step(x, state)
        state = cell.step(x, state)
        return sum_(state[0])

    assert grad_check(forward, store) < 1e-4


# ---------------------------------------------------------------------------
# BiRNN


def test_birnn_shapes(rng):
    store = ParamStore()
    rnn = BiRNN(store, "r", 10, 32, "gru", rng)
    out = rnn(Tensor(rng.normal(size=(5, 10))))
    assert out.shape == (5, 32)
    out = rnn(Tensor(rng.normal(size=(2, 5, 10))))
    assert out.shape == (2, 5, 32)


def test_birnn_odd_width_splits_ceil_floor(rng):
    store = ParamStore()
    rnn = BiRNN(store, "r", 4, 75, "gru", rng)
    assert rnn.fwd.hidden_dim == 38
    assert rnn.bwd.hidden_dim == 37
    out = rnn(Tensor(rng.normal(size=(3, 4))))
    assert out.shape == (3, 75)


def test_birnn_empty_sequence(rng):
    rnn = BiRNN(ParamStore(), "r", 4, 6, "gru", rng)
    with pytest.raises(ContractError):
        rnn(Tensor(np.zeros((2, 0, 4))))


def test_birnn_unknown_cell(rng):
    with pytest.raises(ConfigError):
        BiRNN(ParamStore(), "r", 4, 6, "rnn", rng)


def test_birnn_single_step_equals_cells(rng):
    store = ParamStore()
    rnn = BiRNN(store, "r", 4, 6, "gru", rng)
    x = Tensor(rng.normal(size=(1, 4)))
    out = rnn(x)
    h_f = rnn.fwd.step(x, rnn.fwd.initial_state(1))
    h_b = rnn.bwd.step(x, rnn.bwd.initial_state(1))
    np.testing.assert_allclose(out.data[0, :3], h_f.data[0], atol=1e-15)
    np.testing.assert_allclose(out.data[0, 3:], h_b.data[0], atol=1e-15)


def test_birnn_masked_matches_unpadded(rng):
    """Right-padding plus a mask reproduces per-row unpadded runs."""
    store = ParamStore()
    rnn = BiRNN(store, "r", 3, 6, "lstm", rng)
    lengths = [4, 2, 3]
    rows = [rng.normal(size=(n, 3)) for n in lengths]
    padded = np.zeros((3, 4, 3))
    mask = np.zeros((3, 4))
    for i, row in enumerate(rows):
        padded[i, :lengths[i]] = row
        mask[i, :lengths[i]] = 1.0
    out = rnn(Tensor(padded), mask)
    for i, row in enumerate(rows):
        solo = rnn(Tensor(row))
        np.testing.assert_allclose(out.data[i, :lengths[i]], solo.data, atol=1e-12)


def test_birnn_direction_symmetry(rng):
    """With both direction cells sharing weights, reversing the input swaps
    and time-flips the two output halves."""
    store = ParamStore()
    rnn = BiRNN(store, "r", 3, 8, "gru", rng)
    for attr in ("w_z", "w_r", "w_h", "b_z", "b_r", "b_h"):
        getattr(rnn.bwd, attr).data[:] = getattr(rnn.fwd, attr).data
    x = rng.normal(size=(1, 5, 3))
    out = rnn(Tensor(x)).data
    out_rev = rnn(Tensor(x[:, ::-1, :].copy())).data
    np.testing.assert_allclose(out_rev[:, :, :4], out[:, ::-1, 4:], atol=1e-12)
    np.testing.assert_allclose(out_rev[:, :, 4:], out[:, ::-1, :4], atol=1e-12)


def test_birnn_final_states(rng):
    store = ParamStore()
    rnn = BiRNN(store, "r", 3, 6, "gru", rng)
    x = rng.normal(size=(2, 4, 3))
    mask = np.array([[1, 1, 1, 0], [1, 1, 1, 1]], dtype=np.float64)
    seq = rnn(Tensor(x), mask)
    fin = rnn.final_states(Tensor(x), mask)
    assert fin.shape == (2, 6)
    # forward half at the last real step, backward half at step 0
    np.testing.assert_allclose(fin.data[0, :3], seq.data[0, 2, :3], atol=1e-15)
    np.testing.assert_allclose(fin.data[1, :3], seq.data[1, 3, :3], atol=1e-15)
    np.testing.assert_allclose(fin.data[:, 3:], seq.data[:, 0, 3:], atol=1e-15)


def test_birnn_final_states_all_masked_row_is_zero(rng):
    store = ParamStore()
    rnn = BiRNN(store, "r", 3, 6, "gru", rng)
    x = rng.normal(size=(2, 3, 3))
    mask = np.array([[1, 1, 0], [0, 0, 0]], dtype=np.float64)
    fin = rnn.final_states(Tensor(x), mask)
    np.testing.assert_allclose(fin.data[1], np.zeros(6), atol=1e-15)


def test_birnn_pooled_states_ignores_padding(rng):
    store = ParamStore()
    rnn = BiRNN(store, "r", 3, 6, "gru", rng)
    x = rng.normal(size=(1, 4, 3))
    mask = np.array([[1, 1, 0, 0]], dtype=np.float64)
    pooled = rnn.pooled_states(Tensor(x), mask)
    seq = rnn(Tensor(x), mask)
    np.testing.assert_allclose(pooled.data, seq.data[:, :2].max(axis=1), atol=1e-12)


def test_birnn_grad_with_mask(rng):
    store = ParamStore()
    rnn = BiRNN(store, "r", 3, 4, "gru", rng)
    x = Tensor(rng.normal(size=(2, 3, 3)))
    mask = np.array([[1, 1, 1], [1, 0, 0]], dtype=np.float64)
    assert grad_check(lambda: sum_(rnn(x, mask)), store) < 1e-4


# ---------------------------------------------------------------------------
# variational dropout


def test_dropout_identity_cases(rng):
    x = Tensor(rng.normal(size=(2, 5, 4)))
    assert variational_dropout(x, 0.0, rng, training=True) is x
    assert variational_dropout(x, 0.5, rng, training=False) is x


def test_dropout_mask_shared_over_time():
    rng = np.random.default_rng(7)
    x = Tensor(np.ones((2, 6, 8)))
    y = variational_dropout(x, 0.5, rng, training=True)
    # every time step sees the same mask, scaled by 1/(1-rate)
    for t in range(1, 6):
        np.testing.assert_allclose(y.data[:, t], y.data[:, 0], atol=1e-15)
    kept = y.data[:, 0][y.data[:, 0] != 0]
    np.testing.assert_allclose(kept, 2.0, atol=1e-15)
    # examples draw independent masks
    assert not np.array_equal(y.data[0], y.data[1])


def test_dropout_bad_rate(rng):
    x = Tensor(np.ones((2, 3)))
    with pytest.raises(ConfigError):
        variational_dropout(x, 1.0, rng)
    with pytest.raises(ConfigError):
        variational_dropout(x, -0.1, rng)


def test_dropout_training_needs_rng():
    x = Tensor(np.ones((2, 3)))
    with pytest.raises(ContractError):
        variational_dropout(x, 0.5, None, training=True)
