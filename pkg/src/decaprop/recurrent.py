"""GRU/LSTM cells, bidirectional runners, and variational dropout.

Cells are step functions over (batch, dim) slices; ``BiRNN`` drives them over
a sequence with optional right-padding masks.  A masked step keeps the
previous state, so the states at real positions are bit-identical to running
each sequence unpadded.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError
from .numerics import (
    ParamStore, Tensor, add, amax, concat, glorot, matmul, mul, reshape,
    sigmoid, stack, sub, tanh, unstack,
)


class GRUCell:
    """Gated recurrent unit: z/r gates, candidate from the reset-gated state."""

    def __init__(self, store: ParamStore, name: str, input_dim: int, hidden_dim: int,
                 rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        d = input_dim + hidden_dim
        self.w_z = store.register(f"{name}.w_z", glorot(rng, d, hidden_dim))
        self.w_r = store.register(f"{name}.w_r", glorot(rng, d, hidden_dim))
        self.w_h = store.register(f"{name}.w_h", glorot(rng, d, hidden_dim))
        self.b_z = store.register(f"{name}.b_z", np.zeros(hidden_dim))
        self.b_r = store.register(f"{name}.b_r", np.zeros(hidden_dim))
        self.b_h = store.register(f"{name}.b_h", np.zeros(hidden_dim))

    def initial_state(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.hidden_dim)))

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        if x.shape[-1] != self.input_dim:
            raise ContractError(f"gru cell expects input width {self.input_dim}, got shape {x.shape}")
        xh = concat([x, h], -1)
        z = sigmoid(add(matmul(xh, self.w_z), self.b_z))
        r = sigmoid(add(matmul(xh, self.w_r), self.b_r))
        xrh = concat([x, mul(r, h)], -1)
        cand = tanh(add(matmul(xrh, self.w_h), self.b_h))
        # (1 - z) * h + z * cand, written to reuse h
        return add(h, mul(z, sub(cand, h)))


class LSTMCell:
    """Standard LSTM with forget/input/output gates and a tanh candidate."""

    def __init__(self, store: ParamStore, name: str, input_dim: int, hidden_dim: int,
                 rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        d = input_dim + hidden_dim
        for gate in ("i", "f", "o", "c"):
            setattr(self, f"w_{gate}", store.register(f"{name}.w_{gate}", glorot(rng, d, hidden_dim)))
            setattr(self, f"b_{gate}", store.register(f"{name}.b_{gate}", np.zeros(hidden_dim)))

    def initial_state(self, batch: int) -> tuple[Tensor, Tensor]:
        z = np.zeros((batch, self.hidden_dim))
        return Tensor(z), Tensor(z.copy())

    def step(self, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        if x.shape[-1] != self.input_dim:
            raise ContractError(f"lstm cell expects input width {self.input_dim}, got shape {x.shape}")
        h, c = state
        xh = concat([x, h], -1)
        i = sigmoid(add(matmul(xh, self.w_i), self.b_i))
        f = sigmoid(add(matmul(xh, self.w_f), self.b_f))
        o = sigmoid(add(matmul(xh, self.w_o), self.b_o))
        cand = tanh(add(matmul(xh, self.w_c), self.b_c))
        c_new = add(mul(f, c), mul(i, cand))
        h_new = mul(o, tanh(c_new))
        return h_new, c_new


def gru_cell(x: Tensor, h_prev: Tensor, cell: GRUCell) -> Tensor:
    """Single GRU step on a state vector or a batch of state rows."""
    if x.ndim == 1:
        out = cell.step(reshape(x, (1, -1)), reshape(h_prev, (1, -1)))
        return reshape(out, (-1,))
    return cell.step(x, h_prev)


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, cell: LSTMCell) -> tuple[Tensor, Tensor]:
    """Single LSTM step; returns (h, c)."""
    if x.ndim == 1:
        h, c = cell.step(reshape(x, (1, -1)), (reshape(h_prev, (1, -1)), reshape(c_prev, (1, -1))))
        return reshape(h, (-1,)), reshape(c, (-1,))
    return cell.step(x, (h_prev, c_prev))


_CELLS = {"gru": GRUCell, "lstm": LSTMCell}


class BiRNN:
    """Two independent directional passes whose states are concatenated.

    ``output_dim`` is split ceil/floor across the directions, so odd widths
    are allowed.  Initial states are zero.  ``mask`` freezes the state at
    padded steps, which also makes the backward pass start from zero until
    the first real token is reached from the right.
    """

    def __init__(self, store: ParamStore, name: str, input_dim: int, output_dim: int,
                 cell: str = "gru", rng: np.random.Generator | None = None):
        if cell not in _CELLS:
            raise ConfigError(f"unknown rnn cell {cell!r}; pick one of {sorted(_CELLS)}")
        if output_dim < 2:
            raise ConfigError(f"birnn output width must be >= 2, got {output_dim}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.cell_kind = cell
        fwd_dim = (output_dim + 1) // 2
        bwd_dim = output_dim // 2
        self.fwd = _CELLS[cell](store, f"{name}.fwd", input_dim, fwd_dim, rng)
        self.bwd = _CELLS[cell](store, f"{name}.bwd", input_dim, bwd_dim, rng)

    def _sweep(self, cell, xs: list[Tensor], mask: np.ndarray | None, order) -> list[Tensor]:
        batch = xs[0].shape[0]
        state = cell.initial_state(batch)
        states: dict[int, Tensor] = {}
        for t in order:
            new = cell.step(xs[t], state)
            if mask is not None:
                m = Tensor(mask[:, t:t + 1])
                if isinstance(new, tuple):
                    new = tuple(add(mul(m, n), mul(Tensor(1.0 - m.data), old))
                                for n, old in zip(new, state))
                else:
                    new = add(mul(m, new), mul(Tensor(1.0 - m.data), state))
            state = new
            states[t] = state[0] if isinstance(state, tuple) else state
        return [states[t] for t in range(len(xs))]

    def _final(self, cell, xs: list[Tensor], mask: np.ndarray | None, order) -> Tensor:
        return self._sweep(cell, xs, mask, order)[order[-1]]

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """Map (batch, len, d_in) -> (batch, len, d_out); 2-d input is one sequence."""
        single = x.ndim == 2
        if single:
            x = reshape(x, (1,) + x.shape)
            if mask is not None:
                mask = np.asarray(mask, dtype=np.float64).reshape(1, -1)
        if x.ndim != 3:
            raise ContractError(f"birnn expects a 2-d or 3-d input, got shape {x.shape}")
        if x.shape[1] == 0:
            raise ContractError("birnn on an empty sequence")
        if x.shape[-1] != self.input_dim:
            raise ContractError(f"birnn expects input width {self.input_dim}, got shape {x.shape}")
        xs = unstack(x, axis=1)
        length = len(xs)
        fwd = self._sweep(self.fwd, xs, mask, range(length))
        bwd = self._sweep(self.bwd, xs, mask, range(length - 1, -1, -1))
        out = concat([stack(fwd, axis=1), stack(bwd, axis=1)], -1)
        return reshape(out, out.shape[1:]) if single else out

    def final_states(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """Concat of the forward state at the last real step and the backward
        state at the first step: (batch, d_out).  An all-masked row yields zeros."""
        single = x.ndim == 2
        if single:
            x = reshape(x, (1,) + x.shape)
            if mask is not None:
                mask = np.asarray(mask, dtype=np.float64).reshape(1, -1)
        if x.shape[1] == 0:
            raise ContractError("birnn on an empty sequence")
        xs = unstack(x, axis=1)
        length = len(xs)
        h_fwd = self._final(self.fwd, xs, mask, list(range(length)))
        h_bwd = self._final(self.bwd, xs, mask, list(range(length - 1, -1, -1)))
        out = concat([h_fwd, h_bwd], -1)
        return reshape(out, (self.output_dim,)) if single else out

    def pooled_states(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """Max over time of the per-position states (alternative pooling)."""
        seq = self(x, mask)
        if mask is not None:
            m = np.asarray(mask, dtype=np.float64)
            if seq.ndim == 2:
                gate = (m.reshape(-1, 1) - 1.0) * 1e30
            else:
                gate = (m[..., None] - 1.0) * 1e30
            seq = add(seq, Tensor(gate))
        return amax(seq, axis=-2)


def variational_dropout(seq: Tensor, rate: float, rng: np.random.Generator | None = None,
                        training: bool = True) -> Tensor:
    """One Bernoulli mask over the feature axis, shared across all time steps.

    Scaled by 1/(1-rate) so eval mode (identity) matches in expectation.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0 or not training:
        return seq
    if rng is None:
        raise ContractError("variational dropout in training mode needs an rng")
    if seq.ndim == 2:
        shape = (1, seq.shape[-1])
    elif seq.ndim == 3:
        shape = (seq.shape[0], 1, seq.shape[-1])
    else:
        raise ContractError(f"variational dropout expects a 2-d or 3-d sequence, got shape {seq.shape}")
    keep = (rng.random(shape) >= rate).astype(np.float64)
    return mul(seq, Tensor(keep / (1.0 - rate)))
