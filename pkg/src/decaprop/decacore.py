"""Interaction core: gated bi-attention, gated self-attention, and the dense
bank of one-sided connectors back into every encoder hierarchy.

Both gated blocks share one shape: project, align with scaled dot-product
attention, sigmoid-gate the original rows, and re-encode with a BiRNN.  The
self block is the same computation with the passage playing both roles and
no diagonal masking.  The dense bank compresses (U^j vs question layer k)
for j in {1,2} and every k, appending 3 scalars per connector to U^2.
"""

from __future__ import annotations

import numpy as np

from .bac import BAC
from .errors import ConfigError, ContractError
from .numerics import (
    Dense, ParamStore, Tensor, concat, masked_softmax, matmul, mul, transpose_last,
)
from .recurrent import BiRNN, variational_dropout


class GatedAttention:
    """Attend, gate, re-encode.  With ``gated=False`` the attention and gate
    are dropped and only the BiRNN re-encoding remains (ablation path)."""

    def __init__(self, store: ParamStore, name: str, dim: int, hidden: int,
                 rng: np.random.Generator, *, cell: str = "gru", dropout: float = 0.0,
                 gated: bool = True, shared_projection: bool = True):
        self.dim = dim
        self.gated = gated
        self.dropout = dropout
        if gated:
            self.proj_p = Dense(store, f"{name}.proj", dim, dim, "relu", rng)
            self.proj_q = self.proj_p if shared_projection else Dense(
                store, f"{name}.proj_q", dim, dim, "relu", rng)
            self.gate = Dense(store, f"{name}.gate", 2 * dim, dim, "sigmoid", rng)
        self.rnn = BiRNN(store, f"{name}.rnn", dim, hidden, cell, rng)

    def alignment(self, p: Tensor, q: Tensor, q_mask: np.ndarray | None = None) -> Tensor:
        """Row-stochastic attention of each p position over q positions."""
        if not self.gated:
            raise ContractError("alignment is undefined for an ungated block")
        if p.shape[-1] != self.dim or q.shape[-1] != self.dim:
            raise ContractError(f"gated attention built for width {self.dim}, got {p.shape} vs {q.shape}")
        scores = mul(matmul(self.proj_p(p), transpose_last(self.proj_q(q))), 1.0 / np.sqrt(self.dim))
        qm = None if q_mask is None else np.asarray(q_mask, dtype=np.float64)[..., None, :]
        return masked_softmax(scores, qm, axis=-1)

    def __call__(self, p: Tensor, q: Tensor,
                 p_mask: np.ndarray | None = None, q_mask: np.ndarray | None = None,
                 training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        if self.gated:
            attended = matmul(self.alignment(p, q, q_mask), q)
            gate = self.gate(concat([p, attended], -1))
            p = mul(gate, p)
        p = variational_dropout(p, self.dropout, rng, training)
        return self.rnn(p, p_mask)


class DecaCore:
    """Gated attention stack plus the dense connector bank."""

    def __init__(self, store: ParamStore, name: str, input_dim: int, hidden: int,
                 layers: int, factors: int, rng: np.random.Generator, *,
                 cell: str = "gru", dropout: float = 0.0, gated: bool = True,
                 dense_core: bool = True, scorer: str = "fm",
                 shared_projection: bool = True, double_one_sided: bool = False):
        if dense_core and layers < 1:
            raise ConfigError("dense core needs at least one encoder hierarchy")
        self.hidden = hidden
        self.layers = layers
        self.dense_core = dense_core
        self.bi_attn = GatedAttention(store, f"{name}.bi", input_dim, hidden, rng,
                                      cell=cell, dropout=dropout, gated=gated,
                                      shared_projection=shared_projection)
        self.self_attn = GatedAttention(store, f"{name}.self", hidden, hidden, rng,
                                        cell=cell, dropout=dropout, gated=gated,
                                        shared_projection=shared_projection)
        self.bank: dict[tuple[int, int], BAC] = {}
        if dense_core:
            for k in range(layers):
                for j in (0, 1):
                    self.bank[(k, j)] = BAC(store, f"{name}.bank{k}u{j + 1}", hidden, factors,
                                            rng, scorer=scorer, shared_projection=shared_projection,
                                            double=double_one_sided)

    @property
    def output_dim(self) -> int:
        if not self.dense_core:
            return self.hidden
        per = next(iter(self.bank.values())).output_dim
        return self.hidden + per * 2 * self.layers

    def __call__(self, p_enc: Tensor, q_enc: Tensor, question_states: list[Tensor],
                 p_mask: np.ndarray | None = None, q_mask: np.ndarray | None = None,
                 training: bool = False, rng: np.random.Generator | None = None,
                 counter: list | None = None) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (m, u1, u2); m is what the answer layer consumes."""
        u1 = self.bi_attn(p_enc, q_enc, p_mask, q_mask, training, rng)
        u2 = self.self_attn(u1, u1, p_mask, p_mask, training, rng)
        if not self.dense_core:
            return u2, u1, u2
        if len(question_states) != self.layers:
            raise ContractError(
                f"dense core built for {self.layers} hierarchies, got {len(question_states)}")
        blocks = [u2]
        for k in range(self.layers):
            for j, u in enumerate((u1, u2)):
                if counter is not None:
                    counter[0] += 1
                blocks.append(self.bank[(k, j)].one_sided(u, question_states[k], p_mask, q_mask))
        return concat(blocks, -1), u1, u2


def gated_biattention(block: GatedAttention, p: Tensor, q: Tensor, **kwargs) -> Tensor:
    return block(p, q, **kwargs)


def gated_selfattention(block: GatedAttention, p: Tensor, **kwargs) -> Tensor:
    return block(p, p, **kwargs)
