"""Span pointer: two chained BiRNNs produce start/end position logits, the
loss is the mean negative log-likelihood of the gold endpoints, and decoding
maximizes p_start[k] * p_end[l] over ordered pairs k <= l.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DataError
from .numerics import (
    NEG_INF, ParamStore, Tensor, add, glorot, log_softmax, matmul, mean_, mul,
    neg, pick, reshape, softmax,
)
from .recurrent import BiRNN, variational_dropout


class PointerLayer:
    """Start logits from BiRNN(m), end logits from a second BiRNN on top."""

    def __init__(self, store: ParamStore, name: str, input_dim: int, hidden: int,
                 rng: np.random.Generator, *, cell: str = "gru", dropout: float = 0.0):
        self.dropout = dropout
        self.rnn_start = BiRNN(store, f"{name}.rnn_start", input_dim, hidden, cell, rng)
        self.rnn_end = BiRNN(store, f"{name}.rnn_end", hidden, hidden, cell, rng)
        self.w_start = store.register(f"{name}.w_start", glorot(rng, hidden, 1))
        self.w_end = store.register(f"{name}.w_end", glorot(rng, hidden, 1))

    def __call__(self, m: Tensor, p_mask: np.ndarray | None = None,
                 training: bool = False, rng: np.random.Generator | None = None
                 ) -> tuple[Tensor, Tensor]:
        """Returns (start_logits, end_logits); padded positions are pushed to -inf."""
        single = m.ndim == 2
        if single:
            m = reshape(m, (1,) + m.shape)
            if p_mask is not None:
                p_mask = np.asarray(p_mask, dtype=np.float64).reshape(1, -1)
        if p_mask is not None and not np.all(p_mask.sum(axis=-1) > 0):
            raise ContractError("pointer layer: some row has every position masked")
        h1 = self.rnn_start(variational_dropout(m, self.dropout, rng, training), p_mask)
        h2 = self.rnn_end(variational_dropout(h1, self.dropout, rng, training), p_mask)
        s1 = reshape(matmul(h1, self.w_start), h1.shape[:-1])
        s2 = reshape(matmul(h2, self.w_end), h2.shape[:-1])
        if p_mask is not None:
            penalty = Tensor((1.0 - p_mask) * NEG_INF)
            s1 = add(s1, penalty)
            s2 = add(s2, penalty)
        if single:
            s1 = reshape(s1, (s1.shape[-1],))
            s2 = reshape(s2, (s2.shape[-1],))
        return s1, s2


def pointer_forward(layer: PointerLayer, m: Tensor, p_mask: np.ndarray | None = None,
                    **kwargs) -> tuple[Tensor, Tensor]:
    """Start/end probability distributions over positions."""
    s1, s2 = layer(m, p_mask, **kwargs)
    return softmax(s1, -1), softmax(s2, -1)


def span_loss(start_logits: Tensor, end_logits: Tensor, y1, y2,
              lengths: np.ndarray | None = None) -> Tensor:
    """Mean over the batch of -(log p1[y1] + log p2[y2]), in log space."""
    single = start_logits.ndim == 1
    if single:
        start_logits = reshape(start_logits, (1, -1))
        end_logits = reshape(end_logits, (1, -1))
    if start_logits.shape != end_logits.shape:
        raise ContractError(
            f"start/end logits differ in shape: {start_logits.shape} vs {end_logits.shape}")
    y1 = np.atleast_1d(np.asarray(y1, dtype=np.int64))
    y2 = np.atleast_1d(np.asarray(y2, dtype=np.int64))
    limit = np.full(start_logits.shape[0], start_logits.shape[1], dtype=np.int64) \
        if lengths is None else np.asarray(lengths, dtype=np.int64)
    for i in range(start_logits.shape[0]):
        if not (0 <= y1[i] <= y2[i] < limit[i]):
            raise DataError(
                f"example {i}: invalid span ({y1[i]}, {y2[i]}) for length {limit[i]}")
    lp1 = pick(log_softmax(start_logits, -1), y1)
    lp2 = pick(log_softmax(end_logits, -1), y2)
    return mean_(neg(add(lp1, lp2)))


def decode_span(p1: np.ndarray, p2: np.ndarray, max_span_len: int | None = None
                ) -> tuple[int, int]:
    """Best (start, end) pair maximizing p1[start] * p2[end] with start <= end.

    Ties break to the smaller start, then the smaller end, matching an
    exhaustive scan in that order.  Without a span cap this is the O(len)
    running-argmax scheme; with a cap the argmax is taken over a window.
    """
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if p1.ndim != 1 or p1.shape != p2.shape:
        raise ContractError(f"decode expects matching 1-d distributions, got {p1.shape} vs {p2.shape}")
    n = p1.shape[0]
    if n == 0:
        raise ContractError("decode on empty distributions")
    if max_span_len is not None and max_span_len < 1:
        raise ContractError(f"max_span_len must be >= 1, got {max_span_len}")

    best_k = best_l = -1
    best_score = -1.0
    k = 0
    for l in range(n):
        if max_span_len is None:
            if p1[l] > p1[k]:
                k = l
        else:
            lo = max(0, l - max_span_len + 1)
            k = lo + int(np.argmax(p1[lo:l + 1]))
        score = p1[k] * p2[l]
        if score > best_score or (score == best_score and (k, l) < (best_k, best_l)):
            best_k, best_l, best_score = k, l, score
    return best_k, best_l
