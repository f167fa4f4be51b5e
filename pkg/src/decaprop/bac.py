"""Bidirectional attention connectors (BAC).

A connector aligns two sequences with scaled dot-product attention over
ReLU-projected rows, then compresses each position's (aligned, original)
pair into three scalars with factorization machines applied to the
concatenation, difference, and elementwise product.  The 3-wide outputs are
what gets propagated between layers, so connector cost stays negligible
next to the encoders.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError
from .numerics import (
    Dense, ParamStore, Tensor, add, concat, glorot, masked_softmax, matmul,
    mul, reshape, sub, sum_, transpose_last,
)


class FMKernel:
    """Second-order factorization machine over the last axis.

    Scores x -> w0 + sum_i w_i x_i + sum_{i<j} <v_i, v_j> x_i x_j using the
    O(k*n) identity 0.5 * sum_f [(x @ V)_f^2 - (x^2 @ V^2)_f].
    """

    def __init__(self, store: ParamStore, name: str, input_dim: int, factors: int,
                 rng: np.random.Generator):
        if factors < 1:
            raise ConfigError(f"fm kernel needs >= 1 factor, got {factors}")
        self.input_dim = input_dim
        self.factors = factors
        self.w0 = store.register(f"{name}.w0", np.zeros(1))
        self.w = store.register(f"{name}.w", glorot(rng, input_dim, 1))
        self.v = store.register(f"{name}.v", glorot(rng, input_dim, factors, shape=(input_dim, factors)))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.input_dim:
            raise ContractError(f"fm kernel expects width {self.input_dim}, got shape {x.shape}")
        linear = matmul(x, self.w)
        xv = matmul(x, self.v)
        x2v2 = matmul(mul(x, x), mul(self.v, self.v))
        pair = sub(sum_(mul(xv, xv), axis=-1, keepdims=True), sum_(x2v2, axis=-1, keepdims=True))
        return add(add(self.w0, linear), mul(pair, 0.5))


class LinearScorer:
    """Ablation stand-in for the FM kernel: a single affine map to one scalar."""

    def __init__(self, store: ParamStore, name: str, input_dim: int, rng: np.random.Generator):
        self.dense = Dense(store, name, input_dim, 1, "none", rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.dense(x)


class MLPScorer:
    """Ablation stand-in: width-preserving ReLU layer followed by a scalar map."""

    def __init__(self, store: ParamStore, name: str, input_dim: int, rng: np.random.Generator):
        self.hidden = Dense(store, f"{name}.hidden", input_dim, input_dim, "relu", rng)
        self.out = Dense(store, f"{name}.out", input_dim, 1, "none", rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.out(self.hidden(x))


_SCORERS = {"fm": None, "linear": LinearScorer, "nonlinear": MLPScorer}


def make_scorer(store: ParamStore, name: str, input_dim: int, kind: str, factors: int,
                rng: np.random.Generator):
    if kind not in _SCORERS:
        raise ConfigError(f"unknown connector scorer {kind!r}; pick one of {sorted(_SCORERS)}")
    if kind == "fm":
        return FMKernel(store, name, input_dim, factors, rng)
    return _SCORERS[kind](store, name, input_dim, rng)


def fm(x: Tensor, kernel: FMKernel) -> Tensor:
    """Score a single feature vector; returns a 0-d tensor."""
    if x.ndim != 1:
        raise ContractError(f"fm expects a vector, got shape {x.shape}")
    return reshape(kernel(reshape(x, (1, -1))), ())


def affinity(p: Tensor, q: Tensor, proj=None) -> Tensor:
    """Scaled dot-product affinity between every pair of rows.

    ``proj`` (identity when None) is applied to both sides; scaling is
    1/sqrt(width of the projected rows).
    """
    if p.shape[-1] != q.shape[-1]:
        raise ContractError(f"affinity needs equal widths, got {p.shape} vs {q.shape}")
    fp = proj(p) if proj is not None else p
    fq = proj(q) if proj is not None else q
    scale = 1.0 / np.sqrt(fp.shape[-1])
    return mul(matmul(fp, transpose_last(fq)), scale)


def align(e: Tensor, p: Tensor, q: Tensor,
          p_mask: np.ndarray | None = None, q_mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Soft alignments from an affinity matrix e of shape (..., lp, lq).

    Returns (a, b): a aligns passage rows to each question position
    (softmax over lp), b aligns question rows to each passage position
    (softmax over lq).
    """
    if e.shape[-2] != p.shape[-2] or e.shape[-1] != q.shape[-2]:
        raise ContractError(f"affinity shape {e.shape} does not match rows {p.shape} x {q.shape}")
    pm = None if p_mask is None else np.asarray(p_mask, dtype=np.float64)[..., None, :]
    qm = None if q_mask is None else np.asarray(q_mask, dtype=np.float64)[..., None, :]
    a = matmul(masked_softmax(transpose_last(e), pm, axis=-1), p)
    b = matmul(masked_softmax(e, qm, axis=-1), q)
    return a, b


class BAC:
    """One bidirectional attention connector instance.

    Both sequences must share a width; the projection is shared between them
    unless ``shared_projection`` is off.  The same three scorers compress
    both directions.
    """

    def __init__(self, store: ParamStore, name: str, dim: int, factors: int,
                 rng: np.random.Generator, scorer: str = "fm", shared_projection: bool = True,
                 double: bool = False):
        self.dim = dim
        self.double = double
        self.proj_p = Dense(store, f"{name}.proj", dim, dim, "relu", rng)
        self.proj_q = self.proj_p if shared_projection else Dense(store, f"{name}.proj_q", dim, dim, "relu", rng)
        self.g_cat = make_scorer(store, f"{name}.g_cat", 2 * dim, scorer, factors, rng)
        self.g_sub = make_scorer(store, f"{name}.g_sub", dim, scorer, factors, rng)
        self.g_mul = make_scorer(store, f"{name}.g_mul", dim, scorer, factors, rng)
        if double:
            self.g_cat2 = make_scorer(store, f"{name}.g_cat2", 2 * dim, scorer, factors, rng)
            self.g_sub2 = make_scorer(store, f"{name}.g_sub2", dim, scorer, factors, rng)
            self.g_mul2 = make_scorer(store, f"{name}.g_mul2", dim, scorer, factors, rng)

    @property
    def output_dim(self) -> int:
        return 6 if self.double else 3

    def _compress(self, aligned: Tensor, original: Tensor) -> Tensor:
        both = concat([aligned, original], -1)
        diff = sub(aligned, original)
        prod = mul(aligned, original)
        cols = [self.g_cat(both), self.g_sub(diff), self.g_mul(prod)]
        if self.double:
            cols += [self.g_cat2(both), self.g_sub2(diff), self.g_mul2(prod)]
        return concat(cols, -1)

    def _affinity(self, p: Tensor, q: Tensor) -> Tensor:
        if p.shape[-1] != self.dim or q.shape[-1] != self.dim:
            raise ContractError(f"connector built for width {self.dim}, got {p.shape} vs {q.shape}")
        fp = self.proj_p(p)
        fq = self.proj_q(q)
        return mul(matmul(fp, transpose_last(fq)), 1.0 / np.sqrt(self.dim))

    def __call__(self, p: Tensor, q: Tensor,
                 p_mask: np.ndarray | None = None,
                 q_mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        """Compress both directions: returns (g_p, g_q), 3 scalars per position."""
        e = self._affinity(p, q)
        a, b = align(e, p, q, p_mask, q_mask)
        return self._compress(b, p), self._compress(a, q)

    def one_sided(self, p: Tensor, q: Tensor,
                  p_mask: np.ndarray | None = None,
                  q_mask: np.ndarray | None = None) -> Tensor:
        """Left-side compression only; skips the question-side alignment work."""
        e = self._affinity(p, q)
        qm = None if q_mask is None else np.asarray(q_mask, dtype=np.float64)[..., None, :]
        b = matmul(masked_softmax(e, qm, axis=-1), q)
        return self._compress(b, p)


def bac_forward(p: Tensor, q: Tensor, params: BAC,
                p_mask: np.ndarray | None = None,
                q_mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    return params(p, q, p_mask, q_mask)


def bac_one_sided(p: Tensor, q: Tensor, params: BAC,
                  p_mask: np.ndarray | None = None,
                  q_mask: np.ndarray | None = None) -> Tensor:
    return params.one_sided(p, q, p_mask, q_mask)
