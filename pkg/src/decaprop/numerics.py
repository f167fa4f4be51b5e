"""Dense float64 tensors with tape-based reverse-mode differentiation.

A forward pass runs inside a ``with Tape() as tape:`` block; every operation
whose inputs require gradients appends a record to the tape.  ``backward``
replays the records in exact reverse execution order, accumulating gradients
additively, so a tensor used twice receives the sum of both contributions.
Outside any tape the same ops run as plain NumPy, which is how inference and
finite-difference probes stay cheap.

Gradient arrays are only ever rebound, never mutated in place.  Several
backward rules hand out views of the upstream gradient (concat, stack), and
rebinding keeps those aliases safe.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError

NEG_INF = -1e30  # finite stand-in for -inf; keeps every forward value in range

_TAPES: list["Tape"] = []


class Tensor:
    """N-dimensional float64 array plus a gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.data.shape}")
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("tensor/tensor division is not supported; divide by a scalar")
        return mul(self, 1.0 / float(other))


class Tape:
    """Execution record of one forward pass, replayed in reverse by backward()."""

    def __init__(self):
        self._records: list[tuple[tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPES.pop()

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss) = 1 and propagate through the tape in reverse."""
        if loss.data.ndim != 0:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones((), dtype=np.float64)
        for outputs, fn in reversed(self._records):
            if any(o.grad is not None for o in outputs):
                fn()


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _acc(t: Tensor, g: np.ndarray) -> None:
    # Rebind-only accumulation: never writes into an existing gradient array.
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _record(parents: tuple, outputs: tuple, fn) -> None:
    if not _TAPES:
        return
    if not any(p.requires_grad for p in parents):
        return
    for o in outputs:
        o.requires_grad = True
    _TAPES[-1]._records.append((outputs, fn))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing NumPy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_axis(t: Tensor, axis: int) -> int:
    if not -t.ndim <= axis < t.ndim:
        raise ContractError(f"axis {axis} out of range for shape {t.shape}")
    return axis % t.ndim


# ---------------------------------------------------------------------------
# elementwise and arithmetic ops


def add(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out = Tensor(a.data + b.data)

    def bw():
        g = out.grad
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    _record((a, b), (out,), bw)
    return out


def sub(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out = Tensor(a.data - b.data)

    def bw():
        g = out.grad
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(-g, b.data.shape))

    _record((a, b), (out,), bw)
    return out


def mul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out = Tensor(a.data * b.data)

    def bw():
        g = out.grad
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))

    _record((a, b), (out,), bw)
    return out


def neg(a) -> Tensor:
    a = _ensure(a)
    out = Tensor(-a.data)

    def bw():
        _acc(a, -out.grad)

    _record((a,), (out,), bw)
    return out


def matmul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError(f"matmul needs at least 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def bw():
        g = out.grad
        _acc(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        _acc(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    _record((a, b), (out,), bw)
    return out


def relu(a) -> Tensor:
    a = _ensure(a)
    out = Tensor(np.maximum(a.data, 0.0))

    def bw():
        _acc(a, out.grad * (a.data > 0.0))

    _record((a,), (out,), bw)
    return out


def sigmoid(a) -> Tensor:
    a = _ensure(a)
    y = 1.0 / (1.0 + np.exp(-np.abs(a.data)))
    y = np.where(a.data >= 0.0, y, 1.0 - y)
    out = Tensor(y)

    def bw():
        _acc(a, out.grad * y * (1.0 - y))

    _record((a,), (out,), bw)
    return out


def tanh(a) -> Tensor:
    a = _ensure(a)
    y = np.tanh(a.data)
    out = Tensor(y)

    def bw():
        _acc(a, out.grad * (1.0 - y * y))

    _record((a,), (out,), bw)
    return out


def exp(a) -> Tensor:
    a = _ensure(a)
    y = np.exp(a.data)
    out = Tensor(y)

    def bw():
        _acc(a, out.grad * y)

    _record((a,), (out,), bw)
    return out


def log(a) -> Tensor:
    a = _ensure(a)
    out = Tensor(np.log(a.data))

    def bw():
        _acc(a, out.grad / a.data)

    _record((a,), (out,), bw)
    return out


# ---------------------------------------------------------------------------
# softmax family


def softmax(a, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``; rows sum to 1 for finite input."""
    a = _ensure(a)
    ax = _check_axis(a, axis)
    m = a.data.max(axis=ax, keepdims=True)
    e = np.exp(a.data - m)
    y = e / e.sum(axis=ax, keepdims=True)
    out = Tensor(y)

    def bw():
        g = out.grad
        _acc(a, y * (g - (g * y).sum(axis=ax, keepdims=True)))

    _record((a,), (out,), bw)
    return out


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _ensure(a)
    ax = _check_axis(a, axis)
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    out = Tensor(y)

    def bw():
        g = out.grad
        _acc(a, g - np.exp(y) * g.sum(axis=ax, keepdims=True))

    _record((a,), (out,), bw)
    return out


def masked_softmax(a, mask: np.ndarray | None, axis: int = -1) -> Tensor:
    """Softmax where positions with ``mask == 0`` receive (numerically) zero mass."""
    if mask is not None:
        a = add(a, Tensor((1.0 - np.asarray(mask, dtype=np.float64)) * NEG_INF))
    return softmax(a, axis)


# ---------------------------------------------------------------------------
# shape and indexing ops


def reshape(a, shape: tuple) -> Tensor:
    a = _ensure(a)
    out = Tensor(a.data.reshape(shape))

    def bw():
        _acc(a, out.grad.reshape(a.data.shape))

    _record((a,), (out,), bw)
    return out


def transpose_last(a) -> Tensor:
    """Swap the last two axes."""
    a = _ensure(a)
    if a.ndim < 2:
        raise ContractError(f"transpose_last needs at least 2 dims, got shape {a.shape}")
    out = Tensor(np.swapaxes(a.data, -1, -2))

    def bw():
        _acc(a, np.swapaxes(out.grad, -1, -2))

    _record((a,), (out,), bw)
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    parts = [_ensure(t) for t in tensors]
    if not parts:
        raise ContractError("concat of an empty sequence")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    ax = axis % out.ndim
    sizes = [p.data.shape[ax] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def bw():
        pieces = np.split(out.grad, offsets, axis=ax)
        for p, piece in zip(parts, pieces):
            _acc(p, piece)

    _record(tuple(parts), (out,), bw)
    return out


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    a = _ensure(a)
    ax = _check_axis(a, axis)
    if start < 0 or start + length > a.shape[ax]:
        raise ContractError(f"narrow [{start}:{start + length}) out of range for axis {ax} of shape {a.shape}")
    key = (slice(None),) * ax + (slice(start, start + length),)
    out = Tensor(a.data[key])

    def bw():
        buf = np.zeros_like(a.data)
        buf[key] = out.grad
        _acc(a, buf)

    _record((a,), (out,), bw)
    return out


def unstack(a, axis: int = 1) -> list[Tensor]:
    """Split ``a`` into views along ``axis``; one tape record for the group."""
    a = _ensure(a)
    ax = _check_axis(a, axis)
    views = np.moveaxis(a.data, ax, 0)
    outs = [Tensor(views[i]) for i in range(views.shape[0])]

    def bw():
        gs = [o.grad if o.grad is not None else np.zeros(o.data.shape) for o in outs]
        _acc(a, np.stack(gs, axis=ax))

    _record((a,), tuple(outs), bw)
    return outs


def stack(tensors, axis: int = 1) -> Tensor:
    parts = [_ensure(t) for t in tensors]
    if not parts:
        raise ContractError("stack of an empty sequence")
    out = Tensor(np.stack([p.data for p in parts], axis=axis))

    def bw():
        g = np.moveaxis(out.grad, axis, 0)
        for i, p in enumerate(parts):
            _acc(p, g[i])

    _record(tuple(parts), (out,), bw)
    return out


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _ensure(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bw():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, a.data.shape))

    _record((a,), (out,), bw)
    return out


def mean_(a, axis=None, keepdims: bool = False) -> Tensor:
    """Mean along ``axis`` (all entries when None)."""
    a = _ensure(a)
    count = a.size if axis is None else a.shape[_check_axis(a, axis)]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def amax(a, axis: int) -> Tensor:
    """Max along ``axis``; the gradient flows to the first argmax."""
    a = _ensure(a)
    ax = _check_axis(a, axis)
    idx = a.data.argmax(axis=ax)
    out = Tensor(a.data.max(axis=ax))

    def bw():
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, np.expand_dims(idx, ax), np.expand_dims(out.grad, ax), ax)
        _acc(a, buf)

    _record((a,), (out,), bw)
    return out


def gather_rows(a, indices) -> Tensor:
    """Index axis 0 with an integer array; backward scatter-adds into the source."""
    a = _ensure(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ContractError(f"gather index out of range [0, {a.shape[0]})")
    out = Tensor(a.data[idx])

    def bw():
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, out.grad)
        _acc(a, buf)

    _record((a,), (out,), bw)
    return out


def pick(a, indices) -> Tensor:
    """Select one entry per row of a 2-d tensor: out[i] = a[i, indices[i]]."""
    a = _ensure(a)
    if a.ndim != 2:
        raise ContractError(f"pick needs a 2-d tensor, got shape {a.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape != (a.shape[0],):
        raise ContractError(f"pick indices shape {idx.shape} does not match {a.shape[0]} rows")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise ContractError(f"pick index out of range [0, {a.shape[1]})")
    rows = np.arange(a.shape[0])
    out = Tensor(a.data[rows, idx])

    def bw():
        buf = np.zeros_like(a.data)
        np.add.at(buf, (rows, idx), out.grad)
        _acc(a, buf)

    _record((a,), (out,), bw)
    return out


# ---------------------------------------------------------------------------
# parameters


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    """Uniform init on +/- sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape if shape is not None else (fan_in, fan_out))


def embedding_init(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Unit-variance-ish rows: uniform on +/- sqrt(3 / dim)."""
    limit = np.sqrt(3.0 / dim)
    return rng.uniform(-limit, limit, size=(n, dim))


class ParamStore:
    """Named parameters with persistent gradient buffers.

    Registration order is stable and drives checkpoint layout, so model
    construction must touch parameters in a deterministic order.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def register(self, name: str, data: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ContractError(f"parameter {name!r} registered twice")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=trainable)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def trainable_items(self):
        return [(n, p) for n, p in self._params.items() if p.requires_grad]

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = np.zeros_like(p.data)

    def n_entries(self) -> int:
        return sum(p.size for p in self._params.values())

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        """Overwrite parameter data in place; names and shapes must match exactly."""
        missing = set(self._params) - set(values)
        extra = set(values) - set(self._params)
        if missing or extra:
            raise ContractError(f"parameter set mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in values.items():
            p = self._params[name]
            if p.data.shape != arr.shape:
                raise ContractError(f"parameter {name!r}: stored shape {arr.shape} != expected {p.data.shape}")
            p.data[...] = arr


_ACTIVATIONS = {"none": None, "relu": relu, "sigmoid": sigmoid, "tanh": tanh}


class Dense:
    """Affine map with an optional pointwise activation."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 activation: str = "none", rng: np.random.Generator | None = None):
        if activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}; pick one of {sorted(_ACTIVATIONS)}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.name = name
        self.d_in = d_in
        self.d_out = d_out
        self.activation = activation
        self.w = store.register(f"{name}.w", glorot(rng, d_in, d_out))
        self.b = store.register(f"{name}.b", np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        x = _ensure(x)
        if x.ndim < 2 or x.shape[-1] != self.d_in:
            raise ContractError(
                f"dense {self.name!r}: input shape {x.shape} incompatible with weight shape {self.w.shape}")
        y = add(matmul(x, self.w), self.b)
        act = _ACTIVATIONS[self.activation]
        return y if act is None else act(y)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(forward_fn, store: ParamStore, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central finite differences.

    ``forward_fn`` takes no arguments and returns a scalar Tensor.  It must be
    deterministic (two plain evaluations are compared first) and is rerun
    twice per parameter entry, so keep the probe configuration small.
    Relative error is |a - n| / max(1e-8, |a| + |n|).
    """
    first = forward_fn()
    second = forward_fn()
    if first.data.ndim != 0:
        raise ContractError(f"grad_check needs a scalar objective, got shape {first.data.shape}")
    if not np.array_equal(first.data, second.data):
        raise ContractError("forward function is not deterministic; disable dropout before grad checking")

    store.zero_grads()
    with Tape() as tape:
        loss = forward_fn()
    backward(tape, loss)
    analytic = {name: np.array(p.grad) for name, p in store.trainable_items()}

    worst = 0.0
    for name, p in store.trainable_items():
        flat = p.data.reshape(-1)
        aflat = analytic[name].reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            hi = float(forward_fn().data)
            flat[i] = keep - eps
            lo = float(forward_fn().data)
            flat[i] = keep
            numeric = (hi - lo) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / max(1e-8, abs(aflat[i]) + abs(numeric))
            if err > worst:
                worst = err
    return worst
