"""Dense float64 primitives with paired backward rules, and the parameter store.

Every differentiable primitive returns ``(out, cache)`` and has a matching
``*_backward(dout, cache)``. Network code chains these by hand in reverse
order, which keeps the gradients auditable against :func:`finite_diff_grad`.
"""
from __future__ import annotations

import hashlib
from typing import Callable, Dict, Iterator, Optional, Tuple

import numpy as np

from .exceptions import DataError, DimensionError, NumericalError

DTYPE = np.float64


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise DimensionError(msg)


def affine(W, x, b):
    """``W @ x + b`` for a single vector or a batch of row vectors."""
    W = np.asarray(W, dtype=DTYPE)
    x = np.asarray(x, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    _check(W.ndim == 2, f"affine: W must be 2-D, got shape {W.shape}")
    _check(x.shape[-1] == W.shape[1], f"affine: W has {W.shape[1]} cols but x has length {x.shape[-1]}")
    _check(b.shape == (W.shape[0],), f"affine: b has shape {b.shape}, expected ({W.shape[0]},)")
    return x @ W.T + b, (W, x)


def affine_backward(dout, cache):
    """Returns ``(dW, dx, db)``."""
    W, x = cache
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    return d2.T @ x2, dout @ W, d2.sum(axis=0)


def _float(z):
    z = np.asarray(z)
    return z if np.issubdtype(z.dtype, np.floating) else z.astype(DTYPE)


def softmax(z, axis: int = -1):
    z = _float(z)
    _check(z.ndim >= 1 and z.shape[axis] >= 1, "softmax: empty input")
    m = z.max(axis=axis, keepdims=True)
    ez = np.exp(z - m)
    return ez / ez.sum(axis=axis, keepdims=True)


def log_softmax(z, axis: int = -1):
    z = _float(z)
    _check(z.ndim >= 1 and z.shape[axis] >= 1, "log_softmax: empty input")
    m = z.max(axis=axis, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def softmax_backward(dout, p, axis: int = -1):
    """Gradient wrt logits given the softmax output ``p``."""
    return p * (dout - (dout * p).sum(axis=axis, keepdims=True))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def elementwise_max_pool(vectors):
    """Max over the second-to-last axis.

    ``vectors`` is ``(n, D)`` or ``(B, n, D)``. Ties go to the lowest index,
    which is what ``np.argmax`` does.
    """
    if isinstance(vectors, (list, tuple)):
        _check(len(vectors) > 0, "elementwise_max_pool: empty list")
        lens = {len(v) for v in vectors}
        _check(len(lens) == 1, f"elementwise_max_pool: ragged lengths {sorted(lens)}")
    V = _float(vectors)
    _check(V.ndim >= 2 and V.shape[-2] > 0, "elementwise_max_pool: empty list")
    winners = np.argmax(V, axis=-2)
    out = np.take_along_axis(V, winners[..., None, :], axis=-2)[..., 0, :]
    return out, winners


def max_pool_backward(dout, winners, n: int):
    """Route ``dout`` to the winning vector per dimension."""
    shape = winners.shape[:-1] + (n, winners.shape[-1])
    dV = np.zeros(shape, dtype=DTYPE)
    np.put_along_axis(dV, winners[..., None, :], dout[..., None, :], axis=-2)
    return dV


def relative_error(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))


class ParamStore:
    """Named tensors, each with a gradient and an AdaGrad accumulator.

    Bias tensors are flagged at registration so weight decay can skip them.
    """

    def __init__(self):
        self._value: Dict[str, np.ndarray] = {}
        self._grad: Dict[str, np.ndarray] = {}
        self._accum: Dict[str, np.ndarray] = {}
        self._bias: Dict[str, bool] = {}

    def add(self, name: str, value, bias: bool = False, dtype=DTYPE) -> None:
        if name in self._value:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=dtype)
        self._value[name] = value
        self._grad[name] = np.zeros_like(value)
        self._accum[name] = np.zeros_like(value)
        self._bias[name] = bias

    def __getitem__(self, name: str) -> np.ndarray:
        return self._value[name]

    def __contains__(self, name: str) -> bool:
        return name in self._value

    def __iter__(self) -> Iterator[str]:
        return iter(self._value)

    def __len__(self) -> int:
        return len(self._value)

    def names(self):
        return list(self._value)

    def grad(self, name: str) -> np.ndarray:
        return self._grad[name]

    def accum(self, name: str) -> np.ndarray:
        return self._accum[name]

    def is_bias(self, name: str) -> bool:
        return self._bias[name]

    def zero_grad(self) -> None:
        for g in self._grad.values():
            g.fill(0.0)

    def n_scalars(self) -> int:
        return int(sum(v.size for v in self._value.values()))

    def values(self) -> Dict[str, np.ndarray]:
        return dict(self._value)

    def grads(self) -> Dict[str, np.ndarray]:
        return {k: g.copy() for k, g in self._grad.items()}

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name in self._value:
            out.add(name, self._value[name], bias=self._bias[name])
            out._grad[name][...] = self._grad[name]
            out._accum[name][...] = self._accum[name]
        return out

    def astype(self, dtype) -> "ParamStore":
        """Value-only copy in another float type (e.g. ``np.longdouble`` for oracles)."""
        out = ParamStore()
        for name in self._value:
            out.add(name, self._value[name], bias=self._bias[name], dtype=dtype)
        return out

    def load_values(self, other: "ParamStore") -> None:
        for name in self._value:
            self._value[name][...] = other[name]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self._value):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self._value[name]).tobytes())
        return h.hexdigest()

    # text serialization: one block per tensor
    #   tensor <name> <bias|weight> <ndim> <dims...>
    #   <values, one row per line, repr() decimals>
    def to_text(self) -> str:
        lines = []
        for name, v in self._value.items():
            kind = "bias" if self._bias[name] else "weight"
            lines.append(f"tensor {name} {kind} {v.ndim} " + " ".join(str(s) for s in v.shape))
            rows = v.reshape(1, -1) if v.ndim < 2 else v.reshape(v.shape[0], -1)
            for row in rows:
                lines.append(" ".join(repr(float(x)) for x in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_lines(cls, lines) -> "ParamStore":
        store = cls()
        it = iter(lines)
        for header in it:
            if not header.strip():
                continue
            parts = header.split()
            if parts[0] != "tensor" or len(parts) < 4:
                raise DataError(f"bad tensor header: {header!r}")
            name, kind, ndim = parts[1], parts[2], int(parts[3])
            shape = tuple(int(s) for s in parts[4:4 + ndim])
            nrows = 1 if ndim < 2 else shape[0]
            data = []
            for _ in range(nrows):
                data.extend(float(x) for x in next(it).split())
            store.add(name, np.array(data, dtype=DTYPE).reshape(shape), bias=(kind == "bias"))
        return store

    @classmethod
    def from_text(cls, text: str) -> "ParamStore":
        return cls.from_lines(text.splitlines())


def finite_diff_grad(loss: Callable[[], float], params: ParamStore, h: float = 1e-5,
                     names: Optional[list] = None) -> Dict[str, np.ndarray]:
    """Central differences of ``loss()`` wrt every scalar of ``params``.

    ``loss`` takes no arguments and reads the store, which is perturbed in
    place and restored afterwards.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    out = {}
    for name in names or params.names():
        value = params[name]
        flat = value.reshape(-1)
        g = np.zeros(flat.shape, dtype=DTYPE)
        step = value.dtype.type(h)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = loss()
            flat[i] = orig - step
            lm = loss()
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericalError(f"non-finite loss while perturbing {name}[{i}]")
            g[i] = (lp - lm) / (flat.dtype.type(2) * step)
        out[name] = g.reshape(value.shape)
    return out


def scalar_fd(f: Callable[[np.ndarray], float], theta, h: float = 1e-5) -> np.ndarray:
    """Central differences of a function of a plain array."""
    theta = np.array(theta, dtype=DTYPE)
    store = ParamStore()
    store.add("theta", theta)
    return finite_diff_grad(lambda: f(store["theta"]), store, h)["theta"]


def split_gates(a) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    H = a.shape[-1] // 4
    return a[..., :H], a[..., H:2 * H], a[..., 2 * H:3 * H], a[..., 3 * H:]
