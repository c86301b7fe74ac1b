"""Dense tensors with a reverse-mode gradient tape.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the upstream gradient to parent gradients.  Only bias-add
broadcasting is supported; everything else requires matching shapes.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from scipy import sparse

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "_parents", "_backward", "requires_grad", "_consumed", "op")

    def __init__(self, data, parents: tuple = (), backward: Optional[Callable] = None, op: str = ""):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=DEFAULT_DTYPE)
        self._parents = parents
        self._backward = backward
        self.requires_grad = any(p.requires_grad for p in parents)
        self._consumed = False
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def backward(self) -> None:
        """Accumulate d(self)/d(p) into every reachable Parameter's ``grad``."""
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar, got shape {self.shape}")
        if self._consumed:
            raise RuntimeError("backward already called on this graph; rebuild the forward pass")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if isinstance(node, Parameter):
                node.grad += g
            if node._backward is None:
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg
        for node in order:
            if not isinstance(node, Parameter):
                node._backward = None
                node._parents = ()
                node._consumed = True
        self._consumed = True


class Parameter(Tensor):
    __slots__ = ("grad", "name")

    def __init__(self, data: np.ndarray, name: str = ""):
        super().__init__(np.array(data))
        self.requires_grad = True
        self.grad = np.zeros_like(self.data)
        self.name = name

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def astype(self, dtype) -> None:
        self.data = self.data.astype(dtype)
        self.grad = self.grad.astype(dtype)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def const(x, dtype=None) -> Tensor:
    """Wrap data that needs no gradient."""
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _out(data: np.ndarray, parents: tuple, backward: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    return Tensor(data, parents, backward, op)


def _check(cond: bool, op: str, *tensors: Tensor) -> None:
    if not cond:
        shapes = " vs ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"{op}: incompatible shapes {shapes}")


# -- arithmetic ---------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a bias vector broadcast over rows of ``a``."""
    if a.shape == b.shape:
        return _out(a.data + b.data, (a, b), lambda g: (g, g), "add")
    _check(b.data.ndim == 1 and a.data.shape[-1:] == b.shape, "add", a, b)
    axes = tuple(range(a.data.ndim - 1))
    return _out(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=axes)), "add_bias")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, "sub", a, b)
    return _out(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, "mul", a, b)
    ad, bd = a.data, b.data
    return _out(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _out(a.data * a.data.dtype.type(c), (a,), lambda g: (g * g.dtype.type(c),), "scale")


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _out(a.data + a.data.dtype.type(c), (a,), lambda g: (g,), "add_scalar")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check(a.data.ndim == 2 and b.data.ndim in (1, 2) and a.shape[1] == b.shape[0], "matmul", a, b)
    ad, bd = a.data, b.data

    def back(g):
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _out(ad @ bd, (a, b), back, "matmul")


# -- nonlinearities -----------------------------------------------------


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _out(y, (a,), lambda g: (g * (1 - y * y),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    # tanh form: one transcendental, saturates cleanly at both ends
    y = 0.5 * np.tanh(0.5 * a.data) + 0.5
    return _out(y, (a,), lambda g: (g * y * (1 - y),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _out(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def dropout(a: Tensor, p: float, train: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / a.dtype.type(1 - p)
    return _out(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


# -- shape ops ----------------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _out(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ref = tensors[0].data
    for t in tensors[1:]:
        ok = t.data.ndim == ref.ndim and all(
            s == r for i, (s, r) in enumerate(zip(t.shape, ref.shape)) if i != axis % ref.ndim
        )
        _check(ok, "concat", tensors[0], t)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _out(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)),
        "concat",
    )


def _scatter_matrix(index: np.ndarray, n: int, dtype) -> sparse.csr_matrix:
    """``(n, len(index))`` 0/1 matrix with a one at ``(index[i], i)``; duplicates add up."""
    m = len(index)
    return sparse.csr_matrix((np.ones(m, dtype=dtype), (index, np.arange(m))), shape=(n, m))


def _segment_reduce(ufunc, values: np.ndarray, index: np.ndarray, n: int, fill) -> np.ndarray:
    """``out[index[i]] = ufunc(out[index[i]], values[i])`` via sort + reduceat (``ufunc.at`` is slow)."""
    out = np.full((n,) + values.shape[1:], fill, dtype=values.dtype)
    if len(index) == 0:
        return out
    order = np.argsort(index, kind="stable")
    idx = index[order]
    starts = np.flatnonzero(np.concatenate(([True], idx[1:] != idx[:-1])))
    out[idx[starts]] = ufunc.reduceat(values[order], starts, axis=0)
    return out


def take(a: Tensor, idx) -> Tensor:
    """Select rows (first-axis entries); repeated indices accumulate on backward."""
    idx = np.asarray(idx)
    shape = a.shape

    def back(g):
        if idx.ndim != 1 or g.ndim != 2:
            out = np.zeros(shape, dtype=g.dtype)
            np.add.at(out, idx, g)
            return (out,)
        return (np.asarray(_scatter_matrix(idx, shape[0], g.dtype) @ g),)

    return _out(a.data[idx], (a,), back, "take")


def index_add(values: Tensor, index, n: int) -> Tensor:
    """Scatter-sum rows of ``values`` into ``n`` output rows: ``out[index[i]] += values[i]``."""
    index = np.asarray(index, dtype=np.int64)
    _check(values.data.ndim >= 1 and len(index) == values.shape[0], "index_add", values)
    if values.data.ndim == 2:
        out = np.asarray(_scatter_matrix(index, n, values.dtype) @ values.data)
    else:
        out = np.zeros((n,) + values.shape[1:], dtype=values.dtype)
        np.add.at(out, index, values.data)
    return _out(out, (values,), lambda g: (g[index],), "index_add")


def gather_sum(a: Tensor, src, dst, n: int) -> Tensor:
    """Fused ``index_add(take(a, src), dst, n)``: ``out[dst[i]] += a[src[i]]``, as one sparse product."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    _check(a.data.ndim == 2 and len(src) == len(dst), "gather_sum", a)
    S = sparse.csr_matrix((np.ones(len(src), dtype=a.dtype), (dst, src)), shape=(n, a.shape[0]))
    St = S.T.tocsr()
    return _out(np.asarray(S @ a.data), (a,), lambda g: (np.asarray(St @ g),), "gather_sum")


# -- reductions ---------------------------------------------------------


def reduce_sum(a: Tensor, axis: Optional[int] = None) -> Tensor:
    shape = a.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _out(np.asarray(a.data.sum(axis=axis)), (a,), back, "sum")


def max_pool(a: Tensor, axis: int = 0) -> Tensor:
    """Max over ``axis``; gradient flows only to the (first) argmax entry."""
    arg = np.expand_dims(a.data.argmax(axis=axis), axis)
    shape = a.shape

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(out, arg, np.expand_dims(g, axis), axis)
        return (out,)

    return _out(np.take_along_axis(a.data, arg, axis).squeeze(axis), (a,), back, "max_pool")


def avg_pool(a: Tensor, axis: int = 0) -> Tensor:
    n = a.shape[axis]
    return scale(reduce_sum(a, axis), 1.0 / n)


def masked_pool_time(a: Tensor, lengths: Sequence[int], mode: str = "max") -> Tensor:
    """Pool a ``(B, L, F)`` batch over time, using only the first ``lengths[b]`` steps."""
    B, L, F = a.shape
    lengths = np.asarray(lengths)
    _check(len(lengths) == B and lengths.min() >= 1 and lengths.max() <= L, "masked_pool_time", a)
    valid = np.arange(L)[None, :] < lengths[:, None]
    if mode == "max":
        x = np.where(valid[:, :, None], a.data, -np.inf)
        arg = x.argmax(axis=1)
        bi, fi = np.meshgrid(np.arange(B), np.arange(F), indexing="ij")

        def back(g):
            out = np.zeros(a.shape, dtype=g.dtype)
            out[bi, arg, fi] = g
            return (out,)

        return _out(a.data[bi, arg, fi], (a,), back, "max_over_time")
    w = valid.astype(a.dtype)
    if mode == "avg":
        w = w / lengths[:, None].astype(a.dtype)
    elif mode != "sum":
        raise ValueError(f"unknown pooling {mode!r}")
    return _out((a.data * w[:, :, None]).sum(axis=1), (a,), lambda g: (g[:, None, :] * w[:, :, None],), mode + "_over_time")


def segment_max(a: Tensor, segments: Sequence[int], n: int) -> Tensor:
    """Column-wise max over the rows of a 2-d ``a`` sharing a segment id.

    Every segment in ``range(n)`` must own at least one row.  The gradient
    goes to the first row attaining each maximum.
    """
    _check(a.data.ndim == 2, "segment_max", a)
    seg = np.asarray(segments, dtype=np.int64)
    R, F = a.shape
    out = _segment_reduce(np.maximum, a.data, seg, n, -np.inf)
    if not np.all(np.isfinite(out)):
        raise ValueError("segment_max: empty segment")
    rows = np.where(a.data == out[seg], np.arange(R)[:, None], R)
    first = _segment_reduce(np.minimum, rows, seg, n, R)
    cols = np.broadcast_to(np.arange(F), (n, F))

    def back(g):
        res = np.zeros(a.shape, dtype=g.dtype)
        res[first, cols] = g
        return (res,)

    return _out(out, (a,), back, "segment_max")


# -- similarity ---------------------------------------------------------

_TINY = 1e-12


def row_cosine(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity between matching rows of two ``(N, D)`` tensors.

    Rows where either vector is zero get similarity 0 and zero gradient.
    """
    _check(u.shape == v.shape and u.data.ndim == 2, "row_cosine", u, v)
    ud, vd = u.data, v.data
    nu = np.sqrt((ud * ud).sum(1))
    nv = np.sqrt((vd * vd).sum(1))
    ok = (nu > _TINY) & (nv > _TINY)
    nu_s = np.where(ok, nu, 1).astype(ud.dtype)
    nv_s = np.where(ok, nv, 1).astype(ud.dtype)
    dot = (ud * vd).sum(1)
    cos = np.where(ok, dot / (nu_s * nv_s), 0).astype(ud.dtype)

    def back(g):
        g = (g * ok)[:, None]
        gu = g * (vd / (nu_s * nv_s)[:, None] - cos[:, None] * ud / (nu_s**2)[:, None])
        gv = g * (ud / (nu_s * nv_s)[:, None] - cos[:, None] * vd / (nv_s**2)[:, None])
        return gu, gv

    return _out(cos, (u, v), back, "cosine")


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity of two vectors as a scalar tensor."""
    _check(u.shape == v.shape and u.data.ndim == 1, "cosine", u, v)
    c = row_cosine(reshape(u, (1, -1)), reshape(v, (1, -1)))
    return reshape(c, ())


# -- convolution helper -------------------------------------------------


def windows(a: Tensor, width: int) -> Tensor:
    """Stack ``width`` zero-padded neighbours along the feature axis.

    ``(B, L, D) -> (B, L, width * D)`` with "same" padding, so a matmul with
    a ``(width * D, F)`` kernel is a 1-d convolution.
    """
    if width % 2 != 1:
        raise ValueError("kernel width must be odd for same padding")
    B, L, D = a.shape
    h = width // 2
    padded = np.zeros((B, L + 2 * h, D), dtype=a.dtype)
    padded[:, h : h + L] = a.data
    out = np.concatenate([padded[:, k : k + L] for k in range(width)], axis=2)

    def back(g):
        gp = np.zeros_like(padded)
        for k in range(width):
            gp[:, k : k + L] += g[:, :, k * D : (k + 1) * D]
        return (gp[:, h : h + L],)

    return _out(out, (a,), back, "windows")
