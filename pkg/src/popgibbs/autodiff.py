"""Reverse-mode automatic differentiation over dense numpy tensors.

A small tape-based engine, sufficient for the fully-connected proposal and
decoder networks used by the mixture experiments: linear layers, Tanh / ReLU /
Sigmoid / Softmax, the exp/log/lgamma primitives that log-densities are built
from, an Adam optimizer, and a flat-blob checkpoint format.

Every op in this module accepts either plain ndarrays (pure numpy, no graph)
or :class:`Tensor` operands (graph recorded).  Mixed operands are allowed and
non-Tensor operands are treated as constants, so the same density code serves
both the weight computation (numpy, never differentiated) and the score
computation (Tensors).

Single-sample tapes: a graph is built per forward pass and consumed by one
``backward`` call.  Batching is done through leading array dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass
import json
import os

import numpy as np
from scipy import special as sp_special


class TapeError(RuntimeError):
    """Backward called on an already-consumed graph."""


class GradientError(ValueError):
    """Non-finite gradient encountered during an optimizer step."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A node in the computation graph: a value plus a backward rule."""

    __slots__ = ("data", "grad", "_parents", "_vjp", "_consumed")

    def __init__(self, data, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._vjp = vjp
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # graph-building operators; non-Tensor operands are constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def value_of(x) -> np.ndarray:
    """Underlying ndarray of a Tensor, or the input itself."""
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def constant(x) -> np.ndarray:
    """Explicitly mark a value as a non-differentiated constant."""
    return np.asarray(value_of(x), dtype=np.float64)


def backward(out: Tensor, seed=1.0) -> None:
    """Backpropagate `seed` through the graph rooted at `out`.

    Visits each node exactly once in reverse topological order.  Gradients
    accumulate into leaf tensors (cleared only by the optimizer), while the
    interior of the tape is consumed: a second backward through the same
    graph raises :class:`TapeError`.
    """
    if not isinstance(out, Tensor):
        raise TypeError("backward expects a Tensor output")
    if out._consumed:
        raise TapeError("graph already consumed by a previous backward call")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != out.data.shape:
        seed = np.broadcast_to(seed, out.data.shape).copy()
    grads: dict[int, np.ndarray] = {id(out): seed}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        if node._consumed:
            raise TapeError("graph already consumed by a previous backward call")
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None:
                continue
            acc = grads.get(id(parent))
            if acc is None:
                grads[id(parent)] = pg
            else:
                acc += pg
        node._consumed = True
        node._vjp = None
    out._consumed = True


# ---------------------------------------------------------------------------
# primitive ops (dual dispatch: ndarray in -> ndarray out, Tensor -> Tensor)
# ---------------------------------------------------------------------------


def _binary(a, b, fwd, vjp_a, vjp_b):
    ad, bd = value_of(a), value_of(b)
    out = fwd(ad, bd)
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if not (ta or tb):
        return out
    parents = tuple(x for x, t in ((a, ta), (b, tb)) if t)

    def vjp(g):
        res = []
        if ta:
            res.append(_unbroadcast(vjp_a(g, ad, bd, out), ad.shape))
        if tb:
            res.append(_unbroadcast(vjp_b(g, ad, bd, out), bd.shape))
        return res

    return Tensor(out, parents, vjp)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b):
    return _binary(a, b, lambda x, y: x / y,
                   lambda g, x, y, o: g / y,
                   lambda g, x, y, o: -g * x / (y * y))


def power(a, p: float):
    if isinstance(p, Tensor):
        raise TypeError("exponent must be a constant")
    ad = value_of(a)
    out = ad ** p
    if not isinstance(a, Tensor):
        return out
    return Tensor(out, (a,), lambda g: (g * p * ad ** (p - 1),))


def square(a):
    return _unary(a, np.square, lambda g, x, o: 2.0 * x * g)


def _unary(a, fwd, vjp):
    ad = value_of(a)
    out = fwd(ad)
    if not isinstance(a, Tensor):
        return out
    return Tensor(out, (a,), lambda g: (vjp(g, ad, out),))


def exp(a):
    return _unary(a, np.exp, lambda g, x, o: g * o)


def log(a):
    return _unary(a, np.log, lambda g, x, o: g / x)


def sqrt(a):
    return _unary(a, np.sqrt, lambda g, x, o: 0.5 * g / o)


def tanh(a):
    return _unary(a, np.tanh, lambda g, x, o: g * (1.0 - o * o))


def relu(a):
    return _unary(a, lambda x: np.maximum(x, 0.0),
                  lambda g, x, o: g * (x > 0.0))


def sigmoid(a):
    return _unary(a, sp_special.expit, lambda g, x, o: g * o * (1.0 - o))


def lgamma(a):
    return _unary(a, sp_special.gammaln,
                  lambda g, x, o: g * sp_special.digamma(x))


def clip_min(a, lo: float):
    """Elementwise max(a, lo); gradient passes only where a > lo."""
    return _unary(a, lambda x: np.maximum(x, lo),
                  lambda g, x, o: g * (x > lo))


def sum(a, axis=None, keepdims=False):  # noqa: A001 - local tensor sum
    ad = value_of(a)
    out = ad.sum(axis=axis, keepdims=keepdims)
    if not isinstance(a, Tensor):
        return out

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, ad.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, ad.shape).copy(),)

    return Tensor(out, (a,), vjp)


def mean(a, axis=None, keepdims=False):
    ad = value_of(a)
    n = ad.size if axis is None else ad.shape[axis]
    return div(sum(a, axis=axis, keepdims=keepdims), float(n))


def logsumexp(a, axis=-1, keepdims=False):
    ad = value_of(a)
    m = np.max(ad, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.exp(ad - m).sum(axis=axis, keepdims=True)) + m
    if not keepdims:
        out_s = np.squeeze(out, axis=axis)
    else:
        out_s = out
    if not isinstance(a, Tensor):
        return out_s

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * np.exp(ad - out),)

    return Tensor(out_s, (a,), vjp)


def softmax(a, axis=-1):
    ad = value_of(a)
    m = np.max(ad, axis=axis, keepdims=True)
    e = np.exp(ad - m)
    out = e / e.sum(axis=axis, keepdims=True)
    if not isinstance(a, Tensor):
        return out

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor(out, (a,), vjp)


def log_softmax(a, axis=-1):
    return sub(a, logsumexp(a, axis=axis, keepdims=True))


def reshape(a, shape):
    ad = value_of(a)
    out = ad.reshape(shape)
    if not isinstance(a, Tensor):
        return out
    return Tensor(out, (a,), lambda g: (g.reshape(ad.shape),))


def moveaxis(a, src, dst):
    ad = value_of(a)
    out = np.moveaxis(ad, src, dst)
    if not isinstance(a, Tensor):
        return out
    return Tensor(out, (a,), lambda g: (np.moveaxis(g, dst, src),))


def concat(parts, axis=-1):
    datas = [value_of(p) for p in parts]
    out = np.concatenate(datas, axis=axis)
    if not any(isinstance(p, Tensor) for p in parts):
        return out
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)
    tensor_parts = [(i, p) for i, p in enumerate(parts) if isinstance(p, Tensor)]

    def vjp(g):
        slabs = []
        for i, _p in tensor_parts:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            slabs.append(np.ascontiguousarray(g[tuple(sl)]))
        return slabs

    return Tensor(out, tuple(p for _i, p in tensor_parts), vjp)


def linear(x, w, b=None):
    """Affine map on the last axis: x (..., fin) @ w (fin, fout) [+ b]."""
    xd, wd = value_of(x), value_of(w)
    lead = xd.shape[:-1]
    fin = xd.shape[-1]
    x2 = np.ascontiguousarray(xd.reshape(-1, fin))
    out2 = x2 @ wd
    if b is not None:
        out2 += value_of(b)
    out = out2.reshape(*lead, wd.shape[1])
    tx, tw = isinstance(x, Tensor), isinstance(w, Tensor)
    tb = isinstance(b, Tensor)
    if not (tx or tw or tb):
        return out
    parents = tuple(t for t, f in ((x, tx), (w, tw), (b, tb)) if f)

    def vjp(g):
        g2 = g.reshape(-1, wd.shape[1])
        res = []
        if tx:
            res.append((g2 @ wd.T).reshape(xd.shape))
        if tw:
            res.append(x2.T @ g2)
        if tb:
            res.append(g2.sum(axis=0))
        return res

    return Tensor(out, parents, vjp)


def rows(w, lo: int, hi: int):
    """Row slice of a 2-D parameter (gradient scatters back into place)."""
    wd = value_of(w)
    out = wd[lo:hi]
    if not isinstance(w, Tensor):
        return out

    def vjp(g):
        full = np.zeros_like(wd)
        full[lo:hi] = g
        return (full,)

    return Tensor(out, (w,), vjp)


def mlp2_tanh(x, w1, b1, w2, b2):
    """Fused 2-layer net: tanh(x @ w1 + b1) @ w2 + b2 over flattened rows.

    Identical math to the generic layer path, but the backward runs as one
    pass over the stored activations (numba), which is what makes the
    training loop fit its time budget on memory-bound machines.
    """
    from . import _kernels
    xd = value_of(x)
    w1d, b1d, w2d, b2d = (value_of(t) for t in (w1, b1, w2, b2))
    lead = xd.shape[:-1]
    fin = xd.shape[-1]
    x2 = np.ascontiguousarray(xd.reshape(-1, fin))
    h = x2 @ w1d
    h += b1d
    np.tanh(h, out=h)
    out = (h @ w2d + b2d).reshape(lead + (w2d.shape[1],))
    parents = [t for t in (x, w1, b1, w2, b2) if isinstance(t, Tensor)]
    if not parents:
        return out

    need_gx = isinstance(x, Tensor)

    def vjp(g):
        g2 = np.ascontiguousarray(g.reshape(-1, w2d.shape[1]))
        gw1p, gb1p, gw2p, gb2p = _kernels.zeros_partials(
            8, w1d.shape, b1d.shape, w2d.shape, b2d.shape)
        grads = {}
        if need_gx:
            gx = np.zeros_like(x2)
            _kernels.mlp2_bwd(x2, h, g2, w1d, w2d, gx, gw1p, gb1p, gw2p, gb2p)
            grads[id(x)] = gx.reshape(xd.shape)
        else:
            _kernels.mlp2_bwd_nogx(x2, h, g2, w2d, gw1p, gb1p, gw2p, gb2p)
        grads.update({id(w1): gw1p.sum(axis=0), id(b1): gb1p.sum(axis=0),
                      id(w2): gw2p.sum(axis=0), id(b2): gb2p.sum(axis=0)})
        return [grads[id(t)] for t in parents]

    return Tensor(out, tuple(parents), vjp)


def take_rows(w, idx):
    """Embedding-style row lookup: w (M, D), idx int (...) -> (..., D)."""
    wd = value_of(w)
    idx = np.asarray(idx)
    out = wd[idx]
    if not isinstance(w, Tensor):
        return out

    def vjp(g):
        gw = np.zeros_like(wd)
        g2 = g.reshape(-1, wd.shape[-1])
        flat = idx.ravel()
        for m in range(wd.shape[0]):
            rows_m = g2[flat == m]
            if rows_m.size:
                gw[m] = rows_m.sum(axis=0)
        return (gw,)

    return Tensor(out, (w,), vjp)


def categorical_block_score(logits, prior_logits, picked):
    """Summed log-probability of picked classes under softmax(logits + prior).

    logits (I, L, N, M) (Tensor or ndarray), prior_logits (M,) constant,
    picked (I, L, N) int -> (I, L).  Fused forward/backward."""
    ld = value_of(logits)
    a = ld + value_of(prior_logits)
    hi = a.max(axis=-1, keepdims=True)
    p = np.exp(a - hi)
    se = p.sum(axis=-1, keepdims=True)
    picked_a = np.take_along_axis(a, picked[..., None], axis=-1)[..., 0]
    out = (picked_a - hi[..., 0] - np.log(se[..., 0])).sum(axis=-1)
    if not isinstance(logits, Tensor):
        return out

    def vjp(g):
        p_norm = p / se
        p_norm *= -g[..., None, None]
        np.put_along_axis(
            p_norm, picked[..., None],
            np.take_along_axis(p_norm, picked[..., None], axis=-1)
            + g[..., None, None], axis=-1)
        return (p_norm,)

    return Tensor(out, (logits,), vjp)


def last_slice(x, lo: int, hi: int):
    """Slice along the last axis; gradient scatters back zero-padded."""
    xd = value_of(x)
    out = xd[..., lo:hi]
    if not isinstance(x, Tensor):
        return out

    def vjp(g):
        full = np.zeros_like(xd)
        full[..., lo:hi] = g
        return (full,)

    return Tensor(out, (x,), vjp)


def weighted_stat_sums(t, s):
    """Aggregate pointwise statistics: t (..., N, M) soft indicators,
    s (..., N, D) features -> (counts (...,M), sum1 (...,M,D), sum2 (...,M,D))
    with sum1 = sum_n t[n,m] s[n], sum2 = sum_n t[n,m] s[n]^2.

    Computed as one fused pass into a packed (..., M, 1+2D) node that is
    then sliced, so the backward is a single pass as well (the composed-op
    version materializes two (..., N, M, D) intermediates)."""
    from . import _kernels
    td, sd = value_of(t), value_of(s)
    lead = td.shape[:-2]
    n_n, n_m = td.shape[-2:]
    n_d = sd.shape[-1]
    n_rows = int(np.prod(lead, dtype=int)) if lead else 1
    t2 = np.ascontiguousarray(td.reshape(n_rows, n_n, n_m))
    s2 = np.ascontiguousarray(sd.reshape(n_rows, n_n, n_d))
    counts_d = np.zeros((n_rows, n_m))
    sum1_d = np.zeros((n_rows, n_m, n_d))
    sum2_d = np.zeros((n_rows, n_m, n_d))
    _kernels.stat_sums_fwd(t2, s2, counts_d, sum1_d, sum2_d)
    packed_d = np.concatenate(
        [counts_d[..., None], sum1_d, sum2_d], axis=-1).reshape(
            lead + (n_m, 1 + 2 * n_d))
    tt, ts = isinstance(t, Tensor), isinstance(s, Tensor)
    if tt or ts:
        parents = tuple(x for x, f in ((t, tt), (s, ts)) if f)

        def vjp(g):
            g2 = np.ascontiguousarray(g.reshape(n_rows, n_m, 1 + 2 * n_d))
            gt = np.zeros_like(t2)
            gs = np.zeros_like(s2)
            _kernels.stat_sums_bwd(
                t2, s2, np.ascontiguousarray(g2[..., 0]),
                np.ascontiguousarray(g2[..., 1:1 + n_d]),
                np.ascontiguousarray(g2[..., 1 + n_d:]), gt, gs)
            res = []
            if tt:
                res.append(gt.reshape(td.shape))
            if ts:
                res.append(gs.reshape(sd.shape))
            return res

        packed = Tensor(packed_d, parents, vjp)
    else:
        packed = packed_d
    counts = reshape(last_slice(packed, 0, 1), lead + (n_m,))
    sum1 = last_slice(packed, 1, 1 + n_d)
    sum2 = last_slice(packed, 1 + n_d, 1 + 2 * n_d)
    return counts, sum1, sum2


def pair_tanh_dot(a, b, w2, b2):
    """Fused scalar head over a factorized input grid.

    out[i, l, n, m] = tanh(a[i, n, :] + b[i, l, m, :]) @ w2 + b2 with
    w2 (H, 1).  `a` carries the point projection (first-layer bias folded
    in), `b` the conditioning projection; both may be Tensors.
    """
    from . import _kernels
    ad_, bd = value_of(a), value_of(b)
    w2d, b2d = value_of(w2), value_of(b2)
    n_i, n_n, n_h = ad_.shape
    n_l, n_m = bd.shape[1], bd.shape[2]
    h = _kernels.POOL.rent((n_i, n_l, n_n, n_m, n_h))
    _kernels.pair_sum(ad_, bd, h)
    np.tanh(h, out=h)
    out = (h.reshape(-1, n_h) @ w2d[:, 0] + b2d[0]).reshape(n_i, n_l, n_n, n_m)
    parents = [t for t in (a, b, w2, b2) if isinstance(t, Tensor)]
    if not parents:
        _kernels.POOL.give_back(h)
        return out

    def vjp(g):
        g = np.ascontiguousarray(g)
        ga = np.zeros_like(ad_)
        gb = np.zeros_like(bd)
        gw2p = np.zeros((n_i, n_h))
        gb2p = np.zeros(n_i)
        _kernels.pair_bwd(h, g, w2d[:, 0], ga, gb, gw2p, gb2p)
        _kernels.POOL.give_back(h)
        grads = {id(a): ga, id(b): gb, id(w2): gw2p.sum(axis=0)[:, None],
                 id(b2): gb2p.sum(axis=0)[None]}
        return [grads[id(t)] for t in parents]

    return Tensor(out, tuple(parents), vjp)


# ---------------------------------------------------------------------------
# parameter store, MLPs, Adam
# ---------------------------------------------------------------------------

_CHECKPOINT_FORMAT = "flat-f8-le/1"


class ParamStore:
    """Named parameter tensors with persistent Adam state.

    Parameters are created on first `ensure` call (deterministic given the
    store's rng and creation order) and live as leaf Tensors whose gradients
    accumulate across backward calls until the next optimizer step.
    """

    def __init__(self, rng: np.random.Generator | None = None):
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._tensors: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def names(self):
        return list(self._tensors)

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def ensure(self, name: str, shape: tuple, init: str = "glorot") -> Tensor:
        t = self._tensors.get(name)
        if t is not None:
            if t.data.shape != tuple(shape):
                raise ValueError(
                    f"parameter {name!r} exists with shape {t.data.shape}, "
                    f"requested {tuple(shape)}")
            return t
        if init == "zeros":
            data = np.zeros(shape, dtype=np.float64)
        elif init == "glorot":
            fan_in = shape[0] if len(shape) > 1 else shape[0]
            fan_out = shape[1] if len(shape) > 1 else shape[0]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            data = self.rng.uniform(-limit, limit, size=shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data)
        t.grad = np.zeros_like(t.data)
        self._tensors[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def tensor(self, name: str) -> Tensor:
        return self._tensors[name]

    def get(self, name: str) -> np.ndarray:
        return self._tensors[name].data

    def set(self, name: str, value: np.ndarray) -> None:
        t = self._tensors[name]
        if t.data.shape != value.shape:
            raise ValueError(f"shape mismatch for {name!r}")
        t.data[...] = value

    def grad(self, name: str) -> np.ndarray:
        return self._tensors[name].grad

    def zero_grads(self) -> None:
        for t in self._tensors.values():
            t.grad[...] = 0.0

    def n_parameters(self) -> int:
        return int(np.sum([t.data.size for t in self._tensors.values()]))

    def adam_step(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                  eps: float = 1e-8) -> None:
        """Standard Adam update; gradients are zeroed afterwards."""
        from . import _kernels
        self.step += 1
        bc1 = 1.0 - beta1 ** self.step
        bc2 = 1.0 - beta2 ** self.step
        for name, t in self._tensors.items():
            g = t.grad
            if not np.all(np.isfinite(g)):
                raise GradientError(f"non-finite gradient for parameter {name!r}")
            _kernels.adam_update(t.data.ravel(), g.ravel(),
                                 self._m[name].ravel(), self._v[name].ravel(),
                                 lr, beta1, beta2, eps, bc1, bc2)

    def sgd_step(self, lr: float) -> None:
        """Plain gradient step; alternative optimizer for ablations."""
        self.step += 1
        for name, t in self._tensors.items():
            g = t.grad
            if not np.all(np.isfinite(g)):
                raise GradientError(f"non-finite gradient for parameter {name!r}")
            t.data -= lr * g
            g[...] = 0.0

    # -- checkpointing ------------------------------------------------------

    def save(self, base: str, extra: dict | None = None) -> None:
        """Write `base.manifest.json` + `base.blob` (little-endian float64).

        The blob holds parameters followed by Adam moment accumulators;
        the manifest records names, shapes, dtype and byte offsets.
        Round-trips are bit-identical.
        """
        entries = []
        chunks = []
        offset = 0

        def emit(name, arr):
            nonlocal offset
            a = np.ascontiguousarray(arr, dtype="<f8")
            entries.append({"name": name, "shape": list(a.shape),
                            "dtype": "<f8", "offset": offset})
            chunks.append(a.tobytes())
            offset += a.nbytes

        for name, t in self._tensors.items():
            emit(name, t.data)
        for name in self._tensors:
            emit(f"adam.m:{name}", self._m[name])
            emit(f"adam.v:{name}", self._v[name])
        manifest = {"format": _CHECKPOINT_FORMAT, "step": self.step,
                    "entries": entries, "extra": extra or {}}
        os.makedirs(os.path.dirname(os.path.abspath(base)), exist_ok=True)
        with open(base + ".blob", "wb") as f:
            f.write(b"".join(chunks))
        with open(base + ".manifest.json", "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=1)

    @classmethod
    def load(cls, base: str) -> tuple["ParamStore", dict]:
        with open(base + ".manifest.json", encoding="utf-8") as f:
            manifest = json.load(f)
        if manifest.get("format") != _CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format in {base!r}")
        blob = np.fromfile(base + ".blob", dtype="<f8")
        store = cls()
        store.step = manifest["step"]
        for ent in manifest["entries"]:
            arr = blob[ent["offset"] // 8:][:int(np.prod(ent["shape"], dtype=int))]
            arr = arr.reshape(ent["shape"]).astype(np.float64)
            name = ent["name"]
            if name.startswith("adam.m:"):
                store._m[name[len("adam.m:"):]] = arr.copy()
            elif name.startswith("adam.v:"):
                store._v[name[len("adam.v:"):]] = arr.copy()
            else:
                t = Tensor(arr.copy())
                t.grad = np.zeros_like(t.data)
                store._tensors[name] = t
        for name in store._tensors:
            store._m.setdefault(name, np.zeros_like(store.get(name)))
            store._v.setdefault(name, np.zeros_like(store.get(name)))
        return store, manifest.get("extra", {})


@dataclass(frozen=True)
class Fc:
    """Fully-connected layer descriptor: fan_in -> fan_out (+ bias)."""
    fan_in: int
    fan_out: int
    zero_init: bool = False


#: activations allowed in an architecture descriptor list
_ACTIVATIONS = {"tanh": tanh, "relu": relu, "sigmoid": sigmoid,
                "softmax": softmax}


def mlp_forward(store: ParamStore, prefix: str, layers, x):
    """Run an MLP described by `layers` (Fc and activation names).

    Parameters are registered under ``{prefix}.{i}.W`` / ``{prefix}.{i}.b``.
    Output layers flagged ``zero_init`` start at exactly zero so fresh
    proposal heads reproduce their priors.  Accepts ndarray or Tensor input;
    supports arbitrary leading batch dimensions.
    """
    h = x
    for i, layer in enumerate(layers):
        if isinstance(layer, Fc):
            width = value_of(h).shape[-1]
            if width != layer.fan_in:
                raise ValueError(
                    f"{prefix}: layer {i} expects input width {layer.fan_in}, "
                    f"got {width}")
            init = "zeros" if layer.zero_init else "glorot"
            w = store.ensure(f"{prefix}.{i}.W", (layer.fan_in, layer.fan_out), init)
            b = store.ensure(f"{prefix}.{i}.b", (layer.fan_out,), "zeros")
            h = linear(h, w, b)
        elif layer in _ACTIVATIONS:
            h = _ACTIVATIONS[layer](h)
        else:
            raise ValueError(f"{prefix}: unknown layer {layer!r} at index {i}")
    return h


def mlp_params(prefix: str, layers) -> list[str]:
    names = []
    for i, layer in enumerate(layers):
        if isinstance(layer, Fc):
            names += [f"{prefix}.{i}.W", f"{prefix}.{i}.b"]
    return names
