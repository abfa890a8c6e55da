"""Dense array numerics with a reverse-mode differentiation tape.

Every operation used by the network has a numpy forward rule and a backward
rule recorded on the active :class:`Tape`. Arrays keep the dtype they were
given: the training path runs in float32, gradient checking casts the same
parameters to float64 and reuses identical code.

Operations are pure functions of their inputs: with a fixed input the output
bit pattern is reproducible across runs. Constants (plain ndarrays or Python
scalars) may be mixed with :class:`Tensor` arguments; only tensors receive
gradients.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, ShapeError, UsageError

__all__ = [
    "Tensor",
    "Tape",
    "Parameters",
    "backward",
    "make_rng",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "relu",
    "sigmoid",
    "absolute",
    "clip",
    "tsum",
    "tmean",
    "reshape",
    "concat",
    "matmul",
    "stop_gradient",
    "conv2d",
    "pixel_shuffle",
    "unfold",
    "fold",
    "pad_edge",
    "avg_pool_global",
    "gather_cols",
    "normalize_patches",
]


def make_rng(seed, *stream):
    """Counter-based generator: the same (seed, stream) always yields the
    same draws, independent of any other generator in the process."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    entropy.extend(int(s) & 0xFFFFFFFFFFFFFFFF for s in stream)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


class Tensor:
    """A value node: a numpy array plus a gradient slot filled by backward."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        np.add(self.grad, g, out=self.grad)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, dtype={self.data.dtype})"


class _Record:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of executed operations, replayed in reverse by
    :meth:`backward` to fill gradients of every tensor on the loss path.

    Used as a context manager::

        with Tape() as tape:
            loss = ...          # ops executed here are recorded
        tape.backward(loss)
    """

    _active = None

    def __init__(self):
        self.records = []

    def __enter__(self):
        if Tape._active is not None:
            raise UsageError("a Tape is already active; nested tapes are not supported")
        Tape._active = self
        return self

    def __exit__(self, exc_type, exc, tb):
        Tape._active = None
        return False

    def backward(self, loss):
        """Accumulate d(loss)/d(tensor) into .grad for every recorded input."""
        if not isinstance(loss, Tensor) or loss.data.ndim != 0:
            shape = getattr(loss, "shape", None)
            raise UsageError(f"backward expects a scalar loss tensor, got shape {shape}")
        loss.accumulate_grad(np.ones((), dtype=loss.data.dtype))
        for rec in reversed(self.records):
            g = rec.output.grad
            if g is None:
                continue
            grads = rec.backward(g)
            for inp, gi in zip(rec.inputs, grads):
                if inp is None or gi is None:
                    continue
                inp.accumulate_grad(gi)


def backward(tape, loss):
    """Free-function alias for :meth:`Tape.backward`."""
    tape.backward(loss)


class Parameters:
    """Ordered, named store of learnable arrays.

    Names are unique hierarchical paths; iteration order is insertion order
    and therefore deterministic across runs. Every entry carries a
    zero-initialized gradient slot of the same shape.
    """

    def __init__(self):
        self._entries = {}

    def add(self, name, values):
        if name in self._entries:
            raise ConfigurationError(f"duplicate parameter name: {name}")
        t = Tensor(np.ascontiguousarray(values), name=name)
        t.grad = np.zeros_like(t.data)
        self._entries[name] = t
        return t

    def get(self, name):
        return self._entries[name]

    def names(self):
        return list(self._entries)

    def __iter__(self):
        return iter(self._entries.values())

    def __len__(self):
        return len(self._entries)

    def __contains__(self, name):
        return name in self._entries

    def total_size(self):
        return sum(t.data.size for t in self)

    def zero_grad(self):
        for t in self:
            t.grad[...] = 0

    def cast_(self, dtype):
        """Cast every entry (and its gradient slot) in place. Block objects
        keep their Tensor references, so a whole network can be switched to
        float64 for gradient checking."""
        for t in self:
            t.data = np.ascontiguousarray(t.data, dtype=dtype)
            t.grad = np.zeros_like(t.data)

    def state_arrays(self):
        """Name -> array view, in registration order."""
        return {name: t.data for name, t in self._entries.items()}

    def load_arrays(self, arrays):
        for name, t in self._entries.items():
            if name not in arrays:
                raise ConfigurationError(f"missing value for parameter {name!r}")
            a = np.asarray(arrays[name], dtype=t.data.dtype)
            if a.shape != t.data.shape:
                raise ShapeError(
                    f"parameter {name!r}: stored shape {a.shape} vs expected {t.data.shape}"
                )
            t.data = np.ascontiguousarray(a)
        extra = set(arrays) - set(self._entries)
        if extra:
            raise ConfigurationError(f"unknown parameter names: {sorted(extra)}")


# ---------------------------------------------------------------------------
# Op plumbing


def _data(v):
    return v.data if isinstance(v, Tensor) else np.asarray(v)


def _maybe(v):
    return v if isinstance(v, Tensor) else None


def _record(op, inputs, out, backward_fn):
    tape = Tape._active
    if tape is not None and any(inp is not None for inp in inputs):
        tape.records.append(_Record(op, inputs, out, backward_fn))
    return out


def _unbroadcast(g, shape):
    """Sum a gradient down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Elementwise arithmetic


def add(a, b):
    ad, bd = _data(a), _data(b)
    out = Tensor(ad + bd)

    def bwd(g):
        return (
            _unbroadcast(g, ad.shape) if isinstance(a, Tensor) else None,
            _unbroadcast(g, bd.shape) if isinstance(b, Tensor) else None,
        )

    return _record("add", (_maybe(a), _maybe(b)), out, bwd)


def sub(a, b):
    ad, bd = _data(a), _data(b)
    out = Tensor(ad - bd)

    def bwd(g):
        return (
            _unbroadcast(g, ad.shape) if isinstance(a, Tensor) else None,
            _unbroadcast(-g, bd.shape) if isinstance(b, Tensor) else None,
        )

    return _record("sub", (_maybe(a), _maybe(b)), out, bwd)


def mul(a, b):
    ad, bd = _data(a), _data(b)
    out = Tensor(ad * bd)

    def bwd(g):
        return (
            _unbroadcast(g * bd, ad.shape) if isinstance(a, Tensor) else None,
            _unbroadcast(g * ad, bd.shape) if isinstance(b, Tensor) else None,
        )

    return _record("mul", (_maybe(a), _maybe(b)), out, bwd)


def div(a, b):
    ad, bd = _data(a), _data(b)
    out = Tensor(ad / bd)

    def bwd(g):
        ga = _unbroadcast(g / bd, ad.shape) if isinstance(a, Tensor) else None
        gb = (
            _unbroadcast(-g * ad / (bd * bd), bd.shape)
            if isinstance(b, Tensor)
            else None
        )
        return (ga, gb)

    return _record("div", (_maybe(a), _maybe(b)), out, bwd)


def neg(a):
    out = Tensor(-_data(a))

    def bwd(g):
        return (-g,)

    return _record("neg", (_maybe(a),), out, bwd)


def relu(a):
    ad = _data(a)
    out = Tensor(np.maximum(ad, 0))

    def bwd(g):
        return (g * (ad > 0),)

    return _record("relu", (_maybe(a),), out, bwd)


def sigmoid(a):
    ad = _data(a)
    # evaluate in a numerically stable split to avoid overflow in exp
    y = np.empty_like(ad)
    pos = ad >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    ex = np.exp(ad[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)

    def bwd(g):
        return (g * y * (1.0 - y),)

    return _record("sigmoid", (_maybe(a),), out, bwd)


def absolute(a):
    ad = _data(a)
    out = Tensor(np.abs(ad))

    def bwd(g):
        return (g * np.sign(ad),)

    return _record("abs", (_maybe(a),), out, bwd)


def clip(a, lo, hi):
    ad = _data(a)
    out = Tensor(np.clip(ad, lo, hi))

    def bwd(g):
        return (g * ((ad >= lo) & (ad <= hi)),)

    return _record("clip", (_maybe(a),), out, bwd)


def stop_gradient(a):
    """Value passes through, gradient does not."""
    return Tensor(np.array(_data(a), copy=True))


# ---------------------------------------------------------------------------
# Reductions and shape ops


def tsum(a, axis=None, keepdims=False):
    ad = _data(a)
    out = Tensor(ad.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, ad.shape).astype(ad.dtype, copy=False),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, ad.shape),)

    return _record("sum", (_maybe(a),), out, bwd)


def tmean(a, axis=None, keepdims=False):
    ad = _data(a)
    if axis is None:
        count = ad.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for i in ax:
            count *= ad.shape[i]
    s = tsum(a, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / count)


def reshape(a, shape):
    ad = _data(a)
    out = Tensor(ad.reshape(shape))

    def bwd(g):
        return (g.reshape(ad.shape),)

    return _record("reshape", (_maybe(a),), out, bwd)


def concat(tensors, axis):
    datas = [_data(t) for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis))
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        grads = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if isinstance(t, Tensor):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                grads.append(g[tuple(idx)])
            else:
                grads.append(None)
        return tuple(grads)

    return _record("concat", tuple(_maybe(t) for t in tensors), out, bwd)


def matmul(a, b):
    ad, bd = _data(a), _data(b)
    out = Tensor(np.matmul(ad, bd))

    def bwd(g):
        ga = gb = None
        if isinstance(a, Tensor):
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if isinstance(b, Tensor):
            gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return (ga, gb)

    return _record("matmul", (_maybe(a), _maybe(b)), out, bwd)


# ---------------------------------------------------------------------------
# im2col machinery shared by conv2d / unfold / fold


def _out_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def _im2col(x, kh, kw, stride, padding):
    n, c, h, w = x.shape
    oh = _out_size(h, kh, stride, padding)
    ow = _out_size(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        i_max = i + stride * oh
        for j in range(kw):
            j_max = j + stride * ow
            cols[:, :, i, j] = x[:, :, i:i_max:stride, j:j_max:stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def _col2im(cols, x_shape, kh, kw, stride, padding):
    n, c, h, w = x_shape
    oh = _out_size(h, kh, stride, padding)
    ow = _out_size(w, kw, stride, padding)
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    img = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kh):
        i_max = i + stride * oh
        for j in range(kw):
            j_max = j + stride * ow
            img[:, :, i:i_max:stride, j:j_max:stride] += cols[:, :, i, j]
    return img[:, :, padding : padding + h, padding : padding + w]


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2D cross-correlation with explicit zero padding.

    x: (n, c_in, h, w); weight: (c_out, c_in, kh, kw); bias: (c_out,) or None.
    Output spatial size is floor((size + 2*padding - k)/stride) + 1.
    """
    xd, wd = _data(x), _data(weight)
    if xd.ndim != 4 or wd.ndim != 4:
        raise ShapeError(f"conv2d expects 4D input and weight, got {xd.shape} and {wd.shape}")
    if stride < 1:
        raise ConfigurationError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ConfigurationError(f"conv2d padding must be >= 0, got {padding}")
    n, c_in, h, w = xd.shape
    c_out, c_in_w, kh, kw = wd.shape
    if c_in != c_in_w:
        raise ShapeError(
            f"conv2d channel mismatch: input shape {xd.shape} has {c_in} channels, "
            f"weight shape {wd.shape} expects {c_in_w}"
        )
    oh = _out_size(h, kh, stride, padding)
    ow = _out_size(w, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d output would be empty: input {xd.shape}, kernel {wd.shape}, "
            f"stride {stride}, padding {padding}"
        )
    bd = None
    if bias is not None:
        bd = _data(bias)
        if bd.shape != (c_out,):
            raise ShapeError(f"conv2d bias shape {bd.shape} does not match ({c_out},)")

    cols = _im2col(xd, kh, kw, stride, padding)  # (n, c_in*kh*kw, oh*ow)
    wmat = wd.reshape(c_out, -1)
    y = np.matmul(wmat, cols).reshape(n, c_out, oh, ow)
    if bd is not None:
        y = y + bd.reshape(1, c_out, 1, 1)
    out = Tensor(y)

    def bwd(g):
        gmat = g.reshape(n, c_out, oh * ow)
        gx = gw = gb = None
        if isinstance(x, Tensor):
            gcols = np.matmul(wmat.T, gmat)
            gx = _col2im(gcols, xd.shape, kh, kw, stride, padding)
        if isinstance(weight, Tensor):
            # one flat gemm over (batch * positions) instead of a batched one
            g2 = np.ascontiguousarray(gmat.transpose(1, 0, 2)).reshape(c_out, -1)
            c2 = np.ascontiguousarray(cols.transpose(1, 0, 2)).reshape(cols.shape[1], -1)
            gw = np.matmul(g2, c2.T).reshape(wd.shape)
        if bias is not None and isinstance(bias, Tensor):
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb)

    return _record("conv2d", (_maybe(x), _maybe(weight), _maybe(bias)), out, bwd)


def pixel_shuffle(x, r):
    """Depth-to-space: (n, c, h, w) -> (n, c/r^2, h*r, w*r), a bijective
    rearrangement that neither creates nor drops values."""
    xd = _data(x)
    if xd.ndim != 4:
        raise ShapeError(f"pixel_shuffle expects 4D input, got {xd.shape}")
    n, c, h, w = xd.shape
    if r < 1:
        raise ConfigurationError(f"pixel_shuffle factor must be >= 1, got {r}")
    if c % (r * r) != 0:
        raise ConfigurationError(
            f"pixel_shuffle: channel count {c} is not divisible by r^2 = {r * r}"
        )
    c_out = c // (r * r)
    y = (
        xd.reshape(n, c_out, r, r, h, w)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, c_out, h * r, w * r)
    )
    out = Tensor(np.ascontiguousarray(y))

    def bwd(g):
        gx = (
            g.reshape(n, c_out, h, r, w, r)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, c, h, w)
        )
        return (np.ascontiguousarray(gx),)

    return _record("pixel_shuffle", (_maybe(x),), out, bwd)


def unfold(x, k, stride=1, padding=0):
    """Extract k*k patches as columns: (n, c, h, w) -> (n, c*k*k, 1, L)."""
    xd = _data(x)
    if xd.ndim != 4:
        raise ShapeError(f"unfold expects 4D input, got {xd.shape}")
    if k < 1:
        raise ConfigurationError(f"unfold patch size must be >= 1, got {k}")
    n, c, h, w = xd.shape
    oh = _out_size(h, k, stride, padding)
    ow = _out_size(w, k, stride, padding)
    if oh < 1 or ow < 1:
        raise ShapeError(f"unfold: no patch positions for input {xd.shape} with k={k}")
    cols = _im2col(xd, k, k, stride, padding)
    out = Tensor(cols.reshape(n, c * k * k, 1, oh * ow))

    def bwd(g):
        return (_col2im(g.reshape(n, c * k * k, oh * ow), xd.shape, k, k, stride, padding),)

    return _record("unfold", (_maybe(x),), out, bwd)


def _coverage(shape, k, stride, padding, dtype):
    n, c, h, w = shape
    ones = np.ones((1, k * k, _out_size(h, k, stride, padding) * _out_size(w, k, stride, padding)), dtype=dtype)
    cov = _col2im(ones, (1, 1, h, w), k, k, stride, padding)
    return np.maximum(cov, 1)


def fold(cols, out_hw, k, stride=1, padding=0):
    """Inverse of :func:`unfold` with overlap averaging: every output pixel is
    the mean of all patch entries that cover it."""
    cd = _data(cols)
    if cd.ndim != 4 or cd.shape[2] != 1:
        raise ShapeError(f"fold expects columns of shape (n, c*k*k, 1, L), got {cd.shape}")
    n, d, _, length = cd.shape
    if d % (k * k) != 0:
        raise ShapeError(f"fold: column dim {d} is not divisible by k^2 = {k * k}")
    c = d // (k * k)
    h, w = out_hw
    oh = _out_size(h, k, stride, padding)
    ow = _out_size(w, k, stride, padding)
    if oh * ow != length:
        raise ShapeError(
            f"fold: {length} columns do not match {oh}x{ow} patch positions for output {out_hw}"
        )
    cov = _coverage((n, c, h, w), k, stride, padding, cd.dtype)
    raw = _col2im(cd.reshape(n, d, length), (n, c, h, w), k, k, stride, padding)
    out = Tensor(raw / cov)

    def bwd(g):
        return (_im2col(g / cov, k, k, stride, padding).reshape(cd.shape),)

    return _record("fold", (_maybe(cols),), out, bwd)


def pad_edge(x, width):
    """Replicate-pad the two spatial axes of (n, c, h, w) by `width`."""
    xd = _data(x)
    if xd.ndim != 4:
        raise ShapeError(f"pad_edge expects 4D input, got {xd.shape}")
    n, c, h, w = xd.shape
    iy = np.clip(np.arange(-width, h + width), 0, h - 1)
    ix = np.clip(np.arange(-width, w + width), 0, w - 1)
    out = Tensor(np.ascontiguousarray(xd[:, :, iy][:, :, :, ix]))

    def _fold_axis(g, idx, size, axis):
        moved = np.moveaxis(g, axis, 0)
        acc = np.zeros((size,) + moved.shape[1:], dtype=g.dtype)
        np.add.at(acc, idx, moved)
        return np.moveaxis(acc, 0, axis)

    def bwd(g):
        return (_fold_axis(_fold_axis(g, iy, h, 2), ix, w, 3),)

    return _record("pad_edge", (_maybe(x),), out, bwd)


def avg_pool_global(x):
    """Global average pool: (n, c, h, w) -> (n, c, 1, 1)."""
    xd = _data(x)
    if xd.ndim != 4:
        raise ShapeError(f"avg_pool_global expects 4D input, got {xd.shape}")
    n, c, h, w = xd.shape
    out = Tensor(xd.mean(axis=(2, 3), keepdims=True))

    def bwd(g):
        return (np.broadcast_to(g / (h * w), xd.shape),)

    return _record("avg_pool_global", (_maybe(x),), out, bwd)


def gather_cols(cols, index):
    """Gather columns along the last axis: out[b, :, :, i] = cols[b, :, :, index[b, i]].

    `index` is a non-differentiable integer array of shape (n, L_out).
    """
    cd = _data(cols)
    if cd.ndim != 4:
        raise ShapeError(f"gather_cols expects 4D columns, got {cd.shape}")
    n, d, one, length = cd.shape
    idx = np.asarray(index)
    if idx.shape[0] != n:
        raise ShapeError(f"gather_cols: index batch {idx.shape} vs columns batch {n}")
    if idx.size and (idx.min() < 0 or idx.max() >= length):
        raise AssertionError(
            f"gather_cols: index out of range [0, {length}): min {idx.min()}, max {idx.max()}"
        )
    flat = cd.reshape(n, d * one, length)
    idx3 = np.broadcast_to(idx[:, None, :], (n, d * one, idx.shape[1]))
    y = np.take_along_axis(flat, idx3, axis=2)
    out = Tensor(y.reshape(n, d, one, idx.shape[1]))

    def bwd(g):
        gc = np.zeros((n, length, d * one), dtype=cd.dtype)
        g3 = g.reshape(n, d * one, idx.shape[1])
        for b in range(n):
            # scatter-add rows in (L, d) layout, duplicate indices accumulate
            np.add.at(gc[b], idx[b], g3[b].T)
        return (gc.transpose(0, 2, 1).reshape(cd.shape),)

    return _record("gather_cols", (_maybe(cols),), out, bwd)


def normalize_patches(cols, eps=0.0):
    """Scale every column of (n, d, 1, L) to unit euclidean norm.

    Columns with zero norm map to zero (and receive zero gradient). Norms are
    computed with a max-magnitude pre-scale so large float32 patches cannot
    overflow the sum of squares.
    """
    cd = _data(cols)
    if cd.ndim != 4:
        raise ShapeError(f"normalize_patches expects 4D columns, got {cd.shape}")
    m = np.abs(cd).max(axis=1, keepdims=True)
    safe_m = np.where(m > 0, m, 1)
    scaled = cd / safe_m
    norm = safe_m * np.sqrt((scaled * scaled).sum(axis=1, keepdims=True))
    safe_norm = np.where(norm > eps, norm, 1)
    y = np.where(norm > eps, cd / safe_norm, 0)
    out = Tensor(y.astype(cd.dtype, copy=False))

    def bwd(g):
        dot = (y * g).sum(axis=1, keepdims=True)
        gx = np.where(norm > eps, (g - y * dot) / safe_norm, 0)
        return (gx.astype(cd.dtype, copy=False),)

    return _record("normalize_patches", (_maybe(cols),), out, bwd)
