"""Dense tensors with a reverse-mode differentiation tape.

Operations run eagerly on numpy arrays. While a :class:`Tape` is active (used
as a context manager), every operation that touches a tensor requiring
gradients appends a :class:`TapeNode`; :func:`backward` then walks the tape in
reverse. Outside a tape, operations are plain forward computations.

Arrays are kept in the ``(N, C, T, H, W)`` layout for convolutions; 4-D
``(C, T, H, W)`` inputs are promoted to a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import DimensionError, EmptyInputError, NumericError

DEFAULT_DTYPE = np.float32


class Tensor:
    """Immutable n-d array that can participate in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE if dtype is None else dtype)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: int | None = None

    # -- conveniences ------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad})"

    def __len__(self) -> int:
        return self.shape[0]

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE))


def tensor(data, requires_grad: bool = False, dtype=None, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE),
                  requires_grad=requires_grad, name=name)


# ---------------------------------------------------------------------------
# tape


@dataclass
class TapeNode:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]

    @property
    def input_ids(self) -> list[int | None]:
        return [t._node for t in self.inputs]


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended in execution order, which is already topological.
    ``leaves`` holds every gradient-requiring tensor that entered the tape
    without being produced by it.
    """

    nodes: list[TapeNode] = field(default_factory=list)
    leaves: dict[int, Tensor] = field(default_factory=dict)

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.remove(self)

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            if t.requires_grad and t._node is None:
                self.leaves.setdefault(id(t), t)

    def _record(self, op, inputs, output, backward_fn) -> None:
        for t in inputs:
            if t.requires_grad and not self._owns(t):
                self.leaves.setdefault(id(t), t)
        output._node = len(self.nodes)
        self.nodes.append(TapeNode(op, tuple(inputs), output, backward_fn))

    def _owns(self, t: Tensor) -> bool:
        return t._node is not None and t._node < len(self.nodes) and self.nodes[t._node].output is t


_active: list[Tape] = []


def current_tape() -> Tape | None:
    return _active[-1] if _active else None


def record(op: str, out_data: np.ndarray, inputs: Sequence[Tensor],
           backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Wrap ``out_data`` as the result of ``op`` and record it when a tape is active.

    ``backward_fn`` maps the output gradient to one gradient (or ``None``) per
    input. It is only invoked during :func:`backward`.
    """
    tape = current_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape._record(op, inputs, out, backward_fn)
    return out


def backward(tape: Tape, loss: Tensor, wrt: Sequence[Tensor] = ()) -> dict[Tensor, np.ndarray]:
    """Reverse accumulation from a scalar ``loss``.

    Returns a mapping from every leaf (registered on the tape or listed in
    ``wrt``) to its gradient. Unreachable leaves get zeros. Each leaf's
    ``.grad`` attribute is set as well.
    """
    if loss.size != 1:
        raise DimensionError(f"loss must be a scalar, got shape {loss.shape}")
    for t in wrt:
        if t._node is None or not tape._owns(t):
            tape.leaves.setdefault(id(t), t)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if tape._owns(loss):
        for node in reversed(tape.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
    result: dict[Tensor, np.ndarray] = {}
    for key, leaf in tape.leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        else:
            g = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
        leaf.grad = g
        result[leaf] = g
    return result


# ---------------------------------------------------------------------------
# elementwise and structural ops


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"incompatible shapes {a.shape} and {b.shape}") from exc


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape
    return record("add", a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.dtype)
        return record("scale", a.data * c, (a,), lambda g: (_unbroadcast(g * c, a.shape),))
    _check_broadcast(a, b)
    ad, bd = a.data, b.data
    return record("mul", ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def sub(a, b) -> Tensor:
    return as_tensor(a) - b


def neg(a: Tensor) -> Tensor:
    return record("neg", -a.data, (a,), lambda g: (-g,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, negative_slope: float = 0.1) -> Tensor:
    slope = np.where(x.data > 0, 1.0, negative_slope).astype(x.dtype)
    return record("leaky_relu", x.data * slope, (x,), lambda g: (g * slope,))


def sigmoid(x: Tensor) -> Tensor:
    y = (0.5 * (1.0 + np.tanh(0.5 * x.data))).astype(x.dtype)
    return record("sigmoid", y, (x,), lambda g: (g * y * (1 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return record("tanh", y, (x,), lambda g: (g * (1 - y * y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return record("exp", y, (x,), lambda g: (g * y,))


def abs_(x: Tensor) -> Tensor:
    s = np.sign(x.data)
    return record("abs", np.abs(x.data), (x,), lambda g: (g * s,))


def sum_all(x: Tensor) -> Tensor:
    shape, dtype = x.shape, x.dtype
    return record("sum", np.asarray(x.data.sum(), dtype=dtype), (x,),
                  lambda g: (np.broadcast_to(g, shape).astype(dtype),))


def mean_all(x: Tensor) -> Tensor:
    shape, dtype, n = x.shape, x.dtype, x.size
    return record("mean", np.asarray(x.data.mean(), dtype=dtype), (x,),
                  lambda g: (np.broadcast_to(g / n, shape).astype(dtype),))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return record("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def flip(x: Tensor, axis: int) -> Tensor:
    return record("flip", np.flip(x.data, axis), (x,), lambda g: (np.flip(g, axis),))


def index(x: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing with a scatter backward."""
    shape, dtype = x.shape, x.dtype

    def bw(g):
        out = np.zeros(shape, dtype=dtype)
        out[key] += g
        return (out,)

    return record("index", x.data[key], (x,), bw)


def slice_(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[axis]:
        raise DimensionError(f"slice [{start}:{stop}) outside extent {x.shape[axis]}")
    key = [slice(None)] * x.ndim
    key[axis] = slice(start, stop)
    return index(x, tuple(key))


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise EmptyInputError("concat of an empty sequence")
    ref = xs[0].shape
    ax = axis % len(ref)
    for x in xs[1:]:
        if len(x.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(x.shape, ref)) if i != ax):
            raise DimensionError(f"cannot concatenate shapes {ref} and {x.shape} on axis {axis}")
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(xs)))

    return record("concat", np.concatenate([x.data for x in xs], axis=ax), xs, bw)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise EmptyInputError("stack of an empty sequence")
    for x in xs[1:]:
        if x.shape != xs[0].shape:
            raise DimensionError(f"cannot stack shapes {xs[0].shape} and {x.shape}")
    ax = axis % (xs[0].ndim + 1)

    def bw(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(xs)))

    return record("stack", np.stack([x.data for x in xs], axis=ax), xs, bw)


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference. The subgradient of ``|0|`` is taken as 0."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"l1_loss shapes differ: {a.shape} vs {b.shape}")
    d = a.data - b.data
    s = np.sign(d)
    n = d.size
    return record("l1_loss", np.asarray(np.abs(d).mean(), dtype=a.dtype), (a, b),
                  lambda g: (g * s / n, -g * s / n))


def softmax_flat(w: Tensor) -> Tensor:
    """Softmax over all entries of ``w`` regardless of shape."""
    if not np.all(np.isfinite(w.data)):
        raise NumericError("softmax input contains non-finite values")
    z = np.exp(w.data - w.data.max())
    y = z / z.sum()

    def bw(g):
        return (y * (g - (g * y).sum()),)

    return record("softmax_flat", y, (w,), bw)


def linear_resample(x: Tensor, axis: int, matrix: np.ndarray) -> Tensor:
    """Apply ``matrix (out, in)`` along ``axis``; the adjoint is its transpose."""
    ax = axis % x.ndim
    if matrix.shape[1] != x.shape[ax]:
        raise DimensionError(f"resample matrix expects extent {matrix.shape[1]}, got {x.shape[ax]}")
    m = matrix.astype(x.dtype, copy=False)
    y = np.moveaxis(np.tensordot(m, x.data, axes=([1], [ax])), 0, ax)

    def bw(g):
        return (np.moveaxis(np.tensordot(m.T, g, axes=([1], [ax])), 0, ax),)

    return record("linear_resample", y, (x,), bw)


# ---------------------------------------------------------------------------
# convolution


def _as5d(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 4:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 5:
        raise DimensionError(f"conv3d expects (C,T,H,W) or (N,C,T,H,W), got {x.shape}")
    return x, False


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride=(1, 1, 1)) -> Tensor:
    """3-D cross-correlation with replicate padding of ``(k-1)/2`` per axis.

    ``out[o,t,h,w] = sum kernel[o,c,i,j,k] * pad(x)[c, r*t+i, s*h+j, s*w+k]``
    with output extents ``ceil(T/r), ceil(H/s), ceil(W/s)``.
    """
    x5, squeeze = _as5d(x)
    if kernel.ndim != 5:
        raise DimensionError(f"kernel must be (C_out,C_in,kt,kh,kw), got {kernel.shape}")
    N, C, T, H, W = x5.shape
    O, Ck, kt, kh, kw = kernel.shape
    if x5.size == 0 or kernel.size == 0:
        raise EmptyInputError("conv3d on a zero-size tensor")
    if Ck != C:
        raise DimensionError(f"kernel expects {Ck} input channels, input has {C}")
    if kt % 2 == 0 or kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"kernel extents must be odd, got {(kt, kh, kw)}")
    stride = tuple(int(s) for s in stride)
    if len(stride) != 3 or min(stride) < 1:
        raise DimensionError(f"strides must be three integers >= 1, got {stride}")
    if bias is not None and bias.shape != (O,):
        raise DimensionError(f"bias shape {bias.shape} does not match {O} output channels")
    ksize = (kt, kh, kw)
    To, Ho, Wo = (_kernels.conv_out_extent(n, s) for n, s in zip((T, H, W), stride))
    dtype = np.result_type(x5.dtype, kernel.dtype)
    xd = x5.data.astype(dtype, copy=False)
    kmat = kernel.data.reshape(O, -1).astype(dtype, copy=False)
    cols = _kernels.im2col3d(xd, ksize, stride)
    y = cols @ kmat.T
    if bias is not None:
        y += bias.data.astype(dtype, copy=False)
    out = y.reshape(N, To, Ho, Wo, O).transpose(0, 4, 1, 2, 3)
    xshape, kshape = x5.shape, kernel.shape
    inputs = (x5, kernel) if bias is None else (x5, kernel, bias)

    def bw(g):
        gm = g.transpose(0, 2, 3, 4, 1).reshape(-1, O)
        gk = (gm.T @ cols).reshape(kshape) if kernel.requires_grad else None
        gx = _kernels.col2im3d(gm @ kmat, xshape, ksize, stride) if x5.requires_grad else None
        if bias is None:
            return gx, gk
        return gx, gk, gm.sum(axis=0)

    res = record("conv3d", out, inputs, bw)
    return reshape(res, res.shape[1:]) if squeeze else res


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 2-D convolution of ``(N,C,H,W)`` via a single-frame :func:`conv3d`."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects (N,C,H,W) and (O,C,kh,kw), got {x.shape}, {kernel.shape}")
    N, C, H, W = x.shape
    k5 = reshape(kernel, (kernel.shape[0], kernel.shape[1], 1) + kernel.shape[2:])
    y = conv3d(reshape(x, (N, C, 1, H, W)), k5, bias)
    return reshape(y, (N, y.shape[1], H, W))


# ---------------------------------------------------------------------------
# bilinear sampling


def sample_points(feature: Tensor, py: Tensor, px: Tensor) -> Tensor:
    """Bilinear samples of ``feature (N,C,H,W)`` at points ``py, px (N,P)`` -> ``(N,P,C)``.

    Points are clamped to ``[0,H-1] x [0,W-1]``; clamped coordinates carry no
    gradient.
    """
    if feature.ndim != 4 or py.shape != px.shape or py.ndim != 2 or py.shape[0] != feature.shape[0]:
        raise DimensionError(f"bad sampling shapes {feature.shape}, {py.shape}, {px.shape}")
    f, yy, xx = feature.data, py.data, px.data
    out = _kernels.sample_points(f, yy, xx)

    def bw(g):
        gx, gpy, gpx = _kernels.sample_points_backward(g, f, yy, xx)
        return gx, gpy.astype(py.dtype), gpx.astype(px.dtype)

    return record("sample_points", out, (feature, py, px), bw)


def bilinear_sample(feature: Tensor, base: tuple[int, int], offset: Tensor) -> Tensor:
    """Value of ``feature (C,H,W)`` at integer ``base (y, x)`` displaced by ``offset (dy, dx)``."""
    if feature.ndim != 3 or offset.shape != (2,):
        raise DimensionError(f"expected (C,H,W) feature and (2,) offset, got {feature.shape}, {offset.shape}")
    f4 = reshape(feature, (1,) + feature.shape)
    base_arr = np.asarray(base, dtype=offset.dtype).reshape(1, 2)
    pts = add(reshape(offset, (1, 2)), base_arr)
    v = sample_points(f4, pts[:, 0:1], pts[:, 1:2])
    return reshape(v, (feature.shape[0],))


def _tap_grid(kh: int, kw: int, H: int, W: int, dtype):
    dy, dx = np.meshgrid(np.arange(kh) - kh // 2, np.arange(kw) - kw // 2, indexing="ij")
    hh, ww = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    # point order (h, w, tap)
    gy = (hh[:, :, None] + dy.reshape(1, 1, -1)).astype(dtype)
    gx = (ww[:, :, None] + dx.reshape(1, 1, -1)).astype(dtype)
    return gy.reshape(1, -1), gx.reshape(1, -1)


def deform_conv2d(x: Tensor, offsets: Tensor, kernel: Tensor) -> Tensor:
    """Deformable 2-D convolution (one offset pair per tap, no modulation).

    ``offsets`` has shape ``(N, 2*kh*kw, H, W)`` with channels ordered
    ``(dy_0, dx_0, dy_1, dx_1, ...)`` over taps in row-major order. Every
    tap samples ``x`` bilinearly at ``(h + i - kh//2 + dy, w + j - kw//2 + dx)``.
    """
    N, C, H, W = x.shape
    O, Ck, kh, kw = kernel.shape
    K = kh * kw
    if Ck != C or offsets.shape != (N, 2 * K, H, W):
        raise DimensionError(f"deform_conv2d shapes x={x.shape} offsets={offsets.shape} kernel={kernel.shape}")
    gy, gx = _tap_grid(kh, kw, H, W, x.dtype)
    off = transpose(reshape(offsets, (N, K, 2, H, W)), (0, 3, 4, 1, 2))  # (N,H,W,K,2)
    py = add(reshape(off[:, :, :, :, 0], (N, H * W * K)), gy)
    px = add(reshape(off[:, :, :, :, 1], (N, H * W * K)), gx)
    vals = sample_points(x, py, px)  # (N, H*W*K, C)
    cols = reshape(vals, (N * H * W, K * C))
    kmat = reshape(transpose(reshape(kernel, (O, C, K)), (0, 2, 1)), (O, K * C))
    y = matmul(cols, transpose(kmat, (1, 0)))  # (N*H*W, O)
    return transpose(reshape(y, (N, H, W, O)), (0, 3, 1, 2))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return record("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))
