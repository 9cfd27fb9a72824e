"""Dense tensors with a reverse-mode differentiation tape.

Only the operations needed to unroll a convolutional spiking network over
time are provided. Every op works on :class:`Tensor` values; when a
:class:`Tape` is active and at least one input is tracked, the op appends a
node holding a vector-Jacobian closure. :func:`backward` replays the tape
in reverse.

Broadcasting is limited to scalar-tensor pairs. Anything else must be
reshaped explicitly.
"""

from __future__ import annotations

import itertools
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ContractError, NonSmoothGraphError, NumericError, ShapeError

_DEFAULT_DTYPE = np.float64
_ids = itertools.count()
_tape_stack: list["Tape"] = []

# ops whose true derivative differs from the one used on the tape
NONSMOOTH_OPS = frozenset({"spike"})


def set_default_dtype(dtype) -> None:
    """Select float64 (default) or float32 for newly created tensors."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """An n-dimensional real array, optionally a trainable parameter."""

    __slots__ = ("data", "requires_grad", "name", "id", "_node", "_tape")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = _DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.name = name
        self.id = next(_ids)
        self._node: Optional[int] = None
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self) -> "Tensor":
        return sum(self)

    def mean(self) -> "Tensor":
        return mean(self)

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{label}{grad})"


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(np.array(data, dtype=_DEFAULT_DTYPE), requires_grad=True, name=name)


@dataclass
class Node:
    id: int
    op: str
    inputs: tuple
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class GradientStore(Mapping):
    """Gradients keyed by parameter id.

    Indexing with a :class:`Tensor` that has no entry returns zeros of the
    parameter's shape, since an absent entry means the loss does not depend
    on it.
    """

    def __init__(self, grads: dict[int, np.ndarray]):
        self._grads = grads

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            g = self._grads.get(key.id)
            return np.zeros_like(key.data) if g is None else g
        return self._grads[key]

    def __contains__(self, key):
        if isinstance(key, Tensor):
            key = key.id
        return key in self._grads

    def __iter__(self):
        return iter(self._grads)

    def __len__(self):
        return len(self._grads)


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; ops executed inside the ``with`` block are
    recorded. A tape is owned by one forward/backward pass.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack.remove(self)
        return False

    def tracks(self, t: Tensor) -> bool:
        return t.requires_grad or t._tape is self

    def record(self, op, inputs, output, vjp) -> None:
        node = Node(len(self.nodes), op, tuple(inputs), output, vjp)
        self.nodes.append(node)
        output._node = node.id
        output._tape = self

    def ops(self) -> list[str]:
        return [n.op for n in self.nodes]

    def backward(self, loss: Tensor) -> GradientStore:
        return backward(self, loss)


def current_tape() -> Optional[Tape]:
    return _tape_stack[-1] if _tape_stack else None


def backward(tape: Tape, loss: Tensor) -> GradientStore:
    """Accumulate d(loss)/d(parameter) for every tracked parameter."""
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    if loss._tape is not tape:
        if loss.requires_grad:
            return GradientStore({loss.id: grads[loss.id]})
        return GradientStore({})
    leaves: dict[int, np.ndarray] = {}
    for node in reversed(tape.nodes[: loss._node + 1]):
        g = grads.pop(node.output.id, None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not tape.tracks(inp):
                continue
            if not np.all(np.isfinite(gi)):
                raise NumericError(f"non-finite gradient at node {node.id} ({node.op})", node.id)
            target = leaves if inp._tape is not tape else grads
            prev = target.get(inp.id)
            target[inp.id] = gi if prev is None else prev + gi
    return GradientStore(leaves)


# ---------------------------------------------------------------- helpers


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, inputs: Sequence[Tensor], data: np.ndarray, vjp) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(tape.tracks(t) for t in inputs):
        tape.record(op, inputs, out, vjp)
    return out


def _check_pair(op, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (only scalar broadcasting)")


def _fit(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


# ---------------------------------------------------------- elementwise ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (_fit(g, a.shape), _fit(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (_fit(g, a.shape), _fit(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", (a, b), ad * bd, lambda g: (_fit(g * bd, a.shape), _fit(g * ad, b.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair("div", a, b)
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd
    return _emit("div", (a, b), out, lambda g: (_fit(g / bd, a.shape), _fit(-g * out / bd, b.shape)))


def elementwise(x: Tensor, value: np.ndarray, derivative: np.ndarray, op: str) -> Tensor:
    """Record ``value = f(x)`` whose tape derivative is ``derivative``.

    The caller supplies both arrays; this is how non-differentiable
    functions get a substitute derivative on the tape.
    """
    if value.shape != x.shape or derivative.shape != x.shape:
        raise ShapeError(f"{op}: value/derivative shape must match input {x.shape}")
    return _emit(op, (x,), value, lambda g: (g * derivative,))


def detach(x: Tensor) -> Tensor:
    return x.detach()


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = x.data.reshape(shape)
    return _emit("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _emit("sum", (x,), np.asarray(x.data.sum()), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    return _emit("mean", (x,), np.asarray(x.data.mean()), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),))


# ------------------------------------------------------------- linear ops


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``out[n, k] = sum_d x[n, d] * weight[k, d] + bias[k]``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} does not match {weight.shape[0]} outputs")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def vjp(g):
        grads = [g @ wd, g.T @ xd]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit("linear", inputs, out, vjp)


def _out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _windows(x: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Read-only view of shape (N, C, oh, ow, kh, kw)."""
    N, C, H, W = x.shape
    oh, ow = (H - kh) // sh + 1, (W - kw) // sw + 1
    s = x.strides
    return as_strided(x, (N, C, oh, ow, kh, kw), (s[0], s[1], s[2] * sh, s[3] * sw, s[2], s[3]), writeable=False)


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip), no bias."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape}, {weight.shape}")
    N, C, H, W = x.shape
    F, Cw, kh, kw = weight.shape
    if C != Cw:
        raise ShapeError(f"conv2d: input has {C} channels, weight expects {Cw}")
    if stride < 1:
        raise ContractError("conv2d: stride must be >= 1")
    if kh > H + 2 * padding or kw > W + 2 * padding:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {H}x{W}+{padding}")
    oh, ow = _out_size(H, kh, stride, padding), _out_size(W, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    # (N, oh, ow, C, kh, kw) -> rows of receptive fields
    cols = _windows(np.ascontiguousarray(xp), kh, kw, stride, stride).transpose(0, 2, 3, 1, 4, 5)
    cols = cols.reshape(N * oh * ow, C * kh * kw)
    wmat = weight.data.reshape(F, -1)
    out = (cols @ wmat.T).reshape(N, oh, ow, F).transpose(0, 3, 1, 2)

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(N * oh * ow, F)
        gw = (g2.T @ cols).reshape(weight.shape)
        gcols = (g2 @ wmat).reshape(N, oh, ow, C, kh, kw)
        gx = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                patch = gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                gx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += patch
        if padding:
            gx = gx[:, :, padding:padding + H, padding:padding + W]
        return gx, gw

    return _emit("conv2d", (x, weight), np.ascontiguousarray(out), vjp)


def pool2d(x: Tensor, kind: str, k, stride=None) -> Tensor:
    """Average or max pooling with kernel ``k`` (int or (kh, kw)).

    Max pooling sends the gradient to the first maximal element of each
    window in row-major order.
    """
    if x.ndim != 4:
        raise ShapeError(f"pool2d expects a 4-d input, got {x.shape}")
    kh, kw = (k, k) if np.isscalar(k) else k
    stride = (kh, kw) if stride is None else stride
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    N, C, H, W = x.shape
    if kh > H or kw > W:
        raise ShapeError(f"pool2d: kernel {kh}x{kw} exceeds input {H}x{W}")
    win = _windows(np.ascontiguousarray(x.data), kh, kw, sh, sw)
    oh, ow = win.shape[2], win.shape[3]

    def scatter(gwin):
        gx = np.zeros(x.shape, dtype=gwin.dtype)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += gwin[..., i, j]
        return gx

    if kind == "avg":
        out = win.mean(axis=(4, 5))
        return _emit("avg_pool", (x,), out,
                     lambda g: (scatter(np.broadcast_to((g / (kh * kw))[..., None, None], win.shape)),))
    if kind == "max":
        flat = win.reshape(N, C, oh, ow, kh * kw)
        idx = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

        def vjp(g):
            onehot = np.arange(kh * kw) == idx[..., None]
            return (scatter((onehot * g[..., None]).reshape(win.shape)),)

        return _emit("max_pool", (x,), out, vjp)
    raise ValueError(f"unknown pooling kind {kind!r}")


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes: [N, C, H, W] -> [N, C]."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects a 4-d input, got {x.shape}")
    hw = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3))
    return _emit("global_avg_pool", (x,), out,
                 lambda g: (np.broadcast_to((g / hw)[:, :, None, None], x.shape).copy(),))


def batch_norm(x: Tensor, gamma: Tensor, beta: Optional[Tensor], mean: np.ndarray, var: np.ndarray,
               eps: float) -> Tensor:
    """Channel-wise ``(x - mean) / sqrt(var + eps) * gamma + beta``.

    ``mean``/``var`` are treated as constants (eval mode). See
    :func:`batch_norm_train` for the batch-statistics variant.
    """
    shape = (1, -1) + (1,) * (x.ndim - 2)
    axes = (0,) + tuple(range(2, x.ndim))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(shape)) * inv.reshape(shape)
    gd = gamma.data.reshape(shape)
    out = xhat * gd
    if beta is not None:
        out = out + beta.data.reshape(shape)

    def vjp(g):
        grads = [g * gd * inv.reshape(shape), (g * xhat).sum(axis=axes)]
        if beta is not None:
            grads.append(g.sum(axis=axes))
        return grads

    inputs = (x, gamma) if beta is None else (x, gamma, beta)
    return _emit("batch_norm", inputs, out, vjp)


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Optional[Tensor], eps: float):
    """Batch-statistics normalization; returns ``(out, mean, biased_var)``."""
    shape = (1, -1) + (1,) * (x.ndim - 2)
    axes = (0,) + tuple(range(2, x.ndim))
    m = x.size // x.shape[1]
    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shape)) * inv.reshape(shape)
    gd = gamma.data.reshape(shape)
    out = xhat * gd
    if beta is not None:
        out = out + beta.data.reshape(shape)

    def vjp(g):
        dxhat = g * gd
        s1 = dxhat.sum(axis=axes).reshape(shape)
        s2 = (dxhat * xhat).sum(axis=axes).reshape(shape)
        gx = inv.reshape(shape) / m * (m * dxhat - s1 - xhat * s2)
        grads = [gx, (g * xhat).sum(axis=axes)]
        if beta is not None:
            grads.append(g.sum(axis=axes))
        return grads

    inputs = (x, gamma) if beta is None else (x, gamma, beta)
    return _emit("batch_norm", inputs, out, vjp), mu, var


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    N, C = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= C:
        raise ContractError(f"cross_entropy: labels must lie in [0, {C})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(N)
    loss = np.asarray((lse - z[rows, labels]).mean())

    def vjp(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / N),)

    return _emit("cross_entropy", (logits,), loss, vjp)


# ---------------------------------------------------------------- checking


def finite_diff_gradcheck(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6,
                          allow_nonsmooth: bool = False) -> float:
    """Largest relative error between tape gradients and central differences.

    ``f`` rebuilds the scalar loss from the current parameter values. The
    relative error per element is ``|a - b| / max(|a|, |b|, 1e-8)``.
    Raises :class:`NonSmoothGraphError` if the graph contains a hard spike,
    because there the tape derivative is a surrogate by construction.
    """
    with Tape() as tape:
        loss = f()
    bad = NONSMOOTH_OPS.intersection(tape.ops())
    if bad and not allow_nonsmooth:
        raise NonSmoothGraphError(f"graph contains non-smooth ops {sorted(bad)}; use the soft spike mode")
    grads = tape.backward(loss)
    worst = 0.0
    for p in params:
        analytic = grads[p]
        base = p.data
        try:
            for idx in np.ndindex(base.shape):
                bumped = base.copy()
                bumped[idx] += eps
                p.data = bumped
                fp = float(f().data)
                bumped[idx] = base[idx] - eps
                fm = float(f().data)
                numeric = (fp - fm) / (2 * eps)
                a = float(analytic[idx])
                worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
        finally:
            p.data = base
    return worst
