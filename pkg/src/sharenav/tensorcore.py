"""Dense-tensor math with reverse-mode automatic differentiation.

A define-by-run tape over float64 numpy arrays, plus the small set of
neural building blocks the intent network needs: an LSTM cell, Adam,
EMA parameter tracking, and checkpoint round-tripping.  The tape is
rebuilt on every forward pass; shapes are tiny, so simplicity wins over
caching.
"""

from __future__ import annotations

import itertools
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "TensorError",
    "ShapeError",
    "NumericError",
    "ContractError",
    "tensor",
    "parameter",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "concat",
    "tanh",
    "sigmoid",
    "relu",
    "softplus",
    "softmax",
    "log",
    "exp",
    "tsum",
    "tmean",
    "conv2d",
    "max_pool2",
    "gaussian_log_density",
    "cov2_from_params",
    "backward",
    "ParamGroup",
    "adam_step",
    "ema_update",
    "RecurrentCell",
    "recurrent_step",
    "save_checkpoint",
    "load_checkpoint",
]


class TensorError(Exception):
    pass


class ShapeError(TensorError):
    pass


class NumericError(TensorError):
    pass


class ContractError(TensorError):
    pass


_node_counter = itertools.count()


class Tensor:
    """A node in the computation tape.

    ``values`` is an immutable-by-convention float64 array.  ``grad`` is
    populated by :func:`backward` and accumulates across calls until the
    owning :class:`ParamGroup` zeroes it.
    """

    __slots__ = ("values", "grad", "parents", "_backward", "requires_grad", "node_id", "name")

    def __init__(self, values, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self._backward = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.node_id = next(_node_counter)
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    def detach(self):
        return Tensor(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return tslice(self, idx)


def tensor(values, name=None):
    """Wrap an array as a constant tape leaf; rejects NaN/Inf."""
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite values entering the tape")
    return Tensor(arr, name=name)


def parameter(values, name=None):
    """Wrap an array as a trainable leaf."""
    arr = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite parameter init for {name!r}")
    return Tensor(arr, requires_grad=True, name=name)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else tensor(x)


def _check_finite(*tensors):
    for t in tensors:
        if not np.all(np.isfinite(t.values)):
            raise NumericError("non-finite input to op")


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_finite(a, b)
    try:
        out = a.values + b.values
    except ValueError as e:
        raise ShapeError(f"add: incompatible shapes {a.shape} vs {b.shape}") from e

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return Tensor(out, (a, b), bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_finite(a, b)
    try:
        out = a.values - b.values
    except ValueError as e:
        raise ShapeError(f"sub: incompatible shapes {a.shape} vs {b.shape}") from e

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return Tensor(out, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_finite(a, b)
    try:
        out = a.values * b.values
    except ValueError as e:
        raise ShapeError(f"mul: incompatible shapes {a.shape} vs {b.shape}") from e

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.values, a.shape))
        _accumulate(b, _unbroadcast(g * a.values, b.shape))

    return Tensor(out, (a, b), bwd)


def neg(a):
    a = _as_tensor(a)

    def bwd(g):
        _accumulate(a, -g)

    return Tensor(-a.values, (a,), bwd)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_finite(a, b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = a.values @ b.values

    def bwd(g):
        _accumulate(a, g @ b.values.T)
        _accumulate(b, a.values.T @ g)

    return Tensor(out, (a, b), bwd)


def concat(parts, axis=-1):
    parts = [_as_tensor(p) for p in parts]
    _check_finite(*parts)
    try:
        out = np.concatenate([p.values for p in parts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: incompatible shapes {[p.shape for p in parts]}") from e
    sizes = [p.shape[axis] for p in parts]

    def bwd(g):
        start = 0
        for p, n in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis if axis >= 0 else g.ndim + axis] = slice(start, start + n)
            _accumulate(p, g[tuple(sl)])
            start += n

    return Tensor(out, tuple(parts), bwd)


def tslice(a, idx):
    a = _as_tensor(a)
    out = a.values[idx]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.values)
            np.add.at(full, idx, g)
            _accumulate(a, full)

    return Tensor(out, (a,), bwd)


def tanh(a):
    a = _as_tensor(a)
    _check_finite(a)
    out = np.tanh(a.values)

    def bwd(g):
        _accumulate(a, g * (1.0 - out * out))

    return Tensor(out, (a,), bwd)


def sigmoid(a):
    a = _as_tensor(a)
    _check_finite(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.values))

    def bwd(g):
        _accumulate(a, g * out * (1.0 - out))

    return Tensor(out, (a,), bwd)


def relu(a):
    a = _as_tensor(a)
    _check_finite(a)
    mask = a.values > 0

    def bwd(g):
        _accumulate(a, g * mask)

    return Tensor(a.values * mask, (a,), bwd)


def softplus(a):
    a = _as_tensor(a)
    _check_finite(a)
    out = np.logaddexp(0.0, a.values)

    def bwd(g):
        _accumulate(a, g * (0.5 * (1.0 + np.tanh(0.5 * a.values))))

    return Tensor(out, (a,), bwd)


def softmax(a, axis=-1):
    a = _as_tensor(a)
    _check_finite(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, out * (g - dot))

    return Tensor(out, (a,), bwd)


def log(a):
    a = _as_tensor(a)
    _check_finite(a)
    if np.any(a.values <= 0):
        raise NumericError("log of non-positive value")
    out = np.log(a.values)

    def bwd(g):
        _accumulate(a, g / a.values)

    return Tensor(out, (a,), bwd)


def exp(a):
    a = _as_tensor(a)
    _check_finite(a)
    out = np.exp(a.values)

    def bwd(g):
        _accumulate(a, g * out)

    return Tensor(out, (a,), bwd)


def tsum(a, axis=None):
    a = _as_tensor(a)
    _check_finite(a)
    out = a.values.sum(axis=axis)

    def bwd(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return Tensor(out, (a,), bwd)


def tmean(a, axis=None):
    a = _as_tensor(a)
    n = a.values.size if axis is None else a.shape[axis]
    s = tsum(a, axis=axis)
    return mul(s, 1.0 / n)


# ---------------------------------------------------------------------------
# convolution / pooling (valid padding, stride 1; 2x2 max pool)


def conv2d(x, w):
    """Valid-padding stride-1 convolution; x: (B,C,H,W), w: (F,C,kh,kw)."""
    x, w = _as_tensor(x), _as_tensor(w)
    _check_finite(x, w)
    if x.values.ndim != 4 or w.values.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: incompatible shapes {x.shape}, {w.shape}")
    kh, kw = w.shape[2], w.shape[3]
    if x.shape[2] < kh or x.shape[3] < kw:
        raise ShapeError("conv2d: kernel larger than input")
    windows = np.lib.stride_tricks.sliding_window_view(x.values, (kh, kw), axis=(2, 3))
    out = np.einsum("bchwij,fcij->bfhw", windows, w.values, optimize=True)

    def bwd(g):
        if w.requires_grad:
            _accumulate(w, np.einsum("bfhw,bchwij->fcij", g, windows, optimize=True))
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            gwin = np.lib.stride_tricks.sliding_window_view(gp, (kh, kw), axis=(2, 3))
            wflip = w.values[:, :, ::-1, ::-1]
            _accumulate(x, np.einsum("bfhwij,fcij->bchw", gwin, wflip, optimize=True))

    return Tensor(out, (x, w), bwd)


def max_pool2(x):
    """2x2 max pooling with stride 2; odd trailing rows/cols are cropped."""
    x = _as_tensor(x)
    _check_finite(x)
    if x.values.ndim != 4:
        raise ShapeError(f"max_pool2 expects 4-D input, got {x.shape}")
    b, c, h, w = x.shape
    h2, w2 = (h // 2) * 2, (w // 2) * 2
    v = x.values[:, :, :h2, :w2]
    blocks = v.reshape(b, c, h2 // 2, 2, w2 // 2, 2)
    out = blocks.max(axis=(3, 5))
    mask = blocks == out[:, :, :, None, :, None]
    # break ties deterministically: keep only the first max in each block
    flat = mask.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2 // 2, w2 // 2, 4)
    first = np.cumsum(flat, axis=-1) == 1
    mask = (flat & first).reshape(b, c, h2 // 2, w2 // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)

    def bwd(g):
        if x.requires_grad:
            gb = mask * g[:, :, :, None, :, None]
            full = np.zeros_like(x.values)
            full[:, :, :h2, :w2] = gb.reshape(b, c, h2, w2)
            _accumulate(x, full)

    return Tensor(out, (x,), bwd)


# ---------------------------------------------------------------------------
# Gaussian density ops (2-D actions)

_LOG_2PI = np.log(2.0 * np.pi)


def cov2_from_params(s1, s2, rho):
    """Assemble (...,2,2) SPD covariances from std devs and correlation.

    ``s1``, ``s2`` must be positive and ``rho`` in (-1, 1); callers get
    this from softplus / tanh heads.
    """
    s1, s2, rho = _as_tensor(s1), _as_tensor(s2), _as_tensor(rho)
    _check_finite(s1, s2, rho)
    if s1.shape != s2.shape or s1.shape != rho.shape:
        raise ShapeError("cov2_from_params: mismatched shapes")
    v1 = s1.values * s1.values
    v2 = s2.values * s2.values
    c = rho.values * s1.values * s2.values
    out = np.stack(
        [np.stack([v1, c], axis=-1), np.stack([c, v2], axis=-1)], axis=-2
    )

    def bwd(g):
        g11 = g[..., 0, 0]
        g22 = g[..., 1, 1]
        goff = g[..., 0, 1] + g[..., 1, 0]
        _accumulate(s1, 2.0 * g11 * s1.values + goff * rho.values * s2.values)
        _accumulate(s2, 2.0 * g22 * s2.values + goff * rho.values * s1.values)
        _accumulate(rho, goff * s1.values * s2.values)

    return Tensor(out, (s1, s2, rho), bwd)


def gaussian_log_density(x, mean, cov):
    """log N(x | mean, cov) for 2-D x; shapes (...,2), (...,2), (...,2,2)."""
    x, mean, cov = _as_tensor(x), _as_tensor(mean), _as_tensor(cov)
    _check_finite(x, mean, cov)
    if x.shape[-1] != 2 or cov.shape[-2:] != (2, 2):
        raise ShapeError(f"gaussian_log_density: bad shapes {x.shape}, {cov.shape}")
    a = cov.values[..., 0, 0]
    b = cov.values[..., 0, 1]
    d = cov.values[..., 1, 1]
    det = a * d - b * b
    if np.any(det <= 0) or np.any(a <= 0):
        raise NumericError("gaussian_log_density: covariance not SPD")
    diff = x.values - mean.values
    d0, d1 = diff[..., 0], diff[..., 1]
    # inverse of [[a,b],[b,d]] is [[d,-b],[-b,a]]/det
    i00 = d / det
    i01 = -b / det
    i11 = a / det
    s0 = i00 * d0 + i01 * d1
    s1 = i01 * d0 + i11 * d1
    quad = d0 * s0 + d1 * s1
    out = -_LOG_2PI - 0.5 * np.log(det) - 0.5 * quad

    def bwd(g):
        gd0 = -g * s0
        gd1 = -g * s1
        if x.requires_grad:
            _accumulate(x, np.stack([gd0, gd1], axis=-1))
        if mean.requires_grad:
            _accumulate(mean, np.stack([-gd0, -gd1], axis=-1))
        if cov.requires_grad:
            # d logp / d Sigma = 0.5 * (S s s^T S - S) with S = Sigma^{-1}
            c00 = 0.5 * (s0 * s0 - i00)
            c01 = 0.5 * (s0 * s1 - i01)
            c11 = 0.5 * (s1 * s1 - i11)
            gc = g[..., None, None] * np.stack(
                [np.stack([c00, c01], axis=-1), np.stack([c01, c11], axis=-1)],
                axis=-2,
            )
            _accumulate(cov, gc)

    return Tensor(out, (x, mean, cov), bwd)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss):
    """Populate grads of every parameter reachable from a scalar ``loss``."""
    if loss.values.shape != ():
        raise ContractError(f"backward expects a scalar loss, got shape {loss.values.shape}")
    if not np.isfinite(loss.values):
        raise NumericError("backward: non-finite loss")

    # iterative topological sort (graphs can be deep for long unrolls)
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node.parents:
            if p.node_id not in seen and p.requires_grad:
                stack.append((p, False))

    grads = {loss.node_id: np.ones(())}
    loss.grad = np.ones(()) if loss.grad is None else loss.grad + 1.0
    for node in reversed(order):
        if node._backward is None:
            continue
        g = _node_grad(node)
        if g is None:
            continue
        node._backward(g)


def _node_grad(node):
    return node.grad if node.grad is not None else None


# seed handling: backward() seeds loss.grad directly, intermediate nodes
# accumulate into .grad via _accumulate; parameters keep .grad after the pass.


# ---------------------------------------------------------------------------
# parameter groups, Adam, EMA


@dataclass
class ParamGroup:
    """Named set of parameters with Adam moment state."""

    name: str
    tensors: list[Tensor] = field(default_factory=list)
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step_count: int = 0

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(t.values) for t in self.tensors]
        if not self.v:
            self.v = [np.zeros_like(t.values) for t in self.tensors]
        for t, m in zip(self.tensors, self.m):
            if t.values.shape != m.shape:
                raise ShapeError(f"moment shape mismatch in group {self.name!r}")

    def zero_grad(self):
        for t in self.tensors:
            t.grad = None


def adam_step(groups, lr, betas=(0.9, 0.999), eps=1e-8):
    """Bias-corrected Adam update; consumes (zeroes) grads."""
    b1, b2 = betas
    for group in groups:
        for t in group.tensors:
            if not t.requires_grad:
                continue
            if t.grad is None:
                raise ContractError(
                    f"adam_step: missing grad for parameter {t.name!r} in group {group.name!r}"
                )
        group.step_count += 1
        k = group.step_count
        for t, m, v in zip(group.tensors, group.m, group.v):
            g = t.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**k)
            vhat = v / (1 - b2**k)
            t.values -= lr * mhat / (np.sqrt(vhat) + eps)
        group.zero_grad()


def ema_update(target: ParamGroup, source: ParamGroup, tau: float):
    """target <- (1 - tau) * target + tau * source."""
    if not 0.0 < tau <= 1.0:
        raise ContractError(f"ema_update: tau must be in (0, 1], got {tau}")
    if len(target.tensors) != len(source.tensors):
        raise ShapeError("ema_update: group size mismatch")
    for t, s in zip(target.tensors, source.tensors):
        if t.values.shape != s.values.shape:
            raise ShapeError("ema_update: parameter shape mismatch")
        t.values *= 1.0 - tau
        t.values += tau * s.values


# ---------------------------------------------------------------------------
# LSTM cell


class RecurrentCell:
    """Single-layer LSTM cell: gate order (input, forget, cell, output)."""

    def __init__(self, input_width, hidden_width, rng=None, name="lstm"):
        self.input_width = input_width
        self.hidden_width = hidden_width
        rng = rng if rng is not None else np.random.default_rng(0)
        scale = 1.0 / np.sqrt(input_width + hidden_width)
        self.w = parameter(
            rng.uniform(-scale, scale, (input_width + hidden_width, 4 * hidden_width)),
            name=f"{name}.w",
        )
        self.b = parameter(np.zeros(4 * hidden_width), name=f"{name}.b")
        # forget-gate bias 1.0 helps long unrolls keep memory early in training
        self.b.values[hidden_width : 2 * hidden_width] = 1.0

    def params(self):
        return [self.w, self.b]

    def zero_state(self, batch):
        h = tensor(np.zeros((batch, self.hidden_width)))
        c = tensor(np.zeros((batch, self.hidden_width)))
        return h, c


def recurrent_step(cell: RecurrentCell, x: Tensor, state):
    """One gated-recurrence update; differentiable through the state."""
    h, c = state
    x = _as_tensor(x)
    if x.shape[-1] != cell.input_width or h.shape[-1] != cell.hidden_width:
        raise ShapeError(
            f"recurrent_step: widths {x.shape[-1]}/{h.shape[-1]} vs "
            f"cell {cell.input_width}/{cell.hidden_width}"
        )
    z = add(matmul(concat([x, h], axis=-1), cell.w), cell.b)
    hw = cell.hidden_width
    i = sigmoid(z[:, 0:hw])
    f = sigmoid(z[:, hw : 2 * hw])
    g = tanh(z[:, 2 * hw : 3 * hw])
    o = sigmoid(z[:, 3 * hw : 4 * hw])
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


# ---------------------------------------------------------------------------
# checkpoint io

CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays: dict, meta: dict | None = None):
    """Write a name->array map plus JSON metadata; round-trips bit-exactly."""
    payload = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
    header = {"version": CHECKPOINT_VERSION, "meta": meta or {}}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("header.json", json.dumps(header, sort_keys=True))
        manifest = {}
        for k, arr in payload.items():
            key = f"arr/{len(manifest)}.bin"
            manifest[k] = {"file": key, "shape": list(arr.shape)}
            zf.writestr(key, arr.tobytes())
        zf.writestr("manifest.json", json.dumps(manifest, sort_keys=True))


def load_checkpoint(path):
    """Read back (arrays, meta) written by :func:`save_checkpoint`."""
    with zipfile.ZipFile(path, "r") as zf:
        header = json.loads(zf.read("header.json"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version {header.get('version')!r}")
        manifest = json.loads(zf.read("manifest.json"))
        arrays = {}
        for k, entry in manifest.items():
            raw = zf.read(entry["file"])
            arrays[k] = np.frombuffer(raw, dtype=np.float64).reshape(entry["shape"]).copy()
    return arrays, header.get("meta", {})
