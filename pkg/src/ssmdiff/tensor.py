"""Dense float64 tensors with a define-by-run reverse-mode tape.

A :class:`Tape` records every operation touching a tracked tensor as a node
whose parents precede it (creation order is already topological).  Calling
``tape.backward(loss)`` seeds the scalar root with 1.0 and sweeps the node
list in reverse, accumulating vector-Jacobian products; gradients of
``requires_grad`` leaves land on ``tensor.grad``.  The tape is rebuilt per
training step and is single-threaded; parallel work must own its own tape.

All values are C-contiguous float64.  Forward operations verify their output
is finite (a NaN/Inf result raises :class:`NumericError`); disable with
:func:`set_finite_checks` only for profiling.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

from . import fft
from .errors import ContractError, DimensionError, NumericError

_active_tape: Optional["Tape"] = None
_finite_checks = True


def set_finite_checks(enabled: bool) -> None:
    global _finite_checks
    _finite_checks = enabled


class suspend_finite_checks:
    """Skip per-op finiteness scans inside a hot loop.

    The caller owns validating its boundary values (losses, sampler states);
    NaN/Inf still propagates to those, so the error state cannot go unseen.
    """

    def __enter__(self):
        global _finite_checks
        self._saved = _finite_checks
        _finite_checks = False
        return self

    def __exit__(self, *exc):
        global _finite_checks
        _finite_checks = self._saved
        return False


def ensure_finite(data: np.ndarray, what: str) -> None:
    """Raise :class:`NumericError` if ``data`` contains NaN/Inf."""
    if not math.isfinite(float(np.sum(data))):
        raise NumericError(f"non-finite values in {what}")


def _check_finite(data: np.ndarray, op: str) -> None:
    if _finite_checks and not math.isfinite(float(np.sum(data))):
        raise NumericError(f"non-finite values produced by '{op}'")


class Tensor:
    """An n-dimensional float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node_id = -1
        self.tape: Optional[Tape] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    # Operator sugar; every path funnels into the module-level ops.
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

    def __getitem__(self, key):
        return narrow(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


class _Node:
    __slots__ = ("parents", "vjp", "tensor")

    def __init__(self, parents, vjp, tensor):
        self.parents = parents  # node indices, each < this node's index
        self.vjp = vjp  # grad_out -> tuple of parent grads (None = no flow)
        self.tensor = tensor


class Tape:
    """Ordered record of operations; parents always precede their consumers."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.gradients: list[Optional[np.ndarray]] = []

    def __enter__(self) -> "Tape":
        global _active_tape
        if _active_tape is not None:
            raise ContractError("tapes do not nest; close the active tape first")
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = None
        return False

    def _index_of(self, t: Tensor) -> int:
        """Node index of ``t``, registering it as a leaf on first use."""
        if t.tape is self and t.node_id >= 0:
            return t.node_id
        node = _Node((), None, t)
        self.nodes.append(node)
        t.tape = self
        t.node_id = len(self.nodes) - 1
        return t.node_id

    def record(self, out: Tensor, parents: Sequence[Tensor], vjp: Callable) -> None:
        ids = tuple(self._index_of(p) for p in parents)
        self.nodes.append(_Node(ids, vjp, out))
        out.tape = self
        out.node_id = len(self.nodes) - 1

    def backward(self, root: Tensor) -> None:
        """Populate ``gradients`` per node and ``.grad`` on requires_grad leaves."""
        if root.tape is not self or root.node_id < 0:
            raise ContractError("backward root is not on this tape")
        if root.data.size != 1:
            raise ContractError(f"backward root must be scalar, got shape {root.shape}")
        grads: list[Optional[np.ndarray]] = [None] * len(self.nodes)
        grads[root.node_id] = np.ones_like(root.data)
        for idx in range(root.node_id, -1, -1):
            g = grads[idx]
            node = self.nodes[idx]
            if g is None or node.vjp is None:
                continue
            for pid, contrib in zip(node.parents, node.vjp(g)):
                if contrib is None:
                    continue
                if grads[pid] is None:
                    grads[pid] = contrib
                else:
                    grads[pid] = grads[pid] + contrib
        self.gradients = grads
        for node in self.nodes:
            if node.vjp is None and node.tensor.requires_grad:
                g = grads[node.tensor.node_id]
                if g is None:
                    continue
                if node.tensor.grad is None:
                    node.tensor.grad = g.copy()
                else:
                    node.tensor.grad += g

    def release(self) -> None:
        """Drop the recorded graph so intermediates free immediately.

        Leaf gradients survive on the tensors; the tape itself becomes
        unusable.  Persistent leaves may still point here until their next
        use registers them on a fresh tape, so an unreleased tape would pin
        a whole step's intermediates.
        """
        self.nodes.clear()
        self.gradients = []


class no_grad:
    """Context manager suspending tape recording."""

    def __enter__(self):
        global _active_tape
        self._saved = _active_tape
        _active_tape = None
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = self._saved
        return False


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(t: Tensor) -> bool:
    if _active_tape is None:
        return False
    return t.requires_grad or (t.tape is _active_tape and t.node_id >= 0)


def _apply(op: str, out_data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Build the result tensor, recording a node when gradients can flow."""
    _check_finite(out_data, op)
    live = [p for p in parents if _tracked(p)]
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.node_id = -1
    out.tape = None
    out.requires_grad = bool(live)
    if live:
        _active_tape.record(out, parents, vjp)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _apply("add", out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _apply("sub", out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _apply("mul", out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _apply("neg", -a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    """Elementwise ``a ** exponent`` for a constant exponent."""
    a = as_tensor(a)
    out = a.data**exponent

    def vjp(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _apply("power", out, (a,), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _apply("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _apply("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _apply("sqrt", out, (a,), lambda g: (g * (0.5 / out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _apply("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _apply("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def swish(a) -> Tensor:
    """x * sigmoid(x)."""
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * s

    def vjp(g):
        return (g * (s + a.data * s * (1.0 - s)),)

    return _apply("swish", out, (a,), vjp)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return _apply("relu", out, (a,), lambda g: (g * (a.data > 0.0),))


# ---------------------------------------------------------------------------
# contractions

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}"
        )
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _apply("matmul", out, (a, b), vjp)


def einsum2(spec: str, a, b) -> Tensor:
    """Two-operand einsum whose adjoints are einsums of the same letters.

    Every index of each operand must appear in the output or in the other
    operand (no index summed within a single factor), and letters may not
    repeat inside one operand.
    """
    a, b = as_tensor(a), as_tensor(b)
    lhs, out_idx = spec.replace(" ", "").split("->")
    ia, ib = lhs.split(",")
    if len(set(ia)) != len(ia) or len(set(ib)) != len(ib):
        raise DimensionError(f"einsum2 does not support repeated indices: '{spec}'")
    if not (set(ia) <= set(ib) | set(out_idx) and set(ib) <= set(ia) | set(out_idx)):
        raise DimensionError(f"einsum2 cannot differentiate '{spec}'")
    out = np.einsum(spec, a.data, b.data)

    def vjp(g):
        ga = np.einsum(f"{out_idx},{ib}->{ia}", g, b.data)
        gb = np.einsum(f"{out_idx},{ia}->{ib}", g, a.data)
        return ga, gb

    return _apply("einsum2", out, (a, b), vjp)


def bmm(a, b) -> Tensor:
    """Batched matrix product over the last two axes: (H, m, k) x (H, k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[:-2] != b.data.shape[:-2] or a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"bmm shapes disagree: {a.data.shape} x {b.data.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        return (
            np.matmul(g, b.data.swapaxes(-1, -2)),
            np.matmul(a.data.swapaxes(-1, -2), g),
        )

    return _apply("bmm", out, (a, b), vjp)


def bmv(a, x) -> Tensor:
    """Batched matrix-vector product: (H, m, n) x (H, n) -> (H, m)."""
    a, x = as_tensor(a), as_tensor(x)
    if a.data.shape[:-2] != x.data.shape[:-1] or a.data.shape[-1] != x.data.shape[-1]:
        raise DimensionError(f"bmv shapes disagree: {a.data.shape} x {x.data.shape}")
    out = np.matmul(a.data, x.data[..., None])[..., 0]

    def vjp(g):
        ga = g[..., :, None] * x.data[..., None, :]
        gx = np.matmul(a.data.swapaxes(-1, -2), g[..., None])[..., 0]
        return ga, gx

    return _apply("bmv", out, (a, x), vjp)


def channel_linear(x, weight, bias=None) -> Tensor:
    """Pointwise (1x1) channel map: (B, C_in, L) x (C_out, C_in) -> (B, C_out, L)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 3 or weight.data.ndim != 2 or x.data.shape[1] != weight.data.shape[1]:
        raise DimensionError(
            f"channel_linear shapes disagree: x {x.data.shape}, weight {weight.data.shape}"
        )
    out = np.matmul(weight.data, x.data)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[:, None]

        def vjp(g):
            gx = np.matmul(weight.data.T, g)
            gw = np.tensordot(g, x.data, axes=([0, 2], [0, 2]))
            return gx, gw, g.sum(axis=(0, 2))

        return _apply("channel_linear", out, (x, weight, bias), vjp)

    def vjp_nobias(g):
        gx = np.matmul(weight.data.T, g)
        gw = np.tensordot(g, x.data, axes=([0, 2], [0, 2]))
        return gx, gw

    return _apply("channel_linear", out, (x, weight), vjp_nobias)


# ---------------------------------------------------------------------------
# reductions and shape ops

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gx = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gx, a.data.shape).copy(),)

    return _apply("sum", np.asarray(out), (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return _apply("reshape", out, (a,), vjp)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    out = a.data.transpose(axes)
    inverse_axes = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inverse_axes),)

    return _apply("transpose", out, (a,), vjp)


def narrow(a, key) -> Tensor:
    """Basic slicing (no fancy indexing); gradient scatters back into place."""
    a = as_tensor(a)
    out = a.data[key]

    def vjp(g):
        gx = np.zeros_like(a.data)
        gx[key] = g
        return (gx,)

    return _apply("narrow", out, (a,), vjp)


def flip(a, axis: int) -> Tensor:
    a = as_tensor(a)
    out = np.flip(a.data, axis=axis)

    def vjp(g):
        return (np.flip(g, axis=axis),)

    return _apply("flip", out, (a,), vjp)


def concat(tensors: Sequence, axis: int) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        grads = []
        for i in range(len(parts)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return _apply("concat", out, parts, vjp)


def layer_norm(x, gain, bias, axis: int = 1, eps: float = 1e-5) -> Tensor:
    """Normalize over ``axis``; affine parameters broadcast along it."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    size = x.data.shape[axis]
    mu = x.data.mean(axis=axis, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normalized = centered * inv
    out = normalized * gain.data + bias.data

    def vjp(g):
        g_gain = _unbroadcast(g * normalized, gain.data.shape)
        g_bias = _unbroadcast(g, bias.data.shape)
        gn = g * gain.data
        # standard layer-norm adjoint over the normalized axis
        gx = inv * (
            gn
            - gn.mean(axis=axis, keepdims=True)
            - normalized * np.mean(gn * normalized, axis=axis, keepdims=True)
        )
        return gx, g_gain, g_bias

    return _apply("layer_norm", out, (x, gain, bias), vjp)


def mirror_stack(a) -> Tensor:
    """(B, H, L) -> (B, 2H, L): the input stacked over its time reversal."""
    a = as_tensor(a)
    if a.data.ndim != 3:
        raise DimensionError(f"mirror_stack expects (B, H, L), got {a.data.shape}")
    b, h, length = a.data.shape
    out = np.empty((b, 2 * h, length))
    out[:, :h] = a.data
    out[:, h:] = a.data[..., ::-1]

    def vjp(g):
        return (g[:, :h] + g[:, h:, ::-1],)

    return _apply("mirror_stack", out, (a,), vjp)


def mirror_merge(a) -> Tensor:
    """(B, 2H, L) -> (B, 2H, L): second half re-reversed in time.

    Companion of :func:`mirror_stack`; restores the backward direction's
    output to forward time order before the 2H -> H projection.
    """
    a = as_tensor(a)
    if a.data.ndim != 3 or a.data.shape[1] % 2 != 0:
        raise DimensionError(f"mirror_merge expects (B, 2H, L), got {a.data.shape}")
    h = a.data.shape[1] // 2
    out = np.empty_like(a.data)
    out[:, :h] = a.data[:, :h]
    out[:, h:] = a.data[:, h:, ::-1]

    def vjp(g):
        gx = np.empty_like(a.data)
        gx[:, :h] = g[:, :h]
        gx[:, h:] = g[:, h:, ::-1]
        return (gx,)

    return _apply("mirror_merge", out, (a,), vjp)


def add_impulse(kernel, amount) -> Tensor:
    """Add ``amount`` to the t=0 tap of each kernel row: (H, L) + (H,).

    Folding a feedthrough D u into the convolution kernel this way saves two
    full passes over the sequence batch.
    """
    kernel, amount = as_tensor(kernel), as_tensor(amount)
    if kernel.data.ndim != 2 or amount.data.shape != (kernel.data.shape[0],):
        raise DimensionError(
            f"add_impulse shapes disagree: {kernel.data.shape} vs {amount.data.shape}"
        )
    out = kernel.data.copy()
    out[:, 0] += amount.data

    def vjp(g):
        return g, g[:, 0].copy()

    return _apply("add_impulse", out, (kernel, amount), vjp)


def gated_tanh(a) -> Tensor:
    """tanh of the first channel half times sigmoid of the second half.

    (B, 2C, L) -> (B, C, L); one node instead of slice/tanh/sigmoid/mul.
    """
    a = as_tensor(a)
    half = a.data.shape[1] // 2
    if a.data.ndim != 3 or a.data.shape[1] != 2 * half:
        raise DimensionError(f"gated_tanh needs an even channel count, got {a.data.shape}")
    t = np.tanh(a.data[:, :half])
    s = 1.0 / (1.0 + np.exp(-a.data[:, half:]))
    out = t * s

    def vjp(g):
        gx = np.empty_like(a.data)
        gx[:, :half] = g * s * (1.0 - t * t)
        gx[:, half:] = g * t * s * (1.0 - s)
        return (gx,)

    return _apply("gated_tanh", out, (a,), vjp)


# ---------------------------------------------------------------------------
# FFT convolution

def causal_conv(signal, kernel) -> Tensor:
    """Causal convolution along the last axis via zero-padded real FFTs.

    ``signal``: (..., C, L); ``kernel``: (C, L) shared across leading axes.
    Both adjoints are cross-correlations against the incoming gradient,
    computed as conjugate products on the padded spectra cached from the
    forward pass.
    """
    signal, kernel = as_tensor(signal), as_tensor(kernel)
    if kernel.data.ndim != 2:
        raise DimensionError(f"kernel must be (C, L), got {kernel.data.shape}")
    if signal.data.shape[-2:] != kernel.data.shape:
        raise DimensionError(
            f"signal {signal.data.shape} does not match kernel {kernel.data.shape}"
        )
    length = signal.data.shape[-1]
    padded = fft.next_pow2(2 * length)
    kernel_spec = np.fft.rfft(kernel.data, n=padded, axis=-1)
    signal_spec = np.fft.rfft(signal.data, n=padded, axis=-1)
    out = np.fft.irfft(kernel_spec * signal_spec, n=padded, axis=-1)[..., :length]

    def vjp(g):
        grad_spec = np.fft.rfft(g, n=padded, axis=-1)
        gs = np.fft.irfft(np.conj(kernel_spec) * grad_spec, n=padded, axis=-1)[..., :length]
        k_spec = np.conj(signal_spec) * grad_spec
        if k_spec.ndim > 2:  # batch reduction in the frequency domain
            k_spec = k_spec.sum(axis=tuple(range(k_spec.ndim - 2)))
        gk = np.fft.irfft(k_spec, n=padded, axis=-1)[..., :length]
        return gs, gk

    return _apply("causal_conv", out, (signal, kernel), vjp)


# ---------------------------------------------------------------------------
# linear algebra

def inverse(a) -> Tensor:
    """Batched matrix inverse over the last two axes."""
    a = as_tensor(a)
    if a.data.shape[-1] != a.data.shape[-2]:
        raise DimensionError(f"inverse needs square matrices, got {a.data.shape}")
    try:
        out = np.linalg.inv(a.data)
    except np.linalg.LinAlgError as err:
        raise NumericError(f"singular matrix in inverse: {err}") from err

    def vjp(g):
        t = out.swapaxes(-1, -2)
        return (-np.matmul(t, np.matmul(g, t)),)

    return _apply("inverse", out, (a,), vjp)
