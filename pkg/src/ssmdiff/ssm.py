"""Structured state-space layers.

A single head is a SISO linear system x'(t) = A x(t) + B u(t),
y(t) = C x(t) + D u(t) with A fixed to the scaled-Legendre (HiPPO-LegS)
matrix.  Discretizing with the bilinear transform at a learned step size
turns it into a stable recurrence whose impulse response, unrolled to the
sequence length, lets the whole head run as one causal convolution.

Two evaluation routes are kept deliberately: the FFT convolution used in
layers, and the literal state recurrence that serves as its correctness
oracle.  The differentiable layer path batches all heads of a layer; its
kernels are cross-checked against the per-head functions in tests.

A and B stay frozen at their HiPPO values; C, the log step size, the
feedthrough D, the layer norm and the bidirectional output projection are
the trainable parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, NumericError
from .fft import causal_conv_values
from .rng import Rng
from .tensor import (
    Tensor,
    _apply,
    add,
    add_impulse,
    bmm,
    bmv,
    causal_conv,
    channel_linear,
    concat,
    exp,
    layer_norm,
    mirror_merge,
    mirror_stack,
    mul,
    reshape,
    sub,
)

# ---------------------------------------------------------------------------
# initialization


def hippo_legs(state_dim: int) -> np.ndarray:
    """Scaled-Legendre transition matrix.

    Entry (n, k) is -sqrt(2n+1)*sqrt(2k+1) below the diagonal, -(n+1) on it,
    zero above; lower-triangular with spectrum {-1, ..., -state_dim}.
    """
    if state_dim < 1:
        raise DomainError(f"state dimension must be >= 1, got {state_dim}")
    n = np.arange(state_dim)
    root = np.sqrt(2.0 * n + 1.0)
    a = -np.outer(root, root)
    a = np.tril(a, k=-1) + np.diag(-(n + 1.0))
    return a


def hippo_input_map(state_dim: int) -> np.ndarray:
    """Input column paired with :func:`hippo_legs`: b_n = sqrt(2n+1)."""
    if state_dim < 1:
        raise DomainError(f"state dimension must be >= 1, got {state_dim}")
    return np.sqrt(2.0 * np.arange(state_dim) + 1.0).reshape(-1, 1)


# ---------------------------------------------------------------------------
# single-head value-level systems (the oracle-facing surface)


@dataclass
class SsmContinuous:
    """Continuous-time SISO system (A, B, C, D) with step size exp(log_delta)."""

    a: np.ndarray  # (N, N)
    b: np.ndarray  # (N, 1)
    c: np.ndarray  # (1, N)
    d: float = 0.0
    log_delta: float = math.log(1e-2)

    @property
    def delta(self) -> float:
        return math.exp(self.log_delta)


@dataclass
class SsmDiscrete:
    """Bilinear discretization of an :class:`SsmContinuous`."""

    a_bar: np.ndarray  # (N, N)
    b_bar: np.ndarray  # (N, 1)
    c_bar: np.ndarray  # (1, N)


@dataclass
class SsmKernel:
    """Unrolled impulse response (C_bar B_bar, C_bar A_bar B_bar, ...)."""

    k_bar: np.ndarray  # (L,)


def discretize_bilinear(ssm: SsmContinuous, delta: float) -> SsmDiscrete:
    """Bilinear transform: A_bar = (I - d/2 A)^-1 (I + d/2 A), B_bar = (I - d/2 A)^-1 d B."""
    if delta <= 0:
        raise DomainError(f"step size must be positive, got {delta}")
    a = np.asarray(ssm.a, dtype=np.float64)
    eye = np.eye(a.shape[0])
    minus = eye - 0.5 * delta * a
    cond = np.linalg.cond(minus)
    if not np.isfinite(cond) or cond > 1e14:
        raise NumericError(
            f"system matrix near-singular under bilinear transform "
            f"(condition estimate {cond:.3e})"
        )
    a_bar = np.linalg.solve(minus, eye + 0.5 * delta * a)
    b_bar = np.linalg.solve(minus, delta * np.asarray(ssm.b, dtype=np.float64))
    return SsmDiscrete(a_bar=a_bar, b_bar=b_bar, c_bar=np.asarray(ssm.c, dtype=np.float64))


def materialize_kernel(d: SsmDiscrete, length: int) -> SsmKernel:
    """Unroll the impulse response by propagating v <- A_bar v (no matrix powers)."""
    if length < 1:
        raise DomainError(f"kernel length must be >= 1, got {length}")
    v = d.b_bar[:, 0].copy()
    c = d.c_bar[0]
    k = np.empty(length)
    for i in range(length):
        k[i] = c @ v
        v = d.a_bar @ v
    return SsmKernel(k_bar=k)


def apply_convolutional(k: SsmKernel, u: np.ndarray, d_feedthrough: float = 0.0) -> np.ndarray:
    """Run the head as a causal FFT convolution plus the D u feedthrough."""
    u = np.asarray(u, dtype=np.float64)
    if k.k_bar.shape[-1] != u.shape[-1]:
        raise DimensionError(
            f"kernel length {k.k_bar.shape[-1]} != input length {u.shape[-1]}"
        )
    return causal_conv_values(k.k_bar, u) + d_feedthrough * u


def apply_recurrent(d: SsmDiscrete, u: np.ndarray, d_feedthrough: float = 0.0) -> np.ndarray:
    """Run the head as the literal recurrence x_k = A_bar x_{k-1} + B_bar u_k.

    Exact by construction; the correctness oracle for the convolutional path.
    """
    u = np.asarray(u, dtype=np.float64)
    state = np.zeros(d.a_bar.shape[0])
    b = d.b_bar[:, 0]
    c = d.c_bar[0]
    y = np.empty_like(u)
    for i in range(u.shape[-1]):
        state = d.a_bar @ state + b * u[i]
        y[i] = c @ state + d_feedthrough * u[i]
    return y


# ---------------------------------------------------------------------------
# batched differentiable kernel (all heads of one layer at once)


def ssm_kernel_batch(a_bar: Tensor, b_bar: Tensor, c: Tensor, length: int) -> Tensor:
    """Kernels k[h, i] = c[h] . a_bar[h]^i b_bar[h] for a bank of heads.

    Forward propagates the bank state step by step; the custom adjoint runs
    the same recursion in reverse, so no explicit matrix powers appear in
    either direction.
    """
    if length < 1:
        raise DomainError(f"kernel length must be >= 1, got {length}")
    heads, state_dim = b_bar.data.shape
    states = np.empty((heads, length, state_dim))
    v = b_bar.data[..., None]
    a = a_bar.data
    for i in range(length):
        states[:, i, :] = v[..., 0]
        v = a @ v
    kernels = np.matmul(states, c.data[..., None])[..., 0]  # (H, L)

    def vjp(g):
        grad_c = np.matmul(g[:, None, :], states)[:, 0, :]
        # adjoints of the states, by the reversed recursion
        adjoints = np.empty_like(states)
        adj = (g[:, -1:] * c.data)[..., None]
        a_t = a.swapaxes(1, 2)
        adjoints[:, length - 1] = adj[..., 0]
        for i in range(length - 2, -1, -1):
            adj = a_t @ adj
            adj[..., 0] += g[:, i : i + 1] * c.data
            adjoints[:, i] = adj[..., 0]
        # v_{i+1} = A v_i  =>  grad_A = sum_i adjoint_{i+1} outer v_i
        grad_a = np.matmul(adjoints[:, 1:].swapaxes(1, 2), states[:, :-1])
        return grad_a, adjoints[:, 0].copy(), grad_c

    return _apply("ssm_kernel", kernels, (a_bar, b_bar, c), vjp)


def materialize_head_kernels(c: Tensor, log_delta: Tensor, d: Tensor,
                             a: Tensor, b: Tensor, eye: Tensor,
                             length: int, include_feedthrough: bool = True) -> Tensor:
    """Discretize a bank of heads at their current step sizes and unroll.

    The feedthrough D is folded into the t=0 kernel tap (convolving with the
    augmented kernel equals convolving with the plain one plus D u).
    """
    heads = c.data.shape[0]
    delta = exp(log_delta)
    half = reshape(mul(delta, 0.5), (heads, 1, 1))
    scaled_a = mul(half, a)
    minus = sub(eye, scaled_a)
    plus = add(eye, scaled_a)
    inv = _inverse_checked(minus)
    a_bar = bmm(inv, plus)
    b_bar = bmv(inv, mul(reshape(delta, (heads, 1)), b))
    kernels = ssm_kernel_batch(a_bar, b_bar, c, length)
    if include_feedthrough:
        kernels = add_impulse(kernels, d)
    return kernels


def kernel_bank(layers, length: int) -> list:
    """Materialize the kernels of several layers in one batched unroll.

    All layers must share the state dimension; per-layer kernels come back
    as row slices, so gradients flow to each layer's own parameters.
    """
    layers = list(layers)
    if len(layers) == 1:
        return [layers[0].kernels(length)]
    dims = {layer.state_dim for layer in layers}
    if len(dims) != 1:
        raise DimensionError(f"kernel_bank needs one shared state dim, got {dims}")
    ref = layers[0]
    c = concat([layer.c for layer in layers], axis=0)
    log_delta = concat([layer.log_delta for layer in layers], axis=0)
    d = concat([layer.d for layer in layers], axis=0)
    stacked = materialize_head_kernels(c, log_delta, d, ref.a, ref.b, ref._eye,
                                       length)
    out = []
    offset = 0
    for layer in layers:
        heads = layer.c.data.shape[0]
        out.append(stacked[offset : offset + heads])
        offset += heads
    return out


# ---------------------------------------------------------------------------
# the layer


class S4Layer:
    """Bank of SISO state-space heads behind channel layer norm.

    Input and output are (batch, channels, length).  Each channel owns one
    head per direction; bidirectional layers run a second bank over the
    time-reversed sequence and merge the two maps with a trainable
    2H -> H pointwise projection.
    """

    def __init__(self, channels: int, state_dim: int, bidirectional: bool = True,
                 rng: Rng | None = None, delta_range: tuple = (1e-3, 1e-1)):
        if channels < 1 or state_dim < 1:
            raise DomainError("channels and state_dim must be >= 1")
        rng = rng if rng is not None else Rng(0)
        self.channels = channels
        self.state_dim = state_dim
        self.bidirectional = bidirectional
        heads = 2 * channels if bidirectional else channels

        self.a = Tensor(hippo_legs(state_dim))  # frozen
        self.b = Tensor(hippo_input_map(state_dim)[:, 0])  # frozen
        self._eye = Tensor(np.eye(state_dim))

        lo, hi = math.log(delta_range[0]), math.log(delta_range[1])
        self.c = Tensor(rng.normal((heads, state_dim)) / math.sqrt(state_dim),
                        requires_grad=True)
        self.log_delta = Tensor(lo + (hi - lo) * rng.uniform((heads,)),
                                requires_grad=True)
        self.d = Tensor(np.ones(heads), requires_grad=True)
        self.gain = Tensor(np.ones((channels, 1)), requires_grad=True)
        self.bias = Tensor(np.zeros((channels, 1)), requires_grad=True)
        if bidirectional:
            scale = 1.0 / math.sqrt(2 * channels)
            self.proj_w = Tensor(rng.normal((channels, 2 * channels)) * scale,
                                 requires_grad=True)
            self.proj_b = Tensor(np.zeros(channels), requires_grad=True)

    def parameters(self) -> list:
        params = [("c", self.c), ("log_delta", self.log_delta), ("d", self.d),
                  ("ln_gain", self.gain), ("ln_bias", self.bias)]
        if self.bidirectional:
            params += [("proj_w", self.proj_w), ("proj_b", self.proj_b)]
        return params

    def kernels(self, length: int, include_feedthrough: bool = True) -> Tensor:
        """Materialize all head kernels from the current C and step sizes."""
        return materialize_head_kernels(self.c, self.log_delta, self.d, self.a,
                                        self.b, self._eye, length,
                                        include_feedthrough)

    def forward(self, x: Tensor, kernel: Tensor | None = None) -> Tensor:
        """Run the layer; ``kernel`` may be precomputed via :func:`kernel_bank`."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.data.ndim != 3 or x.data.shape[1] != self.channels:
            raise DimensionError(
                f"expected (batch, {self.channels}, length), got {x.data.shape}"
            )
        length = x.data.shape[2]
        xn = layer_norm(x, self.gain, self.bias, axis=1)
        u = mirror_stack(xn) if self.bidirectional else xn
        k = kernel if kernel is not None else self.kernels(length)
        y = causal_conv(u, k)
        if self.bidirectional:
            y = channel_linear(mirror_merge(y), self.proj_w, self.proj_b)
        return y

    __call__ = forward


def _inverse_checked(m: Tensor) -> Tensor:
    from .tensor import inverse

    try:
        return inverse(m)
    except NumericError as err:
        cond = float(np.max(np.linalg.cond(m.data)))
        raise NumericError(
            f"bilinear discretization failed (condition estimate {cond:.3e})"
        ) from err
