"""The conditional denoiser: residual stack of state-space layers.

Input (batch, K, L) is lifted to ``residual_channels`` by a pointwise
convolution; each residual block adds a projected diffusion-step embedding,
runs an S4 layer, doubles channels pointwise, injects the projected
conditioning (masked signal + mask, 2K channels), optionally runs a second
S4 layer, gates with tanh * sigmoid, and splits into residual and skip
paths.  Skips are summed, scaled by 1/sqrt(n_blocks), and projected back to
K channels; the final projection is zero-initialized so an untrained model
predicts exactly zero.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .rng import Rng
from .ssm import S4Layer, kernel_bank
from .tensor import (
    Tensor,
    add,
    channel_linear,
    gated_tanh,
    matmul,
    mul,
    relu,
    reshape,
    swish,
)


@dataclass
class ModelConfig:
    """Structural hyperparameters of the denoiser."""

    residual_layers: int = 36
    residual_channels: int = 256
    skip_channels: int = 256
    embed_dims: tuple = (128, 512, 512)
    s4_state_dim: int = 64
    bidirectional: bool = True
    second_s4: bool = True
    in_channels: int = 12
    length: int = 256

    def __post_init__(self):
        self.embed_dims = tuple(self.embed_dims)
        if len(self.embed_dims) != 3:
            raise ConfigError("embed_dims must be a (d1, d2, d3) triple")
        if min(self.residual_layers, self.residual_channels, self.skip_channels,
               self.s4_state_dim, self.in_channels, self.length) < 1:
            raise ConfigError("all model dimensions must be >= 1")
        if self.embed_dims[0] % 2 != 0:
            raise ConfigError("first embedding dimension must be even")

    @classmethod
    def reference(cls, in_channels: int, length: int) -> "ModelConfig":
        """Full-scale configuration."""
        return cls(36, 256, 256, (128, 512, 512), 64, True, True, in_channels, length)

    @classmethod
    def desk(cls, in_channels: int, length: int) -> "ModelConfig":
        """Laptop-scale configuration keeping every structural element."""
        return cls(4, 64, 64, (64, 128, 128), 16, True, True, in_channels, length)


def step_encoding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal encoding of integer diffusion steps: half sines, half
    cosines over geometrically spaced frequencies."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    exponent = np.arange(half) * (4.0 / max(half - 1, 1))
    angles = t[:, None] * 10.0**exponent[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


class StepEmbedding:
    """Three-layer diffusion-step embedding: sinusoid, then two swish-gated
    linear maps d1 -> d2 -> d3."""

    def __init__(self, dims: tuple, rng: Rng):
        d1, d2, d3 = dims
        self.dims = dims
        self.w1 = Tensor(rng.normal((d1, d2)) / math.sqrt(d1), requires_grad=True)
        self.b1 = Tensor(np.zeros(d2), requires_grad=True)
        self.w2 = Tensor(rng.normal((d2, d3)) / math.sqrt(d2), requires_grad=True)
        self.b2 = Tensor(np.zeros(d3), requires_grad=True)

    def parameters(self) -> list:
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]

    def forward(self, t: np.ndarray) -> Tensor:
        enc = Tensor(step_encoding(t, self.dims[0]))
        h = swish(add(matmul(enc, self.w1), self.b1))
        return swish(add(matmul(h, self.w2), self.b2))


class ResidualBlock:
    """One gated residual block with one or two S4 layers."""

    def __init__(self, cfg: ModelConfig, rng: Rng):
        c_res = cfg.residual_channels
        d3 = cfg.embed_dims[2]
        cond_ch = 2 * cfg.in_channels
        self.second_s4 = cfg.second_s4
        self.embed_w = Tensor(rng.normal((d3, c_res)) / math.sqrt(d3), requires_grad=True)
        self.embed_b = Tensor(np.zeros(c_res), requires_grad=True)
        self.s4_a = S4Layer(c_res, cfg.s4_state_dim, cfg.bidirectional, rng)
        self.mid_w = Tensor(rng.normal((2 * c_res, c_res)) / math.sqrt(c_res),
                            requires_grad=True)
        self.mid_b = Tensor(np.zeros(2 * c_res), requires_grad=True)
        self.cond_w = Tensor(rng.normal((2 * c_res, cond_ch)) / math.sqrt(cond_ch),
                             requires_grad=True)
        self.cond_b = Tensor(np.zeros(2 * c_res), requires_grad=True)
        self.s4_b = (S4Layer(2 * c_res, cfg.s4_state_dim, cfg.bidirectional, rng)
                     if cfg.second_s4 else None)
        # single output projection, stored as its residual and skip halves
        self.out_res_w = Tensor(rng.normal((c_res, c_res)) / math.sqrt(c_res),
                                requires_grad=True)
        self.out_res_b = Tensor(np.zeros(c_res), requires_grad=True)
        self.out_skip_w = Tensor(rng.normal((cfg.skip_channels, c_res)) / math.sqrt(c_res),
                                 requires_grad=True)
        self.out_skip_b = Tensor(np.zeros(cfg.skip_channels), requires_grad=True)
        self._c_res = c_res

    def s4_layers(self) -> list:
        return [self.s4_a] if self.s4_b is None else [self.s4_a, self.s4_b]

    def parameters(self) -> list:
        params = [("embed_w", self.embed_w), ("embed_b", self.embed_b)]
        params += [(f"s4_a.{n}", p) for n, p in self.s4_a.parameters()]
        params += [("mid_w", self.mid_w), ("mid_b", self.mid_b),
                   ("cond_w", self.cond_w), ("cond_b", self.cond_b)]
        if self.s4_b is not None:
            params += [(f"s4_b.{n}", p) for n, p in self.s4_b.parameters()]
        params += [("out_res_w", self.out_res_w), ("out_res_b", self.out_res_b),
                   ("out_skip_w", self.out_skip_w), ("out_skip_b", self.out_skip_b)]
        return params

    def forward(self, h: Tensor, embed: Tensor, cond: Tensor, kernels=None):
        c_res = self._c_res
        step = add(matmul(embed, self.embed_w), self.embed_b)
        y = add(h, reshape(step, (step.data.shape[0], c_res, 1)))
        y = self.s4_a.forward(y, kernels[0] if kernels else None)
        y = channel_linear(y, self.mid_w, self.mid_b)
        y = add(y, channel_linear(cond, self.cond_w, self.cond_b))
        if self.s4_b is not None:
            y = self.s4_b.forward(y, kernels[1] if kernels else None)
        gate = gated_tanh(y)
        residual = add(h, channel_linear(gate, self.out_res_w, self.out_res_b))
        skip = channel_linear(gate, self.out_skip_w, self.out_skip_b)
        return residual, skip


class Denoiser:
    """Noise-prediction network eps(x_t, t, c) over (batch, K, L) series."""

    def __init__(self, cfg: ModelConfig, rng: Rng | None = None):
        rng = rng if rng is not None else Rng(0)
        self.cfg = cfg
        k, c_res, skip = cfg.in_channels, cfg.residual_channels, cfg.skip_channels
        self.in_w = Tensor(rng.normal((c_res, k)) * math.sqrt(2.0 / k), requires_grad=True)
        self.in_b = Tensor(np.zeros(c_res), requires_grad=True)
        self.embedding = StepEmbedding(cfg.embed_dims, rng)
        self.blocks = [ResidualBlock(cfg, rng) for _ in range(cfg.residual_layers)]
        self.skip_w = Tensor(rng.normal((skip, skip)) * math.sqrt(2.0 / skip),
                             requires_grad=True)
        self.skip_b = Tensor(np.zeros(skip), requires_grad=True)
        self.out_w = Tensor(np.zeros((k, skip)), requires_grad=True)
        self.out_b = Tensor(np.zeros(k), requires_grad=True)

    def parameters(self) -> list:
        params = [("in_w", self.in_w), ("in_b", self.in_b)]
        params += [(f"embedding.{n}", p) for n, p in self.embedding.parameters()]
        for i, block in enumerate(self.blocks):
            params += [(f"block{i}.{n}", p) for n, p in block.parameters()]
        params += [("skip_w", self.skip_w), ("skip_b", self.skip_b),
                   ("out_w", self.out_w), ("out_b", self.out_b)]
        return params

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.grad = None

    def parameter_count(self) -> int:
        return sum(p.data.size for _, p in self.parameters())

    def precompute_kernels(self, length: int) -> list:
        """Materialize every S4 kernel once, for reuse across sampler steps.

        Only valid while the parameters do not change (inference); training
        must rematerialize per step so gradients flow.
        """
        layers = [s4 for block in self.blocks for s4 in block.s4_layers()]
        return kernel_bank(layers, length)

    def forward(self, x, t, cond, kernels: list | None = None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        cond = cond if isinstance(cond, Tensor) else Tensor(cond)
        cfg = self.cfg
        if x.data.ndim != 3 or x.data.shape[1] != cfg.in_channels:
            raise DimensionError(
                f"expected (batch, {cfg.in_channels}, length), got {x.data.shape}"
            )
        if cond.data.shape != (x.data.shape[0], 2 * cfg.in_channels, x.data.shape[2]):
            raise DimensionError(
                f"conditioning shape {cond.data.shape} does not match input "
                f"{x.data.shape}"
            )
        h = relu(channel_linear(x, self.in_w, self.in_b))
        emb = self.embedding.forward(np.asarray(t))
        if kernels is None:
            # all S4 kernels of the step, materialized in one batched unroll
            kernels = self.precompute_kernels(x.data.shape[2])
        skip_sum = None
        offset = 0
        for block in self.blocks:
            n_layers = len(block.s4_layers())
            h, skip = block.forward(h, emb, cond,
                                    kernels=kernels[offset : offset + n_layers])
            offset += n_layers
            skip_sum = skip if skip_sum is None else add(skip_sum, skip)
        y = mul(skip_sum, 1.0 / math.sqrt(len(self.blocks)))
        y = relu(channel_linear(y, self.skip_w, self.skip_b))
        return channel_linear(y, self.out_w, self.out_b)

    __call__ = forward


# ---------------------------------------------------------------------------
# checkpoint format: magic, JSON meta record, named float64 parameter blobs

_MAGIC = b"SSMDIFF\x01"


def save_checkpoint(path, model: Denoiser, extra: dict | None = None) -> None:
    """Write config + parameters; round-trips bit-exactly."""
    meta = {"model": asdict(model.cfg)}
    if extra:
        meta["extra"] = extra
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    params = model.parameters()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(params)))
        for name, tensor in params:
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", tensor.data.ndim))
            for dim in tensor.data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Rebuild a :class:`Denoiser` (and the extra metadata) from disk."""
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ConfigError(f"{path} is not a checkpoint file")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        cfg = ModelConfig(**meta["model"])
        model = Denoiser(cfg, Rng(0))
        named = dict(model.parameters())
        (count,) = struct.unpack("<I", fh.read(4))
        if count != len(named):
            raise ConfigError(
                f"checkpoint has {count} tensors, model expects {len(named)}"
            )
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            data = np.frombuffer(
                fh.read(8 * int(np.prod(shape) if shape else 1)), dtype="<f8"
            ).reshape(shape)
            if name not in named:
                raise ConfigError(f"checkpoint tensor '{name}' unknown to the model")
            if named[name].data.shape != shape:
                raise ConfigError(
                    f"checkpoint tensor '{name}' has shape {shape}, "
                    f"model expects {named[name].data.shape}"
                )
            named[name].data = np.ascontiguousarray(data)
    return model, meta.get("extra", {})
