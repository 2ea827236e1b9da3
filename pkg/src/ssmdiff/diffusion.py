"""Diffusion schedule, forward noising, training objective and the sampler.

The chain follows the standard Gaussian construction: a linear beta
schedule, alpha = 1 - beta, alpha_bar the running product, and posterior
variances sigma2[t] = beta[t] * (1 - alpha_bar[t-1]) / (1 - alpha_bar[t])
(sigma2[0] := beta[0], never consumed because noise is only added for t > 0).

Two conditioning regimes are supported.  D0 diffuses the full signal and
trains on every entry with ground truth; D1 mixes the clean signal into the
noise tensor on conditioned entries before the forward mixing, trains only
on the imputation targets (present in the input but masked for
conditioning), and the sampler re-imposes the conditioned values at every
reverse step, which makes them exact in the output.

The network predicts the injected noise by default; an x0-prediction flag
is kept for fidelity experiments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError
from .model import Denoiser
from .rng import Rng
from .tensor import (
    Tape,
    Tensor,
    ensure_finite,
    mul,
    no_grad,
    sub,
    suspend_finite_checks,
    tsum,
)

MODES = ("D0", "D1")
PARAMETRIZATIONS = ("eps", "x0")


@dataclass
class DiffusionSchedule:
    """Precomputed noise-level vectors of length T."""

    t_steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma2: np.ndarray


def make_schedule(t_steps: int, beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> DiffusionSchedule:
    """Linear schedule between ``beta_start`` and ``beta_end`` over T steps."""
    if t_steps < 2:
        raise DomainError(f"need at least 2 diffusion steps, got {t_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise DomainError(
            f"invalid beta range ({beta_start}, {beta_end}); need 0 < start <= end < 1"
        )
    beta = np.linspace(beta_start, beta_end, t_steps)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma2 = np.empty(t_steps)
    sigma2[0] = beta[0]
    sigma2[1:] = beta[1:] * (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:])
    return DiffusionSchedule(t_steps, beta, alpha, alpha_bar, sigma2)


def q_sample(x0: np.ndarray, t, eps: np.ndarray, schedule: DiffusionSchedule) -> np.ndarray:
    """Closed-form forward noising sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    ``t`` may be a scalar step or one step per leading batch entry.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise DimensionError(f"x0 {x0.shape} and eps {eps.shape} disagree")
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr >= schedule.t_steps):
        raise DomainError(f"diffusion step {t} outside [0, {schedule.t_steps})")
    abar = schedule.alpha_bar[t_arr]
    if t_arr.ndim == 1:
        abar = abar.reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


@dataclass
class ConditioningBundle:
    """Masked signal and combined mask, stacked channelwise for the net."""

    cond: np.ndarray  # x0 * M, zero wherever mask is zero
    mask: np.ndarray  # M = m_imp * m_mvi

    def __post_init__(self):
        self.cond = np.asarray(self.cond, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.cond.shape != self.mask.shape:
            raise DimensionError(
                f"cond {self.cond.shape} and mask {self.mask.shape} disagree"
            )
        if np.any(self.cond[self.mask == 0.0] != 0.0):
            raise DomainError("cond must vanish wherever the mask is zero")

    @classmethod
    def from_signal(cls, x0: np.ndarray, m_imp: np.ndarray,
                    m_mvi: np.ndarray | None = None) -> "ConditioningBundle":
        x0 = np.asarray(x0, dtype=np.float64)
        mask = np.asarray(m_imp, dtype=np.float64)
        if m_mvi is not None:
            mask = mask * np.asarray(m_mvi, dtype=np.float64)
        return cls(cond=x0 * mask, mask=mask)

    def channels(self) -> np.ndarray:
        """Concatenate (cond, mask) along the channel axis: (..., 2K, L)."""
        return np.concatenate([self.cond, self.mask], axis=-2)


def _check_mode(mode: str, parametrization: str) -> None:
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")
    if parametrization not in PARAMETRIZATIONS:
        raise DomainError(
            f"parametrization must be one of {PARAMETRIZATIONS}, got {parametrization!r}"
        )


def training_loss(net: Denoiser, x0: np.ndarray, m_imp: np.ndarray,
                  m_mvi: np.ndarray, schedule: DiffusionSchedule, mode: str,
                  t: np.ndarray, eps: np.ndarray,
                  parametrization: str = "eps") -> Tensor:
    """Deterministic core of the training step (t and eps supplied).

    Returns the scalar loss on the active tape.  In D1 the loss runs over
    imputation targets (present in the input, masked for conditioning); in
    D0 over every entry with ground truth.
    """
    _check_mode(mode, parametrization)
    x0 = np.asarray(x0, dtype=np.float64)
    m_imp = np.asarray(m_imp, dtype=np.float64)
    m_mvi = np.asarray(m_mvi, dtype=np.float64)
    combined = m_imp * m_mvi
    if x0.shape != combined.shape or x0.shape != np.asarray(eps).shape:
        raise DimensionError("x0, masks and eps must share one (B, K, L) shape")
    bundle = ConditioningBundle(cond=x0 * combined, mask=combined)
    mixed = np.where(combined > 0.5, x0, eps) if mode == "D1" else np.asarray(eps)
    x_noisy = q_sample(x0, t, mixed, schedule)
    predicted = net.forward(x_noisy, t, bundle.channels())
    target = x0 if parametrization == "x0" else mixed
    weight = m_mvi * (1.0 - m_imp) if mode == "D1" else m_mvi
    n_counted = float(weight.sum())
    if n_counted == 0.0:
        warnings.warn(
            "no entries to train on (D1 with an all-ones combined mask); loss is 0",
            RuntimeWarning,
        )
        return tsum(mul(predicted, np.zeros_like(weight)))
    diff = sub(predicted, target)
    return mul(tsum(mul(mul(diff, diff), weight)), 1.0 / n_counted)


def training_step(net: Denoiser, x0: np.ndarray, m_imp: np.ndarray,
                  m_mvi: np.ndarray, schedule: DiffusionSchedule, mode: str,
                  rng: Rng, parametrization: str = "eps") -> float:
    """Sample (t, eps), run the loss, and backpropagate into the net.

    Gradients accumulate on the parameters' ``.grad``; the caller owns the
    optimizer step and ``zero_grad``.
    """
    batch = np.asarray(x0).shape[0]
    t = rng.integers(schedule.t_steps, (batch,))
    eps = rng.normal(np.asarray(x0).shape)
    with suspend_finite_checks(), Tape() as tape:
        loss = training_loss(net, x0, m_imp, m_mvi, schedule, mode, t, eps,
                             parametrization)
        tape.backward(loss)
    value = float(loss.data)
    tape.release()
    return value


def _reverse(net: Denoiser, cond: np.ndarray, mask: np.ndarray,
             schedule: DiffusionSchedule, mode: str, rng: Rng,
             parametrization: str) -> np.ndarray:
    """Shared reverse chain over a (B, K, L) batch of bundles."""
    x = rng.normal(cond.shape)
    net_input_cond = np.concatenate([cond, mask], axis=1)
    with no_grad(), suspend_finite_checks():
        kernels = net.precompute_kernels(cond.shape[-1])
        for t in range(schedule.t_steps - 1, -1, -1):
            if mode == "D1":
                x = np.where(mask > 0.5, cond, x)
            t_batch = np.full(cond.shape[0], t, dtype=np.int64)
            predicted = net.forward(x, t_batch, net_input_cond, kernels=kernels).data
            if parametrization == "x0":
                predicted = (x - np.sqrt(schedule.alpha_bar[t]) * predicted) / np.sqrt(
                    1.0 - schedule.alpha_bar[t]
                )
            x = (
                x - (1.0 - schedule.alpha[t]) / np.sqrt(1.0 - schedule.alpha_bar[t]) * predicted
            ) / np.sqrt(schedule.alpha[t])
            if t > 0:
                x = x + np.sqrt(schedule.sigma2[t]) * rng.normal(x.shape)
    ensure_finite(x, "reverse-process sample")
    if mode == "D1":
        x = np.where(mask > 0.5, cond, x)
    return x


def reverse_sample(net: Denoiser, bundle: ConditioningBundle,
                   schedule: DiffusionSchedule, mode: str, rng: Rng,
                   parametrization: str = "eps") -> np.ndarray:
    """One (K, L) draw from the reverse chain.

    In D1 the conditioned entries of the output are the conditioning values,
    bit for bit, whatever the network does.
    """
    _check_mode(mode, parametrization)
    out = _reverse(net, bundle.cond[None], bundle.mask[None], schedule, mode, rng,
                   parametrization)
    return out[0]


def reverse_sample_batch(net: Denoiser, bundle: ConditioningBundle,
                         schedule: DiffusionSchedule, mode: str, rng: Rng,
                         n_draws: int, parametrization: str = "eps") -> np.ndarray:
    """``n_draws`` independent draws for one bundle, batched through the net."""
    _check_mode(mode, parametrization)
    if n_draws < 1:
        raise DomainError(f"n_draws must be >= 1, got {n_draws}")
    cond = np.broadcast_to(bundle.cond, (n_draws,) + bundle.cond.shape).copy()
    mask = np.broadcast_to(bundle.mask, (n_draws,) + bundle.mask.shape).copy()
    return _reverse(net, cond, mask, schedule, mode, rng, parametrization)


def summarize_samples(samples: np.ndarray, quantiles) -> dict:
    """Per-entry empirical quantiles (linear interpolation) and mean.

    ``samples``: (S, ...) stack of draws; returns ``{"quantiles": (Q, ...),
    "mean": (...)}`` aligned with the quantile list.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim < 1 or samples.shape[0] < 1:
        raise DomainError("need at least one sample to summarize")
    quantiles = list(quantiles)
    if not quantiles or any(not 0.0 < q < 1.0 for q in quantiles):
        raise DomainError(f"quantiles must lie in (0, 1), got {quantiles}")
    surfaces = np.quantile(samples, quantiles, axis=0, method="linear")
    return {"quantiles": surfaces, "mean": samples.mean(axis=0)}
