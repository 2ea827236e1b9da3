"""Imputation mask generators: scattered, per-channel block, blackout, tail.

Masks are (channels, length) arrays of 0.0/1.0 where ones mark conditioned
entries and zeros mark imputation targets.  Block scenarios first partition
the sequence into segments of floor(ratio * length) steps, the remainder
folded into the final segment, and zero whole segments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError
from .rng import Rng

SCENARIOS = ("RM", "RBM", "BM", "TF")


@dataclass
class MaskPair:
    """Imputation mask (1 = conditioned) and missing-value mask (1 = present)."""

    m_imp: np.ndarray
    m_mvi: np.ndarray

    def combined(self) -> np.ndarray:
        return compose(self.m_imp, self.m_mvi)


def compose(m_imp: np.ndarray, m_mvi: np.ndarray) -> np.ndarray:
    """Pointwise product of the two masks."""
    m_imp = np.asarray(m_imp, dtype=np.float64)
    m_mvi = np.asarray(m_mvi, dtype=np.float64)
    if m_imp.shape != m_mvi.shape:
        raise DimensionError(f"mask shapes disagree: {m_imp.shape} vs {m_mvi.shape}")
    return m_imp * m_mvi


def _check_ratio(ratio: float) -> None:
    if not 0.0 < ratio < 1.0:
        raise DomainError(f"missingness ratio must lie in (0, 1), got {ratio}")


def _floor_count(ratio: float, length: int) -> int:
    # guard floor() against representation error, e.g. 0.3 * 10 -> 2.9999...
    return int(ratio * length + 1e-9)


def rm_mask(length: int, channels: int, ratio: float, rng: Rng) -> np.ndarray:
    """Scattered missingness: exactly floor(ratio * length) zeros per channel
    at distinct uniform positions, channels independent."""
    _check_ratio(ratio)
    zeros_per_channel = _floor_count(ratio, length)
    if zeros_per_channel == 0:
        warnings.warn(
            f"ratio {ratio} with length {length} yields an all-ones mask",
            RuntimeWarning,
        )
    mask = np.ones((channels, length))
    for ch in range(channels):
        positions = rng.choice_without_replacement(length, zeros_per_channel)
        mask[ch, positions] = 0.0
    return mask


def segment_bounds(length: int, ratio: float) -> list:
    """Partition [0, length) into floor(ratio * length)-step segments, the
    remainder absorbed by the final one."""
    _check_ratio(ratio)
    step = _floor_count(ratio, length)
    if step == 0:
        raise DomainError(
            f"segment length floor({ratio} * {length}) is zero; ratio too small"
        )
    count = length // step
    bounds = [(i * step, (i + 1) * step) for i in range(count)]
    bounds[-1] = (bounds[-1][0], length)
    return bounds


def rbm_mask(length: int, channels: int, ratio: float, rng: Rng) -> np.ndarray:
    """Per-channel block missingness: one segment zeroed per channel."""
    bounds = segment_bounds(length, ratio)
    mask = np.ones((channels, length))
    for ch in range(channels):
        lo, hi = bounds[rng.integers(len(bounds))]
        mask[ch, lo:hi] = 0.0
    return mask


def bm_mask(length: int, channels: int, ratio: float, rng: Rng) -> np.ndarray:
    """Blackout missingness: a single segment zeroed across all channels."""
    bounds = segment_bounds(length, ratio)
    lo, hi = bounds[rng.integers(len(bounds))]
    mask = np.ones((channels, length))
    mask[:, lo:hi] = 0.0
    return mask


def tf_mask(length: int, channels: int, horizon: int) -> np.ndarray:
    """Forecasting mask: the final ``horizon`` steps zeroed in every channel."""
    if not 0 < horizon < length:
        raise DomainError(f"horizon must lie in (0, {length}), got {horizon}")
    mask = np.ones((channels, length))
    mask[:, length - horizon :] = 0.0
    return mask


def scenario_mask(scenario: str, length: int, channels: int, rng: Rng,
                  ratio: float | None = None, horizon: int | None = None) -> np.ndarray:
    """Dispatch by scenario name (RM / RBM / BM need ``ratio``, TF ``horizon``)."""
    if scenario not in SCENARIOS:
        raise DomainError(f"scenario must be one of {SCENARIOS}, got {scenario!r}")
    if scenario == "TF":
        if horizon is None:
            raise DomainError("TF scenario needs a forecast horizon")
        return tf_mask(length, channels, horizon)
    if ratio is None:
        raise DomainError(f"{scenario} scenario needs a missingness ratio")
    maker = {"RM": rm_mask, "RBM": rbm_mask, "BM": bm_mask}[scenario]
    return maker(length, channels, ratio, rng)


def write_mask_csv(mask: np.ndarray, path) -> None:
    """Dump a (channels, length) mask as rows of 0/1 integers."""
    mask = np.asarray(mask)
    with open(path, "w", encoding="utf-8") as fh:
        for row in mask.astype(np.int64):
            fh.write(",".join(str(v) for v in row) + "\n")


def read_mask_csv(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        rows = [[float(v) for v in line.strip().split(",")] for line in fh if line.strip()]
    return np.asarray(rows, dtype=np.float64)
