"""Masked imputation metrics over m_eval = m_mvi * (1 - m_imp).

Only entries that are genuinely held out (masked for conditioning, present
in the ground truth) are scored.  Means normalize by the count of evaluated
entries so scores stay comparable across missingness ratios; the relative
error is the aggregate ratio sum|err| / sum|truth|, which is defined
whenever the masked target has any mass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, MetricError


def eval_mask(m_imp: np.ndarray, m_mvi: np.ndarray) -> np.ndarray:
    """Entries to score: present in the input but hidden from conditioning."""
    m_imp = np.asarray(m_imp, dtype=np.float64)
    m_mvi = np.asarray(m_mvi, dtype=np.float64)
    if m_imp.shape != m_mvi.shape:
        raise DimensionError(f"mask shapes disagree: {m_imp.shape} vs {m_mvi.shape}")
    return m_mvi * (1.0 - m_imp)


def _prepare(y, y_hat, mask):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if not y.shape == y_hat.shape == mask.shape:
        raise DimensionError(
            f"shapes disagree: truth {y.shape}, prediction {y_hat.shape}, "
            f"mask {mask.shape}"
        )
    n = float(mask.sum())
    if n < 1.0:
        raise MetricError("evaluation mask selects no entries; metric undefined")
    return y, y_hat, mask, n


def masked_mae(y, y_hat, m_eval) -> float:
    y, y_hat, mask, n = _prepare(y, y_hat, m_eval)
    return float(np.sum(np.abs(y - y_hat) * mask) / n)


def masked_mse(y, y_hat, m_eval) -> float:
    y, y_hat, mask, n = _prepare(y, y_hat, m_eval)
    return float(np.sum((y - y_hat) ** 2 * mask) / n)


def masked_rmse(y, y_hat, m_eval) -> float:
    return float(np.sqrt(masked_mse(y, y_hat, m_eval)))


def masked_mre(y, y_hat, m_eval) -> float:
    """Aggregate relative error: sum|y - y_hat| / sum|y| over masked entries."""
    y, y_hat, mask, _ = _prepare(y, y_hat, m_eval)
    target_mass = float(np.sum(np.abs(y) * mask))
    if target_mass == 0.0:
        raise MetricError("masked target values are all zero; relative error undefined")
    return float(np.sum(np.abs(y - y_hat) * mask) / target_mass)


@dataclass
class EvalReport:
    """Headline masked metrics plus per-channel breakdowns."""

    mae: float
    mse: float
    rmse: float
    mre: float | None
    n_eval: int
    per_channel: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mae": self.mae,
            "mse": self.mse,
            "rmse": self.rmse,
            "mre": self.mre,
            "n_eval": self.n_eval,
            "per_channel": self.per_channel,
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


def evaluate(y, y_hat, m_eval) -> EvalReport:
    """Full report over arrays shaped (..., channels, length)."""
    y, y_hat, mask, n = _prepare(y, y_hat, m_eval)
    mse = masked_mse(y, y_hat, mask)
    try:
        mre = masked_mre(y, y_hat, mask)
    except MetricError:
        mre = None
    channels = y.shape[-2]
    per_channel = []
    for ch in range(channels):
        ch_mask = mask[..., ch, :]
        row = {"channel": ch, "n_eval": int(ch_mask.sum())}
        if ch_mask.sum() >= 1.0:
            ch_slice = (..., ch, slice(None))
            row["mae"] = masked_mae(y[ch_slice], y_hat[ch_slice], ch_mask)
            ch_mse = masked_mse(y[ch_slice], y_hat[ch_slice], ch_mask)
            row["mse"] = ch_mse
            row["rmse"] = float(np.sqrt(ch_mse))
        per_channel.append(row)
    return EvalReport(
        mae=masked_mae(y, y_hat, mask),
        mse=mse,
        rmse=float(np.sqrt(mse)),
        mre=mre,
        n_eval=int(n),
        per_channel=per_channel,
    )
