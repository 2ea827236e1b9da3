"""Synthetic datasets, standardization, file formats and channel splitting.

Synthetic kinds share one latent oscillator per sample; channels are phase
and amplitude transforms of it, so block imputation in one channel can lean
on its neighbours.  The scaler is always fitted on the training split only.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, DomainError
from .rng import Rng

SYNTH_KINDS = ("sines", "damped", "square-mix")


@dataclass
class Scaler:
    """Per-channel standardization fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, train_values: np.ndarray) -> "Scaler":
        values = np.asarray(train_values, dtype=np.float64)
        if values.ndim != 3:
            raise DimensionError(f"expected (n, channels, length), got {values.shape}")
        mean = values.mean(axis=(0, 2))
        std = values.std(axis=(0, 2))
        if np.any(std <= 0.0):
            bad = np.where(std <= 0.0)[0].tolist()
            raise DomainError(f"constant channels cannot be standardized: {bad}")
        return cls(mean=mean, std=std)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean[:, None]) / self.std[:, None]

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std[:, None] + self.mean[:, None]


@dataclass
class Dataset:
    """(n, channels, length) series with their missing-value masks and splits."""

    values: np.ndarray
    m_mvi: np.ndarray
    splits: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.m_mvi = np.asarray(self.m_mvi, dtype=np.float64)
        if self.values.shape != self.m_mvi.shape or self.values.ndim != 3:
            raise DimensionError(
                f"values {self.values.shape} and m_mvi {self.m_mvi.shape} must be "
                "matching (n, channels, length) arrays"
            )
        if not self.splits:
            self.splits = default_splits(self.values.shape[0])

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def length(self) -> int:
        return self.values.shape[2]

    def split(self, name: str):
        idx = self.splits[name]
        return self.values[idx], self.m_mvi[idx]


def default_splits(n: int) -> dict:
    """Contiguous 75 / 12.5 / 12.5 train / val / test split."""
    n_train = max(1, int(0.75 * n))
    n_val = max(1, int(0.125 * n))
    if n_train + 2 * n_val > n:
        n_train = max(1, n - 2)
        n_val = max(0, (n - n_train) // 2) or 1
    return {
        "train": np.arange(0, n_train),
        "val": np.arange(n_train, min(n, n_train + n_val)),
        "test": np.arange(min(n, n_train + n_val), n),
    }


def synth_dataset(kind: str, n_samples: int, channels: int, length: int,
                  noise_sd: float, seed: int) -> Dataset:
    """Reproducible multichannel signals driven by shared latent oscillators."""
    if kind not in SYNTH_KINDS:
        raise DomainError(f"kind must be one of {SYNTH_KINDS}, got {kind!r}")
    if min(n_samples, channels, length) < 1 or noise_sd < 0:
        raise DomainError("n_samples, channels, length must be >= 1; noise_sd >= 0")
    rng = Rng(seed)
    tau = np.arange(length) / length
    phase_offsets = 0.35 * np.arange(channels)  # per-channel phase transform
    amplitudes = 1.0 + 0.1 * np.arange(channels)
    values = np.empty((n_samples, channels, length))
    for i in range(n_samples):
        cycles = 1.0 + 3.0 * rng.uniform()
        phase = 2.0 * np.pi * rng.uniform()
        angle = 2.0 * np.pi * cycles * tau + phase
        for ch in range(channels):
            shifted = angle + phase_offsets[ch]
            if kind == "sines":
                base = np.sin(shifted)
            elif kind == "damped":
                decay = 1.0 + 2.0 * rng.uniform() if ch == 0 else decay
                base = np.exp(-decay * tau) * np.sin(shifted)
            else:  # square-mix
                base = 0.6 * np.sign(np.sin(shifted)) + 0.4 * np.sin(2.0 * shifted)
            values[i, ch] = amplitudes[ch] * base
        if noise_sd > 0:
            values[i] += noise_sd * rng.normal((channels, length))
    return Dataset(values=values, m_mvi=np.ones_like(values))


# ---------------------------------------------------------------------------
# file formats

_DATASET_MAGIC = b"SSMDATA\x01"
_ARRAY_MAGIC = b"SSMARR\x01\x00"


def save_dataset(path, dataset: Dataset) -> None:
    """Flat binary: magic, dims, float64 values, uint8 missing-value mask."""
    n, k, length = dataset.values.shape
    with open(path, "wb") as fh:
        fh.write(_DATASET_MAGIC)
        fh.write(struct.pack("<III", n, k, length))
        fh.write(np.ascontiguousarray(dataset.values, dtype="<f8").tobytes())
        fh.write(dataset.m_mvi.astype(np.uint8).tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        if fh.read(len(_DATASET_MAGIC)) != _DATASET_MAGIC:
            raise ConfigError(f"{path} is not a dataset file")
        n, k, length = struct.unpack("<III", fh.read(12))
        count = n * k * length
        values = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(n, k, length)
        m_mvi = np.frombuffer(fh.read(count), dtype=np.uint8).reshape(n, k, length)
    return Dataset(values=values.copy(), m_mvi=m_mvi.astype(np.float64))


def save_array(path, array: np.ndarray) -> None:
    """Generic float64 array container (predictions, masks, draws)."""
    array = np.asarray(array, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_ARRAY_MAGIC)
        fh.write(struct.pack("<B", array.ndim))
        for dim in array.shape:
            fh.write(struct.pack("<I", dim))
        fh.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def load_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(len(_ARRAY_MAGIC)) != _ARRAY_MAGIC:
            raise ConfigError(f"{path} is not an array file")
        (ndim,) = struct.unpack("<B", fh.read(1))
        shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
    return data.copy()


def dataset_from_csv(paths, missing_token: str = "") -> Dataset:
    """Import small data: each CSV holds one sample as channels x length rows.

    Empty cells (or ``missing_token``) mark missing values; they are stored
    as zeros with m_mvi = 0.
    """
    samples, masks = [], []
    for path in paths:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
        values = np.zeros((len(rows), len(rows[0])))
        present = np.ones_like(values)
        for i, row in enumerate(rows):
            if len(row) != values.shape[1]:
                raise DimensionError(f"{path}: ragged rows ({len(row)} columns)")
            for j, cell in enumerate(row):
                cell = cell.strip()
                if cell == missing_token:
                    present[i, j] = 0.0
                else:
                    values[i, j] = float(cell)
        samples.append(values)
        masks.append(present)
    shapes = {s.shape for s in samples}
    if len(shapes) > 1:
        raise DimensionError(f"CSV samples disagree on shape: {sorted(shapes)}")
    return Dataset(values=np.stack(samples), m_mvi=np.stack(masks))


# ---------------------------------------------------------------------------
# channel splitting

def channel_split(batch: np.ndarray, width: int):
    """Split (B, K, L) into consecutive channel groups of ``width``.

    Returns (parts, groups); the last group may be narrower.  Concatenating
    the parts along the channel axis restores the batch exactly.
    """
    batch = np.asarray(batch)
    if batch.ndim != 3:
        raise DimensionError(f"expected (batch, channels, length), got {batch.shape}")
    if width < 1:
        raise DomainError(f"split width must be >= 1, got {width}")
    channels = batch.shape[1]
    if width > channels:
        import warnings

        warnings.warn(
            f"split width {width} exceeds {channels} channels; passing through",
            RuntimeWarning,
        )
        return [batch], [(0, channels)]
    groups = [(lo, min(lo + width, channels)) for lo in range(0, channels, width)]
    return [batch[:, lo:hi, :] for lo, hi in groups], groups


def channel_join(parts) -> np.ndarray:
    """Inverse of :func:`channel_split`."""
    return np.concatenate(list(parts), axis=1)
