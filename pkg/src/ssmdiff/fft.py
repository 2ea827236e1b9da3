"""Real FFT with a power-of-two contract, plus FFT-based causal convolution.

The transforms delegate to numpy's pocketfft; this module owns the length
contract (power of two, pad at the call site otherwise) and the linear
convolution built on top of them.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, LengthError


def _require_pow2(n: int) -> None:
    if n < 1 or (n & (n - 1)) != 0:
        raise LengthError(f"transform length must be a power of two, got {n}")


def next_pow2(n: int) -> int:
    """Smallest power of two >= n."""
    p = 1
    while p < n:
        p *= 2
    return p


def rfft(x: np.ndarray) -> np.ndarray:
    """Real-to-complex FFT along the last axis (length L -> L/2+1 bins)."""
    x = np.asarray(x, dtype=np.float64)
    _require_pow2(x.shape[-1])
    return np.fft.rfft(x, axis=-1)


def irfft(spectrum: np.ndarray, length: int) -> np.ndarray:
    """Inverse of :func:`rfft` for an original length ``length``."""
    _require_pow2(length)
    spectrum = np.asarray(spectrum)
    if spectrum.shape[-1] != length // 2 + 1:
        raise DimensionError(
            f"spectrum has {spectrum.shape[-1]} bins, expected {length // 2 + 1}"
        )
    return np.fft.irfft(spectrum, n=length, axis=-1)


def causal_conv_values(kernel: np.ndarray, signal: np.ndarray) -> np.ndarray:
    """Causal linear convolution truncated to the signal length.

    ``out[..., t] = sum_{i<=t} kernel[..., i] * signal[..., t-i]``, computed by
    zero-padding both factors to a power of two >= 2L and multiplying spectra.
    Leading axes broadcast.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    signal = np.asarray(signal, dtype=np.float64)
    if kernel.shape[-1] != signal.shape[-1]:
        raise DimensionError(
            f"kernel length {kernel.shape[-1]} != signal length {signal.shape[-1]}"
        )
    length = signal.shape[-1]
    padded = next_pow2(2 * length)
    spec = np.fft.rfft(kernel, n=padded, axis=-1) * np.fft.rfft(signal, n=padded, axis=-1)
    return np.fft.irfft(spec, n=padded, axis=-1)[..., :length]


