"""Shared signal-processing primitives.

Short-time spectra, the band-pass prefilter, normalized cross-correlation
and the real cepstrum ("quefrency") that the rest of the pipeline is built
from. Everything here is a pure function over immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .errors import DataError

# Analysis window the cepstral features are defined over.
QUEFRENCY_LEN = 128

# Floor added to spectral magnitudes before the log; far below 16-bit
# quantization noise, so it only matters on exactly-silent bins.
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class Signal:
    """A single-channel waveform and its sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1:
            raise DataError("signal samples must be one-dimensional")
        if self.sample_rate_hz <= 0:
            raise DataError("sample_rate_hz must be positive")
        if samples.size and not np.all(np.isfinite(samples)):
            raise DataError("signal contains NaN or Inf")

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class SpectralFrame:
    """Magnitude spectrum of one analysis window.

    ``magnitudes[k]`` is the magnitude at center frequency ``k * bin_hz``;
    there are ``window_size // 2 + 1`` bins (one-sided spectrum).
    """

    start_sample: int
    magnitudes: np.ndarray
    bin_hz: float


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window (the DFT-even variant used for spectral analysis)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


def stft(signal: Signal, window_size: int, hop: int) -> list[SpectralFrame]:
    """Hann-windowed magnitude STFT.

    Frame ``f`` covers samples ``[f*hop, f*hop + window_size)``; the number
    of frames is ``(len - window_size) // hop + 1``.
    """
    if window_size <= 0 or (window_size & (window_size - 1)) != 0:
        raise DataError(f"window_size must be a power of two, got {window_size}")
    if not 0 < hop <= window_size:
        raise DataError(f"hop must be in (0, window_size], got {hop}")
    x = signal.samples
    if x.size < window_size:
        raise DataError(
            f"signal of {x.size} samples is shorter than one {window_size}-sample window"
        )
    window = hann_window(window_size)
    n_frames = (x.size - window_size) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(x, window_size)[::hop][:n_frames]
    mags = np.abs(np.fft.rfft(frames * window, axis=1))
    bin_hz = signal.sample_rate_hz / window_size
    return [
        SpectralFrame(start_sample=f * hop, magnitudes=mags[f], bin_hz=bin_hz)
        for f in range(n_frames)
    ]


def bandpass_coefficients(low_hz: float, high_hz: float, sample_rate_hz: int):
    """Digital band-pass from the first-order analog Butterworth prototype.

    Bilinear transform with edge prewarping of H(s) = Bs / (s^2 + Bs + w0^2),
    giving one digital pole pair (a second-order section). Returns (b, a).
    """
    nyquist = sample_rate_hz / 2.0
    if not 0.0 < low_hz < high_hz < nyquist:
        raise DataError(
            f"invalid band edges ({low_hz}, {high_hz}) for fs={sample_rate_hz}"
        )
    fs = float(sample_rate_hz)
    warped_low = 2.0 * fs * np.tan(np.pi * low_hz / fs)
    warped_high = 2.0 * fs * np.tan(np.pi * high_hz / fs)
    bw = warped_high - warped_low
    w0_sq = warped_low * warped_high
    k = 2.0 * fs
    a0 = k * k + bw * k + w0_sq
    b = np.array([bw * k, 0.0, -bw * k]) / a0
    a = np.array([1.0, (2.0 * w0_sq - 2.0 * k * k) / a0, (k * k - bw * k + w0_sq) / a0])
    return b, a


def butterworth_bandpass(signal: Signal, low_hz: float, high_hz: float) -> Signal:
    """Causal (forward-only) band-pass; same length as the input.

    Forward-only filtering keeps the group delay identical on both channels
    of a microphone pair, so it cancels in cross-correlation.
    """
    b, a = bandpass_coefficients(low_hz, high_hz, signal.sample_rate_hz)
    return Signal(lfilter(b, a, signal.samples), signal.sample_rate_hz)


def cross_correlate(a: Signal, b: Signal, max_lag: int) -> np.ndarray:
    """Normalized cross-correlation over lags -max_lag..+max_lag.

    Entry ``i`` is the correlation at lag ``tau = i - max_lag`` where
    ``r(tau) = sum_n a[n] * b[n + tau]`` over the valid overlap, normalized
    by the geometric mean of the two segment energies. Positive ``tau``
    means ``b`` lags ``a``. Values are in [-1, 1].
    """
    if a.sample_rate_hz != b.sample_rate_hz:
        raise DataError("sample rates differ")
    xa, xb = a.samples, b.samples
    if xa.size == 0 or xb.size == 0:
        raise DataError("cross_correlate needs non-empty signals")
    if max_lag >= min(xa.size, xb.size):
        raise DataError(
            f"max_lag {max_lag} must be smaller than the shorter signal "
            f"({min(xa.size, xb.size)} samples)"
        )
    # np.correlate(xb, xa)[k] = sum_n xb[n + k - (len(xa)-1)] * xa[n],
    # so index len(xa)-1 is lag zero of r(tau).
    full = np.correlate(xb, xa, mode="full")
    zero = xa.size - 1
    values = full[zero - max_lag : zero + max_lag + 1]
    denom = np.sqrt(np.dot(xa, xa) * np.dot(xb, xb))
    if denom == 0.0:
        return np.zeros(2 * max_lag + 1)
    return values / denom


def quefrency(segment: np.ndarray) -> np.ndarray:
    """Real cepstrum of a 128-sample window.

    IFFT of log(|FFT(segment)| + LOG_FLOOR), real part. Element 0 carries
    the overall log gain; elements 1..127 are invariant under positive
    scaling of the input.
    """
    x = np.asarray(segment, dtype=np.float64)
    if x.shape != (QUEFRENCY_LEN,):
        raise DataError(f"quefrency needs exactly {QUEFRENCY_LEN} samples, got {x.shape}")
    spectrum = np.abs(np.fft.fft(x))
    return np.fft.ifft(np.log(spectrum + LOG_FLOOR)).real


def band_energy(frame: SpectralFrame, low_hz: float, high_hz: float) -> float:
    """Sum of squared magnitudes over bins with center frequency in [low, high)."""
    if low_hz >= high_hz:
        raise DataError(f"band edges out of order: ({low_hz}, {high_hz})")
    centers = np.arange(frame.magnitudes.size) * frame.bin_hz
    mask = (centers >= low_hz) & (centers < high_hz)
    band = frame.magnitudes[mask]
    return float(np.dot(band, band))
