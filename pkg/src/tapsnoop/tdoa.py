"""Arrival-time difference estimation between the top and bottom microphones.

All estimators share the same preprocessing: both channels go through the
band-pass prefilter (taps concentrate energy around 1300-1700 Hz), then a
per-method search over lags in [-max_lag, +max_lag]. Positive lag means the
top microphone received the tap first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dsp import Signal, butterworth_bandpass, cross_correlate
from .errors import DataError, NoSignalError
from .simulator import DeviceGeometry


class DelayMethod(str, Enum):
    CC = "cc"
    GCC_PHAT = "gcc_phat"
    GCC_SCOT = "gcc_scot"
    GCC_ROTH = "gcc_roth"
    GCC_ML = "gcc_ml"
    ASDF = "asdf"
    THRESHOLD = "threshold"


_GCC_METHODS = {
    DelayMethod.GCC_PHAT,
    DelayMethod.GCC_SCOT,
    DelayMethod.GCC_ROTH,
    DelayMethod.GCC_ML,
}

# Spectral smoothing width (bins) for the coherence estimate in GCC-ML;
# single-snapshot coherence is identically 1 without it.
_ML_SMOOTH_BINS = 9

_THRESHOLD_K = 6.0


@dataclass(frozen=True)
class TdoaConfig:
    max_lag: int = 32
    prefilter_band: tuple[float, float] = (1300.0, 1700.0)
    interpolate: bool = True
    regularization: float = 1e-8

    def __post_init__(self):
        if self.max_lag < 1:
            raise DataError("max_lag must be at least 1")
        if not 0.0 < self.prefilter_band[0] < self.prefilter_band[1]:
            raise DataError("prefilter band edges out of order")


@dataclass(frozen=True)
class DelayEstimate:
    lag_samples: float
    method: DelayMethod
    peak_value: float
    feasible: bool = True


def feasible_lag_bound(geometry: DeviceGeometry) -> float:
    """Largest physically possible |lag| in samples for the device's mic pair."""
    separation = math.dist(geometry.bottom_mic, geometry.top_mic)
    return separation / geometry.speed_of_sound_m_s * geometry.sample_rate_hz


def estimate_delay(
    top,
    bottom,
    method: DelayMethod = DelayMethod.CC,
    config: TdoaConfig = TdoaConfig(),
    sample_rate_hz: int = 44100,
    geometry: DeviceGeometry | None = None,
) -> DelayEstimate:
    """Estimate how many samples earlier the tap reached the top microphone.

    `top` and `bottom` are equal-length vectors (>= 256 samples) from the
    two channels. When `geometry` is given, estimates beyond the physical
    bound are flagged infeasible rather than silently returned.
    """
    method = DelayMethod(method)
    top = np.asarray(top, dtype=np.float64)
    bottom = np.asarray(bottom, dtype=np.float64)
    if top.shape != bottom.shape or top.ndim != 1:
        raise DataError("top and bottom must be equal-length vectors")
    if top.size < 256:
        raise DataError(f"need at least 256 samples, got {top.size}")

    low, high = config.prefilter_band
    ft = butterworth_bandpass(Signal(top, sample_rate_hz), low, high).samples
    fb = butterworth_bandpass(Signal(bottom, sample_rate_hz), low, high).samples
    if not np.any(ft) or not np.any(fb):
        raise NoSignalError("channel is all zero after band-pass prefiltering")

    if method == DelayMethod.CC:
        values = cross_correlate(
            Signal(ft, sample_rate_hz), Signal(fb, sample_rate_hz), config.max_lag
        )
        lag, peak = _pick_peak(values, config, minimize=False)
    elif method in _GCC_METHODS:
        values = _gcc_values(ft, fb, method, config)
        lag, peak = _pick_peak(values, config, minimize=False)
    elif method == DelayMethod.ASDF:
        values = _asdf_values(ft, fb, config.max_lag)
        lag, peak = _pick_peak(values, config, minimize=True)
    elif method == DelayMethod.THRESHOLD:
        lag, peak = _threshold_delay(ft, fb, config.max_lag)
    else:  # pragma: no cover - enum is closed
        raise DataError(f"unknown method {method}")

    feasible = True
    if geometry is not None:
        feasible = abs(lag) <= feasible_lag_bound(geometry)
    return DelayEstimate(lag_samples=lag, method=method, peak_value=peak, feasible=feasible)


def _pick_peak(values: np.ndarray, config: TdoaConfig, minimize: bool):
    objective = -values if minimize else values
    idx = int(np.argmax(objective))
    lag = float(idx - config.max_lag)
    peak = float(values[idx])
    if config.interpolate and 0 < idx < values.size - 1:
        left, mid, right = objective[idx - 1], objective[idx], objective[idx + 1]
        denom = left - 2.0 * mid + right
        if denom < 0.0:
            lag += float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))
    return lag, peak


def _gcc_values(ft: np.ndarray, fb: np.ndarray, method: DelayMethod, config: TdoaConfig):
    """Weighted cross-spectrum correlation at lags -max_lag..+max_lag."""
    n = 1 << (2 * ft.size - 1).bit_length()
    spec_t = np.fft.rfft(ft, n)
    spec_b = np.fft.rfft(fb, n)
    cross = spec_t * np.conj(spec_b)
    r = config.regularization
    if method == DelayMethod.GCC_PHAT:
        weight = 1.0 / (np.abs(cross) + r)
    elif method == DelayMethod.GCC_SCOT:
        weight = 1.0 / (np.sqrt((np.abs(spec_t) ** 2) * (np.abs(spec_b) ** 2)) + r)
    elif method == DelayMethod.GCC_ROTH:
        weight = 1.0 / (np.abs(spec_t) ** 2 + r)
    else:  # GCC_ML
        s_tt = _smooth(np.abs(spec_t) ** 2)
        s_bb = _smooth(np.abs(spec_b) ** 2)
        cross_sm = _smooth(cross.real) + 1j * _smooth(cross.imag)
        coherence = np.abs(cross_sm) ** 2 / (s_tt * s_bb + r)
        coherence = np.clip(coherence, 0.0, 1.0 - 1e-9)
        weight = coherence / ((1.0 - coherence) * np.abs(cross) + r)
    corr = np.fft.irfft(weight * cross, n)
    # irfft index l holds sum_n top[n] * bottom[n - l], i.e. lag tau = -l
    # under the "positive = top first" convention used everywhere else.
    lags = np.arange(-config.max_lag, config.max_lag + 1)
    return corr[(-lags) % n]


def _smooth(x: np.ndarray) -> np.ndarray:
    kernel = np.ones(_ML_SMOOTH_BINS) / _ML_SMOOTH_BINS
    return np.convolve(x, kernel, mode="same")


def _asdf_values(ft: np.ndarray, fb: np.ndarray, max_lag: int) -> np.ndarray:
    """Mean squared difference between top and lag-shifted bottom, per lag.

    The mean runs over the central samples valid for every lag, so all lags
    average the same number of terms (a varying count would bias the
    parabolic peak refinement).
    """
    n = ft.size
    core = ft[max_lag : n - max_lag]
    values = np.empty(2 * max_lag + 1)
    for i, tau in enumerate(range(-max_lag, max_lag + 1)):
        diff = core - fb[max_lag + tau : n - max_lag + tau]
        values[i] = float(np.mean(diff * diff))
    return values


def _threshold_delay(ft: np.ndarray, fb: np.ndarray, max_lag: int):
    """Delay from the first noise-threshold crossing of each channel."""
    crossings = []
    for x in (ft, fb):
        noise_rms = 1.4826 * float(np.median(np.abs(x)))
        hits = np.nonzero(np.abs(x) > _THRESHOLD_K * noise_rms)[0]
        if hits.size == 0:
            raise NoSignalError("no threshold crossing found in a channel")
        crossings.append(int(hits[0]))
    lag = float(np.clip(crossings[1] - crossings[0], -max_lag, max_lag))
    return lag, 1.0
