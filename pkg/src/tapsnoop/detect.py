"""Tap onset detection and OS-feedback subtraction.

Detection follows the tap's spectral signature: a high-frequency burst
first, a mid-frequency body a few frames later, then a long low-frequency
wave. Candidate frames are found by comparing high-band energy against a
rolling median + k*MAD noise estimate (robust to the previous tap sitting
inside the noise window), then confirmed in the mid and low bands.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .audio_io import AudioRecording, ChannelRole
from .dsp import Signal, hann_window
from .errors import (
    ConfigError,
    DataError,
    DegenerateTemplateError,
    MissingChannelError,
)

HEAD_LEN = 128
TAIL_LEN = 1500


@dataclass(frozen=True)
class DetectorConfig:
    stft_window: int = 64
    stft_hop: int = 16
    high_band: tuple[float, float] = (7500.0, 9000.0)
    mid_band: tuple[float, float] = (3900.0, 4500.0)
    low_band: tuple[float, float] = (40.0, 100.0)
    threshold_k: float = 6.0
    refractory_samples: int = 2000
    noise_window_frames: int = 200

    def __post_init__(self):
        for name in ("high_band", "mid_band", "low_band"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo < hi:
                raise ConfigError(f"{name} edges out of order")
        if self.refractory_samples < HEAD_LEN:
            raise ConfigError(f"refractory_samples must be >= {HEAD_LEN}")
        if not 0 < self.stft_hop <= self.stft_window:
            raise ConfigError("stft_hop must be in (0, stft_window]")


@dataclass(frozen=True)
class TapSegment:
    """Per-channel analysis windows around one tap onset.

    ``heads`` hold the 128 samples starting at the onset, ``tails`` the
    1500 samples of context that follow; both are zero-padded at recording
    edges and keyed by channel role.
    """

    onset_sample: int
    sample_rate_hz: int
    heads: dict
    tails: dict
    detection_score: float = 0.0
    label: str | None = field(default=None)

    def head(self, role: ChannelRole) -> np.ndarray:
        if role not in self.heads:
            raise MissingChannelError(f"segment has no {role.value} channel")
        return self.heads[role]

    def tail(self, role: ChannelRole) -> np.ndarray:
        if role not in self.tails:
            raise MissingChannelError(f"segment has no {role.value} channel")
        return self.tails[role]

    def analysis_window(self, role: ChannelRole, length: int = 512) -> np.ndarray:
        """Head plus leading tail context, as one contiguous window."""
        joined = np.concatenate([self.head(role), self.tail(role)])
        return joined[:length]


def segment_at(
    recording: AudioRecording,
    onset: int,
    score: float = 0.0,
    label: str | None = None,
) -> TapSegment:
    """Slice head/tail windows for every top/bottom channel at `onset`."""
    if onset < 0 or onset >= recording.n_samples:
        raise DataError(f"onset {onset} outside recording of {recording.n_samples} samples")
    heads, tails = {}, {}
    for idx, role in enumerate(recording.channel_roles):
        if role == ChannelRole.OTHER:
            continue
        chan = recording.samples[idx]
        heads[role] = _padded_slice(chan, onset, HEAD_LEN)
        tails[role] = _padded_slice(chan, onset + HEAD_LEN, TAIL_LEN)
    if not heads:
        raise DataError("recording has no top/bottom microphone channels")
    return TapSegment(
        onset_sample=int(onset),
        sample_rate_hz=recording.sample_rate_hz,
        heads=heads,
        tails=tails,
        detection_score=score,
        label=label,
    )


def _padded_slice(chan: np.ndarray, start: int, length: int) -> np.ndarray:
    out = np.zeros(length)
    lo = max(start, 0)
    hi = min(start + length, chan.size)
    if lo < hi:
        out[lo - start : hi - start] = chan[lo:hi]
    return out


def detect_taps(recording: AudioRecording, config: DetectorConfig = DetectorConfig()):
    """Find tap onsets; returns TapSegments sorted by onset.

    Runs on the bottom-microphone channel when present (channel 0
    otherwise). Detections closer than the refractory interval are merged,
    keeping the earliest onset and the highest score of the group.
    """
    if recording.n_channels < 1:
        raise DataError("recording has no channels")
    fs = recording.sample_rate_hz
    nyquist = fs / 2.0
    if config.high_band[1] > nyquist or config.mid_band[1] > nyquist:
        raise ConfigError("detector bands exceed Nyquist for this recording")
    if recording.has_role(ChannelRole.BOTTOM_MIC):
        x = recording.channel(ChannelRole.BOTTOM_MIC)
    else:
        x = recording.samples[0]
    window, hop = config.stft_window, config.stft_hop
    if x.size < window:
        raise DataError("recording shorter than one detector frame")

    n_frames = (x.size - window) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(x, window)[::hop][:n_frames]
    mags_sq = np.abs(np.fft.rfft(frames * hann_window(window), axis=1)) ** 2
    bin_hz = fs / window
    centers = np.arange(mags_sq.shape[1]) * bin_hz
    high_mask = (centers >= config.high_band[0]) & (centers < config.high_band[1])
    mid_mask = (centers >= config.mid_band[0]) & (centers < config.mid_band[1])
    e_high = mags_sq[:, high_mask].sum(axis=1)
    e_mid = mags_sq[:, mid_mask].sum(axis=1)

    med_h, mad_h = _trailing_median_mad(e_high, config.noise_window_frames)
    med_m, mad_m = _trailing_median_mad(e_mid, config.noise_window_frames)
    thr_high = med_h + config.threshold_k * mad_h
    thr_mid = med_m + config.threshold_k * mad_m

    with np.errstate(invalid="ignore"):
        candidates = np.nonzero(e_high > thr_high)[0]

    hits = []
    for t in candidates:
        mid_window = e_mid[t : min(t + 5, n_frames)]
        if not np.any(mid_window > thr_mid[t]):
            continue
        onset = _refine_onset(x, t * hop, window)
        if not _low_band_confirmed(x, onset, fs, config.low_band):
            continue
        scale = mad_h[t] if mad_h[t] > 0 else 1e-12
        score = float((e_high[t] - med_h[t]) / scale)
        hits.append((onset, score))

    merged = _merge_refractory(hits, config.refractory_samples)
    return [segment_at(recording, onset, score) for onset, score in merged]


def _trailing_median_mad(energy: np.ndarray, window_frames: int):
    """Per-frame median and MAD of the trailing `window_frames` energies.

    Frame t sees energies [t - W, t); partial history is used near the
    start, and frame 0 (no history at all) can never trigger.
    """
    padded = np.concatenate([np.full(window_frames, np.nan), energy])
    windows = np.lib.stride_tricks.sliding_window_view(padded, window_frames)[: energy.size]
    with warnings.catch_warnings():
        # frame 0 has an all-NaN (empty) history window by construction
        warnings.simplefilter("ignore", RuntimeWarning)
        med = np.nanmedian(windows, axis=1)
        mad = np.nanmedian(np.abs(windows - med[:, None]), axis=1)
    return med, mad


def _refine_onset(x: np.ndarray, frame_start: int, window: int) -> int:
    """First sample in the triggering frame whose |amplitude| clears 3x trailing RMS."""
    trail = x[max(frame_start - 2000, 0) : frame_start]
    rms = float(np.sqrt(np.mean(trail**2))) if trail.size else 0.0
    segment = np.abs(x[frame_start : frame_start + window])
    hits = np.nonzero(segment > 3.0 * rms)[0]
    return frame_start + int(hits[0]) if hits.size else frame_start


def _low_band_confirmed(x: np.ndarray, onset: int, fs: int, band) -> bool:
    """Low-frequency wave check over the 1500 samples after the onset.

    Done on DFTs of the raw samples: 64-sample detector frames have no bins
    below ~700 Hz, so a 40-100 Hz check needs a long window. The preceding
    1500 samples act as the noise reference.
    """
    tail = x[onset : onset + TAIL_LEN]
    if tail.size < TAIL_LEN // 2:
        return False
    tail_e = _band_energy_per_sample(tail, fs, band)
    ref = x[max(onset - TAIL_LEN, 0) : onset]
    if ref.size < TAIL_LEN // 4:
        return tail_e > 0.0
    return tail_e > 3.0 * _band_energy_per_sample(ref, fs, band)


def _band_energy_per_sample(segment: np.ndarray, fs: int, band) -> float:
    spectrum = np.abs(np.fft.rfft(segment)) ** 2
    freqs = np.fft.rfftfreq(segment.size, d=1.0 / fs)
    mask = (freqs >= band[0]) & (freqs < band[1])
    return float(spectrum[mask].sum()) / segment.size


def _merge_refractory(hits, refractory: int):
    """Cluster detections closer than `refractory`; keep the highest-score one.

    A marginal noise trigger shortly before a real tap lands in the same
    cluster as the tap's own (much stronger) trigger, so score-based
    merging discards it.
    """
    clusters = []
    for onset, score in sorted(hits):
        if clusters and onset - clusters[-1][-1][0] < refractory:
            clusters[-1].append((onset, score))
        else:
            clusters.append([(onset, score)])
    return [
        max(cluster, key=lambda hit: (hit[1], -hit[0]))
        for cluster in clusters
    ]


class FeedbackKind(str, Enum):
    SOUND = "sound"
    VIBRATION = "vibration"


@dataclass(frozen=True)
class FeedbackTemplate:
    """Average waveform of the OS key-press feedback, trimmed to its support."""

    waveform: np.ndarray
    kind: FeedbackKind

    def __post_init__(self):
        waveform = np.asarray(self.waveform, dtype=np.float64)
        object.__setattr__(self, "waveform", waveform)
        if waveform.size == 0 or not np.any(waveform):
            raise DegenerateTemplateError("feedback template has no energy")


def build_feedback_template(recordings, kind: FeedbackKind) -> FeedbackTemplate:
    """Average isolated feedback events into a template.

    Every recording must contain exactly one feedback event. Events are
    aligned to the first one by cross-correlation, averaged sample-wise
    over their coverage, and trimmed to where the smoothed energy stays
    above 1% of its peak.
    """
    if not recordings:
        raise DataError("need at least one recording to build a template")
    events = [_detection_channel(rec) for rec in recordings]
    reference = events[0]
    offsets = [0]
    for event in events[1:]:
        corr = np.correlate(reference, event, mode="full")
        offsets.append(int(np.argmax(corr)) - (event.size - 1))

    start = min(offsets)
    end = max(off + ev.size for off, ev in zip(offsets, events))
    acc = np.zeros(end - start)
    count = np.zeros(end - start)
    for off, ev in zip(offsets, events):
        acc[off - start : off - start + ev.size] += ev
        count[off - start : off - start + ev.size] += 1.0
    average = acc / np.maximum(count, 1.0)

    peak_in = float(np.mean([np.max(ev**2) for ev in events]))
    if float(np.max(average**2)) < 0.01 * peak_in:
        raise DegenerateTemplateError("aligned events cancel out; degenerate template")

    envelope = np.convolve(average**2, np.ones(32) / 32.0, mode="same")
    above = np.nonzero(envelope >= 0.01 * envelope.max())[0]
    trimmed = average[above[0] : above[-1] + 1]
    return FeedbackTemplate(trimmed, FeedbackKind(kind))


def _detection_channel(recording: AudioRecording) -> np.ndarray:
    if recording.has_role(ChannelRole.BOTTOM_MIC):
        return recording.channel(ChannelRole.BOTTOM_MIC)
    return recording.samples[0]


@dataclass(frozen=True)
class SubtractionResult:
    """Outcome of one feedback-subtraction pass."""

    signal: Signal
    applied: bool
    offset: int | None
    amplitude: float
    peak_correlation: float


def subtract_feedback(
    signal: Signal, template: FeedbackTemplate, min_correlation: float = 0.3
) -> SubtractionResult:
    """Remove the best least-squares placement of the template from `signal`.

    The template is slid over the signal; at the offset with the highest
    normalized correlation the least-squares amplitude is subtracted. When
    no placement correlates above `min_correlation`, the signal is returned
    unchanged with ``applied=False``. A subtraction never increases total
    signal energy (orthogonal-projection property).
    """
    x = signal.samples
    t = template.waveform
    if t.size >= x.size:
        raise DataError("template must be shorter than the signal")
    corr = np.correlate(x, t, mode="valid")
    sq = np.concatenate([[0.0], np.cumsum(x * x)])
    window_energy = sq[t.size :] - sq[: x.size - t.size + 1]
    t_energy = float(np.dot(t, t))
    denom = np.sqrt(window_energy * t_energy)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(denom > 0.0, corr / denom, 0.0)
    best = int(np.argmax(rho))
    peak = float(rho[best])
    if peak < min_correlation:
        return SubtractionResult(signal, False, None, 0.0, peak)
    amplitude = float(corr[best] / t_energy)
    cleaned = x.copy()
    cleaned[best : best + t.size] -= amplitude * t
    return SubtractionResult(
        Signal(cleaned, signal.sample_rate_hz), True, best, amplitude, peak
    )
