"""Physically grounded synthetic two-microphone tap audio.

A tap is modeled as three concatenated exponentially decaying sinusoids
(a short high-frequency burst, a mid-frequency body, a long low-frequency
tail). Each microphone receives it through an airborne path: fractional
delay by distance over the speed of sound, 1/distance amplitude loss, and
white noise at a configurable SNR.

Key locations can additionally color the source through a resonant filter
whose parameters are a deterministic hash of the key's grid cell. That
stand-in makes tap location learnable from cepstral features with tunable
difficulty; its strength per subject is controlled by ``subject_effect``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .audio_io import AudioRecording, ChannelRole, TapLabel
from .errors import ConfigError, DataError

GEOMETRY_FORMAT = "tap-geometry/1"
LAYOUT_FORMAT = "tap-layout/1"
SYNTH_FORMAT = "tap-synth/1"

# Linear approximation of the speed of sound in air around room temperature.
SPEED_INTERCEPT_M_S = 331.3
SPEED_SLOPE_M_S_PER_C = 0.606

# Relative amplitudes of the three tap stages (burst, body, tail).
_STAGE_AMPLITUDES = (1.0, 0.55, 0.30)

# Grid pitch used to quantize key positions into fingerprint cells.
_FINGERPRINT_CELL_M = 0.004

_SINC_HALF_TAPS = 16  # 33-tap windowed-sinc fractional delay


def speed_of_sound(air_temp_c: float) -> float:
    """Speed of sound in air (m/s) at the given temperature (Celsius)."""
    return SPEED_INTERCEPT_M_S + SPEED_SLOPE_M_S_PER_C * air_temp_c


@dataclass(frozen=True)
class DeviceGeometry:
    """Screen dimensions and the two microphone positions, all in meters.

    ``mic_positions`` is ordered (bottom mic, top mic) in screen coordinates
    with the origin at the bottom-left corner.
    """

    screen_width_m: float
    screen_height_m: float
    mic_positions: tuple[tuple[float, float], tuple[float, float]]
    sample_rate_hz: int = 44100
    air_temp_c: float = 23.0

    def __post_init__(self):
        if self.screen_width_m <= 0 or self.screen_height_m <= 0:
            raise ConfigError("screen dimensions must be positive")
        if len(self.mic_positions) != 2:
            raise ConfigError("exactly two microphone positions are required")
        if tuple(self.mic_positions[0]) == tuple(self.mic_positions[1]):
            raise ConfigError("microphone positions must be distinct")
        if not 15.0 <= self.air_temp_c <= 35.0:
            raise ConfigError("air_temp_c must be within [15, 35]")
        if self.sample_rate_hz <= 0:
            raise ConfigError("sample_rate_hz must be positive")

    @property
    def bottom_mic(self) -> tuple[float, float]:
        return tuple(self.mic_positions[0])

    @property
    def top_mic(self) -> tuple[float, float]:
        return tuple(self.mic_positions[1])

    @property
    def speed_of_sound_m_s(self) -> float:
        return speed_of_sound(self.air_temp_c)

    def contains(self, location) -> bool:
        x, y = location
        return 0.0 <= x <= self.screen_width_m and 0.0 <= y <= self.screen_height_m

    def to_json(self) -> dict:
        return {
            "format": GEOMETRY_FORMAT,
            "screen_width_m": self.screen_width_m,
            "screen_height_m": self.screen_height_m,
            "mic_positions_m": [list(self.bottom_mic), list(self.top_mic)],
            "sample_rate_hz": self.sample_rate_hz,
            "air_temp_c": self.air_temp_c,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DeviceGeometry":
        _check_format(doc, GEOMETRY_FORMAT)
        mics = _get(doc, "mic_positions_m", list)
        if len(mics) != 2 or any(len(m) != 2 for m in mics):
            raise ConfigError("/mic_positions_m: expected two [x, y] points")
        return cls(
            screen_width_m=_get(doc, "screen_width_m", (int, float)),
            screen_height_m=_get(doc, "screen_height_m", (int, float)),
            mic_positions=(tuple(map(float, mics[0])), tuple(map(float, mics[1]))),
            sample_rate_hz=int(_get(doc, "sample_rate_hz", int)),
            air_temp_c=float(_get(doc, "air_temp_c", (int, float))),
        )


def phone_geometry() -> DeviceGeometry:
    """A 137.84 x 69.17 mm handset with bottom-center and top-center mics."""
    w, h = 0.06917, 0.13784
    return DeviceGeometry(w, h, ((w / 2.0, 0.0), (w / 2.0, h)))


def tablet_geometry() -> DeviceGeometry:
    """A 228.2 x 153.7 mm tablet with bottom-center and right-edge mics."""
    w, h = 0.1537, 0.2282
    return DeviceGeometry(w, h, ((w / 2.0, 0.0), (w, h / 2.0)))


@dataclass(frozen=True)
class KeyboardLayout:
    """Map from key label to its (x, y) screen position in meters."""

    keys: dict
    layout_kind: str = "custom"
    orientation: str = "portrait"

    def __post_init__(self):
        if len(set(self.keys)) != len(self.keys):
            raise ConfigError("duplicate key labels in layout")

    def validate_against(self, geometry: DeviceGeometry) -> None:
        for label, pos in self.keys.items():
            if not geometry.contains(pos):
                raise ConfigError(f"key {label!r} at {pos} lies outside the screen")

    def to_json(self) -> dict:
        return {
            "format": LAYOUT_FORMAT,
            "layout_kind": self.layout_kind,
            "orientation": self.orientation,
            "keys_m": {k: list(v) for k, v in self.keys.items()},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "KeyboardLayout":
        _check_format(doc, LAYOUT_FORMAT)
        keys = _get(doc, "keys_m", dict)
        parsed = {}
        for label, pos in keys.items():
            if not isinstance(pos, list) or len(pos) != 2:
                raise ConfigError(f"/keys_m/{label}: expected [x, y]")
            parsed[label] = (float(pos[0]), float(pos[1]))
        return cls(
            keys=parsed,
            layout_kind=_get(doc, "layout_kind", str),
            orientation=_get(doc, "orientation", str),
        )


def pin_pad_layout(geometry: DeviceGeometry) -> KeyboardLayout:
    """Digits 1-9 on a 3x3 grid centered in the lower screen half.

    Key pitch is screen_width / 4; row 1-2-3 is the topmost, as on a
    standard PIN pad.
    """
    pitch = geometry.screen_width_m / 4.0
    cx = geometry.screen_width_m / 2.0
    cy = geometry.screen_height_m / 4.0
    keys = {}
    for i, digit in enumerate("123456789"):
        row, col = divmod(i, 3)
        keys[digit] = (cx + (col - 1) * pitch, cy + (1 - row) * pitch)
    return KeyboardLayout(keys, layout_kind="pinpad3x3", orientation="portrait")


_QWERTY_ROWS = ("qwertyuiop", "asdfghjkl", "zxcvbnm")
_QWERTY_STAGGER = (0.0, 0.25, 0.75)


def qwerty_layout(geometry: DeviceGeometry, orientation: str = "portrait") -> KeyboardLayout:
    """26 letters in three staggered rows across the lower third of the screen.

    In landscape the keyboard spans the long side; positions stay in the
    device's native portrait coordinates.
    """
    if orientation not in ("portrait", "landscape"):
        raise ConfigError(f"unknown orientation {orientation!r}")
    if orientation == "portrait":
        span, depth = geometry.screen_width_m, geometry.screen_height_m
        place = lambda u, v: (u, v)
    else:
        span, depth = geometry.screen_height_m, geometry.screen_width_m
        place = lambda u, v: (v, u)
    key_w = span / 10.0
    row_h = depth / 12.0
    keys = {}
    for r, (row, stagger) in enumerate(zip(_QWERTY_ROWS, _QWERTY_STAGGER)):
        v = depth / 3.0 - (r + 0.5) * row_h
        for c, letter in enumerate(row):
            u = (c + 0.5 + stagger) * key_w
            keys[letter] = place(u, v)
    return KeyboardLayout(keys, layout_kind="qwerty26", orientation=orientation)


@dataclass(frozen=True)
class TapSynthConfig:
    """Parameters of the three-stage tap model and the capture conditions."""

    burst_hz: float = 8250.0
    burst_len: int = 60
    mid_hz: float = 4200.0
    mid_len: int = 200
    tail_hz: float = 65.0
    tail_len: int = 1500
    burst_decay: float = 0.030
    mid_decay: float = 0.008
    tail_decay: float = 0.002
    snr_db: float = math.inf
    location_fingerprint: bool = True
    subject_effect: float | None = None
    seed: int = 0

    def __post_init__(self):
        if min(self.burst_len, self.mid_len, self.tail_len) <= 0:
            raise ConfigError("stage lengths must be positive")
        if self.subject_effect is not None and not 0.0 <= self.subject_effect <= 1.0:
            raise ConfigError("subject_effect must be in [0, 1]")

    def validate_against(self, geometry: DeviceGeometry) -> None:
        nyquist = geometry.sample_rate_hz / 2.0
        for name in ("burst_hz", "mid_hz", "tail_hz"):
            if not 0.0 < getattr(self, name) < nyquist:
                raise ConfigError(f"{name} must lie below Nyquist ({nyquist} Hz)")

    def to_json(self) -> dict:
        doc = {
            "format": SYNTH_FORMAT,
            "burst_hz": self.burst_hz,
            "burst_len": self.burst_len,
            "mid_hz": self.mid_hz,
            "mid_len": self.mid_len,
            "tail_hz": self.tail_hz,
            "tail_len": self.tail_len,
            "burst_decay": self.burst_decay,
            "mid_decay": self.mid_decay,
            "tail_decay": self.tail_decay,
            "snr_db": None if math.isinf(self.snr_db) else self.snr_db,
            "location_fingerprint": self.location_fingerprint,
            "subject_effect": self.subject_effect,
            "seed": self.seed,
        }
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "TapSynthConfig":
        _check_format(doc, SYNTH_FORMAT)
        kwargs = {}
        for name, typ in (
            ("burst_hz", (int, float)),
            ("burst_len", int),
            ("mid_hz", (int, float)),
            ("mid_len", int),
            ("tail_hz", (int, float)),
            ("tail_len", int),
            ("burst_decay", (int, float)),
            ("mid_decay", (int, float)),
            ("tail_decay", (int, float)),
            ("location_fingerprint", bool),
            ("seed", int),
        ):
            if name in doc:
                kwargs[name] = _get(doc, name, typ)
        if "snr_db" in doc:
            kwargs["snr_db"] = math.inf if doc["snr_db"] is None else float(
                _get(doc, "snr_db", (int, float))
            )
        if doc.get("subject_effect") is not None:
            kwargs["subject_effect"] = float(_get(doc, "subject_effect", (int, float)))
        return cls(**kwargs)


@dataclass(frozen=True)
class GroundTruth:
    """Exact emission facts for one synthetic tap."""

    onset_bottom: float
    onset_top: float
    true_delay: float  # samples; positive = top mic receives first
    location: tuple[float, float]
    label: str | None = None


def expected_delay(geometry: DeviceGeometry, location) -> float:
    """Arrival-time difference in samples; positive = top mic receives first."""
    if not geometry.contains(location):
        raise DataError(f"location {location} lies outside the screen")
    d_bottom = math.dist(location, geometry.bottom_mic)
    d_top = math.dist(location, geometry.top_mic)
    return (d_bottom - d_top) / geometry.speed_of_sound_m_s * geometry.sample_rate_hz


def _hash_unit(tag: str, n: int) -> list[float]:
    """n reproducible floats in [0, 1) derived from a stable hash of `tag`."""
    out = []
    counter = 0
    while len(out) < n:
        digest = hashlib.sha256(f"{tag}#{counter}".encode()).digest()
        for i in range(0, 32, 8):
            out.append(int.from_bytes(digest[i : i + 8], "big") / 2.0**64)
        counter += 1
    return out[:n]


def _fingerprint_params(location, subject_id, subject_effect):
    """Resonator (center_hz, q) for the key's grid cell, perturbed per subject."""
    cx = round(location[0] / _FINGERPRINT_CELL_M)
    cy = round(location[1] / _FINGERPRINT_CELL_M)
    u1, u2 = _hash_unit(f"cell:{cx}:{cy}", 2)
    center_hz = 2200.0 + 3600.0 * u1
    q = 4.0 + 6.0 * u2
    if subject_effect and subject_id is not None:
        v1, v2 = _hash_unit(f"subject:{subject_id}:{cx}:{cy}", 2)
        center_hz *= 1.0 + subject_effect * (2.0 * v1 - 1.0)
        q *= 1.0 + subject_effect * (2.0 * v2 - 1.0)
    return min(max(center_hz, 1200.0), 7500.0), max(q, 1.5)


def _resonate(wave: np.ndarray, center_hz: float, q: float, fs: int) -> np.ndarray:
    """Two-pole resonator; output rescaled to the dry RMS before mixing."""
    theta = 2.0 * math.pi * center_hz / fs
    r = math.exp(-math.pi * center_hz / (q * fs))
    a = np.array([1.0, -2.0 * r * math.cos(theta), r * r])
    wet = lfilter([1.0], a, wave)
    wet_rms = math.sqrt(float(np.dot(wet, wet)) / wet.size)
    dry_rms = math.sqrt(float(np.dot(wave, wave)) / wave.size)
    if wet_rms > 0.0:
        wet *= dry_rms / wet_rms
    return 0.55 * wave + 0.45 * wet


def _base_waveform(config: TapSynthConfig, fs: int) -> np.ndarray:
    stages = (
        (config.burst_hz, config.burst_len, config.burst_decay),
        (config.mid_hz, config.mid_len, config.mid_decay),
        (config.tail_hz, config.tail_len, config.tail_decay),
    )
    parts = []
    for (freq, length, decay), amp in zip(stages, _STAGE_AMPLITUDES):
        n = np.arange(length)
        parts.append(amp * np.exp(-decay * n) * np.sin(2.0 * np.pi * freq * n / fs))
    return np.concatenate(parts)


def fractional_delay_kernel(frac: float) -> np.ndarray:
    """33-tap Lanczos-windowed sinc for a delay of `frac` in [0, 1) samples."""
    j = np.arange(-_SINC_HALF_TAPS, _SINC_HALF_TAPS + 1)
    u = j - frac
    return np.sinc(u) * np.sinc(u / (_SINC_HALF_TAPS + 1))


def _place_delayed(buffer: np.ndarray, wave: np.ndarray, position: float, gain: float):
    """Add `gain * wave` into `buffer` starting at fractional sample `position`."""
    shift = int(math.floor(position))
    frac = position - shift
    kernel = fractional_delay_kernel(frac)
    delayed = np.convolve(wave, kernel) * gain
    start = shift - _SINC_HALF_TAPS
    lo = max(start, 0)
    hi = min(start + delayed.size, buffer.size)
    if lo < hi:
        buffer[lo:hi] += delayed[lo - start : hi - start]


def synthesize_tap(
    geometry: DeviceGeometry,
    location,
    config: TapSynthConfig,
    rng: np.random.Generator | None = None,
    subject_id: str | None = None,
    label: str | None = None,
):
    """One synthetic tap as a (2, n) array (bottom, top) plus its ground truth.

    The tap is emitted at sample index 48 of the segment; each channel
    receives it after distance/c, scaled by 1/max(distance, 1 cm), with
    white noise at ``config.snr_db`` (noise sigma is set from the mean
    signal power of the two channels).
    """
    if not geometry.contains(location):
        raise DataError(f"location {location} lies outside the screen")
    config.validate_against(geometry)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    fs = geometry.sample_rate_hz
    wave = _base_waveform(config, fs)
    if config.location_fingerprint:
        center_hz, q = _fingerprint_params(location, subject_id, config.subject_effect)
        wave = _resonate(wave, center_hz, q, fs)

    c = geometry.speed_of_sound_m_s
    base_onset = 48.0
    dists = [math.dist(location, geometry.bottom_mic), math.dist(location, geometry.top_mic)]
    onsets = [base_onset + d / c * fs for d in dists]
    max_travel = math.hypot(geometry.screen_width_m, geometry.screen_height_m)
    length = int(base_onset) + wave.size + int(math.ceil(max_travel / c * fs)) + _SINC_HALF_TAPS + 1

    segment = np.zeros((2, length))
    for ch, (dist, onset) in enumerate(zip(dists, onsets)):
        _place_delayed(segment[ch], wave, onset, 1.0 / max(dist, 0.01))
    if math.isfinite(config.snr_db):
        support = slice(int(base_onset), int(base_onset) + wave.size)
        power = float(np.mean([np.mean(segment[ch, support] ** 2) for ch in (0, 1)]))
        sigma = math.sqrt(power) / 10.0 ** (config.snr_db / 20.0)
        segment += rng.normal(0.0, sigma, segment.shape)

    truth = GroundTruth(
        onset_bottom=onsets[0],
        onset_top=onsets[1],
        true_delay=onsets[0] - onsets[1],
        location=(float(location[0]), float(location[1])),
        label=label,
    )
    return segment, truth


def synthesize_session(
    geometry: DeviceGeometry,
    layout: KeyboardLayout,
    text,
    inter_tap_gap: int,
    config: TapSynthConfig,
    subject_id: str = "s0",
    session_ids=None,
):
    """A continuous recording of `text` typed on `layout`, with its labels.

    Tap onsets are spaced by ``inter_tap_gap`` plus a small positive jitter,
    so consecutive onsets are never closer than the gap. ``session_ids`` may
    be a single string or one string per symbol (used to group taps into
    PIN/word targets). Background noise at ``config.snr_db`` covers the
    whole recording; the output is peak-normalized to 0.9.
    """
    if inter_tap_gap < 2000:
        raise DataError("inter_tap_gap must be at least 2000 samples")
    layout.validate_against(geometry)
    config.validate_against(geometry)
    symbols = list(text)
    for sym in symbols:
        if sym not in layout.keys:
            raise DataError(f"symbol {sym!r} missing from layout")
    if session_ids is None or isinstance(session_ids, str):
        session_ids = [session_ids or "session0"] * len(symbols)
    if len(session_ids) != len(symbols):
        raise DataError("session_ids must match text length")

    rng = np.random.default_rng(config.seed)
    dry = replace(config, snr_db=math.inf)

    onsets = []
    cursor = 4000
    for _ in symbols:
        cursor += int(rng.integers(0, inter_tap_gap // 8 + 1))
        onsets.append(cursor)
        cursor += inter_tap_gap

    tail_room = dry.burst_len + dry.mid_len + dry.tail_len + 600
    total = (onsets[-1] if onsets else 4000) + tail_room
    audio = np.zeros((2, total))
    labels = []
    tap_power = []
    for sym, onset, sess in zip(symbols, onsets, session_ids):
        segment, _ = synthesize_tap(
            geometry, layout.keys[sym], dry, rng=rng, subject_id=subject_id, label=sym
        )
        start = onset - 48
        span = min(segment.shape[1], total - start)
        audio[:, start : start + span] += segment[:, :span]
        support = segment[:, 48 : 48 + tail_room - 600]
        tap_power.append(float(np.mean(support**2)))
        labels.append(TapLabel(onset, sym, subject_id, sess))

    if math.isfinite(config.snr_db) and tap_power:
        sigma = math.sqrt(float(np.mean(tap_power))) / 10.0 ** (config.snr_db / 20.0)
        audio += rng.normal(0.0, sigma, audio.shape)
    elif math.isfinite(config.snr_db):
        audio += rng.normal(0.0, 1e-4, audio.shape)

    peak = float(np.max(np.abs(audio))) if audio.size else 0.0
    if peak > 0.0:
        audio *= 0.9 / max(peak, 0.9)
    recording = AudioRecording(
        audio, geometry.sample_rate_hz, (ChannelRole.BOTTOM_MIC, ChannelRole.TOP_MIC)
    )
    return recording, labels


def tdoa_map(geometry: DeviceGeometry, grid_step_m: float) -> np.ndarray:
    """Integer-rounded expected delay over a screen grid.

    Row i, column j is the delay at (j * step, i * step); equal values form
    the iso-delay bands of the device.
    """
    if grid_step_m <= 0:
        raise DataError("grid_step_m must be positive")
    xs = np.arange(0.0, geometry.screen_width_m + grid_step_m / 2.0, grid_step_m)
    ys = np.arange(0.0, geometry.screen_height_m + grid_step_m / 2.0, grid_step_m)
    grid = np.empty((ys.size, xs.size), dtype=np.int64)
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            grid[i, j] = round(
                expected_delay(geometry, (min(x, geometry.screen_width_m), min(y, geometry.screen_height_m)))
            )
    return grid


def _check_format(doc: dict, expected: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"expected a JSON object for {expected}")
    got = doc.get("format")
    if got != expected:
        raise ConfigError(f"/format: expected {expected!r}, got {got!r}")


def _get(doc: dict, key: str, typ):
    if key not in doc:
        raise ConfigError(f"/{key}: missing required field")
    value = doc[key]
    if typ is int and isinstance(value, bool):
        raise ConfigError(f"/{key}: expected integer, got boolean")
    if not isinstance(value, typ):
        raise ConfigError(f"/{key}: expected {typ}, got {type(value).__name__}")
    return value


def load_json_config(path, kind: str):
    """Read and parse one of the three JSON config documents by kind."""
    parsers = {
        "geometry": DeviceGeometry.from_json,
        "layout": KeyboardLayout.from_json,
        "synth": TapSynthConfig.from_json,
    }
    try:
        with open(path, encoding="utf-8") as handle:
            doc = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parsers[kind](doc)
