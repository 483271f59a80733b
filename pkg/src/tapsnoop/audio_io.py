"""Bit-exact WAV and tap-label CSV input/output.

Canonical on-disk audio is 16-bit PCM; float32 WAV is accepted on read.
Labels travel in a sidecar CSV (header ``onset_sample,label,subject_id,
session_id``) so the audio stays playable by standard tools.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import (
    DataError,
    EmptyAudioError,
    LabelFormatError,
    MissingChannelError,
    UnsupportedEncodingError,
)

LABEL_HEADER = ["onset_sample", "label", "subject_id", "session_id"]

# 16-bit grid: value v decodes to v / PCM_SCALE, so the exact grid round-trips.
PCM_SCALE = 32768.0


class ChannelRole(str, Enum):
    TOP_MIC = "top_mic"
    BOTTOM_MIC = "bottom_mic"
    OTHER = "other"


# Channel 0 is the phone's main (bottom) microphone by default.
DEFAULT_ROLES = {
    1: (ChannelRole.BOTTOM_MIC,),
    2: (ChannelRole.BOTTOM_MIC, ChannelRole.TOP_MIC),
}


@dataclass(frozen=True)
class AudioRecording:
    """Multichannel sample buffer, shape (n_channels, n_samples), values in [-1, 1].

    Treated as immutable after construction; safe to share across threads.
    """

    samples: np.ndarray
    sample_rate_hz: int
    channel_roles: tuple[ChannelRole, ...]

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "channel_roles", tuple(self.channel_roles))
        self.validate()

    def validate(self) -> None:
        if self.samples.ndim != 2:
            raise DataError("samples must be a (channels, frames) array")
        if len(self.channel_roles) != self.samples.shape[0]:
            raise DataError(
                f"{len(self.channel_roles)} roles for {self.samples.shape[0]} channels"
            )
        if self.sample_rate_hz <= 0:
            raise DataError("sample_rate_hz must be positive")
        if self.samples.size:
            if not np.all(np.isfinite(self.samples)):
                raise DataError("recording contains NaN or Inf")
            peak = float(np.max(np.abs(self.samples)))
            if peak > 1.0:
                raise DataError(f"sample values must lie in [-1, 1], peak is {peak}")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def has_role(self, role: ChannelRole) -> bool:
        return role in self.channel_roles

    def channel(self, role: ChannelRole) -> np.ndarray:
        """The single channel carrying `role`; raises if absent or duplicated."""
        hits = [i for i, r in enumerate(self.channel_roles) if r == role]
        if len(hits) != 1:
            raise MissingChannelError(
                f"recording has {len(hits)} channels with role {role.value}, need exactly 1"
            )
        return self.samples[hits[0]]


@dataclass(frozen=True, order=True)
class TapLabel:
    """Ground-truth (or exported-detection) tap onset with its key label."""

    onset_sample: int
    label: str = field(compare=False)
    subject_id: str = field(compare=False)
    session_id: str = field(compare=False)


def load_wav(path, roles: tuple[ChannelRole, ...] | None = None) -> AudioRecording:
    """Read a PCM WAV file (16-bit int or 32-bit float, 1-2 channels).

    16-bit value v maps to v / 32768. Unless `roles` is given, channel 0 is
    the bottom microphone and channel 1 (if present) the top one.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such audio file: {path}")
    try:
        rate, data = wavfile.read(str(path))
    except ValueError as exc:
        raise UnsupportedEncodingError(f"{path}: {exc}") from exc
    if data.size == 0:
        raise EmptyAudioError(f"{path}: zero-length audio")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM_SCALE
    elif data.dtype == np.float32:
        samples = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise UnsupportedEncodingError(
            f"{path}: unsupported sample encoding {data.dtype}, need int16 or float32"
        )
    if samples.ndim == 1:
        samples = samples[np.newaxis, :]
    else:
        samples = samples.T
    n_channels = samples.shape[0]
    if roles is None:
        if n_channels not in DEFAULT_ROLES:
            raise UnsupportedEncodingError(
                f"{path}: {n_channels} channels, expected 1 or 2"
            )
        roles = DEFAULT_ROLES[n_channels]
    return AudioRecording(samples, int(rate), roles)


def save_wav(recording: AudioRecording, path) -> None:
    """Write 16-bit PCM; values are clipped to [-1, 1] before quantization."""
    recording.validate()
    clipped = np.clip(recording.samples, -1.0, 1.0)
    quantized = np.clip(np.round(clipped * PCM_SCALE), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), recording.sample_rate_hz, quantized.T)


def load_labels(path) -> list[TapLabel]:
    """Read a tap-label CSV, returning labels sorted by onset (ties keep file order)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise LabelFormatError(f"{path}: empty file, expected header row") from None
        if header != LABEL_HEADER:
            raise LabelFormatError(
                f"{path}: bad header {header!r}, expected {LABEL_HEADER!r}"
            )
        labels = []
        for row_num, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise LabelFormatError(f"{path}: row {row_num}: expected 4 columns, got {len(row)}")
            try:
                onset = int(row[0])
            except ValueError:
                raise LabelFormatError(
                    f"{path}: row {row_num}: onset_sample {row[0]!r} is not an integer"
                ) from None
            if onset < 0:
                raise LabelFormatError(f"{path}: row {row_num}: negative onset_sample")
            labels.append(TapLabel(onset, row[1], row[2], row[3]))
    return sorted(labels, key=lambda lab: lab.onset_sample)


def save_labels(labels, path) -> None:
    """Write tap labels (detections may have an empty label column)."""
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(LABEL_HEADER)
        for lab in labels:
            writer.writerow([lab.onset_sample, lab.label, lab.subject_id, lab.session_id])
