"""Quefrency feature sets built from tap segments.

Three feature sets: the cepstrum of the top microphone head, the cepstrum
of the bottom one, and their combination (both cepstra, the estimated
inter-microphone delay, and the cepstrum of the channel difference taken
over the same absolute sample window).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .audio_io import AudioRecording, ChannelRole, TapLabel
from .detect import HEAD_LEN, TapSegment, segment_at
from .dsp import quefrency
from .errors import DataError, MissingChannelError
from .tdoa import DelayMethod, TdoaConfig, estimate_delay


class FeatureSet(str, Enum):
    TOP = "top"
    BOTM = "botm"
    TOPBOTM = "topbotm"


FEATURE_DIMS = {FeatureSet.TOP: 128, FeatureSet.BOTM: 128, FeatureSet.TOPBOTM: 385}

# Samples per channel handed to the delay estimator (head + leading tail).
_DELAY_WINDOW = 512


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    feature_set: FeatureSet

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        expected = FEATURE_DIMS[self.feature_set]
        if values.shape != (expected,):
            raise DataError(
                f"{self.feature_set.value} features must have {expected} dims, got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise DataError("feature vector contains NaN or Inf")

    @property
    def dim(self) -> int:
        return self.values.size


def extract_features(
    segment: TapSegment,
    feature_set: FeatureSet,
    tdoa_config: TdoaConfig = TdoaConfig(),
) -> FeatureVector:
    """Build one feature vector from a tap segment.

    The combined set is laid out as [top cepstrum (128) | bottom cepstrum
    (128) | delay (1) | difference cepstrum (128)]; the delay is estimated
    with the band-pass + cross-correlation pipeline in raw sample units.
    """
    feature_set = FeatureSet(feature_set)
    if feature_set == FeatureSet.TOP:
        return FeatureVector(quefrency(segment.head(ChannelRole.TOP_MIC)), feature_set)
    if feature_set == FeatureSet.BOTM:
        return FeatureVector(quefrency(segment.head(ChannelRole.BOTTOM_MIC)), feature_set)

    top_head = segment.head(ChannelRole.TOP_MIC)
    bottom_head = segment.head(ChannelRole.BOTTOM_MIC)
    delay = estimate_delay(
        segment.analysis_window(ChannelRole.TOP_MIC, _DELAY_WINDOW),
        segment.analysis_window(ChannelRole.BOTTOM_MIC, _DELAY_WINDOW),
        DelayMethod.CC,
        tdoa_config,
        sample_rate_hz=segment.sample_rate_hz,
    )
    values = np.concatenate(
        [
            quefrency(top_head),
            quefrency(bottom_head),
            [delay.lag_samples],
            quefrency(top_head - bottom_head),
        ]
    )
    return FeatureVector(values, feature_set)


@dataclass
class Dataset:
    """Feature matrix with labels and subject ids, one row per tap."""

    X: np.ndarray
    y: np.ndarray
    subjects: np.ndarray
    feature_set: FeatureSet | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=object)
        self.subjects = np.asarray(self.subjects, dtype=object)
        if self.X.ndim != 2 or not (self.X.shape[0] == self.y.size == self.subjects.size):
            raise DataError("dataset arrays must agree on the number of rows")

    def __len__(self) -> int:
        return self.X.shape[0]

    def class_labels(self) -> list:
        return sorted(set(self.y.tolist()))

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.X[idx], self.y[idx], self.subjects[idx], self.feature_set)


def extract_dataset(
    recording: AudioRecording,
    labels: list[TapLabel],
    feature_set: FeatureSet,
    tdoa_config: TdoaConfig = TdoaConfig(),
) -> Dataset:
    """One feature vector per labeled onset (detection is bypassed).

    Every onset must admit a full 128-sample head inside the recording.
    """
    feature_set = FeatureSet(feature_set)
    rows, ys, subjects = [], [], []
    for lab in labels:
        if lab.onset_sample + HEAD_LEN > recording.n_samples:
            raise DataError(
                f"label at onset {lab.onset_sample} leaves no room for a "
                f"{HEAD_LEN}-sample head (recording has {recording.n_samples} samples)"
            )
        segment = segment_at(recording, lab.onset_sample, label=lab.label)
        fv = extract_features(segment, feature_set, tdoa_config)
        rows.append(fv.values)
        ys.append(lab.label)
        subjects.append(lab.subject_id)
    dim = FEATURE_DIMS[feature_set]
    X = np.array(rows) if rows else np.empty((0, dim))
    return Dataset(X, np.array(ys, dtype=object), np.array(subjects, dtype=object), feature_set)


def dataset_to_csv(dataset: Dataset, path) -> None:
    """Write `label,subject_id,f0..fN` rows (width set by the feature set)."""
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        dim = dataset.X.shape[1]
        writer.writerow(["label", "subject_id"] + [f"f{i}" for i in range(dim)])
        for label, subject, row in zip(dataset.y, dataset.subjects, dataset.X):
            writer.writerow([label, subject] + [repr(v) for v in row])


def dataset_from_csv(path, feature_set: FeatureSet | None = None) -> Dataset:
    """Read a dataset CSV; the feature set is inferred from the width if unique."""
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or header[:2] != ["label", "subject_id"]:
            raise DataError(f"{path}: expected header label,subject_id,f0..")
        dim = len(header) - 2
        ys, subjects, rows = [], [], []
        for row in reader:
            if not row:
                continue
            if len(row) != dim + 2:
                raise DataError(f"{path}: row width {len(row)} does not match header")
            ys.append(row[0])
            subjects.append(row[1])
            rows.append([float(v) for v in row[2:]])
    if feature_set is None:
        matches = [fs for fs, d in FEATURE_DIMS.items() if d == dim]
        feature_set = matches[0] if len(matches) == 1 else None
    X = np.array(rows) if rows else np.empty((0, dim))
    return Dataset(X, np.array(ys, dtype=object), np.array(subjects, dtype=object), feature_set)
