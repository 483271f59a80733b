"""SVD-based linear discriminant classifier and the evaluation protocols.

Training whitens the within-class scatter through its singular value
decomposition (singular values floored at a relative ridge, since 385-dim
features with ~100 samples per class leave the scatter rank-deficient),
then projects the whitened class means onto their top C-1 singular
directions. Prediction ranks classes by a Gaussian posterior over the
distance to the projected centroids.

Evaluation implements stratified 70/30 splits with per-class
under-sampling of the training side, leave-one-subject-out folds, and
macro F1.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .features import Dataset

MODEL_FORMAT = "tap-lda/1"


@dataclass(frozen=True)
class LdaModel:
    """Trained discriminant model: whitening, projection, centroids, priors."""

    class_labels: tuple
    global_mean: np.ndarray
    whitener: np.ndarray
    projector: np.ndarray
    centroids: np.ndarray
    log_priors: np.ndarray
    ridge: float
    metadata: dict = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return len(self.class_labels)

    @property
    def n_dims(self) -> int:
        return self.global_mean.size

    def project(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.global_mean) @ self.projector


@dataclass(frozen=True)
class PredictionRanking:
    """Class labels with posterior confidences, sorted by confidence descending."""

    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((str(l), float(c)) for l, c in self.entries))

    def labels(self) -> list:
        return [label for label, _ in self.entries]

    def top(self) -> str:
        return self.entries[0][0]

    def confidence_of(self, label: str) -> float:
        for lab, conf in self.entries:
            if lab == label:
                return conf
        raise KeyError(label)


def undersample(dataset: Dataset, per_class_n: int, seed: int) -> Dataset:
    """Keep at most `per_class_n` samples per class, chosen uniformly.

    Selection uses a seeded generator; the original order within each class
    is preserved.
    """
    if per_class_n < 1:
        raise DataError("per_class_n must be at least 1")
    rng = np.random.default_rng(seed)
    keep = []
    for label in dataset.class_labels():
        idx = np.nonzero(dataset.y == label)[0]
        if idx.size > per_class_n:
            idx = np.sort(rng.choice(idx, size=per_class_n, replace=False))
        keep.extend(idx.tolist())
    return dataset.take(sorted(keep))


def train_lda(dataset: Dataset, ridge: float = 1e-6) -> LdaModel:
    """Fit the SVD-based discriminant model.

    Within-class singular values are floored at ``ridge * s_max`` before
    whitening, which also covers the fully degenerate case of zero scatter.
    """
    labels = dataset.class_labels()
    if len(labels) < 2:
        raise DataError("training needs at least two classes")
    n, d = dataset.X.shape
    if n <= len(labels):
        raise DataError(f"{n} samples cannot cover {len(labels)} classes")

    X = dataset.X
    global_mean = X.mean(axis=0)
    means = np.empty((len(labels), d))
    counts = np.empty(len(labels))
    centered = np.empty_like(X)
    for i, label in enumerate(labels):
        mask = dataset.y == label
        counts[i] = mask.sum()
        means[i] = X[mask].mean(axis=0)
        centered[mask] = X[mask] - means[i]

    scatter = centered.T @ centered / max(n - len(labels), 1)
    u, s, _ = np.linalg.svd(scatter, hermitian=True)
    floor = ridge * s[0] if s[0] > 0.0 else 1e-12
    s_floored = np.maximum(s, floor)
    whitener = (u / np.sqrt(s_floored)) @ u.T

    between = (means - global_mean) * np.sqrt(counts / n)[:, None]
    _, _, vt = np.linalg.svd(between @ whitener, full_matrices=True)
    directions = vt[: len(labels) - 1]
    projector = whitener @ directions.T
    centroids = (means - global_mean) @ projector

    return LdaModel(
        class_labels=tuple(labels),
        global_mean=global_mean,
        whitener=whitener,
        projector=projector,
        centroids=centroids,
        log_priors=np.log(counts / n),
        ridge=float(ridge),
    )


def predict(model: LdaModel, fv) -> PredictionRanking:
    """Rank every class by its posterior for one feature vector.

    Scores are -0.5 * squared distance to the centroid plus the log prior;
    confidences are their softmax. Ties break by class-label order.
    """
    values = np.asarray(getattr(fv, "values", fv), dtype=np.float64)
    if values.shape != (model.n_dims,):
        raise DataError(f"feature vector has {values.shape}, model expects ({model.n_dims},)")
    z = model.project(values)
    d_sq = np.sum((model.centroids - z) ** 2, axis=1)
    scores = -0.5 * d_sq + model.log_priors
    shifted = np.exp(scores - scores.max())
    conf = np.maximum(shifted / shifted.sum(), 1e-300)
    conf = conf / conf.sum()
    order = sorted(range(model.n_classes), key=lambda i: (-conf[i], i))
    return PredictionRanking(tuple((model.class_labels[i], conf[i]) for i in order))


def _predict_labels(model: LdaModel, X: np.ndarray) -> list:
    """Argmax labels for a feature matrix (vectorized fast path of `predict`)."""
    Z = (X - model.global_mean) @ model.projector
    d_sq = ((Z[:, None, :] - model.centroids[None, :, :]) ** 2).sum(axis=2)
    scores = -0.5 * d_sq + model.log_priors
    best = np.argmax(scores, axis=1)
    return [model.class_labels[i] for i in best]


@dataclass
class EvaluationReport:
    """Macro-F1 summary of one evaluation protocol run."""

    macro_f1_mean: float
    macro_f1_std: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    confusion: np.ndarray
    class_labels: tuple
    protocol: str
    repetitions: int
    fold_macro_f1: tuple
    macro_f1_from_mean_pr: float

    def to_json(self) -> dict:
        return {
            "format": "tap-report/1",
            "protocol": self.protocol,
            "repetitions": self.repetitions,
            "macro_f1_mean": self.macro_f1_mean,
            "macro_f1_std": self.macro_f1_std,
            "macro_f1_from_mean_pr": self.macro_f1_from_mean_pr,
            "fold_macro_f1": list(self.fold_macro_f1),
            "class_labels": list(self.class_labels),
            "per_class_precision": self.per_class_precision.tolist(),
            "per_class_recall": self.per_class_recall.tolist(),
            "per_class_f1": self.per_class_f1.tolist(),
            "confusion": self.confusion.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "EvaluationReport":
        if doc.get("format") != "tap-report/1":
            raise ConfigError(f"/format: expected tap-report/1, got {doc.get('format')!r}")
        return cls(
            macro_f1_mean=float(doc["macro_f1_mean"]),
            macro_f1_std=float(doc["macro_f1_std"]),
            per_class_precision=np.array(doc["per_class_precision"]),
            per_class_recall=np.array(doc["per_class_recall"]),
            per_class_f1=np.array(doc["per_class_f1"]),
            confusion=np.array(doc["confusion"], dtype=np.int64),
            class_labels=tuple(doc["class_labels"]),
            protocol=str(doc["protocol"]),
            repetitions=int(doc["repetitions"]),
            fold_macro_f1=tuple(doc["fold_macro_f1"]),
            macro_f1_from_mean_pr=float(doc["macro_f1_from_mean_pr"]),
        )


def per_class_metrics(confusion: np.ndarray):
    """Precision, recall and F1 per class from a confusion matrix (0/0 -> 0)."""
    confusion = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(confusion)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(2 * tp + fp + fn > 0, 2 * tp / (2 * tp + fp + fn), 0.0)
    return precision, recall, f1


def macro_f1(confusion) -> float:
    """Unweighted mean of per-class F1 over the confusion matrix."""
    confusion = np.asarray(confusion)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise DataError("confusion matrix must be square")
    if np.any(confusion < 0):
        raise DataError("confusion counts must be non-negative")
    if not np.any(confusion):
        raise DataError("confusion matrix is all zero")
    _, _, f1 = per_class_metrics(confusion)
    return float(f1.mean())


def _f1_of_means(confusion: np.ndarray) -> float:
    """The alternative reading of macro F1: F1 of the mean P and mean R."""
    precision, recall, _ = per_class_metrics(confusion)
    p, r = float(precision.mean()), float(recall.mean())
    return 0.0 if p + r == 0.0 else 2.0 * p * r / (p + r)


def _confusion(true_labels, predicted, class_labels) -> np.ndarray:
    index = {label: i for i, label in enumerate(class_labels)}
    matrix = np.zeros((len(class_labels), len(class_labels)), dtype=np.int64)
    for truth, pred in zip(true_labels, predicted):
        matrix[index[truth], index[pred]] += 1
    return matrix


def evaluate_split(
    dataset: Dataset,
    train_fraction: float = 0.7,
    per_class_n: int = 100,
    repetitions: int = 5,
    seed: int = 0,
) -> EvaluationReport:
    """Repeated stratified split: train on `train_fraction`, test on the rest.

    The training side is under-sampled to `per_class_n` per class on every
    repetition; the report carries the mean and std of macro F1 across
    repetitions and the summed confusion matrix.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError("train_fraction must lie strictly between 0 and 1")
    if len(dataset) == 0:
        raise DataError("dataset is empty")
    labels = dataset.class_labels()
    rng = np.random.default_rng(seed)
    scores = []
    total_confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for _ in range(repetitions):
        train_idx, test_idx = [], []
        for label in labels:
            idx = np.nonzero(dataset.y == label)[0]
            if idx.size < 2:
                raise DataError(f"class {label!r} has fewer than 2 samples")
            perm = rng.permutation(idx)
            n_train = min(max(int(round(train_fraction * idx.size)), 1), idx.size - 1)
            train_idx.extend(perm[:n_train].tolist())
            test_idx.extend(perm[n_train:].tolist())
        train_ds = undersample(dataset.take(sorted(train_idx)), per_class_n, int(rng.integers(2**32)))
        model = train_lda(train_ds)
        test_ds = dataset.take(sorted(test_idx))
        predicted = _predict_labels(model, test_ds.X)
        confusion = _confusion(test_ds.y, predicted, labels)
        total_confusion += confusion
        scores.append(macro_f1(confusion))
    return _build_report(total_confusion, labels, "split", repetitions, scores)


def evaluate_loso(dataset: Dataset, per_class_n: int = 100, seed: int = 0) -> EvaluationReport:
    """Leave-one-subject-out evaluation, one fold per subject.

    Folds whose training side lacks a class score 0 for that class (a
    warning is emitted); macro F1 is averaged over folds.
    """
    subjects = sorted(set(dataset.subjects.tolist()))
    if len(subjects) < 2:
        raise DataError("LOSO needs at least two distinct subjects")
    labels = dataset.class_labels()
    rng = np.random.default_rng(seed)
    scores = []
    total_confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for subject in subjects:
        held = dataset.subjects == subject
        train_ds = dataset.take(np.nonzero(~held)[0])
        test_ds = dataset.take(np.nonzero(held)[0])
        missing = set(labels) - set(train_ds.class_labels())
        if missing:
            warnings.warn(
                f"LOSO fold {subject!r}: classes {sorted(missing)} missing from "
                "the training side score 0 for this fold"
            )
        train_ds = undersample(train_ds, per_class_n, int(rng.integers(2**32)))
        model = train_lda(train_ds)
        predicted = _predict_labels(model, test_ds.X)
        confusion = _confusion(test_ds.y, predicted, labels)
        total_confusion += confusion
        scores.append(macro_f1(confusion))
    return _build_report(total_confusion, labels, "loso", len(subjects), scores)


def _build_report(total_confusion, labels, protocol, repetitions, scores):
    precision, recall, f1 = per_class_metrics(total_confusion)
    return EvaluationReport(
        macro_f1_mean=float(np.mean(scores)),
        macro_f1_std=float(np.std(scores)),
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        confusion=total_confusion,
        class_labels=tuple(labels),
        protocol=protocol,
        repetitions=repetitions,
        fold_macro_f1=tuple(scores),
        macro_f1_from_mean_pr=_f1_of_means(total_confusion),
    )


def save_model(model: LdaModel, path) -> None:
    """Persist the model as versioned JSON with row-major matrices."""
    doc = {
        "format": MODEL_FORMAT,
        "class_labels": list(model.class_labels),
        "global_mean": model.global_mean.tolist(),
        "whitener": model.whitener.tolist(),
        "projector": model.projector.tolist(),
        "centroids": model.centroids.tolist(),
        "log_priors": model.log_priors.tolist(),
        "ridge": model.ridge,
        "metadata": model.metadata,
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_model(path) -> LdaModel:
    """Load a persisted model, refusing unknown format versions."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != MODEL_FORMAT:
        raise ConfigError(
            f"{path}: unknown model format {doc.get('format')!r}, expected {MODEL_FORMAT!r}"
        )
    return LdaModel(
        class_labels=tuple(doc["class_labels"]),
        global_mean=np.array(doc["global_mean"]),
        whitener=np.array(doc["whitener"]),
        projector=np.array(doc["projector"]),
        centroids=np.array(doc["centroids"]),
        log_priors=np.array(doc["log_priors"]),
        ridge=float(doc["ridge"]),
        metadata=dict(doc.get("metadata", {})),
    )
