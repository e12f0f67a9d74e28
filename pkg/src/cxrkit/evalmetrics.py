"""Evaluation mathematics: confusion counts, one-vs-rest metrics, rank-based
AUC with midrank ties, macro averaging, and the stratified dataset splitter.
"""

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSet, EmptyClassWarning, ManifestError
from .imagecore import CLASS_LABELS
from .rng import RngState, shuffle

NUM_CLASSES = len(CLASS_LABELS)

METRIC_KEYS = ("accuracy", "recall", "precision", "auc", "f1")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str


def load_manifest(path) -> list:
    """Read a JSON Lines manifest of {"path", "label"} objects."""
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict) or "path" not in obj or "label" not in obj:
                raise ManifestError(f"line {lineno}: expected {{'path', 'label'}}")
            if obj["label"] not in CLASS_LABELS:
                raise ManifestError(f"line {lineno}: unknown label {obj['label']!r}")
            if obj["path"] in seen:
                raise ManifestError(f"line {lineno}: duplicate path {obj['path']!r}")
            seen.add(obj["path"])
            entries.append(ManifestEntry(path=obj["path"], label=obj["label"]))
    return entries


def save_manifest(entries, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            f.write(json.dumps({"path": e.path, "label": e.label}) + "\n")


def confusion_matrix(preds, labels) -> np.ndarray:
    """4x4 count matrix, rows = true class, columns = predicted class."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise IndexError("preds and labels must be equal-length 1-d sequences")
    if preds.size and (preds.min() < 0 or preds.max() >= NUM_CLASSES
                       or labels.min() < 0 or labels.max() >= NUM_CLASSES):
        raise IndexError(f"class indices must lie in [0, {NUM_CLASSES})")
    cm = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for t, p in zip(labels, preds):
        cm[t, p] += 1
    return cm


@dataclass
class ClassMetrics:
    recall: float = 0.0
    precision: float = 0.0
    accuracy: float = 0.0
    f1: float = 0.0
    auc: float = 0.0
    degenerate: bool = False


def per_class_metrics(cm: np.ndarray, c: int) -> ClassMetrics:
    """One-vs-rest reduction of the confusion matrix for class c.

    Zero-denominator metrics come back as 0 with the degenerate flag set,
    keeping reports numeric.
    """
    cm = np.asarray(cm, dtype=np.int64)
    tp = int(cm[c, c])
    fn = int(cm[c].sum() - tp)
    fp = int(cm[:, c].sum() - tp)
    tn = int(cm.sum() - tp - fn - fp)
    m = ClassMetrics()
    if tp + fn > 0:
        m.recall = tp / (tp + fn)
    else:
        m.degenerate = True
    if tp + fp > 0:
        m.precision = tp / (tp + fp)
    else:
        m.degenerate = True
    total = tp + tn + fp + fn
    if total > 0:
        m.accuracy = (tp + tn) / total
    else:
        m.degenerate = True
    if m.precision + m.recall > 0:
        m.f1 = 2 * m.precision * m.recall / (m.precision + m.recall)
    else:
        m.f1 = 0.0
        m.degenerate = True
    return m


def binary_auc(scores, labels) -> float:
    """Rank-formula AUC: ascending sort, midranks for ties,
    (sum of positive ranks - P(P+1)/2) / (P*N)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-d sequences")
    p = int(labels.sum())
    n = int(labels.size - p)
    if p == 0 or n == 0:
        raise DegenerateSet(f"need >=1 positive and >=1 negative, got {p}/{n}")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # midrank, 1-based
        i = j + 1
    pos_rank_sum = float(ranks[labels].sum())
    return (pos_rank_sum - p * (p + 1) / 2.0) / (p * n)


@dataclass
class EvalReport:
    confusion: np.ndarray
    per_class: dict
    macro: dict
    overall_accuracy: float
    samples: int
    degenerate_classes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "overall_accuracy": self.overall_accuracy,
            "macro": {k: self.macro[k] for k in METRIC_KEYS},
            "per_class": {
                label: {k: getattr(self.per_class[label], k) for k in METRIC_KEYS}
                for label in CLASS_LABELS
            },
            "degenerate_classes": list(self.degenerate_classes),
            "confusion": self.confusion.tolist(),
            "class_labels": list(CLASS_LABELS),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def macro_metrics(probabilities, labels) -> EvalReport:
    """Full report from an (N, 4) probability table and integer labels.

    Predictions are argmax with ties to the lowest index; per-class AUC uses
    column c as the score and label == c as positive.  The macro block is
    the unweighted mean over the 4 classes; overall_accuracy is plain top-1
    agreement, reported separately from the one-vs-rest macro accuracy.
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[1] != NUM_CLASSES or probs.shape[0] != labels.size:
        raise ValueError(f"need (N, {NUM_CLASSES}) probabilities with N labels")
    if probs.size and np.abs(probs.sum(axis=1) - 1.0).max() > 1e-4:
        raise ValueError("probability rows must sum to 1 within 1e-4")
    preds = probs.argmax(axis=1)
    cm = confusion_matrix(preds, labels)
    per_class = {}
    degenerate = []
    for c, label in enumerate(CLASS_LABELS):
        m = per_class_metrics(cm, c)
        positives = labels == c
        try:
            m.auc = binary_auc(probs[:, c], positives)
        except DegenerateSet:
            m.auc = 0.0
            m.degenerate = True
        per_class[label] = m
        if m.degenerate:
            degenerate.append(label)
    macro = {k: float(np.mean([getattr(per_class[label], k) for label in CLASS_LABELS]))
             for k in METRIC_KEYS}
    overall = float((preds == labels).mean()) if labels.size else 0.0
    return EvalReport(confusion=cm, per_class=per_class, macro=macro,
                      overall_accuracy=overall, samples=int(labels.size),
                      degenerate_classes=degenerate)


def stratified_split(entries, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Per-class shuffle-and-slice split into (train, val, test).

    Each class shuffles with its own SplitMix64 stream seeded seed XOR
    class-index, then takes floor(r0*n) for train, floor(r1*n) for val, and
    the remainder for test, so the counts depend only on the class sizes.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    train, val, test = [], [], []
    for idx, label in enumerate(CLASS_LABELS):
        members = [e for e in entries if e.label == label]
        if not members:
            warnings.warn(f"class {label!r} has no samples", EmptyClassWarning)
            continue
        shuffle(members, RngState(seed ^ idx))
        n = len(members)
        n_train = math.floor(ratios[0] * n)
        n_val = math.floor(ratios[1] * n)
        train.extend(members[:n_train])
        val.extend(members[n_train:n_train + n_val])
        test.extend(members[n_train + n_val:])
    return train, val, test
