"""Program prediction from publication text.

Two trainable models over a shared feature rendering of 10 text attributes:

* a bag-of-words multinomial Naive Bayes with Laplace smoothing, built from
  scratch on token counts;
* a softmax linear head over 768-dim embeddings supplied by an external
  embedding provider or cache, trained with full-batch gradient descent.

Plus the evaluation pieces: confusion-matrix metrics with program-level
macro averaging, and the deterministic train/val/test split.
"""

from __future__ import annotations

import json
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import labels
from .errors import (
    DimensionMismatchError,
    EmptyCorpusError,
    EmptyEvalError,
    LengthMismatchError,
    TooSmallError,
)
from .store import Publication

EMBEDDING_DIM = 768

# The 10 attributes rendered into the model input, in order.
FEATURE_ATTRIBUTES: tuple[str, ...] = (
    "title",
    "authors",
    "authors_with_affil",
    "affiliations",
    "author_keywords",
    "index_keywords",
    "abstract",
    "source_title",
    "document_type",
    "publisher",
)

_WS = re.compile(r"\s+")
_TOKEN = re.compile(r"[a-z0-9]+")


def render_features(pub: Publication) -> str:
    """Deterministic "name: value" rendering of the 10 feature attributes.

    Missing values render as empty; newlines inside values collapse to
    single spaces so a record is always one segment per attribute.
    """
    parts = []
    for name in FEATURE_ATTRIBUTES:
        value = getattr(pub, name)
        text = "" if value is None else _WS.sub(" ", str(value)).strip()
        parts.append(f"{name}: {text}")
    return "\n".join(parts)


def tokenize(text: str) -> dict[str, int]:
    """Lowercase, split on non-alphanumeric, drop tokens shorter than 2."""
    counts = Counter(t for t in _TOKEN.findall(text.lower()) if len(t) >= 2)
    return dict(counts)


# --- naive bayes ------------------------------------------------------------

@dataclass
class BowModel:
    """Multinomial NB parameters over a training-corpus vocabulary."""

    vocabulary: dict[str, int]
    model_labels: list[str]  # canonical order, labels seen in training
    class_log_prior: dict[str, float]
    token_log_likelihood: dict[str, list[float]]  # label -> per-token log P
    smoothing_alpha: float


def train_naive_bayes(
    corpus: Sequence[tuple[str, str]], alpha: float = 1.0
) -> BowModel:
    """Fit multinomial NB with Laplace smoothing alpha on (text, label) pairs."""
    if not corpus:
        raise EmptyCorpusError("cannot train on an empty corpus")
    if alpha <= 0:
        raise ValueError("smoothing alpha must be > 0")

    token_counts: dict[str, Counter] = {}
    doc_counts: Counter = Counter()
    for text, raw_label in corpus:
        label = labels.parse_label(raw_label)
        doc_counts[label] += 1
        bucket = token_counts.setdefault(label, Counter())
        bucket.update(tokenize(text))

    vocabulary = {
        token: i
        for i, token in enumerate(sorted({t for c in token_counts.values() for t in c}))
    }
    model_labels = [l for l in labels.CANONICAL_LABELS if doc_counts[l] > 0]
    total_docs = sum(doc_counts.values())
    v = len(vocabulary)

    class_log_prior = {
        label: math.log(doc_counts[label] / total_docs) for label in model_labels
    }
    token_log_likelihood = {}
    for label in model_labels:
        counts = token_counts[label]
        denom = sum(counts.values()) + alpha * v
        row = [0.0] * v
        for token, idx in vocabulary.items():
            row[idx] = math.log((counts[token] + alpha) / denom)
        token_log_likelihood[label] = row

    return BowModel(
        vocabulary=vocabulary,
        model_labels=model_labels,
        class_log_prior=class_log_prior,
        token_log_likelihood=token_log_likelihood,
        smoothing_alpha=alpha,
    )


def predict_nb(model: BowModel, features: str) -> tuple[str, list[float]]:
    """Argmax of log prior + sum(count * log likelihood).

    Returns the winning label and 13 log-posterior scores in canonical
    label order (-inf for labels absent from training). Out-of-vocabulary
    tokens are ignored; an all-OOV input falls back to the prior argmax.
    Ties break toward the earlier canonical label.
    """
    counts = tokenize(features)
    scores = [float("-inf")] * labels.NUM_LABELS
    best_label, best_score = None, float("-inf")
    for label in model.model_labels:
        score = model.class_log_prior[label]
        row = model.token_log_likelihood[label]
        for token, count in counts.items():
            idx = model.vocabulary.get(token)
            if idx is not None:
                score += count * row[idx]
        scores[labels.label_index(label)] = score
        if score > best_score:
            best_label, best_score = label, score
    assert best_label is not None
    return best_label, scores


# --- linear head ---------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 200
    seed: int = 0


@dataclass
class LinearHead:
    """Softmax classifier: 13 logits from a 768-dim embedding."""

    weights: np.ndarray  # (13, 768)
    bias: np.ndarray  # (13,)
    config: TrainConfig = field(default_factory=TrainConfig)
    final_loss: Optional[float] = None


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def cross_entropy_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    inputs: np.ndarray,
    target_idx: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy over the batch and its analytic gradients."""
    n = inputs.shape[0]
    probs = softmax(inputs @ weights.T + bias)
    loss = -float(np.mean(np.log(probs[np.arange(n), target_idx] + 1e-300)))
    delta = probs.copy()
    delta[np.arange(n), target_idx] -= 1.0
    delta /= n
    return loss, delta.T @ inputs, delta.sum(axis=0)


def init_head(config: TrainConfig) -> LinearHead:
    rng = np.random.default_rng(config.seed)
    weights = rng.normal(0.0, 0.01, size=(labels.NUM_LABELS, EMBEDDING_DIM))
    bias = np.zeros(labels.NUM_LABELS)
    return LinearHead(weights=weights, bias=bias, config=config)


def train_linear_head(
    embeddings: Sequence[Sequence[float]],
    label_values: Sequence[str],
    config: TrainConfig | None = None,
) -> LinearHead:
    """Full-batch gradient descent on mean cross-entropy; deterministic per seed."""
    config = config or TrainConfig()
    if len(embeddings) != len(label_values):
        raise LengthMismatchError(
            f"{len(embeddings)} embeddings vs {len(label_values)} labels"
        )
    if not embeddings:
        raise EmptyCorpusError("cannot train on an empty corpus")

    inputs = np.asarray(embeddings, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != EMBEDDING_DIM:
        raise DimensionMismatchError(
            f"embeddings must be {EMBEDDING_DIM}-dim, got shape {inputs.shape}"
        )
    target_idx = np.array(
        [labels.label_index(labels.parse_label(l)) for l in label_values]
    )

    head = init_head(config)
    loss = None
    for _ in range(config.epochs):
        loss, grad_w, grad_b = cross_entropy_and_grad(
            head.weights, head.bias, inputs, target_idx
        )
        head.weights -= config.learning_rate * grad_w
        head.bias -= config.learning_rate * grad_b
    head.final_loss = loss
    return head


def predict_linear(
    head: LinearHead, embedding: Sequence[float]
) -> tuple[str, list[float]]:
    """softmax(W x + b); argmax with canonical-order tie-break."""
    vec = np.asarray(embedding, dtype=np.float64)
    if vec.shape != (EMBEDDING_DIM,):
        raise DimensionMismatchError(
            f"embedding must be {EMBEDDING_DIM}-dim, got shape {vec.shape}"
        )
    probs = softmax(head.weights @ vec + head.bias)
    winner = int(np.argmax(probs))  # np.argmax returns the first maximum
    return labels.CANONICAL_LABELS[winner], probs.tolist()


# --- evaluation ---------------------------------------------------------------

@dataclass
class EvalMetrics:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_label: dict[str, tuple[float, float, float, int]]  # P, R, F1, support
    confusion: list[list[int]]  # gold x predicted, canonical order


def evaluate(predictions: Sequence[str], gold: Sequence[str]) -> EvalMetrics:
    """Accuracy plus program-level (macro) precision/recall/F1.

    Labels absent from gold are excluded from the macro averages; per-label
    ratios with zero denominators are reported as 0.
    """
    if len(predictions) != len(gold):
        raise LengthMismatchError(
            f"{len(predictions)} predictions vs {len(gold)} gold labels"
        )
    if not gold:
        raise EmptyEvalError("nothing to evaluate")

    k = labels.NUM_LABELS
    confusion = [[0] * k for _ in range(k)]
    for pred, actual in zip(predictions, gold):
        gi = labels.label_index(labels.parse_label(actual))
        pi = labels.label_index(labels.parse_label(pred))
        confusion[gi][pi] += 1

    total = len(gold)
    correct = sum(confusion[i][i] for i in range(k))

    per_label = {}
    macro_p, macro_r, macro_f = [], [], []
    for i, label in enumerate(labels.CANONICAL_LABELS):
        tp = confusion[i][i]
        support = sum(confusion[i])
        predicted = sum(confusion[g][i] for g in range(k))
        precision = tp / predicted if predicted else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_label[label] = (precision, recall, f1, support)
        if support:
            macro_p.append(precision)
            macro_r.append(recall)
            macro_f.append(f1)

    return EvalMetrics(
        accuracy=correct / total,
        macro_precision=sum(macro_p) / len(macro_p),
        macro_recall=sum(macro_r) / len(macro_r),
        macro_f1=sum(macro_f) / len(macro_f),
        per_label=per_label,
        confusion=confusion,
    )


# --- splits ------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train: list[int]
    val: list[int]
    test: list[int]
    seed: int


def make_split(n_labeled: int, seed: int = 0) -> SplitSpec:
    """Deterministic shuffled 80/10/10 split (rounded); 656 -> (524, 66, 66)."""
    if n_labeled < labels.NUM_LABELS:
        raise TooSmallError(f"need at least {labels.NUM_LABELS} labeled items")
    n_val = int(n_labeled * 0.1 + 0.5)
    n_test = n_val
    indices = list(range(n_labeled))
    random.Random(seed).shuffle(indices)
    return SplitSpec(
        train=indices[: n_labeled - n_val - n_test],
        val=indices[n_labeled - n_val - n_test : n_labeled - n_test],
        test=indices[n_labeled - n_test :],
        seed=seed,
    )


# --- persistence ----------------------------------------------------------------

_NB_FORMAT = "pubbie-nb"
_HEAD_FORMAT = "pubbie-linear-head"


def save_nb_model(model: BowModel, path: str) -> None:
    tokens = sorted(model.vocabulary, key=model.vocabulary.get)
    payload = {
        "format": _NB_FORMAT,
        "version": 1,
        "labels": model.model_labels,
        "alpha": model.smoothing_alpha,
        "vocabulary": tokens,
        "class_log_prior": model.class_log_prior,
        "token_log_likelihood": model.token_log_likelihood,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_nb_model(path: str) -> BowModel:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != _NB_FORMAT:
        raise ValueError(f"{path} is not a {_NB_FORMAT} file")
    return BowModel(
        vocabulary={t: i for i, t in enumerate(payload["vocabulary"])},
        model_labels=list(payload["labels"]),
        class_log_prior={k: float(v) for k, v in payload["class_log_prior"].items()},
        token_log_likelihood={
            k: list(map(float, v)) for k, v in payload["token_log_likelihood"].items()
        },
        smoothing_alpha=float(payload["alpha"]),
    )


def save_linear_head(head: LinearHead, path: str) -> None:
    payload = {
        "format": _HEAD_FORMAT,
        "version": 1,
        "labels": list(labels.CANONICAL_LABELS),
        "weights": head.weights.tolist(),
        "bias": head.bias.tolist(),
        "config": {
            "learning_rate": head.config.learning_rate,
            "epochs": head.config.epochs,
            "seed": head.config.seed,
        },
        "final_loss": head.final_loss,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_linear_head(path: str) -> LinearHead:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != _HEAD_FORMAT:
        raise ValueError(f"{path} is not a {_HEAD_FORMAT} file")
    config = TrainConfig(**payload["config"])
    return LinearHead(
        weights=np.asarray(payload["weights"], dtype=np.float64),
        bias=np.asarray(payload["bias"], dtype=np.float64),
        config=config,
        final_loss=payload.get("final_loss"),
    )


def nb_labeler(model: BowModel):
    """Adapter: BowModel -> labeler callable for store.ingest_csv."""

    def labeler(pub: Publication) -> str:
        label, _ = predict_nb(model, render_features(pub))
        return label

    return labeler
