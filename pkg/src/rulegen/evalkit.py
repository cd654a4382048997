"""Prediction by weighted rule vote, hinge loss, metrics and cross-validation."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from rulegen.dataio import Dataset, class_vector, kappa
from rulegen.errors import UnsupportedMetricError
from rulegen.fairness import DMC, ODM, fairness_percent, unfairness_dmc, unfairness_odm
from rulegen.rules import coverage_matrix

log = logging.getLogger(__name__)


@dataclass
class Prediction:
    label: int
    scores: np.ndarray
    covering_rules: list
    used_fallback: bool


@dataclass
class BatchPrediction:
    labels: np.ndarray
    scores: np.ndarray  # (n, K)
    coverage: np.ndarray  # (n, rules) bool
    used_fallback: np.ndarray


def _check_width(model, width: int):
    if model.n_features is not None and width != model.n_features:
        raise IndexError(f"model expects {model.n_features} features, got {width}")


def class_matrix(labels, K: int) -> np.ndarray:
    """Rows are class vectors of ``labels``."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.full((labels.shape[0], K), -1.0 / (K - 1))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _argmax_low(scores: np.ndarray) -> np.ndarray:
    best = scores.max(axis=1, keepdims=True)
    tol = 1e-12 * np.maximum(1.0, np.abs(best))
    return np.argmax(scores >= best - tol, axis=1)


def predict_batch(model, X) -> BatchPrediction:
    """Vectorized weighted vote; uncovered rows take the fallback class."""
    X = np.asarray(getattr(X, "features", X), dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    _check_width(model, X.shape[1])
    cov = coverage_matrix(model.rules, X)
    w = np.array([r.weight for r in model.rules])
    R = class_matrix([r.label for r in model.rules], model.K) if model.rules else np.zeros((0, model.K))
    scores = (cov * w) @ R
    # A rule counts toward coverage only with positive weight.
    fired = (cov & (w > 0)).any(axis=1)
    labels = np.where(fired, _argmax_low(scores) if len(scores) else 0, model.fallback_class)
    return BatchPrediction(labels.astype(np.int64), scores, cov, ~fired)


def predict(model, sample) -> Prediction:
    """Predict one sample."""
    x = np.asarray(sample, dtype=float).reshape(-1)
    out = predict_batch(model, x.reshape(1, -1))
    return Prediction(
        label=int(out.labels[0]),
        scores=out.scores[0],
        covering_rules=[int(j) for j in np.flatnonzero(out.coverage[0])],
        used_fallback=bool(out.used_fallback[0]),
    )


def hinge_loss(scores, true_label: int, K: int) -> float:
    """max(1 - kappa * score . y, 0) with y the class vector of ``true_label``."""
    margin = kappa(K) * float(np.asarray(scores, dtype=float) @ class_vector(true_label, K))
    return max(1.0 - margin, 0.0)


def hinge_losses(scores: np.ndarray, labels, K: int) -> np.ndarray:
    margins = kappa(K) * np.einsum("ik,ik->i", scores, class_matrix(labels, K))
    return np.maximum(1.0 - margins, 0.0)


def f1_score(tp: int, fp: int, fn: int) -> float:
    denom = tp + 0.5 * (fp + fn)
    return float(tp / denom) if denom else 0.0


@dataclass
class Metrics:
    n_samples: int
    accuracy: float
    f1: Optional[float]
    arl: float
    nor: int
    anorps: float
    fallback_rate: float
    confusion: list
    fairness_dmc: Optional[float] = None
    fairness_odm: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [
            ("samples", f"{self.n_samples}"),
            ("accuracy %", f"{self.accuracy:.2f}"),
            ("F1 %", "-" if self.f1 is None else f"{self.f1:.2f}"),
            ("ARL", f"{self.arl:.3f}"),
            ("NoR", f"{self.nor}"),
            ("ANoRpS", f"{self.anorps:.3f}"),
            ("fallback %", f"{100 * self.fallback_rate:.2f}"),
        ]
        if self.fairness_dmc is not None:
            rows.append(("fairness DMC %", f"{self.fairness_dmc:.2f}"))
        if self.fairness_odm is not None:
            rows.append(("fairness ODM %", f"{self.fairness_odm:.2f}"))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v:>10}" for k, v in rows)


def _positive_index(positive_class, class_order) -> int:
    if positive_class is None:
        return 1
    if isinstance(positive_class, (int, np.integer)):
        return int(positive_class)
    try:
        return list(class_order).index(str(positive_class))
    except ValueError:
        raise ValueError(f"positive class {positive_class!r} is not a known label") from None


def evaluate(
    model,
    data: Dataset,
    fairness: Optional[str] = None,
    positive_class=None,
    f1: Optional[bool] = None,
) -> Metrics:
    """All metrics of ``model`` on labelled ``data``.

    F1 is computed for binary problems (``f1=None``) or on request; asking
    for it with more than two classes raises. ``fairness`` may be "dmc",
    "odm" or "both"; with None both are reported when groups are present.
    """
    if data.labels is None or data.n_samples == 0:
        raise ValueError("evaluation needs nonempty labelled data")
    K = model.K
    pred = predict_batch(model, data)
    y = data.labels
    accuracy = 100.0 * float(np.mean(pred.labels == y))
    confusion = np.zeros((K, K), dtype=np.int64)
    np.add.at(confusion, (y, pred.labels), 1)

    f1_value = None
    if f1 or (f1 is None and K == 2):
        if K > 2:
            raise UnsupportedMetricError("F1 is defined here for binary problems only")
        pos = _positive_index(positive_class, model.class_order)
        tp = int(confusion[pos, pos])
        fp = int(confusion[:, pos].sum() - tp)
        fn = int(confusion[pos, :].sum() - tp)
        f1_value = 100.0 * f1_score(tp, fp, fn)

    active = [r for r in model.rules if r.weight > 0]
    nor = len(active)
    arl = float(np.mean([r.length for r in active])) if active else 0.0
    weighted = pred.coverage[:, [j for j, r in enumerate(model.rules) if r.weight > 0]]
    anorps = float(weighted.sum(axis=1).mean())

    dmc = odm = None
    if data.groups is not None and np.unique(data.groups).size >= 2:
        want = {DMC, ODM} if fairness in (None, "both") else {fairness}
        if DMC in want:
            dmc = fairness_percent(unfairness_dmc(pred.labels, y, data.groups, K))
        if ODM in want:
            odm = fairness_percent(unfairness_odm(pred.labels, y, data.groups))
    elif fairness is not None:
        raise ValueError("fairness metrics need at least two protected groups in the data")

    return Metrics(
        n_samples=data.n_samples,
        accuracy=accuracy,
        f1=f1_value,
        arl=arl,
        nor=nor,
        anorps=anorps,
        fallback_rate=float(pred.used_fallback.mean()),
        confusion=confusion.tolist(),
        fairness_dmc=dmc,
        fairness_odm=odm,
    )


def write_explanations(model, data: Dataset, path, decode: bool = True) -> int:
    """Per-sample CSV: prediction, fallback flag, covering rule ids and weights."""
    pred = predict_batch(model, data)
    names = model.class_order if decode else None
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["row", "prediction", "used_fallback", "rule_ids", "rule_weights"])
        for i in range(data.n_samples):
            ids = np.flatnonzero(pred.coverage[i])
            label = names[pred.labels[i]] if names else int(pred.labels[i])
            out.writerow(
                [
                    i,
                    label,
                    int(pred.used_fallback[i]),
                    ";".join(str(j) for j in ids),
                    ";".join(repr(model.rules[j].weight) for j in ids),
                ]
            )
    return data.n_samples


# ----------------------------------------------------------- cross-validation


def stratified_folds(labels, n_folds: int = 10, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """(train, test) index pairs; each class is shuffled then dealt round-robin."""
    labels = np.asarray(labels)
    if n_folds < 2:
        raise ValueError("need at least two folds")
    if n_folds > labels.shape[0]:
        raise ValueError("more folds than samples")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(labels.shape[0], dtype=np.int64)
    offset = 0
    for k in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == k))
        fold_of[idx] = (np.arange(idx.size) + offset) % n_folds
        offset += idx.size
    return [(np.flatnonzero(fold_of != f), np.flatnonzero(fold_of == f)) for f in range(n_folds)]


@dataclass
class CvResult:
    folds: list
    models: list

    def mean(self, attr: str) -> float:
        vals = [getattr(m, attr) for m in self.folds if getattr(m, attr) is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def std(self, attr: str) -> float:
        vals = [getattr(m, attr) for m in self.folds if getattr(m, attr) is not None]
        return float(np.std(vals)) if vals else float("nan")


def cross_validate(
    data: Dataset,
    fit: Callable[[Dataset], object],
    n_folds: int = 10,
    seed: int = 0,
    keep_models: bool = False,
    **evaluate_kwargs,
) -> CvResult:
    """Fit on each training split and evaluate on the held-out fold."""
    folds, models = [], []
    for train, test in stratified_folds(data.labels, n_folds, seed):
        model = fit(data.subset(train))
        folds.append(evaluate(model, data.subset(test), **evaluate_kwargs))
        if keep_models:
            models.append(model)
    return CvResult(folds, models)
