"""Group fairness constraints over the hinge slacks and the matching metrics.

DMC compares per-class error rates between protected groups, ODM compares
overall error rates. Both become pairs of ``<=`` rows over the slack variables
v of the master LP. With more than two groups the reported unfairness takes
the largest pairwise gap (and DMC sums that over classes).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from rulegen.dataio import Dataset
from rulegen.lpcore import ConstraintRows

log = logging.getLogger(__name__)

DMC = "dmc"
ODM = "odm"
EPSILON_GRID = (0.0, 0.01, 0.025, 0.05, 0.08, 1.0)


@dataclass(frozen=True)
class FairnessSpec:
    metric: str = DMC
    epsilon: float = 0.0
    group_column: Optional[str] = None

    def __post_init__(self):
        metric = str(self.metric).lower()
        if metric not in (DMC, ODM):
            raise ValueError(f"fairness metric must be 'dmc' or 'odm', got {self.metric!r}")
        object.__setattr__(self, "metric", metric)
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be nonnegative")

    def to_dict(self) -> dict:
        return {"metric": self.metric, "epsilon": self.epsilon, "group_column": self.group_column}

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> Optional["FairnessSpec"]:
        if not d:
            return None
        return cls(d["metric"], float(d["epsilon"]), d.get("group_column"))


def _require_groups(data: Dataset) -> np.ndarray:
    if data.groups is None:
        raise ValueError("fairness constraints need a protected-group column")
    if np.unique(data.groups).size < 2:
        raise ValueError("fairness constraints need at least two protected groups")
    return data.groups


def _pair_rows(cells: list[tuple[str, np.ndarray, np.ndarray]], n: int, epsilon: float):
    """Rows mean_v(a) - mean_v(b) <= eps and the reverse, for each pair of cells."""
    rows, names = [], []
    for (na, ia, _), (nb, ib, _) in itertools.combinations(cells, 2):
        coef = np.zeros(n)
        coef[ia] += 1.0 / ia.size
        coef[ib] -= 1.0 / ib.size
        rows += [coef, -coef]
        names += [f"{na}-{nb}", f"{nb}-{na}"]
    matrix = np.array(rows) if rows else np.zeros((0, n))
    return ConstraintRows(matrix, np.full(len(rows), float(epsilon)), names)


def build_dmc_rows(data: Dataset, epsilon: float) -> ConstraintRows:
    groups = _require_groups(data)
    y = data.labels
    n = data.n_samples
    present = np.unique(groups)
    rows = []
    for k in range(data.class_count):
        cells = []
        for g in present:
            idx = np.flatnonzero((y == k) & (groups == g))
            if idx.size == 0:
                log.warning("DMC: no samples with class %d in group %d, rows skipped", k, g)
                continue
            cells.append((f"k{k}g{g}", idx, None))
        rows.append(_pair_rows(cells, n, epsilon))
    matrix = np.vstack([r.matrix for r in rows])
    names = [nm for r in rows for nm in r.names]
    return ConstraintRows(matrix, np.full(matrix.shape[0], float(epsilon)), names)


def build_odm_rows(data: Dataset, epsilon: float) -> ConstraintRows:
    groups = _require_groups(data)
    cells = [(f"g{g}", np.flatnonzero(groups == g), None) for g in np.unique(groups)]
    return _pair_rows(cells, data.n_samples, epsilon)


def build_rows(spec: FairnessSpec, data: Dataset) -> ConstraintRows:
    if spec.metric == DMC:
        return build_dmc_rows(data, spec.epsilon)
    return build_odm_rows(data, spec.epsilon)


def _max_gap(rates: list[float]) -> float:
    if len(rates) < 2:
        return 0.0
    return float(max(rates) - min(rates))


def unfairness_dmc(predictions, labels, groups, K: int, errors=None) -> float:
    """Sum over classes of the largest pairwise gap in per-group error rate.

    ``errors`` overrides the 0/1 misclassification indicator, e.g. with the
    hinge slacks to get the LP's own proxy.
    """
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    err = (np.asarray(predictions) != labels).astype(float) if errors is None else np.asarray(errors, dtype=float)
    total = 0.0
    for k in range(K):
        rates = []
        for g in np.unique(groups):
            cell = (labels == k) & (groups == g)
            if not cell.any():
                log.warning("DMC metric: class %d has no samples in group %d", k, g)
                continue
            rates.append(err[cell].mean())
        total += _max_gap(rates)
    return total


def unfairness_odm(predictions, labels, groups, group_count: Optional[int] = None, errors=None) -> float:
    """Largest pairwise gap in overall per-group error rate."""
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    err = (np.asarray(predictions) != labels).astype(float) if errors is None else np.asarray(errors, dtype=float)
    ids = range(group_count) if group_count is not None else np.unique(groups)
    rates = []
    for g in ids:
        cell = groups == g
        if not cell.any():
            raise ValueError(f"group {g} has no samples")
        rates.append(err[cell].mean())
    return _max_gap(rates)


def unfairness(metric: str, predictions, labels, groups, K: int, errors=None) -> float:
    if metric == DMC:
        return unfairness_dmc(predictions, labels, groups, K, errors=errors)
    return unfairness_odm(predictions, labels, groups, errors=errors)


def fairness_percent(unfair: float) -> float:
    return 100.0 * (1.0 - unfair)
