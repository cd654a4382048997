"""Conjunctive threshold rules, coverage and signed accuracy coefficients."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from rulegen.errors import InfeasibleRuleError

LE = "le"
GT = "gt"
_OP_ORDER = {LE: 0, GT: 1}


class CostPolicy(str, enum.Enum):
    UNIT = "unit"
    LENGTH = "length"
    ONE_PLUS_LENGTH = "one-plus-length"

    @classmethod
    def parse(cls, value) -> "CostPolicy":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower().replace("_", "-")
        for member in cls:
            if member.value == text:
                return member
        raise ValueError(f"unknown cost policy {value!r}")


@dataclass(frozen=True, order=True)
class Condition:
    feature: int
    op: str
    threshold: float

    def __post_init__(self):
        if self.op not in _OP_ORDER:
            raise ValueError(f"condition op must be 'le' or 'gt', got {self.op!r}")
        object.__setattr__(self, "feature", int(self.feature))
        object.__setattr__(self, "threshold", float(self.threshold))

    def holds(self, x) -> bool:
        v = x[self.feature]
        return bool(v <= self.threshold) if self.op == LE else bool(v > self.threshold)

    def mask(self, X: np.ndarray) -> np.ndarray:
        col = X[:, self.feature]
        return col <= self.threshold if self.op == LE else col > self.threshold

    def describe(self, names: Sequence[str] | None = None) -> str:
        name = names[self.feature] if names else f"x{self.feature}"
        sym = "<=" if self.op == LE else ">"
        return f"{name} {sym} {self.threshold:g}"

    def to_dict(self) -> dict:
        return {"f": self.feature, "op": self.op, "t": self.threshold}

    @classmethod
    def from_dict(cls, d: dict) -> "Condition":
        return cls(int(d["f"]), str(d["op"]).lower(), float(d["t"]))


@dataclass(frozen=True)
class Rule:
    conditions: tuple[Condition, ...]
    label: int
    cost: float = 1.0
    weight: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(self.conditions))
        object.__setattr__(self, "label", int(self.label))
        if self.cost < 0:
            raise ValueError("rule cost must be nonnegative")
        if self.weight < 0:
            raise ValueError("rule weight must be nonnegative")

    @property
    def length(self) -> int:
        return len(self.conditions)

    @property
    def key(self) -> tuple:
        """Identity used for pool deduplication; meaningful on canonical rules."""
        return (self.conditions, self.label)

    def covers(self, x) -> bool:
        return covers(self, x)

    def with_weight(self, weight: float) -> "Rule":
        return replace(self, weight=float(weight))

    def with_cost(self, cost: float) -> "Rule":
        return replace(self, cost=float(cost))

    def describe(self, names: Sequence[str] | None = None, class_order: Sequence[str] | None = None) -> str:
        body = " and ".join(c.describe(names) for c in self.conditions) or "always"
        label = class_order[self.label] if class_order else str(self.label)
        return f"if {body} then {label}"

    def to_dict(self) -> dict:
        return {
            "conditions": [c.to_dict() for c in self.conditions],
            "label": self.label,
            "cost": self.cost,
            "weight": self.weight,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Rule":
        return cls(
            conditions=tuple(Condition.from_dict(c) for c in d.get("conditions", ())),
            label=int(d["label"]),
            cost=float(d.get("cost", 1.0)),
            weight=float(d.get("weight", 0.0)),
        )


def covers(rule: Rule, sample) -> bool:
    sample = np.asarray(sample, dtype=float)
    for cond in rule.conditions:
        if not 0 <= cond.feature < sample.shape[0]:
            raise IndexError(f"feature index {cond.feature} out of bounds for sample of length {sample.shape[0]}")
        if not cond.holds(sample):
            return False
    return True


def ahat(rule: Rule, sample, sample_label: int, K: int) -> float:
    """Signed accuracy coefficient: 0 if uncovered, 1 on a label match, -1/(K-1) otherwise."""
    if not covers(rule, sample):
        return 0.0
    return 1.0 if rule.label == sample_label else -1.0 / (K - 1)


def coverage_matrix(rules: Sequence[Rule], X) -> np.ndarray:
    """Boolean matrix with entry (i, j) true when rule j covers sample i."""
    X = getattr(X, "features", X)
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    A = np.ones((n, len(rules)), dtype=bool)
    for j, rule in enumerate(rules):
        for cond in rule.conditions:
            if not 0 <= cond.feature < p:
                raise IndexError(f"rule {j} references feature {cond.feature}, data has {p}")
            A[:, j] &= cond.mask(X)
    return A


def ahat_matrix(coverage: np.ndarray, rule_labels, sample_labels, K: int) -> np.ndarray:
    """Vectorized ahat over a coverage matrix."""
    rule_labels = np.asarray(rule_labels, dtype=np.int64)
    sample_labels = np.asarray(sample_labels, dtype=np.int64)
    match = sample_labels[:, None] == rule_labels[None, :]
    return np.where(coverage, np.where(match, 1.0, -1.0 / (K - 1)), 0.0)


def canonicalize(rule: Rule) -> Rule:
    """Tightest LE/GT per feature, sorted by (feature, op). Raises on empty regions."""
    upper: dict[int, float] = {}
    lower: dict[int, float] = {}
    for c in rule.conditions:
        if c.op == LE:
            upper[c.feature] = min(upper.get(c.feature, np.inf), c.threshold)
        else:
            lower[c.feature] = max(lower.get(c.feature, -np.inf), c.threshold)
    merged = []
    for f in sorted(set(upper) | set(lower)):
        if f in upper and f in lower and upper[f] <= lower[f]:
            raise InfeasibleRuleError(
                f"x{f} > {lower[f]:g} and x{f} <= {upper[f]:g} cannot both hold"
            )
        if f in upper:
            merged.append(Condition(f, LE, upper[f]))
        if f in lower:
            merged.append(Condition(f, GT, lower[f]))
    return replace(rule, conditions=tuple(merged))


def rule_cost(rule: Rule, policy) -> float:
    policy = CostPolicy.parse(policy)
    if policy is CostPolicy.UNIT:
        return 1.0
    if policy is CostPolicy.LENGTH:
        return float(rule.length)
    return 1.0 + rule.length


def dedupe(rules: Iterable[Rule]) -> list[Rule]:
    """Keep the first occurrence of each (conditions, label) key, order preserved."""
    seen = set()
    out = []
    for r in rules:
        if r.key not in seen:
            seen.add(r.key)
            out.append(r)
    return out


def rules_to_json(rules: Sequence[Rule]) -> list[dict]:
    return [r.to_dict() for r in rules]


def rules_from_json(items) -> list[Rule]:
    if not isinstance(items, list):
        raise ValueError("rule file must hold a JSON array of rules")
    return [Rule.from_dict(d) for d in items]
