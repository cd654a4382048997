"""Column generation driver for rule generation, plus exact pricing oracles.

Each iteration solves the master LP over the current rule pool, grows a CART
tree weighted by the covering-row duals and keeps those leaves whose reduced
cost is below ``-improving_threshold``. The exact pricer enumerates every rule
up to a fixed number of conditions; it exists to verify the heuristic on small
instances.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Optional

import numpy as np

from rulegen.dataio import Dataset, split_candidates
from rulegen.errors import SizeGuardError, SolverError
from rulegen.fairness import FairnessSpec, build_rows, unfairness
from rulegen.lpcore import OPTIMAL, LpSolution, build_rmp, solve_lp
from rulegen.rules import GT, LE, Condition, CostPolicy, Rule, ahat_matrix, coverage_matrix, rule_cost
from rulegen.wtree import fit_tree, leaves_to_rules

log = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-10
SIZE_GUARD = 10**7
PROXY = "proxy"
EXACT = "exact"


@dataclass
class CgConfig:
    lam: float = 1.0
    max_depth: int = 3
    max_iterations: int = 15
    cost_policy: CostPolicy = CostPolicy.UNIT
    improving_threshold: float = 1e-6
    fairness: Optional[FairnessSpec] = None
    seed: int = 0
    pricing: str = PROXY
    max_conditions: int = 3  # exact pricing only
    log_path: Optional[str] = None

    def __post_init__(self):
        self.cost_policy = CostPolicy.parse(self.cost_policy)
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")
        if not self.improving_threshold > 0:
            raise ValueError("improving_threshold must be positive")
        if self.pricing not in (PROXY, EXACT):
            raise ValueError(f"pricing must be '{PROXY}' or '{EXACT}'")

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "max_depth": self.max_depth,
            "max_iterations": self.max_iterations,
            "cost_policy": self.cost_policy.value,
            "improving_threshold": self.improving_threshold,
            "fairness": self.fairness.to_dict() if self.fairness else None,
            "seed": self.seed,
            "pricing": self.pricing,
            "max_conditions": self.max_conditions,
        }


@dataclass
class RuleModel:
    """Weighted rule set with the class used when no rule fires."""

    rules: list
    all_pool_size: int
    fallback_class: int
    class_order: tuple
    K: int
    fit_log: list = field(default_factory=list)
    n_features: Optional[int] = None
    mode: str = "RUG"
    meta: dict = field(default_factory=dict)

    @property
    def weights(self) -> np.ndarray:
        return np.array([r.weight for r in self.rules])

    def describe(self, feature_names=None) -> list[str]:
        return [f"{r.weight:.4g}  {r.describe(feature_names, self.class_order)}" for r in self.rules]


def majority_class(labels, K: int) -> int:
    """Most frequent label; ties go to the smallest index."""
    return int(np.argmax(np.bincount(np.asarray(labels), minlength=K)))


def lemma_violations(v, beta, positive=1e-8, one_tol=1e-6, zero=1e-8, small=1e-6) -> int:
    """Count samples breaking ``v>0 => beta=1`` or ``beta=0 => v=0``."""
    v = np.asarray(v)
    beta = np.asarray(beta)
    bad = ((v > positive) & (beta < 1 - one_tol)) | ((beta <= zero) & (v > small))
    return int(np.count_nonzero(bad))


class _Master:
    """The growing rule pool with its coverage and coefficient matrices."""

    def __init__(self, data: Dataset, lam: float, fairness_rows):
        self.data = data
        self.lam = lam
        self.fairness_rows = fairness_rows
        self.rules: list[Rule] = []
        self.keys: set = set()
        self.ahat = np.zeros((data.n_samples, 0))
        self.solution: Optional[LpSolution] = None

    def add(self, rules) -> int:
        fresh = [r for r in rules if r.key not in self.keys]
        if not fresh:
            return 0
        cov = coverage_matrix(fresh, self.data.features)
        cols = ahat_matrix(cov, [r.label for r in fresh], self.data.labels, self.data.class_count)
        self.ahat = np.hstack([self.ahat, cols])
        self.rules += fresh
        self.keys.update(r.key for r in fresh)
        return len(fresh)

    def solve(self) -> LpSolution:
        costs = np.array([r.cost for r in self.rules])
        model = build_rmp(self.ahat, costs, self.lam, self.fairness_rows)
        warm = self.solution.basis if self.solution is not None else None
        sol = solve_lp(model, warm_start=warm)
        if sol.status != OPTIMAL:
            raise SolverError(f"master LP ended with status {sol.status}")
        self.solution = sol
        return sol


def _score_candidates(candidates, data, duals, lam):
    if not candidates:
        return np.empty(0)
    cov = coverage_matrix(candidates, data.features)
    cols = ahat_matrix(cov, [r.label for r in candidates], data.labels, data.class_count)
    costs = np.array([r.cost for r in candidates])
    return lam * costs - duals @ cols


def _proxy_candidates(data, duals, config, rng):
    if not np.any(duals > 0):
        return [], np.empty(0)
    tree = fit_tree(data, np.clip(duals, 0.0, None), max_depth=config.max_depth, rng=rng)
    leaves = leaves_to_rules(tree, config.cost_policy)
    return leaves, _score_candidates(leaves, data, duals, config.lam)


def fit_rug(data: Dataset, config: Optional[CgConfig] = None) -> RuleModel:
    """Fit a weighted rule set by column generation."""
    config = config or CgConfig()
    if data.n_samples == 0:
        raise ValueError("cannot fit on an empty dataset")
    if data.labels is None:
        raise ValueError("training data needs labels")
    rows = build_rows(config.fairness, data) if config.fairness is not None else None
    rng = np.random.default_rng(config.seed)
    master = _Master(data, config.lam, rows)
    pricer = ExactPricer(data, config.max_conditions, config.cost_policy) if config.pricing == EXACT else None

    initial = leaves_to_rules(fit_tree(data, None, max_depth=config.max_depth, rng=rng), config.cost_policy)
    master.add(initial)
    fit_log = []
    violations = 0
    stop = "max_iterations"
    added = [{"rule": r.to_dict(), "reduced_cost": None} for r in master.rules]

    for it in range(config.max_iterations + 1):
        sol = master.solve()
        v, beta = sol.values("v"), sol.row_duals("cover")
        if rows is None:
            bad = lemma_violations(v, beta)
            if bad:
                log.warning("iteration %d: %d samples break the slack/dual relations", it, bad)
            violations += bad
        fit_log.append(
            {
                "iteration": it,
                "objective": sol.objective,
                "columns_added": len(added),
                "pool_size": len(master.rules),
                "added": added,
            }
        )
        log.info("iteration %d: objective %.6f, pool %d", it, sol.objective, len(master.rules))
        if it == config.max_iterations:
            break
        if pricer is not None:
            found = pricer.best(beta, config.lam, config.improving_threshold, exclude=master.keys)
            candidates, scores = ([found[0]], np.array([found[1]])) if found else ([], np.empty(0))
        else:
            candidates, scores = _proxy_candidates(data, beta, config, rng)
        keep, seen = [], set()
        for rule, rc in zip(candidates, scores):
            if rc < -config.improving_threshold and rule.key not in master.keys and rule.key not in seen:
                keep.append((rule, float(rc)))
                seen.add(rule.key)
        if not keep:
            stop = "no_improving_rule"
            break
        master.add([r for r, _ in keep])
        added = [{"rule": r.to_dict(), "reduced_cost": rc} for r, rc in keep]

    w = master.solution.values("w")
    active = [r.with_weight(x) for r, x in zip(master.rules, w) if x > WEIGHT_FLOOR]
    meta = {
        "objective": master.solution.objective,
        "iterations": len(fit_log) - 1,
        "stop_reason": stop,
        "lemma_violations": violations,
    }
    if config.fairness is not None:
        meta["train_unfairness_v"] = unfairness(
            config.fairness.metric,
            None,
            data.labels,
            data.groups,
            data.class_count,
            errors=master.solution.values("v"),
        )
    model = RuleModel(
        rules=active,
        all_pool_size=len(master.rules),
        fallback_class=majority_class(data.labels, data.class_count),
        class_order=tuple(data.class_order),
        K=data.class_count,
        fit_log=fit_log,
        n_features=data.n_features,
        mode="FAIR_RUG" if config.fairness is not None else "RUG",
        meta=meta,
    )
    if config.log_path:
        write_fit_log(fit_log, config.log_path)
    return model


def write_fit_log(fit_log, path) -> None:
    """One JSON object per iteration; per-rule detail is left out."""
    with open(Path(path), "w", encoding="utf-8") as fh:
        for entry in fit_log:
            slim = {k: entry[k] for k in ("iteration", "objective", "columns_added", "pool_size")}
            fh.write(json.dumps(slim, sort_keys=True) + "\n")


# ---------------------------------------------------------------- exact oracle


def _condition_grammar(X: np.ndarray) -> list[Condition]:
    out = []
    for f in range(X.shape[1]):
        for t in split_candidates(X[:, f]):
            out.append(Condition(f, LE, t))
            out.append(Condition(f, GT, t))
    return out


def projected_rule_count(n_conditions: int, max_conditions: int, K: int) -> int:
    return K * sum(comb(n_conditions, s) for s in range(max_conditions + 1))


def _canonical_order(c: Condition):
    return (c.feature, 0 if c.op == LE else 1)


def _enumerate_regions(X: np.ndarray, max_conditions: int):
    """Feasible, nonempty conjunctions as (conditions, coverage mask), in DFS order."""
    grammar = _condition_grammar(X)
    masks = [c.mask(X) for c in grammar]
    regions = []

    def extend(start, conds, used, cov):
        regions.append((tuple(sorted(conds, key=_canonical_order)), cov))
        if len(conds) == max_conditions:
            return
        for k in range(start, len(grammar)):
            c = grammar[k]
            if (c.feature, c.op) in used:
                continue
            new = cov & masks[k]
            # An empty region stays empty under further conditions.
            if not new.any():
                continue
            extend(k + 1, conds + [c], used | {(c.feature, c.op)}, new)

    extend(0, [], frozenset(), np.ones(X.shape[0], dtype=bool))
    return grammar, regions


def _guard(X, max_conditions, K):
    n_cond = 2 * sum(split_candidates(X[:, f]).size for f in range(X.shape[1]))
    projected = projected_rule_count(n_cond, max_conditions, K)
    if projected > SIZE_GUARD:
        raise SizeGuardError(
            f"exact enumeration would produce up to {projected} rules (limit {SIZE_GUARD})"
        )


class ExactPricer:
    """Every rule with at most ``max_conditions`` conditions, scored in bulk."""

    def __init__(self, data: Dataset, max_conditions: int, cost_policy=CostPolicy.UNIT):
        if max_conditions < 0:
            raise ValueError("max_conditions must be nonnegative")
        _guard(data.features, max_conditions, data.class_count)
        self.K = data.class_count
        self.labels = data.labels
        _, regions = _enumerate_regions(data.features, max_conditions)
        self.conditions = [c for c, _ in regions]
        self.coverage = np.array([m for _, m in regions], dtype=float).T  # (n, regions)
        policy = CostPolicy.parse(cost_policy)
        self.costs = np.array([rule_cost(Rule(c, 0), policy) for c in self.conditions])

    @property
    def n_rules(self) -> int:
        return len(self.conditions) * self.K

    def rules(self) -> list[Rule]:
        return [
            Rule(c, k, cost=cost)
            for c, cost in zip(self.conditions, self.costs)
            for k in range(self.K)
        ]

    def gains(self, duals) -> np.ndarray:
        """Sum_i ahat_ij beta_i for every (region, label), shape (regions, K)."""
        if self.labels is None:
            raise ValueError("pricing needs labels")
        per_class = np.zeros((self.labels.shape[0], self.K))
        per_class[np.arange(self.labels.shape[0]), self.labels] = duals
        mass = self.coverage.T @ per_class
        total = mass.sum(axis=1, keepdims=True)
        return mass - (total - mass) / (self.K - 1)

    def best(self, duals, lam, improving_threshold=1e-6, exclude=None):
        """Minimum reduced-cost rule, or None when nothing beats the threshold."""
        rc = lam * self.costs[:, None] - self.gains(np.asarray(duals, dtype=float))
        order = np.argsort(rc, axis=None, kind="stable")
        for flat in order:
            value = rc.flat[flat]
            if value >= -improving_threshold:
                return None
            r, k = divmod(int(flat), self.K)
            rule = Rule(self.conditions[r], k, cost=float(self.costs[r]))
            if exclude is None or rule.key not in exclude:
                return rule, float(value)
        return None


def enumerate_rules_exact(data: Dataset, max_conditions: int = 3, cost_policy=CostPolicy.UNIT) -> list[Rule]:
    """All canonical, feasible, nonempty rules up to ``max_conditions``, once per label."""
    return ExactPricer(data, max_conditions, cost_policy).rules()


def solve_psp_exact(
    data: Dataset,
    duals,
    lam: float,
    cost_policy=CostPolicy.UNIT,
    max_conditions: int = 3,
    improving_threshold: float = 1e-6,
):
    """Exact pricing: ``(rule, reduced_cost)`` of the best rule, or None."""
    return ExactPricer(data, max_conditions, cost_policy).best(duals, lam, improving_threshold)
