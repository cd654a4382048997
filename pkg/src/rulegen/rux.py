"""Rule extraction: re-weight the leaves of a tree ensemble with one LP solve."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from rulegen.dataio import Dataset
from rulegen.errors import DataParseError, InfeasibleRuleError, SolverError
from rulegen.fairness import FairnessSpec, build_rows, unfairness
from rulegen.lpcore import OPTIMAL, build_rmp, dump_model, solve_lp
from rulegen.rug import WEIGHT_FLOOR, RuleModel, majority_class
from rulegen.rules import CostPolicy, Rule, ahat_matrix, canonicalize, coverage_matrix, dedupe, rule_cost
from rulegen.wtree import Forest, leaves_to_rules

log = logging.getLogger(__name__)

INTERNAL_FOREST = "INTERNAL_FOREST"
EXTERNAL_FILE = "EXTERNAL_FILE"


@dataclass
class RulePool:
    rules: list
    source: str = INTERNAL_FOREST
    stats: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rules)


def harvest_pool(forest: Forest, cost_policy=CostPolicy.LENGTH) -> RulePool:
    """Every leaf of every tree as a canonical rule, duplicates removed."""
    leaves = [r for tree in forest.trees for r in leaves_to_rules(tree, cost_policy)]
    rules = dedupe(leaves)
    return RulePool(rules, INTERNAL_FOREST, {"trees": len(forest.trees), "leaves": len(leaves)})


def pool_from_rules(rules, cost_policy=None) -> RulePool:
    """Canonicalize and deduplicate third-party rules.

    With ``cost_policy`` None the costs stored with the rules are kept.
    Rules describing empty regions are dropped with a warning.
    """
    out = []
    for r in rules:
        try:
            c = canonicalize(r).with_weight(0.0)
        except InfeasibleRuleError as exc:
            log.warning("dropping infeasible pool rule: %s", exc)
            continue
        if cost_policy is not None:
            c = c.with_cost(rule_cost(c, cost_policy))
        out.append(c)
    unique = dedupe(out)
    return RulePool(unique, EXTERNAL_FILE, {"trees": 0, "leaves": len(out)})


def load_pool(path, cost_policy=None) -> RulePool:
    """Read a JSON array of rules (or an object with a ``rules`` array)."""
    try:
        with open(Path(path), encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataParseError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataParseError(f"{path}: malformed JSON ({exc.msg}, line {exc.lineno})") from exc
    if isinstance(raw, dict):
        raw = raw.get("rules")
    if not isinstance(raw, list):
        raise DataParseError(f"{path}: expected a JSON array of rules")
    try:
        rules = [Rule.from_dict(d) for d in raw]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataParseError(f"{path}: malformed rule entry ({exc})") from exc
    return pool_from_rules(rules, cost_policy)


def fit_rux(
    pool: RulePool,
    data: Dataset,
    lam: float = 1.0,
    fairness: Optional[FairnessSpec] = None,
    dump_path=None,
) -> RuleModel:
    """Solve the master LP once over ``pool`` and keep the rules with positive weight.

    ``dump_path`` writes the LP in the plain text dump layout before solving.
    """
    if data.n_samples == 0:
        raise ValueError("cannot fit on an empty dataset")
    if data.labels is None:
        raise ValueError("training data needs labels")
    rules = list(pool.rules)
    cov = coverage_matrix(rules, data.features)
    A = ahat_matrix(cov, [r.label for r in rules], data.labels, data.class_count)
    rows = build_rows(fairness, data) if fairness is not None else None
    lp = build_rmp(A, np.array([r.cost for r in rules]), lam, rows)
    if dump_path is not None:
        dump_model(lp, dump_path)
    sol = solve_lp(lp)
    if sol.status != OPTIMAL:
        raise SolverError(f"master LP ended with status {sol.status}")
    w = sol.values("w")
    active = [r.with_weight(x) for r, x in zip(rules, w) if x > WEIGHT_FLOOR]
    meta = {
        "objective": sol.objective,
        "compression_ratio": len(active) / len(rules) if rules else 0.0,
        "pool_source": pool.source,
        "pool_stats": dict(pool.stats),
    }
    if fairness is not None:
        meta["train_unfairness_v"] = unfairness(
            fairness.metric, None, data.labels, data.groups, data.class_count, errors=sol.values("v")
        )
    return RuleModel(
        rules=active,
        all_pool_size=len(rules),
        fallback_class=majority_class(data.labels, data.class_count),
        class_order=tuple(data.class_order),
        K=data.class_count,
        fit_log=[{"iteration": 0, "objective": sol.objective, "columns_added": len(rules), "pool_size": len(rules)}],
        n_features=data.n_features,
        mode="FAIR_RUX" if fairness is not None else "RUX",
        meta=meta,
    )
