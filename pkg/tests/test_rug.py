import json

import numpy as np
import pytest

from oracles import brute_force_rules
from rulegen.dataio import Dataset
from rulegen.errors import SizeGuardError
from rulegen.evalkit import evaluate
from rulegen.lpcore import build_rmp, solve_lp
from rulegen.rug import CgConfig, ExactPricer, enumerate_rules_exact, fit_rug, solve_psp_exact
from rulegen.rules import ahat_matrix, canonicalize, coverage_matrix
from rulegen.wtree import fit_tree, leaves_to_rules


def small_integer_data(seed, n=80, p=3, levels=3, K=2):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, levels, size=(n, p)).astype(float)
    score = X[:, 0] - X[:, 1] + rng.normal(0, 0.8, n)
    y = np.digitize(score, np.quantile(score, np.linspace(0, 1, K + 1)[1:-1]))
    return Dataset(X, y, K)


def test_single_threshold_data_needs_two_rules():
    X = np.linspace(0, 1, 30).reshape(-1, 1)
    y = (X[:, 0] > 0.4).astype(int)
    d = Dataset(X, y, 2)
    model = fit_rug(d, CgConfig())
    assert len(model.rules) <= 2
    assert evaluate(model, d).accuracy == 100.0
    assert model.meta["stop_reason"] == "no_improving_rule"


def test_fit_log_is_monotone_and_added_rules_were_improving():
    d = small_integer_data(1, n=150, p=4, K=3)
    config = CgConfig(max_iterations=10, max_depth=2)
    model = fit_rug(d, config)
    objectives = [e["objective"] for e in model.fit_log]
    assert all(b <= a + 1e-9 for a, b in zip(objectives, objectives[1:]))
    for entry in model.fit_log[1:]:
        assert entry["columns_added"] == len(entry["added"]) > 0
        assert all(a["reduced_cost"] < -config.improving_threshold for a in entry["added"])
    assert model.meta["lemma_violations"] == 0
    assert all(r.weight > 1e-10 for r in model.rules)
    assert len(model.rules) <= model.all_pool_size == model.fit_log[-1]["pool_size"]


def test_fit_is_deterministic():
    d = small_integer_data(2, n=120, p=4)
    a = fit_rug(d, CgConfig(seed=5))
    b = fit_rug(d, CgConfig(seed=5))
    assert a.rules == b.rules and a.fit_log == b.fit_log


def test_fallback_is_training_majority():
    d = Dataset(np.zeros((5, 1)), [1, 1, 0, 0, 1], 2)
    model = fit_rug(d, CgConfig(lam=1e6))
    assert model.rules == [] and model.fallback_class == 1
    tie = Dataset(np.zeros((4, 1)), [1, 0, 1, 0], 2)
    assert fit_rug(tie, CgConfig(lam=1e6)).fallback_class == 0


def test_argument_checks():
    with pytest.raises(ValueError):
        fit_rug(Dataset(np.zeros((0, 1)), np.zeros(0, dtype=int), 2))
    with pytest.raises(ValueError):
        CgConfig(max_iterations=0)
    with pytest.raises(ValueError):
        CgConfig(improving_threshold=0.0)
    with pytest.raises(ValueError):
        CgConfig(lam=-1)


def test_fit_log_file(tmp_path):
    path = tmp_path / "fit.jsonl"
    model = fit_rug(small_integer_data(3), CgConfig(max_iterations=3, log_path=str(path)))
    lines = [json.loads(x) for x in path.read_text().splitlines()]
    assert len(lines) == len(model.fit_log)
    assert set(lines[0]) == {"iteration", "objective", "columns_added", "pool_size"}


def test_exact_enumeration_one_binary_feature():
    d = Dataset(np.array([[0.0], [1.0], [0.0]]), [0, 1, 1], 2)
    rules = enumerate_rules_exact(d, max_conditions=1)
    assert len(rules) == 6
    assert sorted((r.length, r.label) for r in rules) == [(0, 0), (0, 1), (1, 0), (1, 0), (1, 1), (1, 1)]
    assert len({r.key for r in rules}) == 6


def test_exact_enumeration_constant_features():
    d = Dataset(np.ones((4, 2)), [0, 1, 2, 0], 3)
    rules = enumerate_rules_exact(d, max_conditions=3)
    assert [(r.conditions, r.label) for r in rules] == [((), 0), ((), 1), ((), 2)]


@pytest.mark.parametrize("seed", range(3))
def test_exact_enumeration_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 3, size=(25, 3)).astype(float)
    d = Dataset(X, rng.integers(0, 2, 25), 2)
    rules = enumerate_rules_exact(d, max_conditions=2)
    assert rules == enumerate_rules_exact(d, max_conditions=2)
    got = {(frozenset((c.feature, c.op, c.threshold) for c in r.conditions), r.label) for r in rules}
    assert len(got) == len(rules)
    assert got == brute_force_rules(X, 2, 2)
    assert all(canonicalize(r) == r for r in rules)


def test_size_guard():
    X = np.random.default_rng(0).normal(size=(200, 8))
    with pytest.raises(SizeGuardError):
        enumerate_rules_exact(Dataset(X, np.arange(200) % 2, 2), max_conditions=3)


def test_exact_psp_fixtures():
    d = Dataset(np.array([[0.0], [1.0], [2.0]]), [0, 0, 1], 2)
    assert solve_psp_exact(d, np.zeros(3), 1.0, "unit", 2) is None
    rule, rc = solve_psp_exact(d, np.array([0.0, 0.0, 1.0]), 0.0, "unit", 2)
    assert rc == pytest.approx(-1.0)
    assert rule.label == 1
    assert coverage_matrix([rule], d.features)[2, 0]


@pytest.mark.parametrize("seed", range(4))
def test_exact_pricing_dominates_proxy_leaves(seed):
    d = small_integer_data(seed, n=90, p=3, K=2 + seed % 2)
    rules = leaves_to_rules(fit_tree(d, None, max_depth=2))
    A = ahat_matrix(coverage_matrix(rules, d.features), [r.label for r in rules], d.labels, d.class_count)
    sol = solve_lp(build_rmp(A, np.ones(len(rules)), 0.5))
    beta = sol.row_duals("cover")
    leaves = leaves_to_rules(fit_tree(d, beta, max_depth=2))
    L = ahat_matrix(coverage_matrix(leaves, d.features), [r.label for r in leaves], d.labels, d.class_count)
    proxy_best = float(np.min(0.5 - beta @ L))
    pricer = ExactPricer(d, 3)
    exact_best = float(np.min(0.5 * pricer.costs[:, None] - pricer.gains(beta)))
    assert exact_best <= proxy_best + 1e-12


@pytest.mark.parametrize("seed,K", [(0, 2), (1, 3)])
def test_exact_cg_reaches_full_lp_optimum(seed, K):
    d = small_integer_data(seed, n=100, p=3, K=K)
    model = fit_rug(d, CgConfig(pricing="exact", max_iterations=1000, improving_threshold=1e-9))
    pool = enumerate_rules_exact(d, 3)
    A = ahat_matrix(coverage_matrix(pool, d.features), [r.label for r in pool], d.labels, K)
    full = solve_lp(build_rmp(A, np.ones(len(pool)), 1.0))
    assert model.meta["stop_reason"] == "no_improving_rule"
    assert model.meta["objective"] == pytest.approx(full.objective, abs=1e-6)
