import numpy as np
import pytest

from rulegen.dataio import Dataset
from rulegen.errors import UnsupportedMetricError
from rulegen.evalkit import (
    cross_validate,
    evaluate,
    f1_score,
    hinge_loss,
    hinge_losses,
    predict,
    predict_batch,
    stratified_folds,
    write_explanations,
)
from rulegen.rug import CgConfig, RuleModel, fit_rug
from rulegen.rules import LE, Condition, Rule, ahat_matrix, coverage_matrix


def model_of(rules, K=2, fallback=0, p=1):
    return RuleModel(rules, len(rules), fallback, tuple(str(k) for k in range(K)), K, n_features=p)


def test_predict_fixtures():
    one = model_of([Rule((), 1, weight=1.0)])
    assert predict(one, [0.0]).label == 1
    vote = model_of([Rule((), 0, weight=2.0), Rule((), 1, weight=1.0)])
    p = predict(vote, [0.0])
    assert p.label == 0 and p.covering_rules == [0, 1] and not p.used_fallback
    none = model_of([Rule((Condition(0, LE, -5.0),), 0, weight=1.0)], fallback=1)
    p = predict(none, [0.0])
    assert p.label == 1 and p.used_fallback and p.covering_rules == []
    assert np.all(p.scores == 0)
    with pytest.raises(IndexError):
        predict(one, [0.0, 1.0])


def test_ties_go_to_smallest_class():
    tie = model_of([Rule((), 2, weight=1.0), Rule((), 1, weight=1.0)], K=3)
    assert predict(tie, [0.0]).label == 1


def test_hinge_loss_fixtures():
    assert hinge_loss(np.zeros(2), 0, 2) == 1.0
    assert hinge_loss(np.array([1.0, -1.0]), 0, 2) == 0.0
    assert hinge_loss(np.array([-1.0, 1.0]), 0, 2) == 2.0


def test_f1_fixture_and_metrics():
    assert f1_score(8, 2, 2) == pytest.approx(0.8)
    X = np.arange(20, dtype=float).reshape(-1, 1)
    y = np.array([1] * 10 + [0] * 10)
    pred_rule = [Rule((Condition(0, LE, 9.5),), 1, weight=1.0), Rule((), 0, weight=0.5)]
    # Samples 0..9 predicted 1 (score 1 - 0.5 > 0), the rest 0.
    y_noisy = y.copy()
    y_noisy[[0, 1]] = 0
    y_noisy[[12, 13]] = 1
    m = evaluate(model_of(pred_rule), Dataset(X, y_noisy, 2))
    assert m.f1 == pytest.approx(80.0)
    assert m.accuracy == pytest.approx(80.0)
    assert m.confusion == [[8, 2], [2, 8]]


def test_always_true_model_metrics_and_multiclass_f1():
    rules = [Rule((), k, weight=1.0) for k in range(3)]
    d = Dataset(np.zeros((6, 1)), [0, 1, 2, 0, 1, 2], 3)
    m = evaluate(model_of(rules, K=3), d)
    assert (m.nor, m.anorps, m.arl, m.f1) == (3, 3.0, 0.0, None)
    with pytest.raises(UnsupportedMetricError):
        evaluate(model_of(rules, K=3), d, f1=True)


def test_perfect_fair_predictions():
    X = np.array([[0.0], [1.0], [0.0], [1.0]])
    d = Dataset(X, [0, 1, 0, 1], 2, groups=[0, 0, 1, 1])
    rules = [Rule((Condition(0, LE, 0.5),), 0, weight=1.0), Rule((Condition(0, "gt", 0.5),), 1, weight=1.0)]
    m = evaluate(model_of(rules), d)
    assert m.accuracy == 100.0 and m.fairness_dmc == 100.0 and m.fairness_odm == 100.0


def test_slacks_equal_hinge_losses_at_optimum():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(80, 3))
    y = rng.integers(0, 3, 80)
    d = Dataset(X, y, 3)
    model = fit_rug(d, CgConfig(max_iterations=4, max_depth=2))
    # Slacks implied by the active rules alone; dropped rules have zero weight.
    rules = model.rules
    cov = coverage_matrix(rules, X)
    A = ahat_matrix(cov, [r.label for r in rules], y, 3)
    v_total = float(np.sum(np.maximum(1 - A @ model.weights, 0)))
    scores = predict_batch(model, d).scores
    assert hinge_losses(scores, y, 3).sum() == pytest.approx(v_total, abs=1e-9)
    lam_term = sum(r.cost * r.weight for r in rules)
    assert lam_term + v_total == pytest.approx(model.meta["objective"], abs=1e-6)


def test_weight_scaling_keeps_predictions():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(100, 2))
    y = (X[:, 0] > 0).astype(int)
    model = fit_rug(Dataset(X, y, 2), CgConfig(max_iterations=3))
    base = predict_batch(model, X)
    scaled = model_of([r.with_weight(3.7 * r.weight) for r in model.rules], p=2, fallback=model.fallback_class)
    out = predict_batch(scaled, X)
    fired = ~base.used_fallback
    assert np.array_equal(out.labels[fired], base.labels[fired])


def test_anorps_bounds():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(120, 3))
    y = rng.integers(0, 2, 120)
    model = fit_rug(Dataset(X, y, 2), CgConfig(max_iterations=4))
    m = evaluate(model, Dataset(X, y, 2))
    assert 0 <= m.anorps <= m.nor


def test_stratified_folds_cover_each_sample_once():
    y = np.array([0] * 33 + [1] * 17 + [2] * 9)
    folds = stratified_folds(y, 5, seed=3)
    test_all = np.sort(np.concatenate([t for _, t in folds]))
    assert test_all.tolist() == list(range(59))
    for train, test in folds:
        assert np.intersect1d(train, test).size == 0
        counts = np.bincount(y[test], minlength=3)
        assert np.all(np.abs(counts - np.bincount(y, minlength=3) / 5) <= 1)
    assert [t.tolist() for _, t in folds] == [t.tolist() for _, t in stratified_folds(y, 5, seed=3)]


def test_cross_validate_and_explain(tmp_path):
    rng = np.random.default_rng(4)
    X = rng.normal(size=(90, 2))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    d = Dataset(X, y, 2)
    cv = cross_validate(d, lambda tr: fit_rug(tr, CgConfig(max_iterations=3)), n_folds=3, seed=0)
    assert len(cv.folds) == 3 and cv.mean("accuracy") > 70
    model = fit_rug(d, CgConfig(max_iterations=3))
    path = tmp_path / "explain.csv"
    write_explanations(model, d, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "row,prediction,used_fallback,rule_ids,rule_weights"
    assert len(lines) == 91


def test_metrics_serialization():
    rules = [Rule((), 0, weight=1.0)]
    m = evaluate(model_of(rules), Dataset(np.zeros((3, 1)), [0, 1, 0], 2))
    assert '"accuracy"' in m.to_json()
    assert "accuracy %" in m.to_table()
