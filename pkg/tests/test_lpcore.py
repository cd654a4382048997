import numpy as np
import pytest

from oracles import vertex_enumeration
from rulegen.lpcore import (
    EQ,
    GE,
    INFEASIBLE,
    LE,
    OPTIMAL,
    UNBOUNDED,
    ConstraintRows,
    LpModel,
    build_rmp,
    dump_model,
    reduced_cost,
    solve_lp,
)


def generic(c, A, senses, b):
    n = len(c)
    return LpModel(np.array(c, float), np.array(A, float).reshape(len(b), n), senses, np.array(b, float),
                   [("x", j) for j in range(n)], [("r", i) for i in range(len(b))])


def random_bounded_lp(rng):
    n = int(rng.integers(1, 7))
    m = int(rng.integers(1, 6))
    A = rng.integers(-4, 5, size=(m, n)).astype(float)
    x0 = rng.uniform(0, 2, n)
    senses = list(rng.choice([GE, LE, EQ], size=m, p=[0.45, 0.45, 0.1]))
    lhs = A @ x0
    b = np.where(np.array(senses) == GE, np.floor(lhs), np.where(np.array(senses) == LE, np.ceil(lhs), lhs))
    # A box row keeps the feasible set bounded.
    A = np.vstack([A, np.ones(n)])
    b = np.append(b, np.ceil(x0.sum()) + 3)
    senses.append(LE)
    c = rng.integers(-5, 6, size=n).astype(float)
    return c, A, senses, b


def test_rmp_example_two_samples_one_rule():
    model = build_rmp(np.array([[1.0], [1.0]]), [1.0], 1.0)
    assert model.c.tolist() == [1, 1, 1]
    assert model.A.tolist() == [[1, 1, 0], [1, 0, 1]]
    sol = solve_lp(model)
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(1.0)
    assert sol.values("w") == pytest.approx([1.0])
    assert sol.values("v") == pytest.approx([0.0, 0.0])
    beta = sol.row_duals("cover")
    assert beta.sum() == pytest.approx(1.0)
    assert np.all((beta >= -1e-9) & (beta <= 1 + 1e-9))


def test_rmp_without_rules_and_wrong_rule():
    sol = solve_lp(build_rmp(np.zeros((3, 0)), np.zeros(0), 1.0))
    assert sol.objective == pytest.approx(3.0)
    assert sol.row_duals("cover") == pytest.approx([1, 1, 1])
    sol = solve_lp(build_rmp(np.array([[-1.0]]), [1.0], 1.0))
    assert sol.values("w") == pytest.approx([0.0])
    assert sol.values("v") == pytest.approx([1.0])
    assert sol.objective == pytest.approx(1.0)


def test_rmp_lambda_zero_objective_and_argument_errors():
    model = build_rmp(np.array([[1.0], [-1.0]]), [3.0], 0.0)
    assert model.c.tolist() == [0, 1, 1]
    with pytest.raises(ValueError):
        build_rmp(np.array([[1.0]]), [-1.0], 1.0)
    with pytest.raises(ValueError):
        build_rmp(np.array([[1.0]]), [1.0], -1.0)


def test_reduced_cost_fixtures():
    assert reduced_cost([1.0, 1.0], 1.0, 1.0, [1.0, 1.0]) == -1.0
    assert reduced_cost([0.5], 1.0, 1.0, [1.0]) == 0.5
    assert reduced_cost([1.0, -0.5], 7.0, 0.0, [0.2, 0.4]) == pytest.approx(-0.0)
    with pytest.raises(IndexError):
        reduced_cost([1.0], 1.0, 1.0, [1.0, 1.0])


def test_reduced_costs_match_solver_report():
    rng = np.random.default_rng(3)
    A = rng.choice([0.0, 1.0, -0.5], size=(12, 6))
    costs = rng.integers(1, 4, 6).astype(float)
    sol = solve_lp(build_rmp(A, costs, 0.7))
    beta = sol.row_duals("cover")
    for j in range(6):
        assert reduced_cost(A[:, j], costs[j], 0.7, beta) == pytest.approx(sol.reduced_costs[j], abs=1e-9)
        assert sol.reduced_costs[j] >= -1e-9


def test_random_lps_match_vertex_enumeration():
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(60):
        c, A, senses, b = random_bounded_lp(rng)
        expected = vertex_enumeration(c, A, senses, b)
        sol = solve_lp(generic(c, A, senses, b))
        if expected is None:
            assert sol.status == INFEASIBLE
            continue
        assert sol.status == OPTIMAL
        assert sol.objective == pytest.approx(expected, abs=1e-6)
        checked += 1
    assert checked >= 20


def test_infeasible_and_unbounded():
    assert solve_lp(generic([1.0], [[1.0], [1.0]], [GE, LE], [2.0, 1.0])).status == INFEASIBLE
    assert solve_lp(generic([-1.0, 0.0], [[1.0, -1.0]], [LE], [1.0])).status == UNBOUNDED


def test_warm_start_reaches_same_optimum_in_fewer_pivots():
    rng = np.random.default_rng(7)
    A = rng.choice([0.0, 1.0, -1.0], size=(40, 30), p=[0.5, 0.3, 0.2])
    first = solve_lp(build_rmp(A[:, :20], np.ones(20), 0.5))
    cold = solve_lp(build_rmp(A, np.ones(30), 0.5))
    warm = solve_lp(build_rmp(A, np.ones(30), 0.5), warm_start=first.basis)
    assert warm.objective == pytest.approx(cold.objective, abs=1e-9)
    assert warm.iterations <= cold.iterations
    bogus = solve_lp(build_rmp(A, np.ones(30), 0.5), warm_start=[("w", 0)] * 40)
    assert bogus.objective == pytest.approx(cold.objective, abs=1e-9)


def test_duplicate_columns_do_not_change_optimum():
    A = np.array([[1.0, 1.0, -1.0], [1.0, 1.0, 1.0], [0.0, 0.0, 1.0]])
    sol = solve_lp(build_rmp(A, [1.0, 1.0, 1.0], 0.5))
    ref = solve_lp(build_rmp(A[:, [0, 2]], [1.0, 1.0], 0.5))
    assert sol.objective == pytest.approx(ref.objective)
    assert sol.values("w")[1] == 0.0


def test_degenerate_master_lp_terminates():
    # Many identical-coverage rules with alternating labels: heavy degeneracy.
    rng = np.random.default_rng(11)
    y = rng.integers(0, 2, 60)
    cov = rng.random((60, 300)) < 0.3
    labels = rng.integers(0, 2, 300)
    A = np.where(cov, np.where(y[:, None] == labels[None, :], 1.0, -1.0), 0.0)
    sol = solve_lp(build_rmp(A, np.ones(300), 1.0))
    assert sol.status == OPTIMAL


def test_fairness_rows_are_appended_over_v_only():
    rows = ConstraintRows(np.array([[0.5, 0.5, -1.0]]), np.array([0.0]), ["g0-g1"])
    model = build_rmp(np.array([[1.0], [-1.0], [1.0]]), [1.0], 1.0, rows)
    assert model.senses[-1] == LE
    assert model.A[-1].tolist() == [0.0, 0.5, 0.5, -1.0]
    sol = solve_lp(model)
    assert sol.status == OPTIMAL
    v = sol.values("v")
    assert 0.5 * (v[0] + v[1]) - v[2] <= 1e-8


def test_dump_model_layout(tmp_path):
    path = tmp_path / "m.lp"
    dump_model(build_rmp(np.array([[1.0], [-0.5]]), [2.0], 1.0), path)
    text = path.read_text().splitlines()
    assert text[1:3] == ["MINIMIZE", " + 2.0 w_0 + 1.0 v_0 + 1.0 v_1"]
    assert text[3] == "SUBJECT TO"
    assert text[4] == " cover_0: + 1.0 w_0 + 1.0 v_0 >= 1.0"
    assert text[5] == " cover_1: - 0.5 w_0 + 1.0 v_1 >= 1.0"
    assert text[6] == "BOUNDS" and text[-1] == "END"
