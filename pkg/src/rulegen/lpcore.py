"""Restricted master problem construction and a revised simplex solver.

The solver works on ``min c'x  s.t.  A x (>=|<=|=) b,  x >= 0`` with a dense
explicit basis inverse updated by eta (product-form) steps and refactored
periodically. Pricing is Dantzig's rule. After a run of degenerate pivots the
right-hand side is perturbed by a tiny random amount; the perturbation is
removed at the end and any infeasibility it leaves is repaired by dual simplex
pivots. Should the perturbed problem stall as well, Bland's rule takes over
until the objective moves again. Optimal solves return primal values, row duals and the final basis
(as variable tags) so that a later, larger model can be warm started.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Hashable, Optional, Sequence

import numpy as np
from scipy.linalg.blas import dger

from rulegen.errors import SolverError

log = logging.getLogger(__name__)

OPTIMAL = "OPTIMAL"
INFEASIBLE = "INFEASIBLE"
UNBOUNDED = "UNBOUNDED"

GE = ">="
LE = "<="
EQ = "="

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
STALL_LIMIT = 50
REFACTOR_EVERY = 100
PERTURB = 1e-7

# Called as observer(model, solution) after every solve; used by test audits.
SOLVE_OBSERVERS: list[Callable] = []


@dataclass
class ConstraintRows:
    """Extra rows over the slack (v) variables only, all of sense ``<=``."""

    matrix: np.ndarray  # shape (rows, n_samples)
    rhs: np.ndarray
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        self.rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        if self.matrix.shape[0] != self.rhs.shape[0]:
            raise ValueError("constraint rows and right-hand sides disagree in count")
        if not self.names:
            self.names = [f"row{r}" for r in range(self.rhs.shape[0])]

    def __len__(self):
        return self.rhs.shape[0]


@dataclass
class LpModel:
    c: np.ndarray
    A: np.ndarray
    senses: list
    rhs: np.ndarray
    tags: list
    row_tags: list
    default_basis: Optional[list] = None
    kind: str = "generic"

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        self.A = np.asarray(self.A, dtype=float).reshape(len(self.senses), self.c.shape[0])
        self.rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        m, n = self.A.shape
        if self.rhs.shape[0] != m or len(self.row_tags) != m or len(self.tags) != n:
            raise ValueError("inconsistent LP dimensions")
        if not np.all(np.isfinite(self.rhs)):
            raise ValueError("right-hand sides must be finite")
        for s in self.senses:
            if s not in (GE, LE, EQ):
                raise ValueError(f"unknown row sense {s!r}")

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def n_cols(self) -> int:
        return self.A.shape[1]

    def columns_tagged(self, kind: str) -> np.ndarray:
        return np.array([j for j, t in enumerate(self.tags) if t[0] == kind], dtype=np.int64)

    def rows_tagged(self, kind: str) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.row_tags) if t[0] == kind], dtype=np.int64)


@dataclass
class LpSolution:
    status: str
    primal: np.ndarray
    duals: np.ndarray
    objective: float
    dual_objective: float
    reduced_costs: np.ndarray
    basis: list
    iterations: int
    tags: list
    row_tags: list

    def values(self, kind: str) -> np.ndarray:
        return np.array([x for x, t in zip(self.primal, self.tags) if t[0] == kind])

    def row_duals(self, kind: str) -> np.ndarray:
        return np.array([y for y, t in zip(self.duals, self.row_tags) if t[0] == kind])

    @property
    def duality_gap(self) -> float:
        return abs(self.objective - self.dual_objective)


def build_rmp(ahat, costs, lam: float, fairness_rows: Optional[ConstraintRows] = None) -> LpModel:
    """Master LP: min lam*sum(c_j w_j) + sum(v_i)  s.t.  sum_j ahat_ij w_j + v_i >= 1.

    Variables are ordered w_0..w_{J-1}, v_0..v_{n-1}; extra fairness rows are
    appended after the covering rows and touch only v.
    """
    ahat = np.asarray(ahat, dtype=float)
    if ahat.ndim == 1:
        ahat = ahat.reshape(-1, 1) if ahat.size else ahat.reshape(0, 0)
    costs = np.asarray(costs, dtype=float).reshape(-1)
    n, J = ahat.shape if ahat.size or ahat.ndim == 2 else (0, 0)
    if costs.shape[0] != J:
        raise ValueError(f"{costs.shape[0]} costs given for {J} rules")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if np.any(costs < 0):
        raise ValueError("rule costs must be nonnegative")

    rows = [np.hstack([ahat, np.eye(n)])]
    senses = [GE] * n
    rhs = [np.ones(n)]
    row_tags = [("cover", i) for i in range(n)]
    basis = [("v", i) for i in range(n)]
    if fairness_rows is not None and len(fairness_rows):
        F = fairness_rows.matrix
        if F.shape[1] != n:
            raise ValueError("fairness rows must have one coefficient per sample")
        rows.append(np.hstack([np.zeros((F.shape[0], J)), F]))
        senses += [LE] * F.shape[0]
        rhs.append(fairness_rows.rhs)
        row_tags += [("fair", r) for r in range(F.shape[0])]
        basis += [("slack", n + r) for r in range(F.shape[0])]
    return LpModel(
        c=np.concatenate([lam * costs, np.ones(n)]),
        A=np.vstack(rows) if rows else np.zeros((0, J + n)),
        senses=senses,
        rhs=np.concatenate(rhs),
        tags=[("w", j) for j in range(J)] + [("v", i) for i in range(n)],
        row_tags=row_tags,
        default_basis=basis,
        kind="rmp",
    )


def reduced_cost(rule_column, cost: float, lam: float, duals) -> float:
    """lam * cost - sum_i ahat_i * beta_i."""
    rule_column = np.asarray(rule_column, dtype=float)
    duals = np.asarray(duals, dtype=float)
    if rule_column.shape != duals.shape:
        raise IndexError(f"column has {rule_column.shape[0]} entries, duals {duals.shape[0]}")
    return float(lam * cost - rule_column @ duals)


def _block_inverse(B: np.ndarray) -> np.ndarray:
    """Inverse of a basis matrix that is mostly signed unit columns.

    Unit columns on distinct rows are eliminated directly; only the square
    block left over (other columns against uncovered rows) goes through LAPACK.
    """
    m = B.shape[0]
    nz = B != 0.0
    counts = nz.sum(axis=0)
    rows_taken = np.zeros(m, dtype=bool)
    unit_cols, unit_rows = [], []
    for p in np.flatnonzero(counts == 1):
        r = int(np.argmax(nz[:, p]))
        if not rows_taken[r]:
            rows_taken[r] = True
            unit_cols.append(p)
            unit_rows.append(r)
    unit_cols = np.array(unit_cols, dtype=np.int64)
    unit_rows = np.array(unit_rows, dtype=np.int64)
    rest_cols = np.setdiff1d(np.arange(m), unit_cols)
    rest_rows = np.flatnonzero(~rows_taken)
    Binv = np.zeros((m, m))
    core_inv = np.linalg.inv(B[np.ix_(rest_rows, rest_cols)]) if rest_cols.size else np.zeros((0, 0))
    Binv[np.ix_(rest_cols, rest_rows)] = core_inv
    if unit_cols.size:
        d = B[unit_rows, unit_cols]
        Binv[unit_cols, unit_rows] = 1.0 / d
        if rest_cols.size:
            coupling = B[np.ix_(unit_rows, rest_cols)] @ core_inv
            Binv[np.ix_(unit_cols, rest_rows)] = -coupling / d[:, None]
    return Binv


class _Simplex:
    def __init__(self, M, cost, b, n_struct, slack_rows, max_iter):
        self.cost = cost
        self.b = b
        self.m = M.shape[0]
        self.n_struct = n_struct
        self.slack_rows = slack_rows
        self.max_iter = max_iter
        self.iterations = 0
        self.blocked = np.zeros(M.shape[1], dtype=bool)
        self.perturbed = False
        self.rng = np.random.default_rng(0)
        self.set_matrix(M)

    def set_matrix(self, M):
        """Install the constraint matrix and split off its signed unit columns for pricing."""
        self.M = M
        nz = M != 0.0
        single = nz.sum(axis=0) == 1
        self.unit_idx = np.flatnonzero(single)
        self.unit_row = np.argmax(nz[:, self.unit_idx], axis=0)
        self.unit_val = M[self.unit_row, self.unit_idx]
        self.dense_idx = np.flatnonzero(~single)
        self.M_dense = M[:, self.dense_idx]

    def price(self, y) -> np.ndarray:
        """y @ M."""
        out = np.empty(self.M.shape[1])
        out[self.unit_idx] = y[self.unit_row] * self.unit_val
        out[self.dense_idx] = y @ self.M_dense
        return out

    def _inverse(self, basis):
        Binv = np.asfortranarray(_block_inverse(self.M[:, basis]))
        if not np.all(np.isfinite(Binv)):
            raise np.linalg.LinAlgError("non-finite inverse")
        return Binv

    def factor(self):
        try:
            self.Binv = self._inverse(self.basis)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular basis after {self.iterations} pivots") from exc
        self.xB = self.Binv @ self.b
        self.since_refactor = 0

    def set_basis(self, basis) -> bool:
        self.basis = np.array(basis, dtype=np.int64)
        try:
            Binv = self._inverse(self.basis)
        except np.linalg.LinAlgError:
            return False
        probe = self.rng.standard_normal(self.m)
        if np.abs(self.M[:, self.basis] @ (Binv @ probe) - probe).max() > 1e-8 * (1 + np.abs(probe).max()):
            return False
        self.Binv = Binv
        self.xB = Binv @ self.b
        self.since_refactor = 0
        return bool(np.all(self.xB >= -FEAS_TOL))

    def run(self, cc) -> str:
        """Primal simplex to optimality; perturbation is removed before returning."""
        status = self._primal(cc)
        if self.perturbed:
            self.b = self.b_orig
            self.perturbed = False
            self.factor()
            if status == OPTIMAL and np.any(self.xB < -FEAS_TOL):
                status = self._dual(cc)
        return status

    def _check_limit(self, what):
        if self.iterations >= self.max_iter:
            raise SolverError(
                f"iteration limit {self.max_iter} reached in {what} "
                f"(rows={self.m}, cols={self.M.shape[1]})"
            )

    def _perturb(self):
        """Lift every basic value by a small random amount (b moves accordingly)."""
        if not self.perturbed:
            self.b_orig = self.b.copy()
            self.perturbed = True
        scale = PERTURB * max(1.0, float(np.abs(self.b_orig).max(initial=0.0)))
        self.xB = self.xB + scale * (1.0 + self.rng.random(self.m))
        self.b = self.M[:, self.basis] @ self.xB

    def _primal(self, cc) -> str:
        stall = 0
        bland = False
        while True:
            self._check_limit("primal simplex")
            y = cc[self.basis] @ self.Binv
            d = cc - self.price(y)
            d[self.basis] = 0.0
            d[self.blocked] = np.inf
            if bland:
                cand = np.flatnonzero(d < -OPT_TOL)
                if cand.size == 0:
                    return OPTIMAL
                j = int(cand[0])
            else:
                j = int(np.argmin(d))
                if d[j] >= -OPT_TOL:
                    return OPTIMAL
            col = self.Binv @ self.M[:, j]
            pos = np.flatnonzero(col > PIVOT_TOL)
            if pos.size == 0:
                return UNBOUNDED
            xb = np.maximum(self.xB[pos], 0.0)
            ratios = xb / col[pos]
            tmin = ratios.min()
            ties = pos[ratios <= tmin + 1e-12 * max(1.0, tmin)]
            if bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(col[ties]))])
            theta = max(self.xB[r], 0.0) / col[r]
            self._pivot(r, j, col, theta)
            if theta <= 1e-12:
                stall += 1
                if stall >= STALL_LIMIT and not bland:
                    if not self.perturbed:
                        log.debug("perturbing right-hand side after %d degenerate pivots", stall)
                        self._perturb()
                        stall = 0
                    else:
                        log.debug("switching to Bland's rule after %d degenerate pivots", stall)
                        bland = True
            else:
                stall = 0
                bland = False

    def _dual(self, cc) -> str:
        """Dual simplex from a dual feasible basis until primal feasible."""
        while True:
            self._check_limit("dual simplex")
            r = int(np.argmin(self.xB))
            if self.xB[r] >= -FEAS_TOL:
                return OPTIMAL
            y = cc[self.basis] @ self.Binv
            d = cc - self.price(y)
            alpha = self.price(self.Binv[r])
            alpha[self.basis] = 0.0
            alpha[self.blocked] = 0.0
            cand = np.flatnonzero(alpha < -PIVOT_TOL)
            if cand.size == 0:
                return INFEASIBLE
            ratios = np.maximum(d[cand], 0.0) / -alpha[cand]
            j = int(cand[np.argmin(ratios)])
            col = self.Binv @ self.M[:, j]
            self._pivot(r, j, col, self.xB[r] / col[r])

    def _pivot(self, r, j, col, theta):
        self.xB -= theta * col
        self.xB[r] = theta
        self.basis[r] = j
        pr = self.Binv[r] / col[r]
        self.Binv = dger(-1.0, col, pr, a=self.Binv, overwrite_a=True)
        self.Binv[r] = pr
        self.iterations += 1
        self.since_refactor += 1
        if self.since_refactor >= REFACTOR_EVERY:
            self.factor()


def _duplicate_columns(c, A) -> np.ndarray:
    """Mask of structural columns identical (cost and coefficients) to an earlier one."""
    stacked = np.vstack([c, A]).T
    dup = np.zeros(stacked.shape[0], dtype=bool)
    seen = {}
    for j, colv in enumerate(stacked):
        key = colv.tobytes()
        if key in seen:
            dup[j] = True
        else:
            seen[key] = j
    return dup


def solve_lp(model: LpModel, warm_start: Optional[Sequence[Hashable]] = None, max_iter: Optional[int] = None) -> LpSolution:
    """Solve ``model`` to optimality.

    ``warm_start`` is a list of variable tags from an earlier basis; slack
    variables are tagged ``("slack", row)``. If it is unusable (wrong size,
    singular, or primal infeasible) the model's default basis is tried, then a
    Phase I start with artificial variables.
    """
    m, n = model.A.shape
    flip = np.ones(m)
    A = model.A.copy()
    b = model.rhs.copy()
    slack_rows = [i for i, s in enumerate(model.senses) if s != EQ]
    S = np.zeros((m, len(slack_rows)))
    for k, i in enumerate(slack_rows):
        S[i, k] = -1.0 if model.senses[i] == GE else 1.0
    neg = b < 0
    flip[neg] = -1.0
    A[neg] *= -1.0
    S[neg] *= -1.0
    b[neg] *= -1.0
    M = np.hstack([A, S])
    cost = np.concatenate([model.c, np.zeros(len(slack_rows))])
    all_tags = list(model.tags) + [("slack", i) for i in slack_rows]
    tag_index = {t: j for j, t in enumerate(all_tags)}
    n_total = M.shape[1]
    if max_iter is None:
        max_iter = 50 * (m + n_total) + 1000

    sx = _Simplex(M, cost, b, n, slack_rows, max_iter)
    if n:
        sx.blocked[:n] = _duplicate_columns(model.c, model.A)
    if m == 0:
        status = UNBOUNDED if np.any(model.c < -OPT_TOL) else OPTIMAL
        sol = _package(model, sx, status, flip, all_tags, n)
        _notify(model, sol)
        return sol

    started = False
    for candidate in (warm_start, model.default_basis):
        if candidate is None or len(candidate) != m:
            continue
        idx = [tag_index.get(t) for t in candidate]
        if any(j is None for j in idx) or len(set(idx)) != m or any(sx.blocked[j] for j in idx):
            continue
        if sx.set_basis(idx):
            started = True
            break

    if not started:
        # Phase I on an augmented matrix with artificial columns where needed.
        basis = []
        art_rows = []
        slack_of = {i: n + k for k, i in enumerate(slack_rows)}
        for i in range(m):
            if i in slack_of and M[i, slack_of[i]] == 1.0:
                basis.append(slack_of[i])
            else:
                basis.append(n_total + len(art_rows))
                art_rows.append(i)
        if art_rows:
            Art = np.zeros((m, len(art_rows)))
            Art[art_rows, np.arange(len(art_rows))] = 1.0
            sx.set_matrix(np.hstack([M, Art]))
            sx.blocked = np.concatenate([sx.blocked, np.zeros(len(art_rows), dtype=bool)])
            cc1 = np.concatenate([np.zeros(n_total), np.ones(len(art_rows))])
            sx.cost = np.concatenate([cost, np.zeros(len(art_rows))])
            sx.set_basis(basis)
            status = sx.run(cc1)
            phase1 = float(cc1[sx.basis] @ sx.xB)
            if status != OPTIMAL or phase1 > FEAS_TOL * max(1.0, np.abs(b).max(initial=0.0)):
                sol = _package(model, sx, INFEASIBLE, flip, all_tags, n)
                _notify(model, sol)
                return sol
            _drive_out_artificials(sx, n_total)
            sx.blocked[n_total:] = True
            sx.blocked[sx.basis[sx.basis >= n_total]] = False
            # basic artificials left are on redundant rows: keep them at zero
            sx.cost = np.concatenate([cost, np.zeros(len(art_rows))])
        else:
            sx.set_basis(basis)

    status = sx.run(sx.cost)
    if status == OPTIMAL:
        sx.factor()
        if np.any(sx.xB < -FEAS_TOL * 10):
            status = sx.run(sx.cost)
            sx.factor()
    sol = _package(model, sx, status, flip, all_tags, n)
    _notify(model, sol)
    return sol


def _drive_out_artificials(sx: _Simplex, n_total: int):
    for r in range(sx.m):
        if sx.basis[r] < n_total:
            continue
        row = sx.Binv[r] @ sx.M[:, :n_total]
        row[sx.basis[sx.basis < n_total]] = 0.0
        row[sx.blocked[:n_total]] = 0.0
        j = int(np.argmax(np.abs(row)))
        if abs(row[j]) > PIVOT_TOL:
            col = sx.Binv @ sx.M[:, j]
            sx._pivot(r, j, col, 0.0)
    sx.factor()


def _package(model, sx, status, flip, all_tags, n) -> LpSolution:
    m = model.n_rows
    n_total = len(all_tags)
    x = np.zeros(sx.M.shape[1])
    duals = np.zeros(m)
    rc = np.zeros(n)
    if m and hasattr(sx, "basis"):
        x[sx.basis] = sx.xB
        x[np.abs(x) < 1e-13] = 0.0
        y = sx.cost[sx.basis] @ sx.Binv
        duals = y * flip
        rc = model.c - duals @ model.A
    primal = x[:n]
    objective = float(model.c @ primal) if status != INFEASIBLE else np.nan
    dual_objective = float(duals @ model.rhs) if status == OPTIMAL else np.nan
    if status == UNBOUNDED:
        objective = -np.inf
    basis = [all_tags[j] for j in getattr(sx, "basis", []) if j < n_total]
    if len(basis) != m:
        basis = []
    return LpSolution(
        status=status,
        primal=primal,
        duals=duals,
        objective=objective,
        dual_objective=dual_objective,
        reduced_costs=rc,
        basis=basis,
        iterations=sx.iterations,
        tags=list(model.tags),
        row_tags=list(model.row_tags),
    )


def _notify(model, sol):
    for obs in SOLVE_OBSERVERS:
        obs(model, sol)


def dump_model(model: LpModel, path) -> None:
    """Write ``model`` in a plain text layout (see README, "LP dump format")."""
    names = [_tag_name(t) for t in model.tags]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# rulegen LP dump: {model.n_rows} rows, {model.n_cols} columns\n")
        fh.write("MINIMIZE\n")
        fh.write(" " + _linear(model.c, names) + "\n")
        fh.write("SUBJECT TO\n")
        for i in range(model.n_rows):
            fh.write(f" {_tag_name(model.row_tags[i])}: {_linear(model.A[i], names)} {model.senses[i]} {float(model.rhs[i])!r}\n")
        fh.write("BOUNDS\n")
        for nm in names:
            fh.write(f" {nm} >= 0\n")
        fh.write("END\n")


def _tag_name(tag) -> str:
    return "_".join(str(p) for p in tag)


def _linear(coefs, names) -> str:
    terms = [f"{'+' if a >= 0 else '-'} {float(abs(a))!r} {nm}" for a, nm in zip(coefs, names) if a != 0.0]
    return " ".join(terms) if terms else "0"
