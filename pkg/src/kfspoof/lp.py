"""Self-contained dense linear-program solver.

Solves problems of the form

    minimize    c . x
    subject to  a_i . x >= b_i        for every row of ``a_ge``
                lo_j <= x_j <= hi_j   per-variable bounds

with a two-phase dense simplex.  Variables default to 0 <= x < inf; a bound
of ``None`` means unbounded on that side, and (None, None) declares the
variable free.  Free variables are split internally into a difference of two
nonnegative ones, finite lower/upper bounds are handled by shifting and by
auxiliary rows.

Pivoting is Dantzig pricing (most negative reduced cost, lowest index on
ties) with a switch to Bland's rule after ``5 * (rows + cols)`` pivots so the
method cannot cycle; a hard iteration cap turns pathological inputs into a
:class:`SimplexCycleError` instead of a hang.  All choices are deterministic,
so identical problems produce bit-identical solutions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import frozen_array

FEASIBILITY_TOL = 1e-8
REDUCED_COST_TOL = 1e-9
PIVOT_TOL = 1e-10

Bound = tuple[float | None, float | None]


class SimplexCycleError(RuntimeError):
    """The pivot budget was exhausted; the solve is abandoned."""


@dataclass(frozen=True, eq=False)
class LpProblem:
    """minimize c.x subject to a_ge x >= b_ge and per-variable bounds."""

    c: np.ndarray
    a_ge: np.ndarray
    b_ge: np.ndarray
    bounds: tuple[Bound, ...] | None = None

    def __post_init__(self):
        c = frozen_array(self.c, ndim=1)
        object.__setattr__(self, "c", c)
        a = np.array(self.a_ge, dtype=float)
        if a.size == 0:
            a = a.reshape(0, c.shape[0])
        if a.ndim != 2 or a.shape[1] != c.shape[0]:
            raise ValueError(f"a_ge shape {a.shape} incompatible with {c.shape[0]} variables")
        a.setflags(write=False)
        object.__setattr__(self, "a_ge", a)
        b = frozen_array(self.b_ge, ndim=1)
        if b.shape[0] != a.shape[0]:
            raise ValueError(f"b_ge has {b.shape[0]} entries for {a.shape[0]} rows")
        object.__setattr__(self, "b_ge", b)
        if self.bounds is not None:
            bl = tuple((lo, hi) for lo, hi in self.bounds)
            if len(bl) != c.shape[0]:
                raise ValueError(f"{len(bl)} bounds for {c.shape[0]} variables")
            for j, (lo, hi) in enumerate(bl):
                if lo is not None and hi is not None and lo > hi:
                    raise ValueError(f"inconsistent bounds for variable {j}: ({lo}, {hi})")
            object.__setattr__(self, "bounds", bl)

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    def effective_bounds(self) -> tuple[Bound, ...]:
        if self.bounds is None:
            return tuple((0.0, None) for _ in range(self.n_vars))
        return self.bounds


@dataclass(frozen=True, eq=False)
class LpSolution:
    """Solver outcome; ``x`` and ``dual_ge`` are None unless status is optimal."""

    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None
    objective: float
    iterations: int
    dual_ge: np.ndarray | None = None


def _pivot(tab: np.ndarray, cost: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    factors = tab[:, col].copy()
    factors[row] = 0.0
    tab -= np.outer(factors, tab[row])
    cost -= cost[col] * tab[row]
    basis[row] = col


def _choose_entering(cost: np.ndarray, usable: np.ndarray, bland: bool) -> int | None:
    rc = np.where(usable, cost, np.inf)
    if bland:
        idx = np.flatnonzero(rc < -REDUCED_COST_TOL)
        return int(idx[0]) if idx.size else None
    j = int(np.argmin(rc))
    return j if rc[j] < -REDUCED_COST_TOL else None


def _choose_leaving(tab: np.ndarray, basis: np.ndarray, col: int, bland: bool) -> int | None:
    column = tab[:, col]
    rhs = tab[:, -1]
    rows = np.flatnonzero(column > PIVOT_TOL)
    if rows.size == 0:
        return None
    ratios = rhs[rows] / column[rows]
    best = ratios.min()
    tied = rows[ratios <= best + 1e-15]
    if bland and tied.size > 1:
        return int(tied[np.argmin(basis[tied])])
    return int(tied[0])


def _run_simplex(tab, cost, basis, usable, iterations, iter_cap, bland_after):
    """Pivot until optimal, unbounded or the iteration cap trips."""
    while True:
        bland = iterations[0] >= bland_after
        col = _choose_entering(cost, usable, bland)
        if col is None:
            return "optimal"
        row = _choose_leaving(tab, basis, col, bland)
        if row is None:
            return "unbounded"
        _pivot(tab, cost, basis, row, col)
        iterations[0] += 1
        if iterations[0] > iter_cap:
            raise SimplexCycleError(f"pivot budget of {iter_cap} exhausted")


def solve(problem: LpProblem) -> LpSolution:
    """Solve ``problem``; never raises for infeasible or unbounded inputs."""
    bounds = problem.effective_bounds()
    n = problem.n_vars
    m0 = problem.a_ge.shape[0]

    # Map the original variables onto nonnegative simplex variables.
    col_var: list[int] = []
    col_sign: list[float] = []
    x_base = np.zeros(n)
    cap_rows: list[tuple[int, float]] = []  # (simplex column, upper cap)
    for j, (lo, hi) in enumerate(bounds):
        if lo is None and hi is None:
            col_var += [j, j]
            col_sign += [1.0, -1.0]
        elif lo is not None and hi is None:
            x_base[j] = lo
            col_var.append(j)
            col_sign.append(1.0)
        elif lo is None:
            x_base[j] = hi
            col_var.append(j)
            col_sign.append(-1.0)
        else:
            x_base[j] = lo
            col_var.append(j)
            col_sign.append(1.0)
            cap_rows.append((len(col_var) - 1, hi - lo))
    n_p = len(col_var)
    var_map = np.zeros((n, n_p))
    for idx, (j, s) in enumerate(zip(col_var, col_sign)):
        var_map[j, idx] = s

    a_hat = problem.a_ge @ var_map
    b_hat = problem.b_ge - problem.a_ge @ x_base
    for col, cap in cap_rows:
        row = np.zeros(n_p)
        row[col] = -1.0
        a_hat = np.vstack([a_hat, row]) if a_hat.size else row.reshape(1, -1)
        b_hat = np.append(b_hat, -cap)
    m = a_hat.shape[0]
    c_hat = problem.c @ var_map
    obj_base = float(problem.c @ x_base)

    # Standard form: sigma_i * (a_hat_i p) - sigma_i s_i = sigma_i b_hat_i with
    # sigma chosen so the right-hand side is nonnegative.  Rows that end up
    # with a +1 slack start basic; the rest get an artificial variable.
    sigma = np.where(b_hat > 0.0, 1.0, -1.0)
    art_rows = np.flatnonzero(sigma > 0.0)
    n_art = art_rows.size
    n_cols = n_p + m + n_art

    tab = np.zeros((m, n_cols + 1))
    tab[:, :n_p] = sigma[:, None] * a_hat
    for i in range(m):
        tab[i, n_p + i] = -sigma[i]
    for k, i in enumerate(art_rows):
        tab[i, n_p + m + k] = 1.0
    tab[:, -1] = sigma * b_hat

    basis = np.empty(m, dtype=int)
    for i in range(m):
        basis[i] = n_p + i  # slack, valid where sigma = -1
    for k, i in enumerate(art_rows):
        basis[i] = n_p + m + k

    std_matrix = tab[:, :-1].copy()  # pristine copy for dual recovery

    iterations = [0]
    iter_cap = 50 * (m + n_cols) + 10_000
    bland_after = 5 * (m + n_cols)

    # Phase 1: minimise the sum of artificials.
    if n_art:
        cost1 = np.zeros(n_cols + 1)
        cost1[n_p + m :] = 1.0
        for i in art_rows:
            cost1 -= tab[i]
        usable = np.ones(n_cols, dtype=bool)
        status = _run_simplex(tab, cost1, basis, usable, iterations, iter_cap, bland_after)
        if status != "optimal":  # phase 1 is bounded below, defensive only
            raise SimplexCycleError("phase 1 terminated abnormally")
        art_sum = float(tab[np.isin(basis, np.arange(n_p + m, n_cols)), -1].sum())
        if art_sum > FEASIBILITY_TOL * max(1.0, float(np.abs(b_hat).max(initial=0.0))):
            return LpSolution("infeasible", None, float("inf"), iterations[0], None)
        # Drive leftover zero-valued artificials out of the basis.
        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if basis[i] >= n_p + m:
                pivots = np.flatnonzero(np.abs(tab[i, : n_p + m]) > PIVOT_TOL)
                if pivots.size:
                    _pivot(tab, cost1, basis, i, int(pivots[0]))
                    iterations[0] += 1
                else:
                    keep[i] = False  # redundant row
        if not keep.all():
            tab = tab[keep]
            basis = basis[keep]
            std_matrix = std_matrix[keep]
        sigma_kept = sigma[keep]
        row_kept = keep
    else:
        sigma_kept = sigma
        row_kept = np.ones(m, dtype=bool)

    # Phase 2 on the original objective; artificial columns are retired.
    usable = np.ones(n_cols, dtype=bool)
    usable[n_p + m :] = False
    cost2 = np.zeros(n_cols + 1)
    cost2[:n_p] = c_hat
    for i in range(len(basis)):
        if cost2[basis[i]] != 0.0:
            cost2 -= cost2[basis[i]] * tab[i]
    status = _run_simplex(tab, cost2, basis, usable, iterations, iter_cap, bland_after)
    if status == "unbounded":
        return LpSolution("unbounded", None, float("-inf"), iterations[0], None)

    p = np.zeros(n_cols)
    p[basis] = tab[:, -1]
    x = x_base + var_map @ p[:n_p]
    objective = float(problem.c @ x) + 0.0

    # Duals for the >= rows from the final basis: solve B^T y = c_B on the
    # surviving rows, then undo the sign normalisation.
    dual = np.zeros(m0)
    try:
        B = std_matrix[:, basis]
        y_std = np.linalg.solve(B.T, cost_basis(c_hat, basis, n_p, n_cols))
        y_full = np.zeros(m)
        y_full[row_kept] = sigma_kept * y_std
        dual = y_full[:m0]
    except np.linalg.LinAlgError:
        dual = None  # degenerate basis, no certificate

    return LpSolution("optimal", frozen_array(x, ndim=1), objective, iterations[0], dual)


def cost_basis(c_hat: np.ndarray, basis: np.ndarray, n_p: int, n_cols: int) -> np.ndarray:
    full = np.zeros(n_cols)
    full[:n_p] = c_hat
    return full[basis]
