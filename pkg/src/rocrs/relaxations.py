"""Desk-scale exact linear programming and relaxation builders.

A dense two-phase simplex with Bland's rule solves every LP in the package:
the posted-price auction bound, the stochastic packing bound, the f+
extension brute force, and the per-step direction problems of the
continuous greedy.  Matroid polytopes are handled by enumerating subset
rank rows at desk scale; redundant rows (independent or non-closed sets)
are dropped, which leaves the same polytope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (CapacityError, DomainError, InputError, InternalError,
                     NumericalError)
from .limits import desk_cap
from .matroids import Matroid, popcount

TAU_LP = 1e-7

# pivot tolerance, well below any coefficient scale we feed the solver
_PIV_TOL = 1e-9

_MAX_ROWS = 5000
_MAX_VARS = 5000


@dataclass
class LinearProgram:
    """max objective . x subject to rows, 0 <= x <= upper (default 1).

    rows are (coeffs, rel, rhs) with rel one of "<=", "==".  upper entries
    may be math.inf for unbounded variables; lower bounds are fixed at 0.
    """
    objective: np.ndarray
    rows: list
    n_vars: int
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=np.float64)
        if self.objective.shape != (self.n_vars,):
            raise InputError("objective length must equal n_vars")
        if not np.all(np.isfinite(self.objective)):
            raise InputError("objective coefficients must be finite")
        if self.upper is None:
            self.upper = np.ones(self.n_vars, dtype=np.float64)
        else:
            self.upper = np.asarray(self.upper, dtype=np.float64)
            if self.upper.shape != (self.n_vars,):
                raise InputError("upper bound vector length must equal n_vars")
            if np.any(np.isnan(self.upper)) or np.any(self.upper < 0):
                raise InputError("upper bounds must be nonnegative (inf allowed)")
        checked = []
        for coeffs, rel, rhs in self.rows:
            coeffs = np.asarray(coeffs, dtype=np.float64)
            if coeffs.shape != (self.n_vars,):
                raise InputError("row coefficient length must equal n_vars")
            if not np.all(np.isfinite(coeffs)) or not math.isfinite(rhs):
                raise InputError("row coefficients and rhs must be finite")
            if rel not in ("<=", "=="):
                raise InputError(f"unknown row relation {rel!r}")
            checked.append((coeffs, rel, float(rhs)))
        self.rows = checked


@dataclass
class LpSolution:
    values: np.ndarray
    objective: float
    status: str  # optimal | infeasible | unbounded


def max_residual(lp: LinearProgram, values) -> float:
    """Largest constraint or bound violation of a candidate point."""
    x = np.asarray(values, dtype=np.float64)
    worst = max(0.0, float(np.max(-x, initial=0.0)))
    finite = np.isfinite(lp.upper)
    if np.any(finite):
        worst = max(worst, float(np.max((x - lp.upper)[finite], initial=0.0)))
    for coeffs, rel, rhs in lp.rows:
        lhs = float(np.dot(coeffs, x))
        if rel == "<=":
            worst = max(worst, lhs - rhs)
        else:
            worst = max(worst, abs(lhs - rhs))
    return worst


def _pivot(T: np.ndarray, basis: list[int], row: int, col: int) -> None:
    T[row] /= T[row, col]
    other = T[:, col].copy()
    other[row] = 0.0
    T -= np.outer(other, T[row])
    basis[row] = col


def _run_simplex(T: np.ndarray, basis: list[int], usable: int) -> str:
    """Minimize with Bland's rule on a tableau whose last row holds reduced
    costs and last column the basic values.  Returns optimal or unbounded."""
    m = T.shape[0] - 1
    while True:
        enter = -1
        for j in range(usable):
            if T[-1, j] < -_PIV_TOL:
                enter = j
                break
        if enter < 0:
            return "optimal"
        leave = -1
        best = math.inf
        for i in range(m):
            a = T[i, enter]
            if a <= _PIV_TOL:
                continue
            ratio = T[i, -1] / a
            if ratio < best - 1e-12:
                best = ratio
                leave = i
            elif abs(ratio - best) <= 1e-12 and basis[i] < basis[leave]:
                leave = i
        if leave < 0:
            return "unbounded"
        _pivot(T, basis, leave, enter)


def solve_lp(lp: LinearProgram, tol: float = TAU_LP) -> LpSolution:
    """Two-phase dense simplex; deterministic for identical input."""
    n = lp.n_vars
    if n == 0:
        return LpSolution(values=np.zeros(0), objective=0.0, status="optimal")
    rows = list(lp.rows)
    for j in range(n):
        if math.isfinite(lp.upper[j]):
            coeffs = np.zeros(n)
            coeffs[j] = 1.0
            rows.append((coeffs, "<=", float(lp.upper[j])))
    m = len(rows)
    if m > _MAX_ROWS or n > _MAX_VARS:
        raise CapacityError(f"LP size {m}x{n} exceeds the desk-scale cap "
                            f"{_MAX_ROWS}x{_MAX_VARS}")

    # Normalize to rhs >= 0; "<=" with negative rhs becomes ">=".
    norm = []
    for coeffs, rel, rhs in rows:
        coeffs = coeffs.copy()
        if rhs < 0:
            coeffs = -coeffs
            rhs = -rhs
            rel = {"<=": ">=", "==": "=="}[rel]
        norm.append((coeffs, rel, rhs))

    n_slack = sum(1 for _, rel, _ in norm if rel in ("<=", ">="))
    n_art = sum(1 for _, rel, _ in norm if rel in (">=", "=="))
    width = n + n_slack + n_art + 1
    T = np.zeros((m + 1, width), dtype=np.float64)
    basis = [0] * m
    art_start = n + n_slack
    si = n
    ai = art_start
    art_cols = []
    for i, (coeffs, rel, rhs) in enumerate(norm):
        T[i, :n] = coeffs
        T[i, -1] = rhs
        if rel == "<=":
            T[i, si] = 1.0
            basis[i] = si
            si += 1
        elif rel == ">=":
            T[i, si] = -1.0
            si += 1
            T[i, ai] = 1.0
            basis[i] = ai
            art_cols.append(ai)
            ai += 1
        else:
            T[i, ai] = 1.0
            basis[i] = ai
            art_cols.append(ai)
            ai += 1

    if art_cols:
        # phase 1: drive the sum of artificials to zero
        for i in range(m):
            if basis[i] >= art_start:
                T[-1, :] -= T[i, :]
        T[-1, art_start:-1] += 1.0
        status = _run_simplex(T, basis, width - 1)
        if status != "optimal":
            raise InternalError("phase 1 cannot be unbounded")
        if -T[-1, -1] > tol:
            return LpSolution(values=np.zeros(n), objective=0.0, status="infeasible")
        # pivot remaining artificials out, dropping rows that are redundant
        keep = []
        for i in range(m):
            if basis[i] >= art_start:
                col = -1
                for j in range(art_start):
                    if abs(T[i, j]) > _PIV_TOL:
                        col = j
                        break
                if col < 0:
                    continue
                _pivot(T, basis, i, col)
            keep.append(i)
        if len(keep) < m:
            T = np.vstack([T[keep], T[-1:]])
            basis = [basis[i] for i in keep]
            m = len(keep)
        T = np.delete(T, np.s_[art_start:width - 1], axis=1)
        width = art_start + 1

    # phase 2: minimize the negated objective
    cost = np.zeros(width)
    cost[:n] = -lp.objective
    T[-1, :] = cost
    for i in range(m):
        cb = cost[basis[i]]
        if cb != 0.0:
            T[-1, :] -= cb * T[i, :]
    status = _run_simplex(T, basis, width - 1)
    if status == "unbounded":
        return LpSolution(values=np.zeros(n), objective=math.inf, status="unbounded")
    values = np.zeros(n)
    for i in range(m):
        if basis[i] < n:
            values[basis[i]] = T[i, -1]
    values = np.where(np.abs(values) < 1e-15, 0.0, values)
    resid = max_residual(lp, values)
    if resid > tol:
        raise NumericalError(f"simplex answer violates a constraint by {resid:.3g}")
    return LpSolution(values=values, objective=float(np.dot(lp.objective, values)),
                      status="optimal")


def lp_debug_dump(lp: LinearProgram, sol: LpSolution | None = None) -> str:
    """Plain-text tableau for failure triage."""
    lines = [f"max  {'  '.join(f'{c:+.6g}*x{j}' for j, c in enumerate(lp.objective) if c)}"]
    for coeffs, rel, rhs in lp.rows:
        terms = "  ".join(f"{c:+.6g}*x{j}" for j, c in enumerate(coeffs) if c)
        lines.append(f"s.t. {terms or '0'} {rel} {rhs:.6g}")
    lines.append("bounds 0 <= x <= [" + ", ".join(f"{u:.6g}" for u in lp.upper) + "]")
    if sol is not None:
        lines.append(f"status {sol.status}  objective {sol.objective:.12g}")
        lines.append("x = [" + ", ".join(f"{v:.12g}" for v in sol.values) + "]")
    return "\n".join(lines)


def matroid_polytope_rows(m: Matroid, scale=None) -> list:
    """Inequality rows cutting out {x : scale*x in P(m)} at desk scale.

    Enumerates all subsets but emits only closed sets with rank below
    cardinality; the dropped rows are implied by nonnegativity plus the
    callers' per-unit mass caps, so the feasible region is unchanged.
    """
    n = m.n
    if n > desk_cap():
        raise CapacityError(f"polytope row enumeration needs n <= {desk_cap()}, got {n}")
    if scale is None:
        scale = np.ones(n, dtype=np.float64)
    else:
        scale = np.asarray(scale, dtype=np.float64)
        if scale.shape != (n,) or not np.all(np.isfinite(scale)) or np.any(scale < 0):
            raise InputError("scale must be a nonnegative finite vector of length n")
    ranks = [0] * (1 << n)
    for mask in range(1, 1 << n):
        ranks[mask] = m.rank_mask(mask)
    rows = []
    for mask in range(1, 1 << n):
        r = ranks[mask]
        if r >= popcount(mask):
            continue
        closed = True
        for e in range(n):
            if not (mask >> e) & 1 and ranks[mask | (1 << e)] == r:
                closed = False
                break
        if not closed:
            continue
        coeffs = np.zeros(n, dtype=np.float64)
        for e in range(n):
            if (mask >> e) & 1:
                coeffs[e] = scale[e]
        rows.append((coeffs, "<=", float(r)))
    return rows


@dataclass
class PolytopeRows:
    """Down-closed polytope as explicit rows plus a box upper bound.

    Stands in for a constraint object wherever a direction LP is solved
    over a polytope that is not a plain matroid or knapsack, e.g. the
    probing polytope after the y = p*x substitution.
    """
    n: int
    rows: list
    upper: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.upper is None:
            self.upper = np.ones(self.n, dtype=np.float64)
        else:
            self.upper = np.asarray(self.upper, dtype=np.float64)


def tail_probabilities(pmf) -> np.ndarray:
    """tail[p] = Pr[v >= p] for a pmf over {0, ..., B}."""
    pmf = np.asarray(pmf, dtype=np.float64)
    if np.any(pmf < -1e-12) or abs(pmf.sum() - 1.0) > 1e-9:
        raise DomainError("pmf entries must be nonnegative and sum to 1")
    return np.minimum(1.0, pmf[::-1].cumsum()[::-1])


def build_bmumd_lp(inst) -> LinearProgram:
    """Posted-price auction bound over copy-clients.

    One variable x_{c,p} per (item, price in 0..B); objective
    sum x_{c,p} * p * Pr[v_c >= p]; per-item price mass at most 1, per
    original client a unit-demand row, and the item constraint system
    applied to z_c = sum_p x_{c,p} * Pr[v_c >= p].
    """
    n_items = inst.n_items
    B = inst.B
    width = B + 1
    n_vars = n_items * width
    if n_vars > _MAX_VARS:
        raise CapacityError(f"auction LP needs {n_vars} variables; cap is {_MAX_VARS}")
    tails = [tail_probabilities(inst.pmfs[c]) for c in range(n_items)]
    obj = np.zeros(n_vars)
    for c in range(n_items):
        for p in range(width):
            obj[c * width + p] = p * tails[c][p]
    rows = []
    for c in range(n_items):
        coeffs = np.zeros(n_vars)
        coeffs[c * width:(c + 1) * width] = 1.0
        rows.append((coeffs, "<=", 1.0))
    for group in inst.groups:
        coeffs = np.zeros(n_vars)
        for c in group:
            coeffs[c * width:(c + 1) * width] = tails[c]
        rows.append((coeffs, "<=", 1.0))
    for cons in inst.constraints:
        if isinstance(cons, Matroid):
            for item_coeffs, rel, rhs in matroid_polytope_rows(cons):
                coeffs = np.zeros(n_vars)
                for c in range(n_items):
                    if item_coeffs[c]:
                        coeffs[c * width:(c + 1) * width] = item_coeffs[c] * tails[c]
                rows.append((coeffs, rel, rhs))
        else:
            sizes = np.asarray(cons.sizes, dtype=np.float64)
            coeffs = np.zeros(n_vars)
            for c in range(n_items):
                coeffs[c * width:(c + 1) * width] = sizes[c] * tails[c]
            rows.append((coeffs, "<=", 1.0))
    return LinearProgram(objective=obj, rows=rows, n_vars=n_vars)


def build_setpacking_lp(inst) -> LinearProgram:
    """Stochastic packing bound: max sum E[v_e] x_e with p^i * x in each
    row matroid polytope and x in [0,1]^n."""
    n = inst.n
    rows = []
    for i, m in enumerate(inst.row_matroids):
        rows.extend(matroid_polytope_rows(m, scale=inst.marginals[:, i]))
    return LinearProgram(objective=np.asarray(inst.expected_values, dtype=np.float64),
                         rows=rows, n_vars=n)


def f_plus_exact(oracle, y) -> float:
    """Concave closure style extension: the best distribution over subsets
    with marginals at most y.  LP over all 2^n subset weights; n <= 12."""
    n = oracle.n
    if n > 12:
        raise CapacityError(f"f+ brute force needs n <= 12, got {n}")
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (n,) or np.any(y < -1e-12) or np.any(y > 1 + 1e-12):
        raise DomainError("marginal vector must lie in [0,1]^n")
    table = oracle.value_table()
    size = 1 << n
    rows = [(np.ones(size), "<=", 1.0)]
    masks = np.arange(size, dtype=np.int64)
    for j in range(n):
        rows.append((((masks >> j) & 1).astype(np.float64), "<=", float(min(y[j], 1.0))))
    lp = LinearProgram(objective=table.astype(np.float64), rows=rows, n_vars=size,
                       upper=np.full(size, math.inf))
    sol = solve_lp(lp)
    if sol.status != "optimal":
        raise InternalError(f"f+ LP came back {sol.status}; alpha = 0 is feasible")
    return sol.objective


def probing_polytope(inst) -> PolytopeRows:
    """Rows for the probing polytope after substituting y = p * x:
    y in P(inner matroids), y/p in P(outer matroids), 0 <= y <= p.

    Elements with p_e = 0 are neglected: their y is pinned to 0 by the
    upper bound and they drop out of the outer rows (x_e taken as 0).
    """
    p = np.asarray(inst.p, dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1):
        raise DomainError("activation probabilities must lie in [0, 1]")
    inv = np.divide(1.0, p, out=np.zeros_like(p), where=p > 0)
    rows = []
    for m in inst.in_matroids:
        rows.extend(matroid_polytope_rows(m))
    for m in inst.out_matroids:
        rows.extend(matroid_polytope_rows(m, scale=inv))
    return PolytopeRows(n=inst.n, rows=rows, upper=p.copy())


def solve_probing_mp(inst, eps: float, rng, steps: int | None = None) -> np.ndarray:
    """Fractional probing solution x with F(p*x) within (1/e - eps) of the
    mathematical-programming optimum.

    Runs the measured continuous greedy with b = 1 on the substituted
    polytope and maps the answer back through x = y / p.
    """
    from .submodular import measured_continuous_greedy
    if not (0.0 < eps < 1.0):
        raise DomainError("eps must lie in (0,1)")
    if steps is None:
        steps = max(100, math.ceil(1.0 / eps))
    poly = probing_polytope(inst)
    traj = measured_continuous_greedy(inst.oracle, [poly], T=1.0, b=1.0,
                                      steps=steps, rng=rng)
    y = traj.y_final
    p = np.asarray(inst.p, dtype=np.float64)
    ratio = np.divide(y, p, out=np.zeros_like(y), where=p > 0)
    return np.clip(ratio, 0.0, 1.0)
