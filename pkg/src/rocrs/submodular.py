"""Submodular value oracles and the continuous machinery built on them.

Provides the bundled oracle families (modular, coverage, cut, explicit),
exact and Monte-Carlo evaluation of the multilinear extension

    F(y) = sum_A f(A) * prod_{e in A} y_e * prod_{e not in A} (1 - y_e),

the measured continuous greedy algorithm over down-closed constraint
polytopes, and the marginal-gain acceptance filter layered on top of the
contention resolution executor.  All oracles are pure and shareable; the
greedy loop is sequential over time steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (CapacityError, DomainError, InputError, InternalError,
                     OracleContractError)
from .knapsack import KnapsackConstraint
from .limits import desk_cap
from .matroids import Matroid, mask_of

# Strict-improvement threshold for the acceptance filter.  The compiled
# kernels use the same value.
TAU_F = 1e-12

_EXACT_N_CAP = 20


class SubmodularOracle:
    """Nonnegative set function from one of the bundled families.

    kind is one of "modular", "coverage", "cut", "explicit".  Values are
    looked up through value(S) for an iterable of element ids or through
    value_mask(mask) for a bitmask.  All families are submodular by
    construction; check_submodular verifies that exhaustively at desk
    scale.
    """

    def __init__(self, kind: str, n: int, **params):
        if n < 0:
            raise InputError("oracle needs a nonnegative ground-set size")
        self.kind = kind
        self.n = int(n)
        self._table: np.ndarray | None = None
        if kind == "modular":
            w = np.asarray(params["weights"], dtype=np.float64)
            if len(w) != n:
                raise InputError("modular oracle needs one weight per element")
            if not np.all(np.isfinite(w)):
                raise InputError("modular weights must be finite")
            if np.any(w < 0):
                raise DomainError("modular weights must be nonnegative (f >= 0)")
            self.weights = w
        elif kind == "coverage":
            uw = np.asarray(params["universe_weights"], dtype=np.float64)
            covers = [list(c) for c in params["covers"]]
            if len(covers) != n:
                raise InputError("coverage oracle needs one cover set per element")
            if not np.all(np.isfinite(uw)):
                raise InputError("universe weights must be finite")
            if np.any(uw < 0):
                raise DomainError("universe weights must be nonnegative (f >= 0)")
            m = len(uw)
            for c in covers:
                for u in c:
                    if not (0 <= u < m):
                        raise InputError(f"cover refers to universe item {u} outside 0..{m - 1}")
            self.universe_weights = uw
            self.covers = covers
            # cover_masks[e] = bitmask over universe items covered by e
            self.cover_masks = [mask_of(m, c) for c in covers]
        elif kind == "cut":
            edges = [(int(u), int(v), float(w)) for (u, v, w) in params["edges"]]
            for u, v, w in edges:
                if not (0 <= u < n and 0 <= v < n):
                    raise InputError(f"cut edge ({u},{v}) outside ground set")
                if u == v:
                    raise InputError("cut edges must join distinct elements")
                if not math.isfinite(w):
                    raise InputError("cut edge weights must be finite")
                if w < 0:
                    raise DomainError("cut edge weights must be nonnegative (f >= 0)")
            self.edges = edges
        elif kind == "explicit":
            table = np.asarray(params["table"], dtype=np.float64)
            if len(table) != (1 << n):
                raise InputError("explicit oracle table must have 2^n entries")
            if not np.all(np.isfinite(table)):
                raise InputError("explicit table values must be finite")
            if np.any(table < 0):
                raise DomainError("explicit table values must be nonnegative (f >= 0)")
            self._table = table.copy()
        else:
            raise InputError(f"unknown oracle kind {kind!r}")

    @classmethod
    def modular(cls, weights) -> "SubmodularOracle":
        return cls("modular", len(list(weights)), weights=list(weights))

    @classmethod
    def coverage(cls, universe_weights, covers) -> "SubmodularOracle":
        return cls("coverage", len(list(covers)),
                   universe_weights=list(universe_weights),
                   covers=[list(c) for c in covers])

    @classmethod
    def cut(cls, n: int, edges) -> "SubmodularOracle":
        return cls("cut", n, edges=list(edges))

    @classmethod
    def explicit(cls, table) -> "SubmodularOracle":
        table = list(table)
        size = len(table)
        if size == 0 or size & (size - 1):
            raise InputError("explicit oracle table length must be a power of two")
        return cls("explicit", size.bit_length() - 1, table=table)

    def value_mask(self, mask: int) -> float:
        if mask < 0 or mask >> self.n:
            raise InputError("mask outside the ground set")
        if self._table is not None:
            return float(self._table[mask])
        if self.kind == "modular":
            total = 0.0
            m = mask
            while m:
                e = (m & -m).bit_length() - 1
                total += self.weights[e]
                m &= m - 1
            return total
        if self.kind == "coverage":
            um = 0
            m = mask
            while m:
                e = (m & -m).bit_length() - 1
                um |= self.cover_masks[e]
                m &= m - 1
            total = 0.0
            while um:
                u = (um & -um).bit_length() - 1
                total += self.universe_weights[u]
                um &= um - 1
            return total
        if self.kind == "cut":
            total = 0.0
            for u, v, w in self.edges:
                if ((mask >> u) & 1) != ((mask >> v) & 1):
                    total += w
            return total
        raise InternalError(f"unhandled oracle kind {self.kind!r}")

    def value(self, subset) -> float:
        return self.value_mask(mask_of(self.n, subset))

    def value_table(self) -> np.ndarray:
        """All 2^n values, index = bitmask.  Gated by the desk cap."""
        if self._table is not None and self.kind == "explicit":
            return self._table
        if self._table is not None:
            return self._table
        cap = desk_cap()
        if self.n > cap:
            raise CapacityError(f"value table needs n <= {cap}, got {self.n}")
        masks = np.arange(1 << self.n, dtype=np.int64)
        table = np.zeros(1 << self.n, dtype=np.float64)
        if self.kind == "modular":
            for e in range(self.n):
                table += self.weights[e] * ((masks >> e) & 1)
        elif self.kind == "coverage":
            for u in range(len(self.universe_weights)):
                em = 0
                for e in range(self.n):
                    if (self.cover_masks[e] >> u) & 1:
                        em |= 1 << e
                if em:
                    table += self.universe_weights[u] * ((masks & em) != 0)
        elif self.kind == "cut":
            for u, v, w in self.edges:
                table += w * (((masks >> u) & 1) ^ ((masks >> v) & 1))
        else:
            raise InternalError(f"unhandled oracle kind {self.kind!r}")
        self._table = table
        return table

    def to_json(self) -> dict:
        if self.kind == "modular":
            return {"kind": "modular", "weights": [float(w) for w in self.weights]}
        if self.kind == "coverage":
            return {"kind": "coverage",
                    "universe_weights": [float(w) for w in self.universe_weights],
                    "covers": [list(c) for c in self.covers]}
        if self.kind == "cut":
            return {"kind": "cut", "n": self.n,
                    "edges": [[u, v, w] for (u, v, w) in self.edges]}
        return {"kind": "explicit", "table": [float(v) for v in self._table]}

    @classmethod
    def from_json(cls, obj: dict) -> "SubmodularOracle":
        kind = obj.get("kind")
        if kind == "modular":
            return cls.modular(obj["weights"])
        if kind == "coverage":
            return cls.coverage(obj["universe_weights"], obj["covers"])
        if kind == "cut":
            return cls.cut(obj["n"], [tuple(e) for e in obj["edges"]])
        if kind == "explicit":
            return cls.explicit(obj["table"])
        raise InputError(f"unknown oracle kind {kind!r}")

    def __repr__(self):
        return f"SubmodularOracle(kind={self.kind!r}, n={self.n})"


def check_submodular(oracle, tol: float = 1e-9) -> None:
    """Exhaustively verify f(S|T) + f(S&T) <= f(S) + f(T) over all pairs.

    Raises OracleContractError naming the first violating pair.  Quadratic
    in 2^n, so capped at n <= 12.
    """
    if oracle.n > 12:
        raise CapacityError(f"exhaustive submodularity check needs n <= 12, got {oracle.n}")
    table = oracle.value_table()
    masks = np.arange(1 << oracle.n, dtype=np.int64)
    for t in range(1 << oracle.n):
        lhs = table[masks | t] + table[masks & t]
        rhs = table[masks] + table[t]
        bad = np.nonzero(lhs > rhs + tol)[0]
        if len(bad):
            s = int(bad[0])
            raise OracleContractError(
                f"submodularity violated at S={s:#x}, T={t:#x}: "
                f"{lhs[s]:.12g} > {rhs[s]:.12g}")


def _subset_probabilities(y: np.ndarray) -> np.ndarray:
    """probs[mask] = prod_{e in mask} y_e * prod_{e not in mask} (1 - y_e)."""
    probs = np.ones(1, dtype=np.float64)
    for e in range(len(y)):
        probs = np.concatenate([probs * (1.0 - y[e]), probs * y[e]])
    return probs


def _check_point(n: int, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (n,):
        raise InputError(f"point must have length {n}")
    if not np.all(np.isfinite(y)):
        raise InputError("point coordinates must be finite")
    if np.any(y < -1e-12) or np.any(y > 1.0 + 1e-12):
        raise DomainError("point must lie in [0,1]^n")
    return np.clip(y, 0.0, 1.0)


def multilinear_F_exact(oracle, y) -> float:
    """Exact multilinear extension value, summing over all 2^n subsets."""
    if oracle.n > _EXACT_N_CAP:
        raise CapacityError(
            f"exact multilinear evaluation needs n <= {_EXACT_N_CAP}, got {oracle.n}")
    y = _check_point(oracle.n, y)
    table = oracle.value_table()
    return float(np.dot(_subset_probabilities(y), table))


def multilinear_F_mc(oracle, y, samples: int, rng) -> tuple[float, float]:
    """Monte-Carlo estimate of F(y): mean and standard error.

    Each sample consumes exactly n uniform draws in element id order.
    """
    if samples < 1:
        raise InputError("samples must be >= 1")
    y = _check_point(oracle.n, y)
    total = 0.0
    total_sq = 0.0
    for _ in range(samples):
        mask = 0
        for e in range(oracle.n):
            if rng.uniform() < y[e]:
                mask |= 1 << e
        v = oracle.value_mask(mask)
        total += v
        total_sq += v * v
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0)
    return mean, math.sqrt(var / samples)


def linear_maximize(weights, constraints) -> np.ndarray:
    """argmax of a linear objective over the constraint intersection polytope.

    A single matroid is solved by the exact greedy on positive weights; any
    intersection (or knapsack presence) goes through the desk-scale LP with
    polytope rows enumerated.  Returns a vertex of the polytope.
    """
    w = np.asarray(weights, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise InputError("objective weights must be finite")
    n = len(w)
    if not constraints:
        raise InputError("need at least one constraint")
    for c in constraints:
        if isinstance(c, KnapsackConstraint):
            cn = len(c.sizes)
        elif isinstance(c, Matroid) or (hasattr(c, "rows") and hasattr(c, "upper")):
            cn = c.n
        else:
            raise InputError(f"unsupported constraint type {type(c).__name__}")
        if cn != n:
            raise InputError("constraint ground set does not match weights")
    if np.all(w <= 0):
        return np.zeros(n, dtype=np.float64)
    if len(constraints) == 1 and isinstance(constraints[0], Matroid):
        m = constraints[0]
        x = np.zeros(n, dtype=np.float64)
        chosen = 0
        # highest weight first; ties resolved by lower id for determinism
        for e in sorted(range(n), key=lambda e: (-w[e], e)):
            if w[e] <= 0:
                break
            if m.is_independent_mask(chosen | (1 << e)):
                chosen |= 1 << e
                x[e] = 1.0
        return x
    from .relaxations import LinearProgram, matroid_polytope_rows, solve_lp
    rows = []
    upper = np.ones(n, dtype=np.float64)
    for c in constraints:
        if isinstance(c, Matroid):
            rows.extend(matroid_polytope_rows(c))
        elif isinstance(c, KnapsackConstraint):
            rows.append((np.asarray(c.sizes, dtype=np.float64), "<=", 1.0))
        else:
            rows.extend(c.rows)
            upper = np.minimum(upper, c.upper)
    lp = LinearProgram(objective=w, rows=rows, n_vars=n, upper=upper)
    sol = solve_lp(lp)
    if sol.status != "optimal":
        raise InternalError(f"direction LP came back {sol.status}; 0 is always feasible")
    return np.asarray(sol.values, dtype=np.float64)


@dataclass
class GreedyTrajectory:
    """Full record of one measured continuous greedy run.

    times has steps+1 grid points; ys[i] is y(times[i]); directions[i] is
    the vertex chosen at times[i]; values[i] estimates F(ys[i]).  exact
    records whether F and the step weights were evaluated exactly or by
    Monte-Carlo.
    """
    delta: float
    times: list[float]
    ys: list[np.ndarray]
    directions: list[np.ndarray]
    values: list[float]
    exact: bool
    weight_stderr: list[np.ndarray] = field(default_factory=list)

    @property
    def y_final(self) -> np.ndarray:
        return self.ys[-1]

    def envelope_violation(self) -> float:
        """max over grid points of y_e(t) - (1 - (1-delta)^(t/delta))."""
        worst = -math.inf
        for i, y in enumerate(self.ys):
            cap = 1.0 - (1.0 - self.delta) ** i
            worst = max(worst, float(np.max(y) - cap))
        return worst


def measured_continuous_greedy(f, constraints, T: float, b: float,
                               steps: int, rng, samples: int = 1000) -> GreedyTrajectory:
    """Discrete-time measured continuous greedy over [0, T] with T = b.

    Each step picks I(t) maximizing sum_e x_e * (F(y or 1_e) - F(y)) over
    the constraint polytope and moves y_e += delta * I_e * (1 - y_e).  Step
    weights and F values are exact for n <= 20, Monte-Carlo with the given
    sample count otherwise.  Running to time b lands y(T) inside b * P.
    """
    if not (0.0 < T <= 1.0) or T != b:
        raise DomainError("need T = b in (0, 1]")
    if steps < 1:
        raise InputError("steps must be >= 1")
    n = f.n
    delta = T / steps
    exact = n <= _EXACT_N_CAP
    y = np.zeros(n, dtype=np.float64)

    def F(point):
        if exact:
            return multilinear_F_exact(f, point), 0.0
        return multilinear_F_mc(f, point, samples, rng)

    base, _ = F(y)
    traj = GreedyTrajectory(delta=delta, times=[0.0], ys=[y.copy()],
                            directions=[], values=[base], exact=exact)
    for step in range(steps):
        weights = np.zeros(n, dtype=np.float64)
        errs = np.zeros(n, dtype=np.float64)
        for e in range(n):
            lifted = y.copy()
            lifted[e] = 1.0
            val, se = F(lifted)
            weights[e] = val - base
            errs[e] = se
        direction = linear_maximize(weights, constraints)
        y = y + delta * direction * (1.0 - y)
        base, _ = F(y)
        traj.directions.append(direction)
        traj.ys.append(y.copy())
        traj.times.append((step + 1) * delta)
        traj.values.append(base)
        if not exact:
            traj.weight_stderr.append(errs)
    return traj


def run_crs_submodular(inst, f, rng):
    """CR run where an accepted element joins X only on strict value gain.

    Controllers update on every scheme accept regardless of the filter, so
    blocking dynamics match the unfiltered scheme; the filter only decides
    membership in the returned set X.  Returns (X, trace).
    """
    from .crs import run_crs

    def filt(solution, e):
        before = f.value(solution)
        after = f.value(list(solution) + [e])
        if before < -TAU_F or after < -TAU_F:
            raise OracleContractError(
                f"oracle returned a negative value near element {e}")
        gain = after - before
        return gain > TAU_F, gain

    res = run_crs(inst, rng, filter_fn=filt)
    return set(res.solution), res.trace
