"""Stochastic probing and k-set packing simulators on joint controllers.

Probing instances carry activation probabilities p, outer matroids gating
the probed set Q and inner matroids gating the successful set S, plus a
submodular objective.  Packing instances carry per-element joint (value,
size-vector) outcome tables whose marginals drive one controller per row
matroid.

Per-trial randomness contract, probing (one run_probing call):
  1. activation draws, n in id order (against x);
  2. controller init per outer matroid in list order, then per inner
     matroid in list order: one draw per element in id order;
  3. the element permutation (Fisher-Yates, n - 1 draws);
  4. per gate-passing element, one probe-success draw.
Matroid controller accepts consume no draws.

Per-trial randomness contract, packing (one run_kset_packing call):
  1. controller init per row matroid in row order: one draw per element in
     id order (against the row's marginal mass);
  2. the element permutation (n - 1 draws);
  3. per unblocked element, one take draw; if taken, one outcome draw.

The characteristic trace marks an element accepted when the scan reaches
it unblocked; activation, marginal-gain, and probe-success coins all sit
below that event, so E[(1+lambda) S^tau + Y^tau] >= 1 holds without
conditioning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controllers import (CharacteristicTrace, JointController,
                          MatroidControllerState, sample_matroid_assignment)
from .errors import (DomainError, InputError, InternalError,
                     OracleContractError)
from .matroids import Matroid, decompose_support, in_polytope
from .submodular import TAU_F, SubmodularOracle

_PROBE_SHAVE = 1e-6  # absorbs greedy/LP tolerance ahead of decomposition


class ProbingInstance:
    """(p, inner matroids, outer matroids) with a submodular objective."""

    def __init__(self, p, oracle: SubmodularOracle, in_matroids, out_matroids):
        self.p = np.asarray(p, dtype=np.float64)
        self.oracle = oracle
        self.in_matroids = list(in_matroids)
        self.out_matroids = list(out_matroids)
        self.n = len(self.p)
        if np.any(self.p < 0) or np.any(self.p > 1):
            raise DomainError("activation probabilities must lie in [0, 1]")
        if oracle.n != self.n:
            raise InputError("objective ground set must match len(p)")
        for m in self.in_matroids + self.out_matroids:
            if m.n != self.n:
                raise InputError("constraint ground set must match len(p)")

    @property
    def k_in(self) -> int:
        return len(self.in_matroids)

    @property
    def k_out(self) -> int:
        return len(self.out_matroids)

    def lambda_total(self) -> float:
        return float(self.k_in + self.k_out)

    def to_json(self) -> dict:
        from .crs import constraint_to_json
        return {"p": [float(v) for v in self.p],
                "oracle": self.oracle.to_json(),
                "in_matroids": [constraint_to_json(m) for m in self.in_matroids],
                "out_matroids": [constraint_to_json(m) for m in self.out_matroids]}

    @classmethod
    def from_json(cls, obj: dict) -> "ProbingInstance":
        from .crs import constraint_from_json
        for key in ("p", "oracle", "in_matroids", "out_matroids"):
            if key not in obj:
                raise InputError(f"probing instance is missing the {key!r} key")
        mats = [[constraint_from_json(m) for m in obj[k]]
                for k in ("in_matroids", "out_matroids")]
        for group in mats:
            for m in group:
                if not isinstance(m, Matroid):
                    raise InputError("probing constraints must be matroids")
        return cls(obj["p"], SubmodularOracle.from_json(obj["oracle"]),
                   mats[0], mats[1])


class PackingInstance:
    """Elements with joint (value, size) outcomes packed into row matroids.

    outcomes[e] is a list of (prob, value, L) rows; L is the 0/1 size
    vector over the d rows and must be supported inside Q_e.  Marginals
    p^i_e and expected values are derived at load.
    """

    def __init__(self, outcomes, q_sets, row_matroids):
        self.row_matroids = list(row_matroids)
        self.d = len(self.row_matroids)
        self.n = len(outcomes)
        self.q_sets = [sorted(set(int(i) for i in q)) for q in q_sets]
        if len(self.q_sets) != self.n:
            raise InputError("one Q set per element required")
        self.outcomes = []
        for e, rows in enumerate(outcomes):
            table = []
            total = 0.0
            for row in rows:
                prob, value, size = (row["prob"], row["v"], row["L"]) \
                    if isinstance(row, dict) else row
                prob, value = float(prob), float(value)
                size = np.asarray(size, dtype=np.int8)
                if prob < 0 or value < 0:
                    raise DomainError("outcome probabilities and values must be nonnegative")
                if size.shape != (self.d,) or np.any((size != 0) & (size != 1)):
                    raise InputError(f"size vectors must be 0/1 over the {self.d} rows")
                for i in np.nonzero(size)[0]:
                    if int(i) not in self.q_sets[e]:
                        raise InputError(
                            f"element {e} materializes in row {int(i)} outside its Q set")
                total += prob
                table.append((prob, value, size))
            if abs(total - 1.0) > 1e-9:
                raise DomainError(f"outcome probabilities of element {e} sum to {total}")
            self.outcomes.append(table)
        for q in self.q_sets:
            for i in q:
                if not (0 <= i < self.d):
                    raise InputError(f"Q set refers to row {i} outside 0..{self.d - 1}")
        for m in self.row_matroids:
            if m.n != self.n:
                raise InputError("row matroid ground set must match the element count")
        self.marginals = np.zeros((self.n, self.d))  # marginals[e, i] = p^i_e
        self.expected_values = np.zeros(self.n)
        for e, table in enumerate(self.outcomes):
            for prob, value, size in table:
                self.expected_values[e] += prob * value
                self.marginals[e] += prob * size

    @property
    def k(self) -> int:
        """Max coordinates any element can occupy."""
        return max((len(q) for q in self.q_sets), default=0)

    def to_json(self) -> dict:
        from .crs import constraint_to_json
        return {"outcomes": [[{"prob": float(p), "v": float(v),
                               "L": [int(b) for b in s]}
                              for p, v, s in table] for table in self.outcomes],
                "q_sets": [list(q) for q in self.q_sets],
                "row_matroids": [constraint_to_json(m) for m in self.row_matroids]}

    @classmethod
    def from_json(cls, obj: dict) -> "PackingInstance":
        from .crs import constraint_from_json
        for key in ("outcomes", "q_sets", "row_matroids"):
            if key not in obj:
                raise InputError(f"packing instance is missing the {key!r} key")
        return cls(obj["outcomes"], obj["q_sets"],
                   [constraint_from_json(m) for m in obj["row_matroids"]])


@dataclass
class ProbingRunResult:
    solution: list[int]      # S: successfully probed, in probe order
    probed: list[int]        # Q: gate-passing elements, in probe order
    active: np.ndarray
    trace: CharacteristicTrace
    gains: list[float]


def _controllers_for(matroids, vector, rng, decos=None) -> JointController:
    if decos is None:
        decos = [decompose_support(m, vector) for m in matroids]
    parts = []
    for m, deco in zip(matroids, decos):
        assign = sample_matroid_assignment(deco, rng)
        parts.append(MatroidControllerState(m, deco, assign))
    return JointController(parts)


def _check_probing_point(inst: ProbingInstance, x: np.ndarray) -> None:
    for m in inst.out_matroids:
        if not in_polytope(m, x):
            raise DomainError("x is outside an outer matroid polytope")
    for m in inst.in_matroids:
        if not in_polytope(m, inst.p * x):
            raise DomainError("p*x is outside an inner matroid polytope")


def run_probing(inst: ProbingInstance, x, rng, decos=None) -> ProbingRunResult:
    """One probing trial: scan in random order, gate on activation, joint
    controllers, and positive marginal gain; outer controllers update for
    every gate-passing element, inner only on probe success.

    Successfully probed elements are always part of the solution (the
    probe commits).  Q stays independent in every outer matroid and S in
    every inner matroid at every prefix.  decos, when given, is the
    (outer, inner) decomposition pair for the shaved x; it is a pure
    function of (constraints, x), so callers may compute it once and
    share it across trials without touching the draw order.
    """
    n = inst.n
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    _check_probing_point(inst, x)
    x = x * (1 - _PROBE_SHAVE)
    f = inst.oracle

    from .crs import sample_active_set
    active = sample_active_set(x, rng)
    out_decos, in_decos = decos if decos is not None else (None, None)
    outer = _controllers_for(inst.out_matroids, x, rng, out_decos)
    inner = _controllers_for(inst.in_matroids, inst.p * x, rng, in_decos)
    perm = rng.permutation(n)

    def blocked(e: int) -> bool:
        return outer.is_blocked(e) or inner.is_blocked(e)

    trace = CharacteristicTrace(n, initial_blocked=[e for e in range(n) if blocked(e)])
    solution: list[int] = []
    probed: list[int] = []
    gains: list[float] = []
    sol_value = f.value([])
    scanned = np.zeros(n, dtype=bool)
    for t in range(n):
        e = int(perm[t])
        scanned[e] = True
        accepted_now: list[int] = []
        blocked_now: list[int] = []
        if not blocked(e):
            accepted_now = [e]
            gain = f.value(solution + [e]) - sol_value
            if sol_value < -TAU_F or gain + sol_value < -TAU_F:
                raise OracleContractError(
                    f"oracle returned a negative value near element {e}")
            if active[e] and gain > TAU_F:
                pre = [blocked(g) for g in range(n)]
                newly = outer.accept(e, rng) if outer.parts else []
                probed.append(e)
                gains.append(float(gain))
                if rng.uniform() < inst.p[e]:
                    if inner.parts:
                        newly += inner.accept(e, rng)
                    solution.append(e)
                    sol_value += gain
                # an eviction only resolves elements the scan has not reached
                blocked_now = [g for g in dict.fromkeys(newly)
                               if not pre[g] and not scanned[g]]
                for m in inst.out_matroids:
                    if not m.is_independent(probed):
                        raise InternalError("probed set left an outer matroid")
                for m in inst.in_matroids:
                    if not m.is_independent(solution):
                        raise InternalError("solution left an inner matroid")
        trace.record_step(t, accepted_now, blocked_now)
    return ProbingRunResult(solution=solution, probed=probed, active=active,
                            trace=trace, gains=gains)


@dataclass
class PackingRunResult:
    taken: list[int]
    value: float
    materialized: list[tuple[int, float, np.ndarray]]  # (element, v, L)
    trace: CharacteristicTrace


def run_kset_packing(inst: PackingInstance, x, rng, decos=None) -> PackingRunResult:
    """One packing trial: per-row controllers on p^i * x, elements gated
    only by the rows of their own Q set, taken with probability x_e, and
    each row updated only when that copy materialized.

    decos, when given, holds one support decomposition per row for the
    shaved x (deterministic, shareable across trials)."""
    n = inst.n
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    for i, m in enumerate(inst.row_matroids):
        if not in_polytope(m, inst.marginals[:, i] * x):
            raise DomainError(f"p^{i} * x is outside row matroid {i}'s polytope")
    x = x * (1 - _PROBE_SHAVE)

    if decos is None:
        decos = [decompose_support(m, inst.marginals[:, i] * x)
                 for i, m in enumerate(inst.row_matroids)]
    parts = []
    for m, deco in zip(inst.row_matroids, decos):
        assign = sample_matroid_assignment(deco, rng)
        parts.append(MatroidControllerState(m, deco, assign))
    # rows that actually gate each element: its Q rows with positive mass
    gate_rows = [[i for i in inst.q_sets[e] if inst.marginals[e, i] * x[e] > 0]
                 for e in range(n)]

    def blocked(e: int) -> bool:
        return any(parts[i].is_blocked(e) for i in gate_rows[e])

    perm = rng.permutation(n)
    trace = CharacteristicTrace(n)
    taken: list[int] = []
    materialized: list[tuple[int, float, np.ndarray]] = []
    row_sets: list[list[int]] = [[] for _ in range(inst.d)]
    value = 0.0
    scanned = np.zeros(n, dtype=bool)
    for t in range(n):
        e = int(perm[t])
        scanned[e] = True
        accepted_now: list[int] = []
        blocked_now: list[int] = []
        if not blocked(e):
            accepted_now = [e]
            if rng.uniform() < x[e]:
                u = rng.uniform()
                acc = 0.0
                outcome = inst.outcomes[e][-1]
                for row in inst.outcomes[e]:
                    acc += row[0]
                    if u < acc:
                        outcome = row
                        break
                _, v_e, size = outcome
                taken.append(e)
                value += v_e
                materialized.append((e, v_e, size))
                pre = [blocked(g) for g in range(n)]
                newly: list[int] = []
                for i in np.nonzero(size)[0]:
                    newly += parts[int(i)].accept(e)
                    row_sets[int(i)].append(e)
                    if not inst.row_matroids[int(i)].is_independent(row_sets[int(i)]):
                        raise InternalError(f"row {int(i)} left its matroid")
                # an eviction only resolves elements the scan has not reached
                blocked_now = [g for g in dict.fromkeys(newly)
                               if not pre[g] and not scanned[g]]
        trace.record_step(t, accepted_now, blocked_now)
    return PackingRunResult(taken=taken, value=value, materialized=materialized,
                            trace=trace)


# -- Monte-Carlo estimation ------------------------------------------------------


def _gate_is_vacuous(oracle: SubmodularOracle) -> bool:
    """True when the marginal-gain filter provably always passes."""
    return oracle.kind == "modular" and bool(np.all(oracle.weights > 0))


@dataclass
class ProbingEstimate:
    rows: list
    trials: int
    seed: int
    value_mean: float
    value_stderr: float
    multilinear: float          # F(p*x), exact at desk scale
    multilinear_exact: bool
    f_plus: float | None        # brute-force f+(p*x) when n <= 12
    cr_bound: float             # F(p*x) / (k_in + k_out + 1)
    value_passed: bool
    diagnostics: object

    @property
    def all_pass(self) -> bool:
        return (self.value_passed and self.diagnostics.all_pass
                and all(r.passed is not False for r in self.rows))

    def csv_rows(self) -> list[str]:
        out = []
        for r in self.rows:
            flag = "undefined" if r.passed is None else str(r.passed).lower()
            out.append(f"{r.element},{r.conditioning_count},{r.accept_count},"
                       f"{r.mean!r},{r.stderr!r},{r.wilson_lo!r},{r.wilson_hi!r},"
                       f"{r.bound!r},{flag}")
        return out


def _trace_diagnostics(traces_stats, n, trials, lam_of, steps=None):
    """Fold per-trial traces into martingale and step-bound rows.

    traces_stats is an iterator of CharacteristicTrace; lam_of(e) gives the
    boundedness constant for element e."""
    from .crs import Diagnostics, MartingaleRow, StepBoundRow
    steps = n if steps is None else steps
    cnt = np.zeros(n, dtype=np.int64)
    msum = np.zeros(n)
    msq = np.zeros(n)
    risk = np.zeros((n, steps), dtype=np.int64)
    blockt = np.zeros((n, steps), dtype=np.int64)
    for tr in traces_stats:
        for e in range(n):
            if tr.Z[e, 0]:
                continue
            fate = tr.fate(e)
            v = (1.0 + lam_of(e)) if fate == "accepted" else (1.0 if fate is None else 0.0)
            cnt[e] += 1
            msum[e] += v
            msq[e] += v * v
            col = tr.tau(e)
            ra = steps if col is None else col - 1
            last = ra if ra < steps - 1 else steps - 1
            for t in range(last + 1):
                risk[e, t] += 1
            if fate == "blocked" and ra >= 0:
                blockt[e, ra] += 1
    mart = []
    step_rows = []
    for e in range(n):
        if cnt[e] == 0:
            continue
        mean = msum[e] / cnt[e]
        se = math.sqrt(max(msq[e] / cnt[e] - mean * mean, 0.0) / cnt[e])
        mart.append(MartingaleRow(e, int(cnt[e]), mean, se, mean >= 1.0 - 3 * se))
        for t in range(steps):
            if risk[e, t] == 0:
                continue
            freq = blockt[e, t] / risk[e, t]
            b = min(lam_of(e) / (steps - t), 1.0)
            se_b = math.sqrt(b * (1 - b) / risk[e, t])
            step_rows.append(StepBoundRow(e, t, int(risk[e, t]), int(blockt[e, t]),
                                          freq, b, freq <= b + 3 * se_b))
    return Diagnostics(martingale=mart, step_bounds=step_rows, violations=0)


def estimate_probing_objective(inst: ProbingInstance, x, trials: int,
                               seed: int) -> ProbingEstimate:
    """Monte-Carlo E[f(S)] against the multilinear and f+ benchmarks.

    The pass rule is E[f(S)] >= F(p*x)/(k_in + k_out + 1) - 3 stderr.
    Per-element rows estimate Pr[e probed] against x_e/(k_in + k_out + 1);
    that bound only binds when the gain filter is provably vacuous
    (positive modular objectives), otherwise the row's flag is undefined.
    """
    from .crs import ElementEstimate, WILSON_Z
    from .harness import wilson_interval
    from .rng import SplitMix64, child_seed
    if trials < 1:
        raise InputError("trials must be >= 1")
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    n = inst.n
    lam = inst.lambda_total()
    from .submodular import multilinear_F_exact, multilinear_F_mc
    px = inst.p * x
    if n <= 20:
        multilinear = multilinear_F_exact(inst.oracle, px)
        exact = True
    else:
        multilinear, _ = multilinear_F_mc(inst.oracle, px, samples=20_000,
                                          rng=SplitMix64(child_seed(seed, trials + 1)))
        exact = False
    f_plus = None
    if n <= 12:
        from .relaxations import f_plus_exact
        f_plus = f_plus_exact(inst.oracle, px)
    x_shaved = x * (1 - _PROBE_SHAVE)
    decos = ([decompose_support(m, x_shaved) for m in inst.out_matroids],
             [decompose_support(m, inst.p * x_shaved) for m in inst.in_matroids])
    probed_cnt = np.zeros(n, dtype=np.int64)
    total = 0.0
    total_sq = 0.0
    traces = []
    for i in range(trials):
        res = run_probing(inst, x, SplitMix64(child_seed(seed, i)), decos=decos)
        v = inst.oracle.value(res.solution)
        total += v
        total_sq += v * v
        for e in res.probed:
            probed_cnt[e] += 1
        traces.append(res.trace)
    mean = total / trials
    stderr = math.sqrt(max(total_sq / trials - mean * mean, 0.0) / trials)
    cr_bound = multilinear / (lam + 1.0)
    vacuous = _gate_is_vacuous(inst.oracle)
    rows = []
    for e in range(n):
        k = int(probed_cnt[e])
        p_mean = k / trials
        p_se = math.sqrt(p_mean * (1 - p_mean) / trials)
        lo, hi = wilson_interval(k, trials, z=WILSON_Z)
        # a neglected element (no outer mass, or no inner mass under an
        # inner constraint) is deterministically blocked at init
        neglected = x[e] <= 0 or (inst.k_in > 0 and inst.p[e] <= 0)
        bound = 0.0 if neglected else float(x[e]) / (lam + 1.0)
        passed = (p_mean >= bound - 3 * p_se) if vacuous and not neglected else None
        rows.append(ElementEstimate(e, trials, k, p_mean, p_se, lo, hi, bound, passed))
    diags = _trace_diagnostics(traces, n, trials, lambda e: lam)
    value_passed = mean >= cr_bound - 3 * stderr
    return ProbingEstimate(rows=rows, trials=trials, seed=seed, value_mean=mean,
                           value_stderr=stderr, multilinear=multilinear,
                           multilinear_exact=exact, f_plus=f_plus, cr_bound=cr_bound,
                           value_passed=value_passed, diagnostics=diags)


@dataclass
class PackingEstimate:
    rows: list
    trials: int
    seed: int
    value_mean: float
    value_stderr: float
    lp_objective: float
    bound: float                # LP* / (k + 1)
    value_passed: bool
    diagnostics: object

    @property
    def all_pass(self) -> bool:
        return (self.value_passed and self.diagnostics.all_pass
                and all(r.passed for r in self.rows))

    def csv_rows(self) -> list[str]:
        out = []
        for r in self.rows:
            out.append(f"{r.element},{r.conditioning_count},{r.accept_count},"
                       f"{r.mean!r},{r.stderr!r},{r.wilson_lo!r},{r.wilson_hi!r},"
                       f"{r.bound!r},{str(r.passed).lower()}")
        return out


def estimate_packing_value(inst: PackingInstance, trials: int, seed: int,
                           x=None) -> PackingEstimate:
    """Monte-Carlo packing value against LP*/(k+1) and per-element
    Pr[taken] against x_e/(k+1).

    x defaults to the SetPacking-LP optimum; pass an explicit vector to
    study other fractional solutions (the bound still divides the LP
    optimum).
    """
    from .crs import ElementEstimate, WILSON_Z
    from .harness import wilson_interval
    from .relaxations import build_setpacking_lp, solve_lp
    from .rng import SplitMix64, child_seed
    if trials < 1:
        raise InputError("trials must be >= 1")
    sol = solve_lp(build_setpacking_lp(inst))
    if sol.status != "optimal":
        raise InternalError(f"packing LP came back {sol.status}")
    if x is None:
        # solver residuals can overshoot the polytope check; shave them off
        x = np.clip(sol.values, 0.0, 1.0) * (1 - _PROBE_SHAVE)
    else:
        x = np.clip(np.asarray(x, dtype=np.float64), 0, 1)
    n = inst.n
    k = inst.k
    lam_of = [float(len(q)) for q in inst.q_sets]
    x_shaved = x * (1 - _PROBE_SHAVE)
    decos = [decompose_support(m, inst.marginals[:, i] * x_shaved)
             for i, m in enumerate(inst.row_matroids)]
    taken_cnt = np.zeros(n, dtype=np.int64)
    total = 0.0
    total_sq = 0.0
    traces = []
    for i in range(trials):
        res = run_kset_packing(inst, x, SplitMix64(child_seed(seed, i)), decos=decos)
        total += res.value
        total_sq += res.value * res.value
        for e in res.taken:
            taken_cnt[e] += 1
        traces.append(res.trace)
    mean = total / trials
    stderr = math.sqrt(max(total_sq / trials - mean * mean, 0.0) / trials)
    bound = sol.objective / (k + 1.0)
    rows = []
    for e in range(n):
        cnt = int(taken_cnt[e])
        p_mean = cnt / trials
        p_se = math.sqrt(p_mean * (1 - p_mean) / trials)
        lo, hi = wilson_interval(cnt, trials, z=WILSON_Z)
        e_bound = float(x[e]) / (k + 1.0)
        rows.append(ElementEstimate(e, trials, cnt, p_mean, p_se, lo, hi, e_bound,
                                    p_mean >= e_bound - 3 * p_se))
    diags = _trace_diagnostics(traces, n, trials, lambda e: lam_of[e])
    value_passed = mean >= bound - 3 * stderr
    return PackingEstimate(rows=rows, trials=trials, seed=seed, value_mean=mean,
                           value_stderr=stderr, lp_objective=sol.objective,
                           bound=bound, value_passed=value_passed, diagnostics=diags)
