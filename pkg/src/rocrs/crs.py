"""Random-order contention resolution: instances, the reference executor,
and the exact brute-force oracle.

A CrsInstance is a fractional point x in the intersection of matroid
polytopes and (bounded) knapsack polytopes.  A run draws the active set
R(x) (each element independently with probability x_e), scans a uniform
random permutation, and irrevocably accepts every active element whose
controllers are all unblocked.  The per-element guarantee is
Pr[e selected | e active] >= 1/(1 + lambda) with lambda = (#matroids) +
2 * (#bounded knapsacks).

Instances flagged `combined` wrap unbounded knapsacks via the big/small
reduction: per trial one fair coin per knapsack keeps either its big
items (size > 1/2; the knapsack then acts as a rank-1 uniform matroid) or
its small items (bounded knapsack); discarded elements get x'_e = 0 and
the rest x'_e = x_e / 2.  The resulting unconditional guarantee is
Pr[e selected] >= x_e * 2^-(q+1) / (k + 2q + 1).

Randomness contract (the compiled kernels replay the exact same stream):
  1. combined mode only: one coin draw per knapsack constraint, in
     constraint order;
  2. activity: one draw per element, id order;
  3. controller init: one draw per element per constraint, constraint
     order then id order;
  4. permutation: n-1 Fisher-Yates draws (descending index);
  5. each accept: one draw per knapsack-controlled constraint, in
     constraint order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .controllers import (CharacteristicTrace, JointController, KnapsackControllerState,
                          MatroidControllerState, init_knapsack_controller,
                          sample_matroid_assignment)
from .errors import CapacityError, DomainError, InputError, InternalError
from .knapsack import KnapsackConstraint, classify_items, in_knapsack_polytope
from .matroids import (Matroid, SupportDecomposition, bits_of, build_exchange_mapping,
                       decompose_support, in_polytope)
from .rng import SplitMix64, child_seed


def constraint_from_json(obj: dict):
    kind = obj.get("kind")
    if kind is None:
        raise InputError("constraint object is missing the 'kind' key")
    if kind == "knapsack":
        return KnapsackConstraint.from_json(obj)
    return Matroid.from_json(obj)


def constraint_to_json(c) -> dict:
    return c.to_json()


class CrsInstance:
    def __init__(self, x, constraints, combined: bool = False):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise InputError("x must be a flat vector")
        n = len(x)
        if ((x < 0) | (x > 1)).any():
            raise InputError("x must lie in [0, 1]^n")
        if not constraints:
            raise InputError("at least one constraint is required")
        for c in constraints:
            if c.n != n:
                raise InputError(f"constraint over {c.n} elements but x has {n}")
            if isinstance(c, Matroid):
                if not in_polytope(c, x):
                    raise DomainError("x is outside a matroid polytope")
            else:
                if not in_knapsack_polytope(c, x):
                    raise DomainError("x is outside a knapsack polytope")
                if not combined and any(c.sizes[e] > 0.5 and x[e] > 0 for e in range(n)):
                    raise DomainError(
                        "knapsack has big items with positive mass; "
                        "wrap the instance with the big/small reduction (combined=True)")
        self.x = x
        self.n = n
        self.constraints = list(constraints)
        self.combined = bool(combined)
        self._deco_cache: dict = {}

    @property
    def matroid_count(self) -> int:
        return sum(1 for c in self.constraints if isinstance(c, Matroid))

    @property
    def knapsack_count(self) -> int:
        return sum(1 for c in self.constraints if isinstance(c, KnapsackConstraint))

    @property
    def lambda_total(self) -> float:
        """Worst-case boundedness of the joint characteristic sequences."""
        return float(self.matroid_count + 2 * self.knapsack_count)

    def conditional_bound(self) -> float | None:
        """Pr[e selected | e active] lower bound; None in combined mode."""
        if self.combined:
            return None
        return 1.0 / (1.0 + self.lambda_total)

    def unconditional_factor(self) -> float:
        """Pr[e selected] >= factor * x_e."""
        k, q = self.matroid_count, self.knapsack_count
        if self.combined:
            return 2.0 ** (-(q + 1)) / (k + 2 * q + 1)
        return 1.0 / (1.0 + self.lambda_total)

    def effective_x(self, coins: tuple[bool, ...]) -> np.ndarray:
        """x' after the big/small coins (combined mode)."""
        if not self.combined:
            return self.x
        keep = np.ones(self.n, dtype=bool)
        ci = 0
        for c in self.constraints:
            if isinstance(c, KnapsackConstraint):
                big = c.sizes > 0.5
                keep &= big if coins[ci] else ~big
                ci += 1
        return np.where(keep, self.x / 2.0, 0.0)

    def decomposition_for(self, idx: int, coins: tuple[bool, ...]) -> SupportDecomposition:
        """Support decomposition backing constraint idx's controller.

        In combined mode a knapsack that kept its big side is controlled as
        a rank-1 uniform matroid; a matroid constraint is controlled as
        itself over the coin-adjusted vector.
        """
        key = (idx, coins)
        deco = self._deco_cache.get(key)
        if deco is None:
            c = self.constraints[idx]
            x_eff = self.effective_x(coins)
            if isinstance(c, KnapsackConstraint):
                if not self.combined:
                    raise InputError("knapsack constraints have no matroid decomposition")
                deco = decompose_support(Matroid.uniform(self.n, 1), x_eff)
            else:
                deco = decompose_support(c, x_eff)
            self._deco_cache[key] = deco
        return deco

    def to_json(self) -> dict:
        return {"n": self.n, "x": [float(v) for v in self.x],
                "constraints": [constraint_to_json(c) for c in self.constraints],
                "combined": self.combined}

    @classmethod
    def from_json(cls, obj: dict) -> "CrsInstance":
        for key in ("x", "constraints"):
            if key not in obj:
                raise InputError(f"instance object is missing the {key!r} key")
        constraints = [constraint_from_json(c) for c in obj["constraints"]]
        return cls(obj["x"], constraints, combined=bool(obj.get("combined", False)))


def sample_active_set(x, rng) -> np.ndarray:
    """R(x): each element active independently with probability x_e.
    One draw per element in id order."""
    x = np.asarray(x, dtype=np.float64)
    active = np.zeros(len(x), dtype=bool)
    for e in range(len(x)):
        active[e] = rng.uniform() < x[e]
    return active


@dataclass
class CrsRunResult:
    selected: list[int]          # scheme-accepted elements, in accept order
    solution: list[int]          # after any value filter; == selected without one
    active: np.ndarray
    trace: CharacteristicTrace
    coins: tuple[bool, ...]
    x_eff: np.ndarray
    controllers: JointController
    gains: list[float] = field(default_factory=list)


def run_crs(inst: CrsInstance, rng, filter_fn=None) -> CrsRunResult:
    """One full random-order scan with live controllers.

    filter_fn(current_solution, e) -> (keep: bool, gain: float) gates
    membership in the returned solution only; controllers always update on
    a scheme accept.
    """
    n = inst.n
    coins: list[bool] = []
    if inst.combined:
        for c in inst.constraints:
            if isinstance(c, KnapsackConstraint):
                coins.append(rng.uniform() < 0.5)
    coins_t = tuple(coins)
    x_eff = inst.effective_x(coins_t)

    active = sample_active_set(x_eff, rng)

    parts = []
    ci = 0
    for idx, c in enumerate(inst.constraints):
        if isinstance(c, KnapsackConstraint):
            if inst.combined and coins_t[ci]:
                deco = inst.decomposition_for(idx, coins_t)
                assign = sample_matroid_assignment(deco, rng)
                parts.append(MatroidControllerState(Matroid.uniform(n, 1), deco, assign))
            else:
                parts.append(init_knapsack_controller(c, x_eff, rng))
            ci += 1
        else:
            deco = inst.decomposition_for(idx, coins_t)
            assign = sample_matroid_assignment(deco, rng)
            parts.append(MatroidControllerState(c, deco, assign))
    joint = JointController(parts)

    perm = rng.permutation(n)

    trace = CharacteristicTrace(n, initial_blocked=[e for e in range(n) if x_eff[e] <= 0])
    selected: list[int] = []
    solution: list[int] = []
    gains: list[float] = []
    for t in range(n):
        e = perm[t]
        accepted_now: list[int] = []
        blocked_now: list[int] = []
        if active[e] and not joint.is_blocked(e):
            newly = joint.accept(e, rng)
            accepted_now = [e]
            blocked_now = newly
            selected.append(e)
            if filter_fn is None:
                solution.append(e)
            else:
                keep, gain = filter_fn(solution, e)
                gains.append(gain)
                if keep:
                    solution.append(e)
            _assert_feasible(inst, selected)
        trace.record_step(t, accepted_now, blocked_now)
    return CrsRunResult(selected=selected, solution=solution, active=active, trace=trace,
                        coins=coins_t, x_eff=x_eff, controllers=joint, gains=gains)


def _assert_feasible(inst: CrsInstance, selected: list[int]) -> None:
    for c in inst.constraints:
        ok = c.is_independent(selected) if isinstance(c, Matroid) else c.is_feasible(selected)
        if not ok:
            raise InternalError(f"selected set {selected} violates {c!r}")


# -- Monte-Carlo estimation ------------------------------------------------------

WILSON_Z = 2.576  # 99% score interval, reported alongside the 3-std-err rule


@dataclass
class ElementEstimate:
    """One acceptance-bound row; mean is None when nothing conditioned."""

    element: int
    conditioning_count: int
    accept_count: int
    mean: float | None
    stderr: float | None
    wilson_lo: float | None
    wilson_hi: float | None
    bound: float
    passed: bool | None


@dataclass
class MartingaleRow:
    element: int
    count: int
    mean: float
    stderr: float
    passed: bool  # mean >= 1 - 3 stderr


@dataclass
class StepBoundRow:
    element: int
    step: int
    at_risk: int
    blocked: int
    freq: float
    bound: float  # lambda / (n - t), capped at 1
    passed: bool  # freq <= bound + 3 stderr under the bound


@dataclass
class Diagnostics:
    martingale: list[MartingaleRow]
    step_bounds: list[StepBoundRow]
    violations: int

    @property
    def all_pass(self) -> bool:
        return (self.violations == 0
                and all(r.passed for r in self.martingale)
                and all(r.passed for r in self.step_bounds))


@dataclass
class AcceptanceEstimate:
    rows: list[ElementEstimate]
    trials: int
    seed: int
    conditional: bool  # False in combined mode (bounds are unconditional)
    diagnostics: Diagnostics
    value_mean: float | None = None
    value_stderr: float | None = None

    @property
    def all_pass(self) -> bool:
        return (all(r.passed is not False for r in self.rows)
                and self.diagnostics.all_pass)

    def csv_rows(self) -> list[str]:
        rows = []
        for r in self.rows:
            if r.mean is None:
                mid = "undefined,undefined,undefined,undefined"
                flag = "undefined"
            else:
                mid = f"{r.mean!r},{r.stderr!r},{r.wilson_lo!r},{r.wilson_hi!r}"
                flag = str(r.passed).lower()
            rows.append(f"{r.element},{r.conditioning_count},{r.accept_count},"
                        f"{mid},{r.bound!r},{flag}")
        return rows


def _reference_counts(inst: CrsInstance, trials: int, seed: int, value_table=None):
    """Accumulate the kernel lane's counters by running the reference
    executor trial by trial.  Slow; used for cross-checks and fallback."""
    from ._kernels import NONE_STEP, empty_counts

    n = inst.n
    counts = empty_counts(n)
    filter_fn = None
    vt = None
    if value_table is not None:
        vt = np.asarray(value_table, dtype=np.float64)

        def filter_fn(sol, e):
            mask = 0
            for f in sol:
                mask |= 1 << f
            gain = vt[mask | (1 << e)] - vt[mask]
            return bool(gain > 1e-12), float(gain)

    for i in range(trials):
        res = run_crs(inst, SplitMix64(child_seed(seed, i)), filter_fn)
        lam = res.controllers.lambda_total
        trace = res.trace
        for e in range(n):
            fate = trace.fate(e)
            col = trace.tau(e)
            ra = n if col is None else col - 1
            if res.active[e]:
                counts.act[e] += 1
                v = (1.0 + lam) if fate == "accepted" else (1.0 if fate is None else 0.0)
                counts.mart_sum[e] += v
                counts.mart_sumsq[e] += v * v
            if fate == "accepted":
                counts.sel[e] += 1
            last = ra if ra < n - 1 else n - 1
            for t in range(last + 1):
                counts.risk[e, t] += 1
            if fate == "blocked" and ra >= 0:
                counts.blockt[e, ra] += 1
        if vt is not None:
            mask = 0
            for f in res.solution:
                mask |= 1 << f
            v = float(vt[mask])
            counts.val_sum += v
            counts.val_sumsq += v * v
    counts.trials = trials
    return counts


def estimate_acceptance(inst: CrsInstance, trials: int, seed: int,
                        executor: str = "auto", jobs: int = 1,
                        value_table=None) -> AcceptanceEstimate:
    """Monte-Carlo acceptance estimates with trace diagnostics.

    Plain instances report Pr[e selected | e active] against 1/(1+lambda);
    combined instances report Pr[e selected] against x_e * the reduction
    factor.  Elements that never condition are reported as undefined.
    """
    if trials < 1:
        raise InputError(f"trials must be >= 1, got {trials}")
    if executor == "auto":
        from ._kernels import HAVE_NUMBA

        executor = "kernel" if HAVE_NUMBA else "reference"
    if executor == "kernel":
        from ._kernels import CompiledCrs

        counts = CompiledCrs(inst, value_table).run(trials, seed, jobs=jobs)
    elif executor == "reference":
        counts = _reference_counts(inst, trials, seed, value_table)
    else:
        raise InputError(f"unknown executor {executor!r}")
    return _summarize_counts(inst, counts, trials, seed,
                             with_value=value_table is not None)


def _summarize_counts(inst: CrsInstance, counts, trials: int, seed: int,
                      with_value: bool = False) -> AcceptanceEstimate:
    from .harness import wilson_interval

    n = inst.n
    conditional = not inst.combined
    factor = inst.unconditional_factor()
    rows = []
    for e in range(n):
        if conditional:
            m = int(counts.act[e])
            bound = float(inst.conditional_bound())
        else:
            m = trials
            bound = factor * float(inst.x[e])
        k = int(counts.sel[e])
        if m == 0:
            rows.append(ElementEstimate(e, 0, k, None, None, None, None, bound, None))
            continue
        mean = k / m
        stderr = math.sqrt(mean * (1.0 - mean) / m)
        lo, hi = wilson_interval(k, m, z=WILSON_Z)
        rows.append(ElementEstimate(e, m, k, mean, stderr, lo, hi, bound,
                                    mean >= bound - 3.0 * stderr))
    mart = []
    for e in range(n):
        cnt = int(counts.act[e])
        if cnt == 0:
            continue
        mean = counts.mart_sum[e] / cnt
        var = max(counts.mart_sumsq[e] / cnt - mean * mean, 0.0)
        se = math.sqrt(var / cnt)
        mart.append(MartingaleRow(e, cnt, mean, se, mean >= 1.0 - 3.0 * se))
    lam = inst.lambda_total
    steps = []
    for e in range(n):
        for t in range(n):
            m = int(counts.risk[e, t])
            if m == 0:
                continue
            k = int(counts.blockt[e, t])
            freq = k / m
            bound = min(lam / (n - t), 1.0)
            se = math.sqrt(bound * (1.0 - bound) / m)
            steps.append(StepBoundRow(e, t, m, k, freq, bound,
                                      freq <= bound + 3.0 * se))
    diags = Diagnostics(martingale=mart, step_bounds=steps,
                        violations=int(counts.violations))
    value_mean = value_stderr = None
    if with_value:
        value_mean = counts.val_sum / trials
        var = max(counts.val_sumsq / trials - value_mean * value_mean, 0.0)
        value_stderr = math.sqrt(var / trials)
    return AcceptanceEstimate(rows=rows, trials=trials, seed=seed,
                              conditional=conditional, diagnostics=diags,
                              value_mean=value_mean, value_stderr=value_stderr)


# -- exact oracle ---------------------------------------------------------------

BRUTE_FORCE_RUN_CAP = 5_000_000


@dataclass
class BruteForceResult:
    conditional: dict[int, float]    # Pr[e selected | e active]; only supported elements
    unconditional: dict[int, float]  # Pr[e selected]


def brute_force_acceptance(inst: CrsInstance) -> BruteForceResult:
    """Exact acceptance probabilities by enumerating activity patterns,
    controller assignments, and arrival orders.

    Matroid-only instances with small support (the assignment space of a
    knapsack controller is continuous).  Elements outside the support never
    interact with the dynamics, so orders are enumerated over active
    elements only.
    """
    from .errors import UnsupportedError

    if inst.combined:
        raise UnsupportedError("brute force does not support the big/small reduction")
    if any(isinstance(c, KnapsackConstraint) for c in inst.constraints):
        raise UnsupportedError("brute force is matroid-only; knapsack controllers are continuous")
    x = inst.x
    n = inst.n
    support = [e for e in range(n) if x[e] > 0]
    if len(support) > 6:
        raise CapacityError(f"brute force handles supports of size <= 6, got {len(support)}")
    decos = [inst.decomposition_for(idx, ()) for idx in range(len(inst.constraints))]
    elig = []   # per constraint: {e: [(set index, prob), ...]}
    for deco in decos:
        per = {}
        for e in support:
            js = deco.eligible(e)
            cov = sum(float(deco.betas[j]) for j in js)
            per[e] = [(j, float(deco.betas[j]) / cov) for j in js]
        elig.append(per)

    total_runs = 0
    for pattern in itertools.product((True, False), repeat=len(support)):
        act = [e for e, a in zip(support, pattern) if a]
        runs = math.factorial(len(act))
        for per in elig:
            for e in act:
                runs *= len(per[e])
        total_runs += runs
    if total_runs > BRUTE_FORCE_RUN_CAP:
        raise CapacityError(f"brute force would need {total_runs} runs (cap {BRUTE_FORCE_RUN_CAP})")

    mapping_cache: dict[tuple[int, int, int], dict[int, int | None]] = {}

    def images(cidx: int, amask: int, bmask: int) -> dict[int, int | None]:
        key = (cidx, amask, bmask)
        got = mapping_cache.get(key)
        if got is None:
            got = build_exchange_mapping(inst.constraints[cidx], bits_of(amask),
                                         bits_of(bmask)).images
            mapping_cache[key] = got
        return got

    p_sel = {e: 0.0 for e in support}
    p_act = {e: 0.0 for e in support}

    for pattern in itertools.product((True, False), repeat=len(support)):
        act = [e for e, a in zip(support, pattern) if a]
        p_pattern = 1.0
        for e, a in zip(support, pattern):
            p_pattern *= x[e] if a else (1.0 - x[e])
        if p_pattern == 0.0:
            continue
        for e in act:
            p_act[e] += p_pattern
        if not act:
            continue
        choice_space = []
        for cidx in range(len(inst.constraints)):
            for e in act:
                choice_space.append([(cidx, e, j, p) for j, p in elig[cidx][e]])
        perm_weight = 1.0 / math.factorial(len(act))
        for combo in itertools.product(*choice_space):
            p_assign = 1.0
            assign = [dict() for _ in inst.constraints]
            for cidx, e, j, p in combo:
                p_assign *= p
                assign[cidx][e] = j
            weight = p_pattern * p_assign * perm_weight
            for order in itertools.permutations(act):
                sel = _replay_matroid_dynamics(inst, decos, assign, order, images)
                for e in sel:
                    p_sel[e] += weight

    conditional = {e: (p_sel[e] / p_act[e]) for e in support if p_act[e] > 0}
    unconditional = {e: p_sel[e] for e in support}
    return BruteForceResult(conditional=conditional, unconditional=unconditional)


def _replay_matroid_dynamics(inst: CrsInstance, decos, assign, order, images) -> list[int]:
    """Deterministic scan given activity order and controller assignments."""
    sets = [[int(m) for m in deco.masks] for deco in decos]
    blocked: set[int] = set()
    accepted_mask = 0
    selected: list[int] = []
    for e in order:
        if e in blocked:
            continue
        bit = 1 << e
        for cidx in range(len(inst.constraints)):
            j = assign[cidx][e]
            cset = sets[cidx][j]
            if not cset & bit:
                raise InternalError(f"unblocked element {e} missing from its controller set")
            plans = []
            for i, target in enumerate(sets[cidx]):
                if target & bit:
                    continue
                img = images(cidx, cset, target)[e]
                plans.append((i, img))
            for i, img in plans:
                if img is None:
                    sets[cidx][i] |= bit
                else:
                    if accepted_mask & (1 << img):
                        raise InternalError("exchange mapping evicted an accepted element")
                    sets[cidx][i] = (sets[cidx][i] & ~(1 << img)) | bit
                    if assign[cidx].get(img) == i:
                        blocked.add(img)
        accepted_mask |= bit
        selected.append(e)
    return selected
