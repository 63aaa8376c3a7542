"""Posted-price auction machinery: menu vectors, the single-client local
search, and the full random-order auction with matroid controllers.

The auction works over copy-clients: every item belongs to exactly one
client group, and a fractional LP solution x_{c,p} prescribes how often
item c is offered at price p.  Each client turn builds a price menu from a
refined menu vector, draws the client's values only afterwards, and lets
the client take the best nonnegative-utility offer.  Matroid controllers
over the items enforce the constraint system exactly as in the plain
contention resolution scheme, with the per-turn acceptance rate bounded by
(1/4 + eps) times each item's LP mass.

Per-trial randomness contract (one trial of run_auction):
  1. one scenario coin per knapsack constraint when any knapsack is
     unbounded, in constraint order;
  2. per constraint, in constraint order, controller initialization draws:
     one per item in id order (matroid assignment or interval point);
  3. the client permutation (Fisher-Yates, len(clients) - 1 draws);
  4. per client turn: one menu draw per item of the group in ascending
     item order, then one value draw per item of the group in the same
     order, then, if an item is taken, one draw per interval-controlled
     knapsack constraint in constraint order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .controllers import (CharacteristicTrace, JointController,
                          MatroidControllerState, init_knapsack_controller,
                          sample_matroid_assignment)
from .errors import DomainError, InputError, InternalError, UnsupportedError
from .knapsack import KnapsackConstraint, classify_items
from .matroids import Matroid, decompose_support
from .relaxations import build_bmumd_lp, solve_lp, tail_probabilities

# shave applied to LP solutions before support decomposition, absorbing the
# simplex feasibility tolerance
_LP_SHAVE = 1e-6


class AuctionInstance:
    """Unit-demand clients over disjoint item groups with discrete values.

    pmfs[c][v] = Pr[v_c = v] for v in 0..B; groups partition the item set;
    constraints live on the item ground set.
    """

    def __init__(self, pmfs, groups, constraints):
        self.pmfs = [np.asarray(p, dtype=np.float64) for p in pmfs]
        self.groups = [list(g) for g in groups]
        self.constraints = list(constraints)
        self.n_items = len(self.pmfs)
        if self.n_items:
            widths = {len(p) for p in self.pmfs}
            if len(widths) != 1:
                raise InputError("all pmfs must cover the same price range 0..B")
            self.B = len(self.pmfs[0]) - 1
        else:
            self.B = 0
        for p in self.pmfs:
            tail_probabilities(p)  # validates nonnegative, sums to 1
        seen = set()
        for g in self.groups:
            for c in g:
                if not (0 <= c < self.n_items):
                    raise InputError(f"group refers to item {c} outside the ground set")
                if c in seen:
                    raise InputError(f"item {c} appears in two groups")
                seen.add(c)
        if len(seen) != self.n_items:
            raise InputError("groups must cover every item")
        for cons in self.constraints:
            cn = cons.n if isinstance(cons, Matroid) else len(cons.sizes)
            if cn != self.n_items:
                raise InputError("constraint ground set must match the item count")

    @property
    def tails(self) -> list[np.ndarray]:
        return [tail_probabilities(p) for p in self.pmfs]

    def matroid_count(self) -> int:
        return sum(1 for c in self.constraints if isinstance(c, Matroid))

    def to_json(self) -> dict:
        from .crs import constraint_to_json
        return {"pmfs": [[float(v) for v in p] for p in self.pmfs],
                "groups": [list(g) for g in self.groups],
                "constraints": [constraint_to_json(c) for c in self.constraints]}

    @classmethod
    def from_json(cls, obj: dict) -> "AuctionInstance":
        from .crs import constraint_from_json
        return cls(obj["pmfs"], obj["groups"],
                   [constraint_from_json(c) for c in obj["constraints"]])


@dataclass
class MenuVector:
    """Offer probabilities x[c][p] for one client's items.

    items are global item ids; x rows are indexed locally.  Valid when
    each item's price mass is at most 1 and the combined weighted mass
    sum_{c,p} x * Pr[v_c >= p] is at most 1.
    """
    items: list[int]
    x: np.ndarray
    tails: np.ndarray
    rounds: list = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.tails = np.asarray(self.tails, dtype=np.float64)
        if self.x.shape != self.tails.shape or self.x.ndim != 2:
            raise InputError("menu vector needs matching (items x prices) tables")
        if len(self.items) != self.x.shape[0]:
            raise InputError("one row per item required")
        if np.any(self.x < -1e-12):
            raise DomainError("menu vector entries must be nonnegative")
        if np.any(self.x.sum(axis=1) > 1 + 1e-9):
            raise DomainError("per-item price mass must be at most 1")
        if float((self.x * self.tails).sum()) > 1 + 1e-9:
            raise DomainError("weighted menu mass must be at most 1")
        self.x = np.clip(self.x, 0.0, None)

    def weighted_mass(self) -> np.ndarray:
        """z_c = sum_p x[c,p] * Pr[v_c >= p] per item row."""
        return (self.x * self.tails).sum(axis=1)


def menu_vector_for(inst: AuctionInstance, items, x_rows) -> MenuVector:
    tails = np.array([tail_probabilities(inst.pmfs[c]) for c in items])
    return MenuVector(items=list(items), x=np.asarray(x_rows, dtype=np.float64),
                      tails=tails)


def _check_tie_rule(tie_rule: str) -> None:
    if tie_rule != "lowest_id":
        raise UnsupportedError(f"unknown tie rule {tie_rule!r}; only lowest_id is implemented")


def top_probability_exact(mv: MenuVector, dists, tie_rule: str = "lowest_id") -> np.ndarray:
    """Pr[item c priced p wins the menu], exactly, via per-item independence.

    For each candidate (c, p) and each value v >= p the win requires every
    other item to offer nothing with utility above v - p, and nothing tied
    unless c wins the tie.  Distributions are the pmfs for mv.items.
    """
    _check_tie_rule(tie_rule)
    k = len(mv.items)
    pmfs = [np.asarray(d, dtype=np.float64) for d in dists]
    if len(pmfs) != k:
        raise InputError("one distribution per menu item required")
    width = mv.x.shape[1]
    B = width - 1
    tails = [tail_probabilities(p) for p in pmfs]
    out = np.zeros((k, width), dtype=np.float64)
    for ci in range(k):
        for p in range(width):
            if mv.x[ci, p] <= 0:
                continue
            total = 0.0
            for v in range(p, B + 1):
                pv = pmfs[ci][v]
                if pv <= 0:
                    continue
                u = v - p
                prod = 1.0
                for di in range(k):
                    if di == ci:
                        continue
                    wins_tie = mv.items[di] < mv.items[ci]
                    beat = 0.0
                    for pd in range(width):
                        xd = mv.x[di, pd]
                        if xd <= 0:
                            continue
                        # other item's utility exceeds u, or ties and wins
                        t = u + pd
                        pr = tails[di][t + 1] if t + 1 <= B else 0.0
                        if wins_tie and t <= B:
                            pr += pmfs[di][t]
                        beat += xd * pr
                    prod *= 1.0 - beat
                total += pv * prod
            out[ci, p] = mv.x[ci, p] * total
    return out


def realize_menu(mv: MenuVector, rng) -> list[tuple[int, int]]:
    """Sample one concrete menu: (item, price) offers.

    One uniform draw per item row, always consumed; the item is discarded
    when the draw lands beyond its price mass.
    """
    menu = []
    for ci, c in enumerate(mv.items):
        u = rng.uniform()
        acc = 0.0
        for p in range(mv.x.shape[1]):
            acc += mv.x[ci, p]
            if u < acc:
                menu.append((c, p))
                break
    return menu


def first_attempt_menu(mv: MenuVector, rng) -> list[tuple[int, int]]:
    """Menu sampler with the extra fair discard coin per item.

    Two draws per item, both always consumed: the discard coin, then the
    price draw over the raw row.
    """
    menu = []
    for ci, c in enumerate(mv.items):
        keep = rng.uniform() < 0.5
        u = rng.uniform()
        if not keep:
            continue
        acc = 0.0
        for p in range(mv.x.shape[1]):
            acc += mv.x[ci, p]
            if u < acc:
                menu.append((c, p))
                break
    return menu


def simulate_client_choice(menu, values, tie_rule: str = "lowest_id"):
    """Best nonnegative-utility offer; ties to the lowest item id; None if
    everything has negative utility."""
    _check_tie_rule(tie_rule)
    best = None
    for item, price in menu:
        u = values[item] - price
        if u < 0:
            continue
        if best is None or u > best[0] or (u == best[0] and item < best[1]):
            best = (u, item, price)
    if best is None:
        return None
    return best[1], best[2]


@dataclass
class MenuOutcome:
    menu: list
    values: dict
    chosen: tuple[int, int] | None
    payment: float


def sample_values(items, pmfs, rng) -> dict:
    """One inverse-CDF draw per item, ascending item order."""
    values = {}
    for c in items:
        u = rng.uniform()
        acc = 0.0
        v = len(pmfs[c]) - 1
        for cand, pv in enumerate(pmfs[c]):
            acc += pv
            if u < acc:
                v = cand
                break
        values[c] = v
    return values


def simulate_menu_outcome(menu, items, pmfs, rng, tie_rule: str = "lowest_id") -> MenuOutcome:
    """Draw values for every item of the group (after the menu is fixed)
    and resolve the client's pick."""
    values = sample_values(items, pmfs, rng)
    chosen = simulate_client_choice(menu, values, tie_rule)
    payment = float(chosen[1]) if chosen is not None else 0.0
    return MenuOutcome(menu=menu, values=values, chosen=chosen, payment=payment)


@dataclass
class RefinementRound:
    probs: np.ndarray
    q: np.ndarray
    in_d: np.ndarray
    x_before: np.ndarray
    x_after: np.ndarray


def refine_menu_vector(mv: MenuVector, dists, eps: float,
                       record: bool = False) -> MenuVector:
    """Local search compressing win probabilities into [q, (1+3 eps) q].

    Starts from half the input row and repeatedly scales down by (1 - eps)
    every entry whose exact win probability exceeds (1 + 2 eps) q, where
    q = x[c,p] * Pr[v_c >= p] / 4 is fixed by the input row.  Stops once
    every positive-q entry is at most (1 + 3 eps) q; the output then
    satisfies q <= Pr[win] <= (1/4 + eps) * x * Pr[v >= p].
    """
    if not (0.0 < eps <= 0.25):
        raise DomainError("eps must lie in (0, 1/4]")
    tails = mv.tails
    q = 0.25 * mv.x * tails
    cur = MenuVector(items=mv.items, x=mv.x * 0.5, tails=tails)
    max_rounds = 10 * math.ceil(1.0 / (eps * eps))
    history = []
    for _ in range(max_rounds + 1):
        probs = top_probability_exact(cur, dists)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(q > 0, probs / np.where(q > 0, q, 1.0), 0.0)
        if np.max(ratio, initial=0.0) <= 1 + 3 * eps:
            cur.rounds = history if record else []
            return cur
        in_d = probs > (1 + 2 * eps) * q
        x_next = np.where(in_d, (1 - eps) * cur.x, cur.x)
        if record:
            history.append(RefinementRound(probs=probs, q=q.copy(), in_d=in_d,
                                           x_before=cur.x.copy(), x_after=x_next.copy()))
        cur = MenuVector(items=mv.items, x=x_next, tails=tails)
    trace = ", ".join(f"round {i}: max ratio {np.max(r.probs / np.maximum(r.q, 1e-300)):.6g}"
                      for i, r in enumerate(history[-5:]))
    raise InternalError(
        f"menu refinement did not converge within {max_rounds} rounds "
        f"(eps={eps}); recent rounds: {trace or 'not recorded'}")


@dataclass
class AuctionOutcome:
    served: set
    revenue: float
    trace: CharacteristicTrace
    order: list[int]
    coins: tuple[bool, ...]
    outcomes: list[MenuOutcome]


def subroutine_eps(inst: AuctionInstance, eps: float) -> float:
    """Menu refinement accuracy backing the headline guarantee.

    Running the single-client routine at eps / (4 max(k + 2q, 1)) turns the
    per-constraint blocking rate (1/4 + eps_sub) into the revenue factor
    1 / (k + 2q + 4 + eps)."""
    if not (0.0 < eps <= 1.0):
        raise DomainError("eps must lie in (0, 1]")
    weight = sum(1 if isinstance(c, Matroid) else 2 for c in inst.constraints)
    return eps / (4.0 * max(weight, 1))


def _auction_effective(inst: AuctionInstance, x: np.ndarray, rng):
    """Scenario coins and the effective offer table after the big/small
    knapsack reduction.

    When every knapsack is bounded no coins are drawn and the table is
    returned unchanged.  Otherwise the table is halved once and each
    knapsack draws a fair coin keeping either its big items (heads) or its
    small items; dropped items get zero rows.
    """
    tails = inst.tails
    combined = any(isinstance(c, KnapsackConstraint) and not c.bounded
                   for c in inst.constraints)
    coins = []
    x_eff = x
    if combined:
        keep = np.ones(inst.n_items, dtype=bool)
        for cons in inst.constraints:
            if isinstance(cons, KnapsackConstraint):
                keep_big = rng.uniform() < 0.5
                coins.append(keep_big)
                big, small = classify_items(cons)
                for c in (small if keep_big else big):
                    keep[c] = False
        x_eff = np.where(keep[:, None], x * 0.5, 0.0)
    z_eff = np.array([float(np.dot(x_eff[c], tails[c])) for c in range(inst.n_items)])
    return tuple(coins), x_eff, z_eff


def _auction_controllers(inst: AuctionInstance, coins, z_eff, rng) -> JointController:
    """Controllers over the weighted menu mass z, one per constraint in
    constraint order.  In combined mode a knapsack that kept its big side
    holds at most one item and is controlled as a rank-1 matroid."""
    parts = []
    ci = 0
    for cons in inst.constraints:
        if isinstance(cons, KnapsackConstraint):
            if coins and coins[ci]:
                rank1 = Matroid.uniform(inst.n_items, 1)
                deco = decompose_support(rank1, z_eff)
                assign = sample_matroid_assignment(deco, rng)
                parts.append(MatroidControllerState(rank1, deco, assign))
            else:
                parts.append(init_knapsack_controller(cons, z_eff, rng))
            if coins:
                ci += 1
        else:
            deco = decompose_support(cons, z_eff)
            assign = sample_matroid_assignment(deco, rng)
            parts.append(MatroidControllerState(cons, deco, assign))
    return JointController(parts)


def run_auction(inst: AuctionInstance, lp_solution, eps: float, rng,
                cache: dict | None = None) -> AuctionOutcome:
    """One full auction trial in uniform random client order.

    lp_solution is the flat variable vector from build_bmumd_lp (reshaped
    to items x prices).  Per client turn the blocked items' rows are
    zeroed, the remaining rows are refined at accuracy subroutine_eps, the
    menu is realized, and only then are the client's values drawn.  The
    refinement is memoized per (client, blocked pattern, coins) since it
    is deterministic; a shared cache must not be reused across different
    eps or LP solutions.

    The trace marks an item accepted when its client's turn arrives while
    the item is unblocked (it reached the menu stage); serving the item is
    a further 1/4-ish event on top and is what the revenue counts.
    """
    n = inst.n_items
    width = inst.B + 1
    x = np.asarray(lp_solution, dtype=np.float64).reshape(n, width)
    x = np.clip(x, 0.0, 1.0) * (1 - _LP_SHAVE)
    eps_sub = subroutine_eps(inst, eps)

    coins, x_eff, z_eff = _auction_effective(inst, x, rng)
    joint = _auction_controllers(inst, coins, z_eff, rng)

    n_clients = len(inst.groups)
    order = list(rng.permutation(n_clients))
    trace = CharacteristicTrace(n, steps=n_clients,
                                initial_blocked=[c for c in range(n) if joint.is_blocked(c)])
    served = set()
    taken_items = []
    menued: set[int] = set()
    outcomes = []
    revenue = 0.0
    for t, client in enumerate(order):
        group = sorted(inst.groups[client])
        in_menu = [c for c in group if not joint.is_blocked(c)]
        blocked_mask = sum(1 << gi for gi, c in enumerate(group) if c not in in_menu)
        key = (client, blocked_mask, coins)
        refined = cache.get(key) if cache is not None else None
        if refined is None:
            rows = np.array([x_eff[c] if c in in_menu else np.zeros(width)
                             for c in group])
            mv = menu_vector_for(inst, group, rows)
            refined = refine_menu_vector(mv, [inst.pmfs[c] for c in group], eps_sub)
            if cache is not None:
                cache[key] = refined
        menu = realize_menu(refined, rng)
        outcome = simulate_menu_outcome(menu, group, inst.pmfs, rng)
        outcomes.append(outcome)
        blocked_now = []
        if outcome.chosen is not None:
            item, price = outcome.chosen
            if item not in in_menu:
                raise InternalError(f"blocked item {item} surfaced in a menu")
            newly = joint.accept(item, rng)
            # an eviction only resolves items whose client is still unseen
            blocked_now = [b for b in newly if b not in menued and b not in in_menu]
            served.add((client, item, price))
            taken_items.append(item)
            revenue += float(price)
            for cons in inst.constraints:
                if isinstance(cons, Matroid):
                    if not cons.is_independent(taken_items):
                        raise InternalError("served set left a matroid")
                elif not cons.is_feasible(taken_items):
                    raise InternalError("served set left a knapsack")
        trace.record_step(t, in_menu, blocked_now)
        menued.update(in_menu)
    return AuctionOutcome(served=served, revenue=revenue, trace=trace,
                          order=order, coins=coins, outcomes=outcomes)


@dataclass
class RevenueEstimate:
    trials: int
    seed: int
    eps: float
    mean: float
    stderr: float
    lp_objective: float
    bound: float
    passed: bool
    per_trial: list
    martingale: list
    step_bounds: list

    def csv_rows(self) -> list[str]:
        rows = ["trial,revenue,lp_bound,ratio"]
        for t, rev in enumerate(self.per_trial):
            ratio = rev / self.lp_objective if self.lp_objective > 0 else 0.0
            rows.append(f"{t},{rev!r},{self.lp_objective!r},{ratio!r}")
        return rows


def estimate_auction_revenue(inst: AuctionInstance, eps: float, trials: int,
                             seed: int) -> RevenueEstimate:
    """Monte-Carlo revenue of the full mechanism against the LP bound.

    The pass flag checks mean revenue >= scen * LP* / (k + 2q + 4 + eps)
    - 3 stderr, with k matroids, q knapsacks, and scen = 2^-(q+1) when the
    big/small coins are in play (1 otherwise); for matroid-only instances
    this is the plain LP* / (k + 4 + eps).  Also aggregates the martingale
    diagnostic E[(1+lambda) S^tau + Y^tau] >= 1 and per-turn blocking
    frequencies with lambda = (k + 2q)(1/4 + eps/4) over client turns.
    The trials are embarrassingly parallel but run sequentially so the
    refinement cache is shared.
    """
    from .crs import MartingaleRow, StepBoundRow
    from .rng import SplitMix64, child_seed
    if trials < 1:
        raise InputError("trials must be >= 1")
    lp = build_bmumd_lp(inst)
    sol = solve_lp(lp)
    if sol.status != "optimal":
        raise InternalError(f"auction LP came back {sol.status}")
    n = inst.n_items
    n_clients = len(inst.groups)
    k = inst.matroid_count()
    q = len(inst.constraints) - k
    combined = any(isinstance(c, KnapsackConstraint) and not c.bounded
                   for c in inst.constraints)
    lam = (k + 2 * q) * (0.25 + subroutine_eps(inst, eps))
    scen = 2.0 ** (-(q + 1)) if combined else 1.0
    cache: dict = {}
    per_trial = []
    total = 0.0
    total_sq = 0.0
    mart_cnt = np.zeros(n, dtype=np.int64)
    mart_sum = np.zeros(n)
    mart_sumsq = np.zeros(n)
    risk = np.zeros((n, n_clients), dtype=np.int64)
    blockt = np.zeros((n, n_clients), dtype=np.int64)
    for i in range(trials):
        res = run_auction(inst, sol.values, eps, SplitMix64(child_seed(seed, i)),
                          cache=cache)
        per_trial.append(res.revenue)
        total += res.revenue
        total_sq += res.revenue * res.revenue
        tr = res.trace
        for e in range(n):
            if tr.Z[e, 0]:
                continue  # never in play this trial
            fate = tr.fate(e)
            v = (1.0 + lam) if fate == "accepted" else (1.0 if fate is None else 0.0)
            mart_cnt[e] += 1
            mart_sum[e] += v
            mart_sumsq[e] += v * v
            col = tr.tau(e)
            ra = n_clients if col is None else col - 1
            last = ra if ra < n_clients - 1 else n_clients - 1
            for t in range(last + 1):
                risk[e, t] += 1
            if fate == "blocked" and ra >= 0:
                blockt[e, ra] += 1
    mean = total / trials
    stderr = math.sqrt(max(total_sq / trials - mean * mean, 0.0) / trials)
    bound = scen * sol.objective / (k + 2 * q + 4 + eps)
    martingale = []
    step_rows = []
    for e in range(n):
        if mart_cnt[e] == 0:
            continue
        m_mean = mart_sum[e] / mart_cnt[e]
        m_var = max(mart_sumsq[e] / mart_cnt[e] - m_mean * m_mean, 0.0)
        m_se = math.sqrt(m_var / mart_cnt[e])
        martingale.append(MartingaleRow(element=e, count=int(mart_cnt[e]), mean=m_mean,
                                        stderr=m_se, passed=m_mean >= 1.0 - 3 * m_se))
        for t in range(n_clients):
            if risk[e, t] == 0:
                continue
            freq = blockt[e, t] / risk[e, t]
            b = min(lam / (n_clients - t), 1.0)
            se = math.sqrt(b * (1 - b) / risk[e, t])
            step_rows.append(StepBoundRow(element=e, step=t, at_risk=int(risk[e, t]),
                                          blocked=int(blockt[e, t]), freq=freq,
                                          bound=b, passed=freq <= b + 3 * se))
    passed = (mean >= bound - 3 * stderr and
              all(r.passed for r in martingale) and
              all(r.passed for r in step_rows))
    return RevenueEstimate(trials=trials, seed=seed, eps=eps, mean=mean,
                           stderr=stderr, lp_objective=sol.objective, bound=bound,
                           passed=passed, per_trial=per_trial, martingale=martingale,
                           step_bounds=step_rows)
