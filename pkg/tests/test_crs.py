import numpy as np
import pytest

from rocrs.crs import (BruteForceResult, CrsInstance, brute_force_acceptance, run_crs,
                       sample_active_set)
from rocrs.errors import (CapacityError, DomainError, InputError, InternalError,
                          UnsupportedError)
from rocrs.knapsack import KnapsackConstraint
from rocrs.matroids import Matroid
from rocrs.rng import SplitMix64, child_seed


def triangle():
    return Matroid.graphic(3, [(0, 1), (1, 2), (2, 0)])


def pair_instance():
    return CrsInstance([0.5, 0.5], [Matroid.uniform(2, 1)])


def mc_conditional(inst, master, trials):
    """Per-element (active count, selected-and-active count) over seeded runs."""
    act = np.zeros(inst.n)
    sel = np.zeros(inst.n)
    for i in range(trials):
        res = run_crs(inst, SplitMix64(child_seed(master, i)))
        for e in range(inst.n):
            if res.active[e]:
                act[e] += 1
        for e in res.selected:
            sel[e] += 1
    return act, sel


class TestInstance:
    def test_validation(self):
        with pytest.raises(InputError):
            CrsInstance([0.5, 1.5], [Matroid.uniform(2, 1)])
        with pytest.raises(InputError):
            CrsInstance([0.5], [])
        with pytest.raises(DomainError):
            CrsInstance([0.9, 0.9], [Matroid.uniform(2, 1)])
        with pytest.raises(InputError):
            CrsInstance([0.5, 0.5, 0.5], [Matroid.uniform(2, 1)])

    def test_big_items_need_combined_mode(self):
        k = KnapsackConstraint([0.7, 0.2])
        with pytest.raises(DomainError, match="combined"):
            CrsInstance([0.5, 0.5], [k])
        CrsInstance([0.5, 0.5], [k], combined=True)

    def test_bounds_and_lambda(self):
        inst = CrsInstance([0.3, 0.3], [Matroid.uniform(2, 1),
                                        KnapsackConstraint([0.4, 0.4])])
        assert inst.lambda_total == pytest.approx(3.0)
        assert inst.conditional_bound() == pytest.approx(1 / 4)
        assert inst.unconditional_factor() == pytest.approx(1 / 4)

    def test_combined_factor(self):
        # k matroids and q knapsacks: factor 2^-(q+1) / (k + 2q + 1)
        inst = CrsInstance([0.4, 0.4], [Matroid.uniform(2, 2),
                                        KnapsackConstraint([0.7, 0.3])], combined=True)
        assert inst.conditional_bound() is None
        assert inst.unconditional_factor() == pytest.approx(2 ** -2 / 4)

    def test_json_round_trip(self):
        inst = CrsInstance([0.4, 0.4], [Matroid.uniform(2, 1),
                                        KnapsackConstraint([0.7, 0.3])], combined=True)
        inst2 = CrsInstance.from_json(inst.to_json())
        assert np.allclose(inst2.x, inst.x)
        assert inst2.combined
        assert inst2.knapsack_count == 1
        with pytest.raises(InputError, match="constraints"):
            CrsInstance.from_json({"x": [0.1]})


class TestRun:
    def test_same_seed_same_run(self):
        inst = CrsInstance([2 / 3] * 3, [triangle()])
        a = run_crs(inst, SplitMix64(2024_30))
        b = run_crs(inst, SplitMix64(2024_30))
        assert a.selected == b.selected
        assert (a.active == b.active).all()
        assert (a.trace.S == b.trace.S).all()
        assert (a.trace.Z == b.trace.Z).all()

    def test_active_set_marginals(self):
        rng = SplitMix64(2024_31)
        x = np.array([0.2, 0.0, 1.0, 0.7])
        counts = np.zeros(4)
        trials = 20000
        for _ in range(trials):
            counts += sample_active_set(x, rng)
        for e in range(4):
            se = (x[e] * (1 - x[e]) / trials) ** 0.5
            assert abs(counts[e] / trials - x[e]) <= 3 * se + 1e-12

    def test_selected_always_active_and_feasible(self):
        rng = SplitMix64(2024_32)
        inst = CrsInstance([0.4, 0.4, 0.4, 0.4],
                           [Matroid.partition([[0, 1], [2, 3]], [1, 1]),
                            KnapsackConstraint([0.5, 0.4, 0.3, 0.2])])
        for _ in range(300):
            res = run_crs(inst, rng)
            for e in res.selected:
                assert res.active[e]
            for c in inst.constraints:
                ok = (c.is_independent(res.selected) if isinstance(c, Matroid)
                      else c.is_feasible(res.selected))
                assert ok
            res.trace.check()
            assert res.solution == res.selected

    def test_trace_records_fates(self):
        inst = CrsInstance([0.5, 0.0], [Matroid.uniform(2, 1)])
        res = run_crs(inst, SplitMix64(2024_33))
        assert res.trace.fate(1) == "blocked"
        assert res.trace.tau(1) == 0
        if res.selected:
            assert res.trace.fate(res.selected[0]) == "accepted"

    def test_filter_gates_solution_not_controllers(self):
        inst = CrsInstance([2 / 3] * 3, [triangle()])
        plain = run_crs(inst, SplitMix64(2024_34))
        filtered = run_crs(inst, SplitMix64(2024_34),
                           filter_fn=lambda sol, e: (False, 0.0))
        assert filtered.selected == plain.selected
        assert filtered.solution == []
        assert len(filtered.gains) == len(plain.selected)

    def test_combined_run_respects_coins(self):
        inst = CrsInstance([0.5, 0.5, 0.5],
                           [KnapsackConstraint([0.7, 0.4, 0.3])], combined=True)
        rng = SplitMix64(2024_35)
        saw = set()
        for _ in range(200):
            res = run_crs(inst, rng)
            saw.add(res.coins)
            for e in res.selected:
                assert res.x_eff[e] > 0
            assert inst.constraints[0].is_feasible(res.selected)
        assert saw == {(True,), (False,)}


class TestBruteForce:
    def test_rank1_pair_exact(self):
        # x=(1/2,1/2) on one rank-1 matroid: P[sel] = 1/4*1/2 + 1/4 = 3/8,
        # P[active] = 1/2, so the conditional acceptance is exactly 3/4
        res = brute_force_acceptance(pair_instance())
        for e in range(2):
            assert res.unconditional[e] == pytest.approx(3 / 8, abs=1e-12)
            assert res.conditional[e] == pytest.approx(3 / 4, abs=1e-12)

    def test_triangle_meets_half(self):
        inst = CrsInstance([2 / 3] * 3, [triangle()])
        res = brute_force_acceptance(inst)
        for e in range(3):
            assert res.conditional[e] >= 0.5 - 1e-12

    def test_two_matroid_intersection_meets_third(self):
        m1 = Matroid.partition([[0, 1], [2]], [1, 1])
        m2 = Matroid.partition([[0], [1, 2]], [1, 1])
        inst = CrsInstance([0.4, 0.4, 0.4], [m1, m2])
        res = brute_force_acceptance(inst)
        for e in range(3):
            assert res.conditional[e] >= 1 / 3 - 1e-12

    def test_block_decoupling_product_form(self):
        m = Matroid.partition([[0, 1], [2, 3]], [1, 1])
        inst = CrsInstance([0.5, 0.5, 0.4, 0.4], [m])
        whole = brute_force_acceptance(inst)
        part_a = brute_force_acceptance(
            CrsInstance([0.5, 0.5], [Matroid.partition([[0, 1]], [1], n=2)]))
        part_b = brute_force_acceptance(
            CrsInstance([0.4, 0.4], [Matroid.partition([[0, 1]], [1], n=2)]))
        assert whole.conditional[0] == pytest.approx(part_a.conditional[0], abs=1e-12)
        assert whole.conditional[1] == pytest.approx(part_a.conditional[1], abs=1e-12)
        assert whole.conditional[2] == pytest.approx(part_b.conditional[0], abs=1e-12)
        assert whole.conditional[3] == pytest.approx(part_b.conditional[1], abs=1e-12)
        # joint acceptance across blocks multiplies
        trials = 20000
        both = 0
        for i in range(trials):
            res = run_crs(inst, SplitMix64(child_seed(2024_40, i)))
            both += 0 in res.selected and 2 in res.selected
        want = whole.unconditional[0] * whole.unconditional[2]
        se = (want * (1 - want) / trials) ** 0.5
        assert abs(both / trials - want) <= 3 * se

    def test_monte_carlo_matches_oracle(self):
        inst = pair_instance()
        act, sel = mc_conditional(inst, 2024_41, 20000)
        for e in range(2):
            mean = sel[e] / act[e]
            se = (mean * (1 - mean) / act[e]) ** 0.5
            assert abs(mean - 3 / 4) <= 3 * se

    def test_zero_mass_element_ignored(self):
        inst = CrsInstance([0.5, 0.0, 0.5], [Matroid.uniform(3, 1)])
        res = brute_force_acceptance(inst)
        assert set(res.conditional) == {0, 2}

    def test_rejects_knapsack_and_combined(self):
        with pytest.raises(UnsupportedError):
            brute_force_acceptance(CrsInstance([0.4, 0.4],
                                               [KnapsackConstraint([0.3, 0.3])]))
        with pytest.raises(UnsupportedError):
            brute_force_acceptance(CrsInstance([0.4, 0.4],
                                               [KnapsackConstraint([0.7, 0.3])],
                                               combined=True))

    def test_support_cap(self):
        with pytest.raises(CapacityError):
            brute_force_acceptance(CrsInstance([0.1] * 7, [Matroid.uniform(7, 3)]))


class TestGuaranteesMonteCarlo:
    def test_bounded_knapsack_third(self):
        inst = CrsInstance([0.5, 0.5, 0.5, 0.5],
                           [KnapsackConstraint([0.5, 0.4, 0.3, 0.2])])
        act, sel = mc_conditional(inst, 2024_42, 10000)
        for e in range(inst.n):
            mean = sel[e] / act[e]
            se = (mean * (1 - mean) / act[e]) ** 0.5
            assert mean >= 1 / 3 - 3 * se

    def test_combined_unconditional_bound(self):
        inst = CrsInstance([0.5, 0.5, 0.5],
                           [KnapsackConstraint([0.7, 0.4, 0.3])], combined=True)
        factor = inst.unconditional_factor()
        assert factor == pytest.approx(1 / 12)
        trials = 10000
        sel = np.zeros(3)
        for i in range(trials):
            res = run_crs(inst, SplitMix64(child_seed(2024_43, i)))
            for e in res.selected:
                sel[e] += 1
        for e in range(3):
            mean = sel[e] / trials
            se = (mean * (1 - mean) / trials) ** 0.5
            assert mean >= factor * inst.x[e] - 3 * se

    def test_martingale_diagnostic(self):
        # E[(1+lambda) S^tau + Y^tau | e active] >= 1, empirically
        inst = CrsInstance([2 / 3] * 3, [triangle()])
        lam = inst.lambda_total
        trials = 5000
        stat = np.zeros(3)
        count = np.zeros(3)
        for i in range(trials):
            res = run_crs(inst, SplitMix64(child_seed(2024_44, i)))
            for e in range(3):
                if not res.active[e]:
                    continue
                count[e] += 1
                fate = res.trace.fate(e)
                stat[e] += (1 + lam) if fate == "accepted" else (fate is None)
        for e in range(3):
            mean = stat[e] / count[e]
            se = (1 + lam) / count[e] ** 0.5
            assert mean >= 1 - 3 * se

    def test_lambda_boundedness_per_step(self):
        # blocking frequency at step t among fate-unknown elements is at
        # most lambda/(n-t) + 3 std-err
        inst = CrsInstance([2 / 3] * 3, [triangle()])
        n = inst.n
        lam = inst.lambda_total
        trials = 5000
        at_risk = np.zeros((n, n))
        hit = np.zeros((n, n))
        for i in range(trials):
            res = run_crs(inst, SplitMix64(child_seed(2024_45, i)))
            Y, Z = res.trace.Y, res.trace.Z
            for e in range(n):
                for t in range(n):
                    if Y[e, t]:
                        at_risk[e, t] += 1
                        hit[e, t] += Z[e, t + 1]
        for e in range(n):
            for t in range(n):
                if at_risk[e, t] < 100:
                    continue
                freq = hit[e, t] / at_risk[e, t]
                se = (freq * (1 - freq) / at_risk[e, t]) ** 0.5
                assert freq <= lam / (n - t) + 3 * se + 1e-9
