import itertools
import math
import types

import numpy as np
import pytest

from rocrs.errors import CapacityError, DomainError, InputError, NumericalError
from rocrs.matroids import Matroid, in_polytope
from rocrs.relaxations import (TAU_LP, LinearProgram, LpSolution, PolytopeRows,
                               build_bmumd_lp, build_setpacking_lp,
                               f_plus_exact, lp_debug_dump, matroid_polytope_rows,
                               max_residual, probing_polytope, solve_lp,
                               solve_probing_mp, tail_probabilities)
from rocrs.rng import SplitMix64
from rocrs.submodular import SubmodularOracle, multilinear_F_exact


def enumerate_vertex_optimum(lp: LinearProgram):
    """Brute-force oracle: try every n-subset of tight constraints.

    Returns the best feasible-vertex objective, or None if no vertex is
    feasible (for a bounded polytope that means the LP is infeasible).
    """
    n = lp.n_vars
    cands = [(coeffs, rhs) for coeffs, _, rhs in lp.rows]
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        cands.append((e, 0.0))
        if math.isfinite(lp.upper[j]):
            cands.append((e, float(lp.upper[j])))
    best = None
    for combo in itertools.combinations(range(len(cands)), n):
        A = np.array([cands[i][0] for i in combo])
        b = np.array([cands[i][1] for i in combo])
        try:
            x = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            continue
        if np.any(x < -1e-9) or np.any(x > lp.upper + 1e-9):
            continue
        ok = True
        for coeffs, rel, rhs in lp.rows:
            lhs = float(np.dot(coeffs, x))
            if rel == "<=" and lhs > rhs + 1e-9:
                ok = False
                break
            if rel == "==" and abs(lhs - rhs) > 1e-9:
                ok = False
                break
        if ok:
            val = float(np.dot(lp.objective, x))
            if best is None or val > best:
                best = val
    return best


class TestSimplex:
    def test_single_variable(self):
        lp = LinearProgram(objective=[1.0], rows=[(np.array([1.0]), "<=", 0.5)], n_vars=1)
        sol = solve_lp(lp)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(0.5, abs=TAU_LP)

    def test_infeasible_pair(self):
        lp = LinearProgram(objective=[1.0], rows=[(np.array([1.0]), "<=", -1.0)], n_vars=1)
        assert solve_lp(lp).status == "infeasible"

    def test_unbounded(self):
        lp = LinearProgram(objective=[1.0], rows=[], n_vars=1,
                           upper=np.array([math.inf]))
        assert solve_lp(lp).status == "unbounded"

    def test_equality_row(self):
        lp = LinearProgram(objective=[1.0, 0.0],
                           rows=[(np.array([1.0, 1.0]), "==", 1.0)], n_vars=2)
        sol = solve_lp(lp)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(1.0, abs=TAU_LP)
        assert sol.values[0] == pytest.approx(1.0, abs=TAU_LP)

    def test_negative_rhs_normalized(self):
        # -x <= -0.3 is x >= 0.3; maximizing -x lands exactly there
        lp = LinearProgram(objective=[-1.0],
                           rows=[(np.array([-1.0]), "<=", -0.3)], n_vars=1)
        sol = solve_lp(lp)
        assert sol.status == "optimal"
        assert sol.values[0] == pytest.approx(0.3, abs=TAU_LP)

    def test_empty_program(self):
        lp = LinearProgram(objective=np.zeros(0), rows=[], n_vars=0)
        sol = solve_lp(lp)
        assert sol.status == "optimal" and sol.objective == 0.0

    def test_residuals_bounded(self):
        rng = SplitMix64(100)
        for _ in range(20):
            n = 2 + rng.randrange(3)
            rows = []
            for _ in range(rng.randrange(4)):
                coeffs = np.array([rng.randrange(5) - 2 for _ in range(n)], dtype=float) / 2
                rows.append((coeffs, "<=", rng.uniform() * 2 - 0.5))
            lp = LinearProgram(objective=[rng.uniform() * 2 - 1 for _ in range(n)],
                               rows=rows, n_vars=n)
            sol = solve_lp(lp)
            if sol.status == "optimal":
                assert max_residual(lp, sol.values) <= TAU_LP

    def test_deterministic(self):
        rows = [(np.array([1.0, 2.0, 0.5]), "<=", 1.7),
                (np.array([0.0, 1.0, 1.0]), "<=", 1.1)]
        lp = LinearProgram(objective=[1.0, 1.3, 0.4], rows=rows, n_vars=3)
        a = solve_lp(lp)
        b = solve_lp(lp)
        assert a.values.tobytes() == b.values.tobytes()
        assert a.objective == b.objective

    def test_matches_vertex_enumeration(self):
        rng = SplitMix64(200)
        checked = 0
        for _ in range(60):
            n = 2 + rng.randrange(3)
            rows = []
            for _ in range(1 + rng.randrange(4)):
                coeffs = np.array([rng.randrange(5) - 2 for _ in range(n)], dtype=float) / 2
                rhs = (rng.randrange(9) - 2) / 4
                rows.append((coeffs, "<=", rhs))
            lp = LinearProgram(objective=[(rng.randrange(9) - 4) / 2 for _ in range(n)],
                               rows=rows, n_vars=n)
            sol = solve_lp(lp)
            oracle = enumerate_vertex_optimum(lp)
            if oracle is None:
                assert sol.status == "infeasible"
            else:
                assert sol.status == "optimal"
                assert sol.objective == pytest.approx(oracle, abs=1e-6)
                checked += 1
        assert checked >= 30

    def test_size_cap(self):
        rows = [(np.array([0.0]), "<=", 1.0)] * 5001
        lp = LinearProgram(objective=[1.0], rows=rows, n_vars=1)
        with pytest.raises(CapacityError):
            solve_lp(lp)

    def test_validation(self):
        with pytest.raises(InputError):
            LinearProgram(objective=[1.0], rows=[(np.array([1.0, 2.0]), "<=", 1.0)], n_vars=1)
        with pytest.raises(InputError):
            LinearProgram(objective=[1.0], rows=[(np.array([1.0]), "<", 1.0)], n_vars=1)
        with pytest.raises(InputError):
            LinearProgram(objective=[math.nan], rows=[], n_vars=1)

    def test_debug_dump(self):
        lp = LinearProgram(objective=[1.0], rows=[(np.array([1.0]), "<=", 0.5)], n_vars=1)
        sol = solve_lp(lp)
        text = lp_debug_dump(lp, sol)
        assert "max" in text and "<=" in text and "optimal" in text


class TestMatroidRows:
    def test_uniform_single_row(self):
        rows = matroid_polytope_rows(Matroid.uniform(4, 2))
        assert len(rows) == 1
        coeffs, rel, rhs = rows[0]
        assert np.array_equal(coeffs, np.ones(4)) and rhs == 2.0

    def test_partition_rows(self):
        m = Matroid.partition([[0, 1, 2], [3, 4]], [1, 1])
        rows = matroid_polytope_rows(m)
        reps = {tuple(np.nonzero(c)[0]): r for c, _, r in rows}
        assert reps[(0, 1, 2)] == 1.0
        assert reps[(3, 4)] == 1.0

    def test_rows_equivalent_to_polytope(self):
        rng = SplitMix64(300)
        mats = [Matroid.uniform(5, 2),
                Matroid.partition([[0, 1], [2, 3, 4]], [1, 2]),
                Matroid.graphic(4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)])]
        for m in mats:
            rows = matroid_polytope_rows(m)
            for _ in range(120):
                x = np.array([rng.uniform() * 1.2 for _ in range(5)])
                x = np.minimum(x, 1.0)
                by_rows = all(float(np.dot(c, x)) <= rhs + 1e-9 for c, _, rhs in rows)
                assert by_rows == in_polytope(m, x)

    def test_scaled_rows(self):
        rng = SplitMix64(301)
        m = Matroid.partition([[0, 1], [2, 3]], [1, 1])
        p = np.array([0.5, 0.9, 0.4, 1.0])
        rows = matroid_polytope_rows(m, scale=p)
        for _ in range(100):
            x = np.array([rng.uniform() for _ in range(4)])
            by_rows = all(float(np.dot(c, x)) <= rhs + 1e-9 for c, _, rhs in rows)
            assert by_rows == in_polytope(m, p * x)

    def test_self_loop_forced_to_zero(self):
        m = Matroid.graphic(3, [(0, 0), (1, 2)])
        rows = matroid_polytope_rows(m)
        x = np.array([0.1, 1.0])
        assert not all(float(np.dot(c, x)) <= rhs + 1e-9 for c, _, rhs in rows)
        x = np.array([0.0, 1.0])
        assert all(float(np.dot(c, x)) <= rhs + 1e-9 for c, _, rhs in rows)

    def test_scale_validation(self):
        with pytest.raises(InputError):
            matroid_polytope_rows(Matroid.uniform(2, 1), scale=[-1.0, 0.5])


def auction_stub(pmfs, groups, constraints):
    pmfs = [np.asarray(p, dtype=float) for p in pmfs]
    B = len(pmfs[0]) - 1 if pmfs else 0
    return types.SimpleNamespace(n_items=len(pmfs), B=B, pmfs=pmfs,
                                 groups=groups, constraints=constraints)


class TestBmumdLp:
    def test_single_item_deterministic_value(self):
        # value 5 with certainty; best menu prices at 5
        pmf = [0, 0, 0, 0, 0, 1.0]
        inst = auction_stub([pmf], [[0]], [Matroid.uniform(1, 1)])
        lp = build_bmumd_lp(inst)
        sol = solve_lp(lp)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(5.0, abs=1e-6)
        x = sol.values.reshape(1, 6)
        assert x[0, 5] == pytest.approx(1.0, abs=1e-6)

    def test_empty_instance(self):
        inst = auction_stub([], [], [])
        sol = solve_lp(build_bmumd_lp(inst))
        assert sol.objective == 0.0

    def test_unit_demand_row_binds(self):
        pmf = [0, 0, 0, 0, 0, 1.0]
        inst = auction_stub([pmf, pmf], [[0, 1]], [Matroid.uniform(2, 2)])
        sol = solve_lp(build_bmumd_lp(inst))
        assert sol.objective == pytest.approx(5.0, abs=1e-6)

    def test_matroid_rows_bind_across_clients(self):
        pmf = [0, 0, 0, 0, 0, 1.0]
        inst = auction_stub([pmf, pmf], [[0], [1]], [Matroid.uniform(2, 1)])
        sol = solve_lp(build_bmumd_lp(inst))
        assert sol.objective == pytest.approx(5.0, abs=1e-6)

    def test_capacity(self):
        pmf = [1.0] + [0.0] * 100
        inst = auction_stub([pmf] * 51, [[c] for c in range(51)],
                            [Matroid.uniform(51, 51)])
        with pytest.raises(CapacityError):
            build_bmumd_lp(inst)

    def test_tail_probabilities(self):
        t = tail_probabilities([0.2, 0.3, 0.5])
        assert np.allclose(t, [1.0, 0.8, 0.5])
        with pytest.raises(DomainError):
            tail_probabilities([0.5, 0.6])


def packing_stub(expected_values, marginals, row_matroids):
    marginals = np.asarray(marginals, dtype=float)
    return types.SimpleNamespace(n=len(expected_values), d=marginals.shape[1],
                                 expected_values=np.asarray(expected_values, dtype=float),
                                 marginals=marginals, row_matroids=row_matroids)


class TestSetpackingLp:
    def test_two_items_one_slot(self):
        inst = packing_stub([2.0, 1.0], [[1.0], [1.0]], [Matroid.uniform(2, 1)])
        sol = solve_lp(build_setpacking_lp(inst))
        assert sol.objective == pytest.approx(2.0, abs=1e-6)

    def test_zero_marginals_free(self):
        inst = packing_stub([2.0, 1.0], [[0.0], [0.0]], [Matroid.uniform(2, 1)])
        sol = solve_lp(build_setpacking_lp(inst))
        assert sol.objective == pytest.approx(3.0, abs=1e-6)

    def test_fractional_marginals(self):
        # p = 1/2 halves the congestion, so both ground elements fit
        inst = packing_stub([2.0, 1.0], [[0.5], [0.5]], [Matroid.uniform(2, 1)])
        sol = solve_lp(build_setpacking_lp(inst))
        assert sol.objective == pytest.approx(3.0, abs=1e-6)


class TestFPlus:
    def test_dominates_multilinear(self):
        rng = SplitMix64(400)
        for _ in range(5):
            covers = [[u for u in range(4) if rng.uniform() < 0.5] for _ in range(4)]
            f = SubmodularOracle.coverage([rng.uniform() * 2 for _ in range(4)], covers)
            y = np.array([rng.uniform() for _ in range(4)])
            assert f_plus_exact(f, y) >= multilinear_F_exact(f, y) - 1e-7

    def test_modular_equals_weighted_sum(self):
        w = np.array([1.0, 2.0, 0.5])
        f = SubmodularOracle.modular(w)
        y = np.array([0.3, 0.8, 0.1])
        assert f_plus_exact(f, y) == pytest.approx(float(np.dot(w, y)), abs=1e-6)

    def test_vertex_value(self):
        f = SubmodularOracle.coverage([1.0, 2.0], [[0], [1]])
        assert f_plus_exact(f, [1.0, 1.0]) == pytest.approx(3.0, abs=1e-6)
        assert f_plus_exact(f, [0.0, 0.0]) == pytest.approx(0.0, abs=1e-6)

    def test_monotone_in_marginals(self):
        f = SubmodularOracle.coverage([1.0, 1.5, 0.5], [[0, 1], [1, 2], [2]])
        lo = f_plus_exact(f, [0.2, 0.2, 0.2])
        hi = f_plus_exact(f, [0.6, 0.6, 0.6])
        assert hi >= lo - 1e-9

    def test_capacity(self):
        f = SubmodularOracle.modular([1.0] * 13)
        with pytest.raises(CapacityError):
            f_plus_exact(f, np.full(13, 0.5))


def probing_stub(p, oracle, out_matroids, in_matroids):
    return types.SimpleNamespace(n=len(p), p=np.asarray(p, dtype=float), oracle=oracle,
                                 out_matroids=out_matroids, in_matroids=in_matroids)


class TestProbingMp:
    def test_single_element_exact_dynamics(self):
        # the measured update damps growth by (1-y); with one free element
        # the direction is 1 every step, so y follows 1-(1-delta)^steps
        f = SubmodularOracle.modular([1.0])
        inst = probing_stub([1.0], f, [Matroid.uniform(1, 1)], [Matroid.uniform(1, 1)])
        x = solve_probing_mp(inst, eps=0.1, rng=SplitMix64(1), steps=100)
        expect = 1.0 - (1.0 - 0.01) ** 100
        assert x[0] == pytest.approx(expect, abs=1e-12)
        # Lemma-level guarantee against the exact f+ optimum
        opt = f_plus_exact(f, np.array([1.0]))
        assert multilinear_F_exact(f, inst.p * x) >= (1 / math.e - 0.1) * opt - 1e-9

    def test_modular_lp_cross_check(self):
        # modular objective collapses the program to an LP over the polytope
        w = np.array([2.0, 1.0, 1.5, 0.5])
        f = SubmodularOracle.modular(w)
        p = np.array([0.9, 0.7, 1.0, 0.5])
        m_out = Matroid.partition([[0, 1], [2, 3]], [1, 1])
        m_in = Matroid.uniform(4, 2)
        inst = probing_stub(p, f, [m_out], [m_in])
        poly = probing_polytope(inst)
        lp = LinearProgram(objective=w, rows=poly.rows, n_vars=4, upper=poly.upper)
        opt = solve_lp(lp)
        assert opt.status == "optimal"
        x = solve_probing_mp(inst, eps=0.05, rng=SplitMix64(2), steps=200)
        got = multilinear_F_exact(f, p * x)
        assert got >= (1 / math.e - 0.05) * opt.objective - 1e-9
        # feasibility of the mapped-back solution
        assert in_polytope(m_out, x)
        assert in_polytope(m_in, p * x)

    def test_zero_probability_element_neglected(self):
        f = SubmodularOracle.modular([1.0, 1.0])
        inst = probing_stub([0.0, 1.0], f, [Matroid.uniform(2, 2)], [Matroid.uniform(2, 2)])
        poly = probing_polytope(inst)
        assert poly.upper[0] == 0.0
        x = solve_probing_mp(inst, eps=0.1, rng=SplitMix64(5))
        assert x[0] == 0.0 and x[1] > 0.5
        inst_bad = probing_stub([-0.1, 1.0], f, [Matroid.uniform(2, 2)],
                                [Matroid.uniform(2, 2)])
        with pytest.raises(DomainError):
            probing_polytope(inst_bad)

    def test_eps_validated(self):
        f = SubmodularOracle.modular([1.0])
        inst = probing_stub([1.0], f, [Matroid.uniform(1, 1)], [Matroid.uniform(1, 1)])
        with pytest.raises(DomainError):
            solve_probing_mp(inst, eps=0.0, rng=SplitMix64(3))
