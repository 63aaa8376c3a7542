"""Compiled batch executor for random-order scans.

This is a performance lane, not a second semantics: every routine here is
a line-by-line transcription of the reference executor (run_crs and the
controller classes) consuming the exact same uniform-draw stream, so a
trial with seed s produces bit-identical results in both lanes.  The
mirrored pieces are:

  * the splitmix64 generator and child-seed derivation (rng.py);
  * assignment sampling over a support decomposition (controllers.py),
    with per-element coverages precomputed in the same summation order;
  * lazy evaluation of exchange-mapping images: instead of rebuilding the
    full mapping table after each accept, the kernel runs the identical
    deterministic Kuhn matching (matroids._kuhn_match) for the one image
    it needs; the matching is a pure function of (source set, target set),
    so lazy and eager evaluation agree;
  * the glued-circle interval removal (knapsack.block_random_mass), with
    the same cut arithmetic in the same order; a point counts as blocked
    when it sits in the old available set but not the new one, which is
    exactly membership in the removed set;
  * the scan loop of run_crs including combined-mode coins.

Support decompositions are pure functions of the instance, so the driver
precompiles one per (coin scenario, constraint) pair before entering the
kernel.  Trials are processed in fixed-size blocks with per-block
accumulators merged in block order, which makes reports byte-identical
for every parallelism degree.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedError
from .knapsack import KnapsackConstraint
from .matroids import Matroid, decompose_support

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


TAU_F = 1e-12
MASS_TOL = 1e-12
BLOCK_TRIALS = 4096
NONE_STEP = -10

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO53INV = 2.0 ** -53


@njit(cache=True, nogil=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True, inline="always")
def _child(master, index):
    return _mix64(master + (np.uint64(index) + _ONE) * _GOLD)


@njit(cache=True, nogil=True, inline="always")
def _next_u(state):
    state = state + _GOLD
    return state, np.float64(_mix64(state) >> _S11) * _TWO53INV


@njit(cache=True, nogil=True)
def _insert_image(table, n, cmask, bmask, e,
                  need, idx_of, adjf, adjl, match_of, visited, st_e, st_i, st_v):
    """Image of e under the exchange mapping cmask -> bmask.

    Returns -1 for a free insert, the evicted element id otherwise, or -9
    if no matching covers the source (an internal-contract violation).
    Mirrors matroids.build_exchange_mapping + _kuhn_match exactly.
    """
    one = np.int64(1)
    bite = one << e
    if table[bmask | bite]:
        return np.int64(-1)
    nn = 0
    for a in range(n):
        if (cmask >> a) & 1 and not (bmask >> a) & 1:
            if table[bmask | (one << a)] == 0:
                need[nn] = a
                idx_of[a] = nn
                nn += 1
    for k in range(nn):
        a = need[k]
        abit = one << a
        cnt = 0
        for f in range(n):
            if (bmask >> f) & 1 and not (cmask >> f) & 1:
                if table[(bmask & ~(one << f)) | abit]:
                    adjf[k * n + cnt] = f
                    cnt += 1
        adjl[k] = cnt
    for f in range(n):
        if (bmask >> f) & 1 and not (cmask >> f) & 1:
            match_of[f] = -1
    for k0 in range(nn):
        e0 = need[k0]
        for f in range(n):
            if (bmask >> f) & 1 and not (cmask >> f) & 1:
                visited[f] = 0
        st_e[0] = e0
        st_i[0] = 0
        st_v[0] = -1
        sp = 1
        augmented = False
        while sp > 0:
            el = st_e[sp - 1]
            idx = st_i[sp - 1]
            k = idx_of[el]
            if idx >= adjl[k]:
                sp -= 1
                continue
            st_i[sp - 1] = idx + 1
            f = adjf[k * n + idx]
            if visited[f]:
                continue
            visited[f] = 1
            cur = match_of[f]
            if cur == -1:
                match_of[f] = el
                for j in range(sp - 1, 0, -1):
                    match_of[st_v[j]] = st_e[j - 1]
                augmented = True
                break
            st_e[sp] = cur
            st_i[sp] = 0
            st_v[sp] = f
            sp += 1
        if not augmented:
            return np.int64(-9)
    for f in range(n):
        if (bmask >> f) & 1 and not (cmask >> f) & 1 and match_of[f] == e:
            return np.int64(f)
    return np.int64(-9)


@njit(cache=True, nogil=True)
def _remove_mass(avs, ave, cnt, mass, u, pa, pb, qa, qb, ns, ne):
    """Glued-circle removal of `mass` from the intervals avs/ave[:cnt].

    Writes the surviving intervals into ns/ne and returns (new count, ok).
    Mirrors knapsack.block_random_mass with the same float expressions.
    """
    total = 0.0
    for i in range(cnt):
        total += ave[i] - avs[i]
    if mass == 0.0 or cnt == 0:
        for i in range(cnt):
            ns[i] = avs[i]
            ne[i] = ave[i]
        return cnt, True
    if mass >= total - MASS_TOL:
        return 0, True
    start = u * total
    g0a = start
    g0b = min(start + mass, total)
    wrap = start + mass > total
    g1b = start + mass - total
    offset = 0.0
    out = 0
    for i in range(cnt):
        a = avs[i]
        b = ave[i]
        length = b - a
        pcnt = 1
        pa[0] = a
        pb[0] = b
        for arc in range(2):
            if arc == 0:
                glo = g0a
                ghi = g0b
            else:
                if not wrap:
                    continue
                glo = 0.0
                ghi = g1b
            lo = max(glo, offset)
            hi = min(ghi, offset + length)
            if hi <= lo:
                continue
            cut_lo = a + (lo - offset)
            cut_hi = a + (hi - offset)
            m = 0
            for p in range(pcnt):
                x = pa[p]
                y = pb[p]
                if cut_hi <= x or cut_lo >= y:
                    qa[m] = x
                    qb[m] = y
                    m += 1
                    continue
                if x < cut_lo:
                    qa[m] = x
                    qb[m] = cut_lo
                    m += 1
                if cut_hi < y:
                    qa[m] = cut_hi
                    qb[m] = y
                    m += 1
            pcnt = m
            for p in range(pcnt):
                pa[p] = qa[p]
                pb[p] = qb[p]
        for p in range(pcnt):
            ns[out] = pa[p]
            ne[out] = pb[p]
            out += 1
        offset += length
    nt = 0.0
    for i in range(out):
        nt += ne[i] - ns[i]
    ok = abs(nt - (total - mass)) <= MASS_TOL
    return out, ok


@njit(cache=True, nogil=True)
def _crs_block(master, start, count, n, combined, n_knap, maxj,
               is_knap, mode, tables, deco_off, deco_len, deco_masks, deco_betas,
               cov, sizes, x_eff, lam_s, use_filter, ftab, record,
               act_count, sel_count, mart_sum, mart_sumsq, risk, blockt,
               val_acc, violations,
               rec_active, rec_selected, rec_solution, rec_scen, rec_sat, rec_zat):
    C = mode.shape[1]
    one = np.int64(1)
    active = np.zeros(n, dtype=np.uint8)
    perm = np.zeros(n, dtype=np.int64)
    assign = np.zeros((C, n), dtype=np.int64)
    cur = np.zeros((C, maxj), dtype=np.int64)
    points = np.zeros((C, n), dtype=np.float64)
    av_s = np.zeros((C, 2 * n + 8), dtype=np.float64)
    av_e = np.zeros((C, 2 * n + 8), dtype=np.float64)
    av_cnt = np.zeros(C, dtype=np.int64)
    acc_cnt = np.zeros(C, dtype=np.int64)
    blockedb = np.zeros(n, dtype=np.uint8)
    s_at = np.zeros(n, dtype=np.int64)
    z_at = np.zeros(n, dtype=np.int64)
    need = np.zeros(n + 1, dtype=np.int64)
    idx_of = np.zeros(n + 1, dtype=np.int64)
    adjf = np.zeros(n * n + 1, dtype=np.int64)
    adjl = np.zeros(n + 1, dtype=np.int64)
    match_of = np.zeros(n + 1, dtype=np.int64)
    visited = np.zeros(n + 1, dtype=np.uint8)
    st_e = np.zeros(n + 2, dtype=np.int64)
    st_i = np.zeros(n + 2, dtype=np.int64)
    st_v = np.zeros(n + 2, dtype=np.int64)
    pa = np.zeros(8, dtype=np.float64)
    pb = np.zeros(8, dtype=np.float64)
    qa = np.zeros(8, dtype=np.float64)
    qb = np.zeros(8, dtype=np.float64)
    ns = np.zeros(2 * n + 8, dtype=np.float64)
    ne = np.zeros(2 * n + 8, dtype=np.float64)

    for trial in range(start, start + count):
        state = _child(master, trial)
        # 1. combined-mode coins, one per knapsack in constraint order
        scen = 0
        if combined:
            ci = 0
            for c in range(C):
                if is_knap[c]:
                    state, u = _next_u(state)
                    if u < 0.5:
                        scen |= 1 << ci
                    ci += 1
        xs = x_eff[scen]
        # 2. activity draws, id order
        for e in range(n):
            state, u = _next_u(state)
            active[e] = u < xs[e]
        # 3. controller init, constraint order then id order
        for e in range(n):
            blockedb[e] = 0
            s_at[e] = NONE_STEP
            z_at[e] = NONE_STEP
            if xs[e] <= 0.0:
                z_at[e] = -1
        for c in range(C):
            if mode[scen, c] == 0:
                off = deco_off[scen, c]
                L = deco_len[scen, c]
                for e in range(n):
                    state, u = _next_u(state)
                    cove = cov[scen, c, e]
                    if cove <= 0.0:
                        assign[c, e] = -1
                        blockedb[e] = 1
                        continue
                    acc = 0.0
                    chosen = np.int64(-1)
                    for j in range(L):
                        if (deco_masks[off + j] >> e) & 1:
                            acc += deco_betas[off + j] / cove
                            chosen = j
                            if u < acc:
                                break
                    assign[c, e] = chosen
                for j in range(L):
                    cur[c, j] = deco_masks[off + j]
            else:
                for e in range(n):
                    state, u = _next_u(state)
                    points[c, e] = u
                    if xs[e] <= 0.0:
                        blockedb[e] = 1
                av_s[c, 0] = 0.0
                av_e[c, 0] = 1.0
                av_cnt[c] = 1
                acc_cnt[c] = 0
        # 4. permutation, Fisher-Yates descending
        for e in range(n):
            perm[e] = e
        for i in range(n - 1, 0, -1):
            state, u = _next_u(state)
            j = int(u * np.float64(i + 1))
            tmp = perm[i]
            perm[i] = perm[j]
            perm[j] = tmp
        # 5. the scan
        accepted_mask = np.int64(0)
        sol_mask = np.int64(0)
        for t in range(n):
            e = perm[t]
            if not active[e] or blockedb[e]:
                continue
            bite = one << e
            for c in range(C):
                if mode[scen, c] == 0:
                    jas = assign[c, e]
                    if jas < 0 or not (cur[c, jas] >> e) & 1:
                        violations[0] += 1
                        continue
                    L = deco_len[scen, c]
                    cset = cur[c, jas]
                    for j in range(L):
                        tgt = cur[c, j]
                        if (tgt >> e) & 1:
                            continue
                        img = _insert_image(tables[c], n, cset, tgt, e, need, idx_of,
                                            adjf, adjl, match_of, visited, st_e, st_i, st_v)
                        if img == -9:
                            violations[0] += 1
                        elif img == -1:
                            cur[c, j] = tgt | bite
                        else:
                            if (accepted_mask >> img) & 1:
                                violations[0] += 1
                            cur[c, j] = (tgt & ~(one << img)) | bite
                            if assign[c, img] == j and not blockedb[img]:
                                blockedb[img] = 1
                                z_at[img] = t
                else:
                    state, u = _next_u(state)
                    mass = 2.0 * sizes[c, e]
                    newcnt, ok = _remove_mass(av_s[c], av_e[c], av_cnt[c], mass, u,
                                              pa, pb, qa, qb, ns, ne)
                    if not ok:
                        violations[0] += 1
                    for f in range(n):
                        if f == e or blockedb[f] or s_at[f] >= 0:
                            continue
                        p = points[c, f]
                        in_old = False
                        for i in range(av_cnt[c]):
                            if av_s[c, i] <= p < av_e[c, i]:
                                in_old = True
                                break
                        if not in_old:
                            continue
                        in_new = False
                        for i in range(newcnt):
                            if ns[i] <= p < ne[i]:
                                in_new = True
                                break
                        if not in_new:
                            blockedb[f] = 1
                            z_at[f] = t
                    av_cnt[c] = newcnt
                    for i in range(newcnt):
                        av_s[c, i] = ns[i]
                        av_e[c, i] = ne[i]
                    acc_cnt[c] += 1
                    if newcnt > 2 * acc_cnt[c] + 1:
                        violations[0] += 1
            s_at[e] = t
            accepted_mask |= bite
            for c in range(C):
                if is_knap[c]:
                    tot = 0.0
                    for f in range(n):
                        if (accepted_mask >> f) & 1:
                            tot += sizes[c, f]
                    if tot > 1.0 + MASS_TOL:
                        violations[0] += 1
                elif tables[c][accepted_mask] == 0:
                    violations[0] += 1
            if use_filter:
                if ftab[sol_mask | bite] - ftab[sol_mask] > TAU_F:
                    sol_mask |= bite
            else:
                sol_mask |= bite
        # 6. accumulate
        lam = lam_s[scen]
        for e in range(n):
            if active[e]:
                act_count[e] += 1
                if s_at[e] >= 0:
                    v = 1.0 + lam
                elif z_at[e] == NONE_STEP:
                    v = 1.0
                else:
                    v = 0.0
                mart_sum[e] += v
                mart_sumsq[e] += v * v
            if s_at[e] >= 0:
                sel_count[e] += 1
                ra = s_at[e]
            elif z_at[e] != NONE_STEP:
                ra = z_at[e]
            else:
                ra = n
            last = ra if ra < n - 1 else n - 1
            for t in range(last + 1):
                risk[e, t] += 1
            if z_at[e] >= 0:
                blockt[e, z_at[e]] += 1
        if use_filter:
            v = ftab[sol_mask]
            val_acc[0] += v
            val_acc[1] += v * v
        if record:
            i = trial - start
            am = np.int64(0)
            for e in range(n):
                if active[e]:
                    am |= one << e
            rec_active[i] = am
            rec_selected[i] = accepted_mask
            rec_solution[i] = sol_mask
            rec_scen[i] = scen
            for e in range(n):
                rec_sat[i, e] = s_at[e]
                rec_zat[i, e] = z_at[e]


@dataclass
class KernelCounts:
    """Raw accumulators from a batch of trials (either executor lane)."""

    trials: int
    act: np.ndarray
    sel: np.ndarray
    mart_sum: np.ndarray
    mart_sumsq: np.ndarray
    risk: np.ndarray
    blockt: np.ndarray
    val_sum: float
    val_sumsq: float
    violations: int
    rec_active: np.ndarray | None = None
    rec_selected: np.ndarray | None = None
    rec_solution: np.ndarray | None = None
    rec_scen: np.ndarray | None = None
    rec_sat: np.ndarray | None = None
    rec_zat: np.ndarray | None = None

    def merge(self, other: "KernelCounts") -> None:
        self.trials += other.trials
        self.act += other.act
        self.sel += other.sel
        self.mart_sum += other.mart_sum
        self.mart_sumsq += other.mart_sumsq
        self.risk += other.risk
        self.blockt += other.blockt
        self.val_sum += other.val_sum
        self.val_sumsq += other.val_sumsq
        self.violations += other.violations


def empty_counts(n: int) -> KernelCounts:
    return KernelCounts(trials=0, act=np.zeros(n, dtype=np.int64),
                        sel=np.zeros(n, dtype=np.int64),
                        mart_sum=np.zeros(n, dtype=np.float64),
                        mart_sumsq=np.zeros(n, dtype=np.float64),
                        risk=np.zeros((n, n), dtype=np.int64),
                        blockt=np.zeros((n, n), dtype=np.int64),
                        val_sum=0.0, val_sumsq=0.0, violations=0)


class CompiledCrs:
    """Flattened, kernel-ready form of a CrsInstance.

    Precompiles the support decompositions for every coin scenario (2^q of
    them in combined mode, one otherwise) together with per-element
    coverages summed in the assignment sampler's order.
    """

    def __init__(self, inst, value_table: np.ndarray | None = None):
        n = inst.n
        C = len(inst.constraints)
        knaps = [c for c in inst.constraints if isinstance(c, KnapsackConstraint)]
        q = len(knaps)
        scenarios = 1 << q if inst.combined else 1
        self.inst = inst
        self.n = n
        self.scenarios = scenarios
        self.n_knap = q
        self.is_knap = np.array(
            [isinstance(c, KnapsackConstraint) for c in inst.constraints], dtype=np.uint8)
        uniform1 = Matroid.uniform(n, 1).independence_table() if q else None
        tables = np.zeros((C, 1 << n), dtype=np.uint8)
        for idx, c in enumerate(inst.constraints):
            tables[idx] = uniform1 if isinstance(c, KnapsackConstraint) else c.independence_table()
        self.tables = tables
        self.sizes = np.zeros((C, n), dtype=np.float64)
        for idx, c in enumerate(inst.constraints):
            if isinstance(c, KnapsackConstraint):
                self.sizes[idx] = c.sizes

        mode = np.zeros((scenarios, C), dtype=np.uint8)
        deco_off = np.zeros((scenarios, C), dtype=np.int64)
        deco_len = np.zeros((scenarios, C), dtype=np.int64)
        cov = np.zeros((scenarios, C, n), dtype=np.float64)
        x_eff = np.zeros((scenarios, n), dtype=np.float64)
        lam_s = np.zeros(scenarios, dtype=np.float64)
        masks_flat: list[int] = []
        betas_flat: list[float] = []
        for s in range(scenarios):
            coins = tuple(bool(s >> ci & 1) for ci in range(q)) if inst.combined else ()
            x_eff[s] = inst.effective_x(coins)
            ci = 0
            for idx, c in enumerate(inst.constraints):
                knap = isinstance(c, KnapsackConstraint)
                big_mode = knap and inst.combined and coins[ci]
                if knap:
                    ci += 1
                if knap and not big_mode:
                    mode[s, idx] = 1
                    lam_s[s] += 2.0
                    continue
                lam_s[s] += 1.0
                deco = inst.decomposition_for(idx, coins)
                deco_off[s, idx] = len(masks_flat)
                deco_len[s, idx] = len(deco.masks)
                for e in range(n):
                    bit = 1 << e
                    total = 0.0
                    for j in range(len(deco.masks)):
                        if int(deco.masks[j]) & bit:
                            total += float(deco.betas[j])
                    cov[s, idx, e] = total
                masks_flat.extend(int(m) for m in deco.masks)
                betas_flat.extend(float(b) for b in deco.betas)
        self.mode = mode
        self.deco_off = deco_off
        self.deco_len = deco_len
        self.deco_masks = np.array(masks_flat, dtype=np.int64)
        self.deco_betas = np.array(betas_flat, dtype=np.float64)
        self.cov = cov
        self.x_eff = x_eff
        self.lam_s = lam_s
        self.maxj = max(1, int(deco_len.max()))
        self.use_filter = value_table is not None
        if value_table is not None:
            value_table = np.asarray(value_table, dtype=np.float64)
            if value_table.shape != (1 << n,):
                raise UnsupportedError(
                    f"value table must cover all {1 << n} subsets, got {value_table.shape}")
            self.ftab = value_table
        else:
            self.ftab = np.zeros(1, dtype=np.float64)

    def run_block(self, seed: int, start: int, count: int, record: bool = False,
                  counts: KernelCounts | None = None) -> KernelCounts:
        n = self.n
        out = counts if counts is not None else empty_counts(n)
        if record:
            out.rec_active = np.zeros(count, dtype=np.int64)
            out.rec_selected = np.zeros(count, dtype=np.int64)
            out.rec_solution = np.zeros(count, dtype=np.int64)
            out.rec_scen = np.zeros(count, dtype=np.int64)
            out.rec_sat = np.zeros((count, n), dtype=np.int64)
            out.rec_zat = np.zeros((count, n), dtype=np.int64)
            rec = (out.rec_active, out.rec_selected, out.rec_solution,
                   out.rec_scen, out.rec_sat, out.rec_zat)
        else:
            dummy = np.zeros(1, dtype=np.int64)
            rec = (dummy, dummy, dummy, dummy,
                   np.zeros((1, n), dtype=np.int64), np.zeros((1, n), dtype=np.int64))
        val_acc = np.array([out.val_sum, out.val_sumsq], dtype=np.float64)
        violations = np.array([out.violations], dtype=np.int64)
        _crs_block(np.uint64(seed & (2 ** 64 - 1)), start, count, n,
                   bool(self.inst.combined), self.n_knap, self.maxj,
                   self.is_knap, self.mode, self.tables, self.deco_off, self.deco_len,
                   self.deco_masks, self.deco_betas, self.cov, self.sizes, self.x_eff,
                   self.lam_s, self.use_filter, self.ftab, record,
                   out.act, out.sel, out.mart_sum, out.mart_sumsq, out.risk, out.blockt,
                   val_acc, violations, *rec)
        out.trials += count
        out.val_sum = float(val_acc[0])
        out.val_sumsq = float(val_acc[1])
        out.violations = int(violations[0])
        return out

    def run(self, trials: int, seed: int, jobs: int = 1, record: bool = False,
            block: int = BLOCK_TRIALS) -> KernelCounts:
        """trials trials with per-trial seeds child(seed, i); blockwise, so
        the merged counts are identical for every jobs value."""
        if record:
            # recording is for small lane-equality batches; keep it single-block
            return self.run_block(seed, 0, trials, record=True)
        starts = list(range(0, trials, block))
        pieces: list[KernelCounts]
        if jobs <= 1 or len(starts) <= 1:
            merged = empty_counts(self.n)
            for s in starts:
                self.run_block(seed, s, min(block, trials - s), counts=merged)
            return merged
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(self.run_block, seed, s, min(block, trials - s))
                    for s in starts]
            pieces = [f.result() for f in futs]
        merged = empty_counts(self.n)
        for piece in pieces:
            merged.merge(piece)
        return merged
