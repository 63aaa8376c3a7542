"""Experiment plumbing: statistics helpers, instance generators, and the
report-writing entry points behind the command line interface.

Seed derivation, fixed forever: trial i of an experiment with master seed
s draws from SplitMix64(child_seed(s, i)), where child_seed jumps the
splitmix64 counter sequence to position i+1.  Reports record the scheme.

Reports are bit-exact across platforms and reruns: CSV uses '.' decimals
via repr(float), LF line endings, a fixed header, and rows sorted by
stable string keys; the JSON summary is dumped with sorted keys.  Trials
are aggregated by order-insensitive summation, so the parallelism degree
never changes the output bytes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, InputError
from .knapsack import KnapsackConstraint
from .limits import desk_cap
from .matroids import Matroid
from .rng import SplitMix64, child_seed

EXPERIMENT_KINDS = ("crs", "auction", "packing", "probing", "greedy", "diagnostics")

GENERATOR_KINDS = ("graphic_matroid", "partition_matroid", "knapsack",
                   "coverage", "auction", "packing", "probing")

SEED_SCHEME = ("trial i uses SplitMix64(child_seed(master_seed, i)); "
               "child_seed(s, i) = mix64(s + (i+1) * 0x9E3779B97F4A7C15) mod 2^64")

CSV_HEADER = "metric,target,estimate,stderr,ci_lo,ci_hi,bound,passed"

_ENVELOPE_TOL = 1e-12
_OPT_CAP = 16  # brute-force greedy benchmark cap (2^n sweeps)


def wilson_interval(successes: int, trials: int, z: float) -> tuple[float, float] | None:
    """Wilson score interval; None when there are no trials (undefined)."""
    if trials == 0:
        return None
    if not 0 <= successes <= trials:
        raise InputError(f"successes {successes} outside [0, {trials}]")
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2.0 * trials)) / denom
    half = z * math.sqrt(p * (1.0 - p) / trials + z2 / (4.0 * trials * trials)) / denom
    # at the boundaries the interval closes exactly; keep it free of roundoff
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == trials else min(1.0, center + half)
    return (lo, hi)


# -- configuration ---------------------------------------------------------------


_CONFIG_KEYS = ("kind", "instance", "generator", "trials", "seed", "eps",
                "out", "jobs")


@dataclass
class ExperimentConfig:
    kind: str
    instance: str | None = None     # path to an instance file
    generator: dict | None = None   # {"kind": ..., "params": {...}} built in-process
    trials: int = 10_000
    seed: int = 1
    eps: float = 0.1
    out: str | None = None          # output prefix; writes <out>.csv and <out>.json
    jobs: int = 1

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise InputError(f"unknown experiment kind {self.kind!r}; "
                             f"expected one of {', '.join(EXPERIMENT_KINDS)}")
        if (self.instance is None) == (self.generator is None):
            raise InputError("exactly one of 'instance' and 'generator' is required")
        if self.trials < 1:
            raise InputError(f"trials must be >= 1, got {self.trials}")
        if not (0 <= int(self.seed) < 1 << 64):
            raise InputError("seed must be a 64-bit value")
        if not (0.0 < self.eps < 1.0):
            raise InputError(f"eps must lie in (0, 1), got {self.eps}")
        if self.jobs < 1:
            raise InputError(f"jobs must be >= 1, got {self.jobs}")

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise InputError("config must be a JSON object")
        for key in obj:
            if key not in _CONFIG_KEYS:
                raise InputError(f"unknown config key {key!r}")
        if "kind" not in obj:
            raise InputError("config is missing the 'kind' key")
        return cls(**obj)


@dataclass
class ReportRow:
    """One metric row; pass means estimate >= bound - 3 stderr for
    lower-bound metrics (upper-bound rows carry the source's flag)."""

    metric: str
    target: str
    estimate: float | None
    stderr: float | None
    ci_lo: float | None
    ci_hi: float | None
    bound: float | None
    passed: bool | None

    def sort_key(self) -> tuple[str, str]:
        return (self.metric, self.target)

    def csv_line(self) -> str:
        cells = [self.metric, self.target]
        for v in (self.estimate, self.stderr, self.ci_lo, self.ci_hi, self.bound):
            cells.append("undefined" if v is None else repr(float(v)))
        cells.append("undefined" if self.passed is None else str(bool(self.passed)).lower())
        return ",".join(cells)


# -- instance generators ---------------------------------------------------------


def _max_scale_matroid(m: Matroid, u: np.ndarray) -> float:
    """Largest t with t*u in the matroid polytope (support subsets only)."""
    support = [e for e in range(m.n) if u[e] > 0]
    if len(support) > desk_cap():
        raise CapacityError(f"scaling enumerates subsets; support {len(support)} "
                            f"exceeds the desk cap {desk_cap()}")
    best = math.inf
    for mask in range(1, 1 << len(support)):
        subset = [support[i] for i in range(len(support)) if mask >> i & 1]
        total = float(sum(u[e] for e in subset))
        if total > 0:
            best = min(best, m.rank(subset) / total)
    return min(best, 1.0 / max(float(np.max(u)), 1e-300))


def scale_into_polytopes(u, matroids=(), knapsacks=(), inner=None,
                         margin: float = 0.9) -> np.ndarray:
    """x = margin * t * u with t the largest scale that fits every
    constraint; inner, when given, is a per-element multiplier whose
    product with x must also fit (probing instances)."""
    u = np.asarray(u, dtype=np.float64)
    t = 1.0 / max(float(np.max(u, initial=0.0)), 1e-300)
    for m in matroids:
        t = min(t, _max_scale_matroid(m, u))
    if inner is not None:
        for m in inner[1]:
            t = min(t, _max_scale_matroid(m, np.asarray(inner[0]) * u))
    for k in knapsacks:
        load = float(np.dot(np.asarray(k.sizes, dtype=np.float64), u))
        if load > 0:
            t = min(t, 1.0 / load)
    x = np.clip(margin * t * u, 0.0, 1.0)
    return x


def _uniform(rng, lo, hi):
    return lo + (hi - lo) * rng.uniform()


def generate_instance(kind: str, params: dict, seed: int) -> dict:
    """Deterministic instance payload for a generator kind.

    Every payload carries the experiment 'kind' it feeds and, where the
    experiment consumes one, a feasible 'x' obtained by scaling a random
    point into the polytope intersection.
    """
    if kind not in GENERATOR_KINDS:
        raise InputError(f"unknown generator kind {kind!r}; "
                         f"expected one of {', '.join(GENERATOR_KINDS)}")
    params = dict(params or {})
    rng = SplitMix64(seed)
    if kind == "graphic_matroid":
        return _gen_graphic(params, rng)
    if kind == "partition_matroid":
        return _gen_partition(params, rng)
    if kind == "knapsack":
        return _gen_knapsack(params, rng)
    if kind == "coverage":
        return _gen_coverage(params, rng)
    if kind == "auction":
        return _gen_auction(params, rng)
    if kind == "packing":
        return _gen_packing(params, rng)
    return _gen_probing(params, rng)


def _int_param(params, key, default, lo, hi):
    v = int(params.get(key, default))
    if not (lo <= v <= hi):
        raise InputError(f"generator parameter {key!r} must lie in [{lo}, {hi}], got {v}")
    return v


def _crs_payload(constraints, x, combined=False) -> dict:
    from .crs import CrsInstance
    inst = CrsInstance(x, constraints, combined=combined)
    payload = inst.to_json()
    payload["kind"] = "crs"
    return payload


def _gen_graphic(params, rng) -> dict:
    vertices = _int_param(params, "vertices", 4, 2, 8)
    n = _int_param(params, "edges", 6, 1, 12)
    edges = []
    for _ in range(n):
        a = int(rng.uniform() * vertices)
        b = int(rng.uniform() * (vertices - 1))
        if b >= a:
            b += 1  # never a self-loop: loops carry zero polytope mass
        edges.append([min(a, b), max(a, b)])
    m = Matroid.graphic(vertices, edges)
    u = np.array([_uniform(rng, 0.2, 1.0) for _ in range(n)])
    x = scale_into_polytopes(u, matroids=[m])
    return _crs_payload([m], x)


def _gen_partition(params, rng) -> dict:
    caps = [int(c) for c in params.get("caps", [1, 1])]
    n = _int_param(params, "n", 2 * len(caps), len(caps), 14)
    if any(c < 1 for c in caps):
        raise InputError("partition caps must be >= 1")
    blocks = [[] for _ in caps]
    sizes = [n // len(caps)] * len(caps)
    for i in range(n % len(caps)):
        sizes[i] += 1
    e = 0
    for j, size in enumerate(sizes):
        for _ in range(size):
            blocks[j].append(e)
            e += 1
    m = Matroid.partition(blocks, caps, n=n)
    u = np.array([_uniform(rng, 0.2, 1.0) for _ in range(n)])
    x = scale_into_polytopes(u, matroids=[m])
    return _crs_payload([m], x)


def _gen_knapsack(params, rng) -> dict:
    n = _int_param(params, "n", 6, 1, 14)
    bounded = bool(params.get("bounded", True))
    sizes = []
    for _ in range(n):
        if bounded:
            sizes.append(round(_uniform(rng, 0.1, 0.5), 6))
        else:
            big = rng.uniform() < 0.3
            sizes.append(round(_uniform(rng, 0.55, 0.9) if big
                               else _uniform(rng, 0.05, 0.45), 6))
    k = KnapsackConstraint(sizes)
    u = np.array([_uniform(rng, 0.2, 1.0) for _ in range(n)])
    x = scale_into_polytopes(u, knapsacks=[k])
    return _crs_payload([k], x, combined=not bounded)


def _gen_coverage(params, rng) -> dict:
    from .submodular import SubmodularOracle
    n = _int_param(params, "n", 6, 1, 14)
    points = _int_param(params, "points", 2 * n, 1, 28)
    weights = [round(_uniform(rng, 0.5, 1.5), 6) for _ in range(points)]
    covers = []
    for _ in range(n):
        cov = [p for p in range(points) if rng.uniform() < 0.4]
        if not cov:
            cov = [int(rng.uniform() * points)]
        covers.append(cov)
    oracle = SubmodularOracle.coverage(weights, covers)
    rank = max(1, n // 3)
    from .crs import constraint_to_json
    return {"kind": "greedy", "oracle": oracle.to_json(),
            "constraints": [constraint_to_json(Matroid.uniform(n, rank))]}


def _gen_auction(params, rng) -> dict:
    n_items = _int_param(params, "items", 4, 1, 8)
    B = _int_param(params, "B", 3, 1, 6)
    n_groups = _int_param(params, "groups", min(2, n_items), 1, n_items)
    pmfs = []
    for _ in range(n_items):
        w = np.array([rng.uniform() + 0.05 for _ in range(B + 1)])
        pmf = w / w.sum()
        pmfs.append([round(float(v), 9) for v in pmf[:-1]] +
                    [round(float(1.0 - sum(round(float(v), 9) for v in pmf[:-1])), 9)])
    groups = [[] for _ in range(n_groups)]
    for c in range(n_items):
        groups[c % n_groups].append(c)
    rank = max(1, n_items // 2)
    from .mechanisms import AuctionInstance
    inst = AuctionInstance(pmfs=pmfs, groups=groups,
                           constraints=[Matroid.uniform(n_items, rank)])
    payload = inst.to_json()
    payload["kind"] = "auction"
    return payload


def _gen_packing(params, rng) -> dict:
    from .probing import PackingInstance
    n = _int_param(params, "n", 4, 1, 10)
    d = _int_param(params, "rows", 2, 1, 4)
    rank = _int_param(params, "rank", 1, 1, n)
    mats = [Matroid.uniform(n, rank) for _ in range(d)]
    outcomes = []
    q_sets = []
    for _ in range(n):
        q = [i for i in range(d) if rng.uniform() < 0.8] or [int(rng.uniform() * d)]
        q_sets.append(q)
        pr = round(_uniform(rng, 0.2, 0.8), 6)
        l1 = [1 if (i in q and rng.uniform() < 0.8) else 0 for i in range(d)]
        l2 = [1 if (i in q and rng.uniform() < 0.4) else 0 for i in range(d)]
        outcomes.append([
            {"prob": pr, "v": round(_uniform(rng, 0.0, 2.0), 6), "L": l1},
            {"prob": round(1.0 - pr, 6), "v": round(_uniform(rng, 0.0, 1.0), 6), "L": l2},
        ])
    inst = PackingInstance(outcomes, q_sets, mats)
    payload = inst.to_json()
    payload["kind"] = "packing"
    return payload


def _gen_probing(params, rng) -> dict:
    from .probing import ProbingInstance
    from .submodular import SubmodularOracle
    n = _int_param(params, "n", 6, 1, 12)
    k_in = _int_param(params, "k_in", 1, 0, 3)
    k_out = _int_param(params, "k_out", 1, 0, 3)
    points = 2 * n
    weights = [round(_uniform(rng, 0.5, 1.5), 6) for _ in range(points)]
    covers = []
    for _ in range(n):
        cov = [p for p in range(points) if rng.uniform() < 0.35]
        if not cov:
            cov = [int(rng.uniform() * points)]
        covers.append(cov)
    oracle = SubmodularOracle.coverage(weights, covers)
    p = np.array([round(_uniform(rng, 0.3, 1.0), 6) for _ in range(n)])
    rank = max(1, (n + 2) // 3)
    in_mats = [Matroid.uniform(n, rank) for _ in range(k_in)]
    out_mats = [Matroid.uniform(n, rank) for _ in range(k_out)]
    inst = ProbingInstance(p, oracle, in_mats, out_mats)
    u = np.array([_uniform(rng, 0.2, 1.0) for _ in range(n)])
    x = scale_into_polytopes(u, matroids=out_mats, inner=(p, in_mats))
    payload = inst.to_json()
    payload["kind"] = "probing"
    payload["x"] = [round(float(v), 12) for v in x]
    return payload


def instance_bytes(payload: dict) -> bytes:
    """Canonical on-disk form: sorted keys, two-space indent, LF, one
    trailing newline.  Fixed forever so seeded generation is byte-stable."""
    return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8")


def load_instance(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read instance file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed JSON in {path} at line {exc.lineno} "
                         f"column {exc.colno}: {exc.msg}") from exc
    if not isinstance(payload, dict) or "kind" not in payload:
        raise InputError(f"instance file {path} is missing the 'kind' key")
    return payload


# -- experiment dispatch ---------------------------------------------------------


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list[ReportRow]
    headline: dict
    detail_csv: list[str] | None = None  # module-format lines, header included
    csv_path: str | None = None
    json_path: str | None = None

    @property
    def all_pass(self) -> bool:
        return all(r.passed is not False for r in self.rows)

    @property
    def exit_code(self) -> int:
        return 0 if self.all_pass else 1

    def csv_text(self) -> str:
        """CSV body: the kind's own table where one is defined (acceptance
        per element, auction revenue per trial), the generic sorted metric
        rows otherwise."""
        if self.detail_csv is not None:
            return "\n".join(self.detail_csv) + "\n"
        lines = [CSV_HEADER]
        lines.extend(r.csv_line() for r in sorted(self.rows, key=ReportRow.sort_key))
        return "\n".join(lines) + "\n"

    def json_text(self) -> str:
        fails = sum(1 for r in self.rows if r.passed is False)
        summary = {
            "kind": self.config.kind,
            "seed": int(self.config.seed),
            "trials": int(self.config.trials),
            "eps": float(self.config.eps),
            "instance": self.config.instance or self.config.generator,
            "rows": len(self.rows),
            "failures": fails,
            "all_pass": self.all_pass,
            "headline": self.headline,
            "seed_scheme": SEED_SCHEME,
            "wilson_z": 2.576,
        }
        return json.dumps(summary, sort_keys=True, indent=2) + "\n"


def _diag_rows(diag) -> list[ReportRow]:
    rows = []
    for r in diag.martingale:
        rows.append(ReportRow("martingale", f"{r.element:06d}",
                              r.mean, r.stderr, None, None, 1.0, bool(r.passed)))
    for r in diag.step_bounds:
        rows.append(ReportRow("step_block_rate",
                              f"{r.element:06d}:{r.step:06d}",
                              r.freq, None, None, None, r.bound, bool(r.passed)))
    rows.append(ReportRow("feasibility_violations", "total",
                          float(diag.violations), None, None, None, 0.0,
                          diag.violations == 0))
    return rows


def _element_rows(rows, metric: str) -> list[ReportRow]:
    out = []
    for r in rows:
        out.append(ReportRow(metric, f"{r.element:06d}", r.mean, r.stderr,
                             r.wilson_lo, r.wilson_hi, r.bound,
                             None if r.passed is None else bool(r.passed)))
    return out


def _mean_row(metric: str, mean: float, stderr: float, bound: float,
              passed: bool) -> ReportRow:
    return ReportRow(metric, "total", mean, stderr, mean - 3 * stderr,
                     mean + 3 * stderr, bound, bool(passed))


ACCEPTANCE_CSV_HEADER = ("element,conditioning_count,accept_count,mean,"
                         "stderr,wilson_lo,wilson_hi,bound,pass")


def _run_crs_kind(payload: dict, cfg: ExperimentConfig, diagnostics_only: bool):
    from .crs import CrsInstance, estimate_acceptance
    inst = CrsInstance.from_json(payload)
    est = estimate_acceptance(inst, cfg.trials, cfg.seed, jobs=cfg.jobs)
    rows = _diag_rows(est.diagnostics)
    detail = None
    if not diagnostics_only:
        rows = _element_rows(est.rows, "acceptance") + rows
        detail = [ACCEPTANCE_CSV_HEADER] + est.csv_rows()
    headline = {"n": inst.n, "conditional": est.conditional,
                "lambda": float(inst.lambda_total),
                "all_pass": est.all_pass}
    return rows, headline, detail


def _run_auction_kind(payload: dict, cfg: ExperimentConfig):
    from .mechanisms import AuctionInstance, estimate_auction_revenue
    inst = AuctionInstance.from_json(payload)
    est = estimate_auction_revenue(inst, cfg.eps, cfg.trials, cfg.seed)
    rows = [_mean_row("revenue", est.mean, est.stderr, est.bound, est.passed)]
    for r in est.martingale:
        rows.append(ReportRow("martingale", f"{r.element:06d}", r.mean,
                              r.stderr, None, None, 1.0, bool(r.passed)))
    for r in est.step_bounds:
        rows.append(ReportRow("step_block_rate", f"{r.element:06d}:{r.step:06d}",
                              r.freq, None, None, None, r.bound, bool(r.passed)))
    headline = {"n_items": inst.n_items, "lp_objective": est.lp_objective,
                "bound": est.bound, "eps": est.eps, "all_pass": est.passed}
    return rows, headline, est.csv_rows()


def _run_packing_kind(payload: dict, cfg: ExperimentConfig):
    from .probing import PackingInstance, estimate_packing_value
    inst = PackingInstance.from_json(payload)
    x = payload.get("x")
    est = estimate_packing_value(inst, cfg.trials, cfg.seed, x=x)
    rows = [_mean_row("value", est.value_mean, est.value_stderr, est.bound,
                      est.value_passed)]
    rows += _element_rows(est.rows, "take_rate")
    rows += _diag_rows(est.diagnostics)
    headline = {"n": inst.n, "k": inst.k, "lp_objective": est.lp_objective,
                "bound": est.bound, "all_pass": est.all_pass}
    return rows, headline, None


def _run_probing_kind(payload: dict, cfg: ExperimentConfig):
    from .probing import ProbingInstance, estimate_probing_objective
    from .relaxations import solve_probing_mp
    inst = ProbingInstance.from_json(payload)
    if payload.get("x") is not None:
        x = np.asarray(payload["x"], dtype=np.float64)
    else:
        solver_rng = SplitMix64(child_seed(cfg.seed, 1 << 32))
        x = solve_probing_mp(inst, cfg.eps, solver_rng) * (1 - 1e-6)
    est = estimate_probing_objective(inst, x, cfg.trials, cfg.seed)
    rows = [_mean_row("value", est.value_mean, est.value_stderr, est.cr_bound,
                      est.value_passed)]
    rows += _element_rows(est.rows, "probe_rate")
    rows += _diag_rows(est.diagnostics)
    headline = {"n": inst.n, "k_in": inst.k_in, "k_out": inst.k_out,
                "multilinear": est.multilinear,
                "multilinear_exact": est.multilinear_exact,
                "f_plus": est.f_plus, "cr_bound": est.cr_bound,
                "all_pass": est.all_pass}
    return rows, headline, None


def brute_force_set_opt(oracle, constraints) -> float:
    """max f(S) over subsets feasible for every constraint; n <= _OPT_CAP."""
    n = oracle.n
    if n > _OPT_CAP:
        raise CapacityError(f"set optimum brute force needs n <= {_OPT_CAP}, got {n}")
    table = oracle.value_table()
    sizes = [np.asarray(c.sizes, dtype=np.float64)
             for c in constraints if isinstance(c, KnapsackConstraint)]
    mats = [c for c in constraints if isinstance(c, Matroid)]
    best = 0.0
    for mask in range(1 << n):
        subset = [e for e in range(n) if mask >> e & 1]
        if any(float(s[subset].sum()) > 1.0 + 1e-12 for s in sizes):
            continue
        if any(not m.is_independent_mask(mask) for m in mats):
            continue
        best = max(best, float(table[mask]))
    return best


def _run_greedy_kind(payload: dict, cfg: ExperimentConfig):
    from .crs import constraint_from_json
    from .submodular import SubmodularOracle, measured_continuous_greedy
    for key in ("oracle", "constraints"):
        if key not in payload:
            raise InputError(f"greedy instance is missing the {key!r} key")
    oracle = SubmodularOracle.from_json(payload["oracle"])
    constraints = [constraint_from_json(c) for c in payload["constraints"]]
    T = float(payload.get("T", 1.0))
    steps = int(payload.get("steps", 100))
    traj = measured_continuous_greedy(oracle, constraints, T=T, b=T,
                                      steps=steps, rng=SplitMix64(cfg.seed))
    rows = []
    for i, v in enumerate(traj.values):
        rows.append(ReportRow("trajectory_value", f"{i:06d}", v, None,
                              None, None, None, None))
    violation = traj.envelope_violation()
    rows.append(ReportRow("envelope_violation", "total", violation, None,
                          None, None, _ENVELOPE_TOL,
                          bool(violation <= _ENVELOPE_TOL)))
    opt = None
    bound = None
    passed = None
    if oracle.n <= _OPT_CAP:
        opt = brute_force_set_opt(oracle, constraints)
        bound = (T * math.exp(-T) - cfg.eps) * opt
        passed = bool(traj.values[-1] >= bound - 1e-9)
    rows.append(ReportRow("final_value", "total", traj.values[-1], None,
                          None, None, bound, passed))
    headline = {"n": oracle.n, "T": T, "steps": steps, "exact": traj.exact,
                "final_value": traj.values[-1], "set_optimum": opt,
                "guarantee_factor": None if opt is None
                else T * math.exp(-T) - cfg.eps}
    return rows, headline, None


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Dispatch one experiment and (optionally) write its report files.

    The exit-code contract lives on the report: 0 iff every bound check
    passed (rows with undefined flags do not fail the run).
    """
    if config.instance is not None:
        payload = load_instance(config.instance)
    else:
        gen = config.generator
        if not isinstance(gen, dict) or "kind" not in gen:
            raise InputError("generator spec must be an object with a 'kind' key")
        payload = generate_instance(gen["kind"], gen.get("params", {}),
                                    int(gen.get("seed", config.seed)))
    expected = "crs" if config.kind == "diagnostics" else config.kind
    if payload["kind"] != expected:
        raise InputError(f"instance file is for kind {payload['kind']!r}, "
                         f"but the experiment needs {expected!r}")

    if config.kind in ("crs", "diagnostics"):
        rows, headline, detail = _run_crs_kind(
            payload, config, diagnostics_only=config.kind == "diagnostics")
    elif config.kind == "auction":
        rows, headline, detail = _run_auction_kind(payload, config)
    elif config.kind == "packing":
        rows, headline, detail = _run_packing_kind(payload, config)
    elif config.kind == "probing":
        rows, headline, detail = _run_probing_kind(payload, config)
    else:
        rows, headline, detail = _run_greedy_kind(payload, config)

    report = ExperimentReport(config=config, rows=rows, headline=headline,
                              detail_csv=detail)
    if config.out:
        # --out report.csv writes report.csv + report.json; any other
        # value is a prefix for both
        stem = config.out[:-4] if config.out.endswith(".csv") else config.out
        report.csv_path = stem + ".csv"
        report.json_path = stem + ".json"
        out_dir = os.path.dirname(stem)
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
        with open(report.csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(report.csv_text())
        with open(report.json_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(report.json_text())
    return report
