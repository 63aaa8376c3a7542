"""Controller mechanisms and characteristic traces.

A controller mechanism guards one constraint during a random-order scan.
For a matroid it keeps the support decomposition's sets B_j alive as the
scan accepts elements: each supported element e is assigned one controller
set C_e = B_j (chosen with probability beta_j / x_e among the sets that
contain e), and an accepted element is inserted into every current set via
exchange mappings, evicting at most one element per set.  An element whose
own controller set evicts it is *blocked*: rejected for good.  For a
bounded knapsack the controller is a uniform point C_e in [0,1] plus a
shrinking interval set; an accept removes 2*s_e of interval mass and the
elements whose points fall in the removed mass are blocked.

Characteristic traces record, per element and step, the indicators
S (accepted), Z (blocked), Y = 1 - S - Z (fate unknown).  They are the
empirical side of the martingale bound E[(1+lambda) S^tau + Y^tau] >= 1,
with lambda = 1 per matroid and 2 per bounded knapsack.

Randomness contract (mirrored by the compiled kernels): controller init
consumes exactly one uniform draw per element in id order, whether or not
the element has support mass; a knapsack accept update consumes exactly
one draw.  Matroid accept updates consume none.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, InputError, InternalError, LogicError
from .knapsack import IntervalSet, KnapsackConstraint, block_random_mass, in_knapsack_polytope
from .matroids import (Matroid, SupportDecomposition, bits_of, build_exchange_mapping,
                       decompose_support)


class MatroidControllerState:
    def __init__(self, matroid: Matroid, decomposition: SupportDecomposition,
                 assign: np.ndarray):
        self.matroid = matroid
        self.n = matroid.n
        self.decomposition = decomposition
        self.sets: list[int] = [int(m) for m in decomposition.masks]
        self.assign = assign  # element -> set index, -1 if unsupported
        self.blocked = np.zeros(self.n, dtype=bool)
        self.blocked[assign < 0] = True  # zero-mass elements are rejected up front
        self.accepted_mask = 0
        self.mappings: dict[tuple[int, int], object] = {}
        self._rebuild_mappings()

    def _rebuild_mappings(self) -> None:
        """Exchange mappings for every ordered pair of current sets."""
        sets = self.sets
        self.mappings = {
            (i, j): build_exchange_mapping(self.matroid, bits_of(sets[i]), bits_of(sets[j]))
            for i in range(len(sets)) for j in range(len(sets)) if i != j
        }

    def controller_set(self, e: int) -> int:
        j = int(self.assign[e])
        if j < 0:
            raise LogicError(f"element {e} has no controller")
        return self.sets[j]

    def is_blocked(self, e: int) -> bool:
        return bool(self.blocked[e])

    def accept(self, e: int) -> list[int]:
        """Insert accepted element e into every set; returns newly blocked ids."""
        e = int(e)
        j = int(self.assign[e])
        if j < 0:
            raise LogicError(f"element {e} has no controller and cannot be accepted")
        if self.blocked[e]:
            raise LogicError(f"element {e} is blocked and cannot be accepted")
        bit = 1 << e
        if not self.sets[j] & bit:
            raise InternalError(f"unblocked element {e} is missing from its controller set")
        plans = []
        for i, target in enumerate(self.sets):
            if target & bit:
                continue
            image = self.mappings[(j, i)].images[e]
            plans.append((i, image))
        newly = []
        for i, image in plans:
            if image is None:
                self.sets[i] |= bit
            else:
                if self.accepted_mask & (1 << image):
                    raise InternalError(f"exchange mapping tried to evict accepted element {image}")
                self.sets[i] = (self.sets[i] & ~(1 << image)) | bit
                if int(self.assign[image]) == i and not self.blocked[image]:
                    self.blocked[image] = True
                    newly.append(image)
        self.accepted_mask |= bit
        self._rebuild_mappings()
        return newly


def init_matroid_controller(matroid: Matroid, x, rng,
                            decomposition: SupportDecomposition | None = None,
                            ) -> MatroidControllerState:
    x = np.asarray(x, dtype=np.float64)
    if decomposition is None:
        decomposition = decompose_support(matroid, x)
    assign = sample_matroid_assignment(decomposition, rng)
    return MatroidControllerState(matroid, decomposition, assign)


def sample_matroid_assignment(decomposition: SupportDecomposition, rng) -> np.ndarray:
    """One draw per element in id order; element e picks set j with
    probability beta_j / coverage(e) among sets containing e."""
    n = decomposition.n
    assign = np.full(n, -1, dtype=np.int64)
    betas = decomposition.betas
    masks = decomposition.masks
    for e in range(n):
        u = rng.uniform()
        bit = 1 << e
        cov = 0.0
        for j in range(len(masks)):
            if int(masks[j]) & bit:
                cov += betas[j]
        if cov <= 0.0:
            continue
        acc = 0.0
        chosen = -1
        for j in range(len(masks)):
            if int(masks[j]) & bit:
                acc += betas[j] / cov
                chosen = j
                if u < acc:
                    break
        assign[e] = chosen
    return assign


class KnapsackControllerState:
    def __init__(self, knapsack: KnapsackConstraint, points: np.ndarray,
                 blocked: np.ndarray):
        self.knapsack = knapsack
        self.n = knapsack.n
        self.points = points
        self.available = IntervalSet.full()
        self.blocked = blocked
        self.accepted_mask = 0
        self.accept_count = 0

    def is_blocked(self, e: int) -> bool:
        return bool(self.blocked[e])

    def accept(self, e: int, rng) -> list[int]:
        e = int(e)
        if self.blocked[e]:
            raise LogicError(f"element {e} is blocked and cannot be accepted")
        mass = 2.0 * float(self.knapsack.sizes[e])
        self.available, removed = block_random_mass(self.available, mass, rng)
        self.accepted_mask |= 1 << e
        self.accept_count += 1
        if self.available.count > 2 * self.accept_count + 1:
            raise InternalError(
                f"{self.available.count} intervals after {self.accept_count} accepts")
        newly = []
        for f in range(self.n):
            if f == e or self.blocked[f] or self.accepted_mask & (1 << f):
                continue
            if removed.contains(float(self.points[f])):
                self.blocked[f] = True
                newly.append(f)
        return newly


def init_knapsack_controller(knapsack: KnapsackConstraint, x, rng) -> KnapsackControllerState:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (knapsack.n,):
        raise InputError(f"point has shape {x.shape}, expected ({knapsack.n},)")
    for e in range(knapsack.n):
        if x[e] > 0 and knapsack.sizes[e] > 0.5:
            raise DomainError(
                f"element {e} has size {knapsack.sizes[e]} > 1/2 with positive mass; "
                "the interval controller requires a bounded knapsack "
                "(use the big/small reduction)")
    if not in_knapsack_polytope(knapsack, x):
        raise DomainError("point is outside the knapsack polytope")
    points = np.zeros(knapsack.n)
    for e in range(knapsack.n):
        points[e] = rng.uniform()
    blocked = np.asarray(x, dtype=np.float64) <= 0.0
    return KnapsackControllerState(knapsack, points, blocked.copy())


class JointController:
    """Controllers for a list of constraints; blocked anywhere means blocked."""

    def __init__(self, parts: list):
        self.parts = parts

    @property
    def lambda_total(self) -> float:
        total = 0.0
        for part in self.parts:
            total += 2.0 if isinstance(part, KnapsackControllerState) else 1.0
        return total

    def is_blocked(self, e: int) -> bool:
        return any(part.is_blocked(e) for part in self.parts)

    def accept(self, e: int, rng) -> list[int]:
        """Newly blocked elements in the joint sense: a part may evict an
        element some other part blocked steps ago, which resolves nothing."""
        pre = [self.is_blocked(f) for f in range(self.parts[0].n)]
        newly: list[int] = []
        seen = set()
        for part in self.parts:
            if isinstance(part, KnapsackControllerState):
                batch = part.accept(e, rng)
            else:
                batch = part.accept(e)
            for f in batch:
                if f not in seen and not pre[f]:
                    seen.add(f)
                    newly.append(f)
        return newly


class CharacteristicTrace:
    """S/Z/Y indicator paths for every element over steps 0..n.

    Column t is the state before step t is processed; record_step(t, ...)
    writes column t+1.  Steps must be recorded in order.
    """

    def __init__(self, n: int, steps: int | None = None, initial_blocked=()):
        steps = n if steps is None else steps
        self.n = n
        self.steps = steps
        self.S = np.zeros((n, steps + 1), dtype=np.uint8)
        self.Z = np.zeros((n, steps + 1), dtype=np.uint8)
        for e in initial_blocked:
            self.Z[int(e), :] = 1
        self._next = 0

    @property
    def Y(self) -> np.ndarray:
        return 1 - self.S - self.Z

    def record_step(self, t: int, accepted=(), blocked=()) -> None:
        if t != self._next:
            raise LogicError(f"steps must be recorded in order; expected {self._next}, got {t}")
        if t >= self.steps:
            raise LogicError(f"step {t} out of range (trace has {self.steps} steps)")
        for e in accepted:
            e = int(e)
            if self.S[e, t] or self.Z[e, t]:
                raise LogicError(f"element {e} already has a fate; cannot accept at step {t}")
            self.S[e, t + 1:] = 1
        for e in blocked:
            e = int(e)
            if self.S[e, t] or self.Z[e, t] or self.S[e, t + 1] or self.Z[e, t + 1]:
                raise LogicError(f"element {e} already has a fate; cannot block at step {t}")
            self.Z[e, t + 1:] = 1
        self._next = t + 1

    def tau(self, e: int) -> int | None:
        """First t with Y_e^t = 0, or None if the fate never resolved."""
        resolved = np.nonzero(self.S[e] + self.Z[e])[0]
        return int(resolved[0]) if len(resolved) else None

    def fate(self, e: int) -> str | None:
        if self.S[e, -1]:
            return "accepted"
        if self.Z[e, -1]:
            return "blocked"
        return None

    def check(self) -> None:
        """Validate the structural invariants; raises InternalError on failure."""
        if ((self.S == 1) & (self.Z == 1)).any():
            raise InternalError("S and Z overlap")
        for arr, name in ((self.S, "S"), (self.Z, "Z")):
            if (np.diff(arr.astype(np.int8), axis=1) < 0).any():
                raise InternalError(f"{name} is not monotone")
        if ((self.Y < 0) | (self.Y > 1)).any():
            raise InternalError("Y leaves {0,1}")

    def csv_rows(self, trial: int) -> list[str]:
        rows = []
        for e in range(self.n):
            for t in range(self.steps + 1):
                s, z = int(self.S[e, t]), int(self.Z[e, t])
                rows.append(f"{trial},{e},{t},{s},{z},{1 - s - z}")
        return rows
