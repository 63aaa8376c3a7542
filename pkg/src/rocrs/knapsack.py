"""Knapsack constraints and the interval machinery behind their controllers.

A knapsack over {0,...,n-1} has sizes s_e in [0,1] and feasible sets
{S : sum_{e in S} s_e <= 1}.  It is *bounded* when every size is at most
1/2; only bounded knapsacks admit the interval controller.

The controller state is a set of disjoint half-open subintervals of [0,1]
(the surviving control points).  When an element of size s is accepted the
controller removes 2*s worth of mass, chosen uniformly: glue the available
intervals left to right into a circle whose circumference is the total
remaining mass, pick a uniform starting point on the circle, and delete
the arc of length 2*s starting there (wrapping around if needed).  Every
point of the available set is hit with probability exactly
min(2*s, mass)/mass, which is what the blocking analysis needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InputError, InternalError

MASS_TOL = 1e-12


class KnapsackConstraint:
    def __init__(self, sizes):
        sizes = np.asarray(sizes, dtype=np.float64)
        if sizes.ndim != 1:
            raise InputError("knapsack sizes must be a flat list")
        if (sizes < 0).any() or (sizes > 1).any():
            raise InputError("knapsack sizes must lie in [0, 1]")
        self.sizes = sizes
        self.n = len(sizes)

    @property
    def bounded(self) -> bool:
        return bool((self.sizes <= 0.5).all())

    def is_feasible(self, subset) -> bool:
        seen = set()
        total = 0.0
        for e in subset:
            e = int(e)
            if e < 0 or e >= self.n:
                raise InputError(f"element id {e} out of range for ground set of size {self.n}")
            if e in seen:
                continue
            seen.add(e)
            total += self.sizes[e]
        return total <= 1.0 + MASS_TOL

    def to_json(self) -> dict:
        return {"kind": "knapsack", "sizes": [float(s) for s in self.sizes]}

    @classmethod
    def from_json(cls, obj: dict) -> "KnapsackConstraint":
        try:
            return cls(obj["sizes"])
        except KeyError:
            raise InputError("knapsack object is missing the 'sizes' key") from None

    def __repr__(self):
        return f"KnapsackConstraint(n={self.n}, bounded={self.bounded})"


def in_knapsack_polytope(k: KnapsackConstraint, x, tol: float = 1e-9) -> bool:
    """Is x in {x in [0,1]^n : sum s_e x_e <= 1}?"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (k.n,):
        raise InputError(f"point has shape {x.shape}, expected ({k.n},)")
    if (x < -tol).any() or (x > 1 + tol).any():
        return False
    return float(k.sizes @ x) <= 1.0 + tol


def classify_items(k: KnapsackConstraint) -> tuple[list[int], list[int]]:
    """(big, small) element ids; big means size strictly above 1/2."""
    big = [e for e in range(k.n) if k.sizes[e] > 0.5]
    small = [e for e in range(k.n) if k.sizes[e] <= 0.5]
    return big, small


@dataclass
class IntervalSet:
    """Disjoint, sorted, half-open subintervals of [0, 1]."""

    starts: np.ndarray
    ends: np.ndarray

    @classmethod
    def full(cls) -> "IntervalSet":
        return cls(starts=np.array([0.0]), ends=np.array([1.0]))

    @classmethod
    def empty(cls) -> "IntervalSet":
        return cls(starts=np.zeros(0), ends=np.zeros(0))

    @classmethod
    def of(cls, pairs) -> "IntervalSet":
        pairs = sorted((float(a), float(b)) for a, b in pairs if float(b) > float(a))
        starts = np.array([a for a, _ in pairs])
        ends = np.array([b for _, b in pairs])
        iset = cls(starts=starts, ends=ends)
        iset.validate()
        return iset

    def validate(self) -> None:
        if len(self.starts) != len(self.ends):
            raise InternalError("interval arrays disagree in length")
        prev = 0.0
        for a, b in zip(self.starts, self.ends):
            if b <= a:
                raise InternalError(f"empty or inverted interval [{a}, {b})")
            if a < prev - MASS_TOL:
                raise InternalError("intervals overlap or are unsorted")
            if a < -MASS_TOL or b > 1.0 + MASS_TOL:
                raise InternalError("interval leaves [0, 1]")
            prev = b

    @property
    def count(self) -> int:
        return len(self.starts)

    def total_mass(self) -> float:
        return float((self.ends - self.starts).sum())

    def contains(self, point: float) -> bool:
        for a, b in zip(self.starts, self.ends):
            if a <= point < b:
                return True
        return False

    def pairs(self) -> list[tuple[float, float]]:
        return [(float(a), float(b)) for a, b in zip(self.starts, self.ends)]


def block_random_mass(iset: IntervalSet, mass: float, rng) -> tuple[IntervalSet, IntervalSet]:
    """Remove `mass` uniformly from iset via the glued circle.

    Returns (remaining, blocked).  Exactly one uniform draw is consumed in
    every call, including the degenerate ones, so executor and kernel
    streams stay aligned.  mass <= 0 removes nothing; mass >= total mass
    removes everything.
    """
    if mass < 0:
        raise DomainError(f"cannot block negative mass {mass}")
    u = rng.uniform()
    total = iset.total_mass()
    if mass == 0.0 or iset.count == 0:
        return iset, IntervalSet.empty()
    if mass >= total - MASS_TOL:
        return IntervalSet.empty(), iset
    start = u * total
    # arc [start, start + mass) on the circle, in glued coordinates
    glued = [(start, min(start + mass, total))]
    if start + mass > total:
        glued.append((0.0, start + mass - total))
    keep: list[tuple[float, float]] = []
    blocked: list[tuple[float, float]] = []
    offset = 0.0
    for a, b in zip(iset.starts, iset.ends):
        length = b - a
        pieces = [(float(a), float(b))]  # survivors, in original coordinates
        for glo, ghi in glued:
            lo = max(glo, offset)
            hi = min(ghi, offset + length)
            if hi <= lo:
                continue
            cut_lo = a + (lo - offset)
            cut_hi = a + (hi - offset)
            blocked.append((cut_lo, cut_hi))
            nxt = []
            for pa, pb in pieces:
                if cut_hi <= pa or cut_lo >= pb:
                    nxt.append((pa, pb))
                    continue
                if pa < cut_lo:
                    nxt.append((pa, cut_lo))
                if cut_hi < pb:
                    nxt.append((cut_hi, pb))
            pieces = nxt
        keep.extend(pieces)
        offset += length
    remaining = IntervalSet.of(keep)
    got = IntervalSet.of(sorted(blocked))
    if abs(remaining.total_mass() - (total - mass)) > MASS_TOL:
        raise InternalError(
            f"mass not conserved: {remaining.total_mass():.15f} vs {total - mass:.15f}")
    return remaining, got
