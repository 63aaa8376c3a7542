"""Matroids over integer ground sets {0, ..., n-1}.

Subsets are accepted as any iterable of ints and handled internally as
bitmasks, which keeps the desk-scale exact subroutines (rank of every
subset, polytope membership, support decomposition) cheap and allows the
same encoding to be handed to the compiled kernels.

Two non-oracle constructions carry the weight of the whole package:

* decompose_support writes a fractional point x of the matroid polytope as
  sum_j beta_j * 1[B_j] with independent B_j, sum_j beta_j <= 1 (padded
  with an empty entry to reach exactly 1).  It peels greedily: order the
  support by decreasing residual mass, pick a maximal independent set B in
  that order, and take the largest step beta * 1[B] that keeps the residual
  inside the polytope scaled by the remaining mass.  The scaled invariant
  (residual in m_rem * P) is what makes the peeled weights sum to at most
  one; stepping against the unscaled polytope would overshoot.

* build_exchange_mapping(m, a, b) maps the independent set a into b: the
  identity on a & b, and for e in a - b either bottom (b + e stays
  independent) or some f in b - a with b - f + e independent, at most one
  e per f.  It is found by maximum bipartite matching; a matching covering
  every element that needs one always exists, so failure is an internal
  error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (CapacityError, DomainError, InputError, InternalError,
                     NumericalError)
from .limits import desk_cap

TAU_DEC = 1e-9  # decomposition / polytope tolerance

MATROID_KINDS = ("uniform", "partition", "graphic", "explicit")


def mask_of(n: int, elements) -> int:
    mask = 0
    for e in elements:
        e = int(e)
        if e < 0 or e >= n:
            raise InputError(f"element id {e} out of range for ground set of size {n}")
        mask |= 1 << e
    return mask


def bits_of(mask: int):
    e = 0
    while mask:
        if mask & 1:
            yield e
        mask >>= 1
        e += 1


def popcount(mask: int) -> int:
    return bin(mask).count("1")


class Matroid:
    """One of four matroid kinds behind a single independence oracle."""

    def __init__(self, kind: str, n: int, **params):
        if kind not in MATROID_KINDS:
            raise InputError(f"unknown matroid kind {kind!r}")
        if n < 0:
            raise InputError(f"ground set size must be nonnegative, got {n}")
        self.kind = kind
        self.n = n
        self._table = None
        if kind == "uniform":
            r = int(params["r"])
            if r < 0:
                raise InputError(f"uniform matroid rank must be nonnegative, got {r}")
            self.r = r
        elif kind == "partition":
            blocks = [sorted(int(e) for e in blk) for blk in params["blocks"]]
            caps = [int(c) for c in params["caps"]]
            if len(blocks) != len(caps):
                raise InputError("partition matroid needs one cap per block")
            if any(c < 0 for c in caps):
                raise InputError("partition caps must be nonnegative")
            block_of = np.full(n, -1, dtype=np.int64)
            for bi, blk in enumerate(blocks):
                for e in blk:
                    if e < 0 or e >= n:
                        raise InputError(f"block element {e} out of range")
                    if block_of[e] != -1:
                        raise InputError(f"element {e} appears in two blocks")
                    block_of[e] = bi
            if (block_of == -1).any():
                missing = [e for e in range(n) if block_of[e] == -1]
                raise InputError(f"elements {missing} belong to no block")
            self.blocks = blocks
            self.caps = caps
            self.block_of = block_of
        elif kind == "graphic":
            vertices = int(params["vertices"])
            edges = [(int(u), int(v)) for u, v in params["edges"]]
            if len(edges) != n:
                raise InputError("graphic matroid ground size must equal the edge count")
            for u, v in edges:
                if not (0 <= u < vertices and 0 <= v < vertices):
                    raise InputError(f"edge ({u},{v}) has an endpoint outside [0,{vertices})")
            self.vertices = vertices
            self.edges = edges
        else:  # explicit
            sets = params["independent"]
            masks = set()
            for s in sets:
                masks.add(mask_of(n, s))
            if 0 not in masks:
                raise InputError("explicit matroid must contain the empty set")
            for m in masks:
                for e in bits_of(m):
                    if (m & ~(1 << e)) not in masks:
                        raise InputError(
                            "explicit independent sets are not downward closed "
                            f"(missing subset of {sorted(bits_of(m))})")
            _check_exchange_axiom(n, masks)
            self.indep_masks = frozenset(masks)

    # -- constructors ------------------------------------------------------

    @classmethod
    def uniform(cls, n: int, r: int) -> "Matroid":
        return cls("uniform", n, r=r)

    @classmethod
    def partition(cls, blocks, caps, n: int | None = None) -> "Matroid":
        if n is None:
            n = sum(len(b) for b in blocks)
        return cls("partition", n, blocks=blocks, caps=caps)

    @classmethod
    def graphic(cls, vertices: int, edges) -> "Matroid":
        return cls("graphic", len(edges), vertices=vertices, edges=edges)

    @classmethod
    def explicit(cls, independent, n: int | None = None) -> "Matroid":
        if n is None:
            n = 1 + max((max(s) for s in independent if len(s)), default=-1)
        return cls("explicit", n, independent=independent)

    # -- independence oracle ------------------------------------------------

    def is_independent(self, subset) -> bool:
        return self.is_independent_mask(mask_of(self.n, subset))

    def is_independent_mask(self, mask: int) -> bool:
        if self._table is not None:
            return bool(self._table[mask])
        if self.kind == "uniform":
            return popcount(mask) <= self.r
        if self.kind == "partition":
            counts = [0] * len(self.caps)
            for e in bits_of(mask):
                bi = self.block_of[e]
                counts[bi] += 1
                if counts[bi] > self.caps[bi]:
                    return False
            return True
        if self.kind == "graphic":
            parent = list(range(self.vertices))

            def find(a):
                while parent[a] != a:
                    parent[a] = parent[parent[a]]
                    a = parent[a]
                return a

            for e in bits_of(mask):
                u, v = self.edges[e]
                ru, rv = find(u), find(v)
                if ru == rv:
                    return False
                parent[ru] = rv
            return True
        return mask in self.indep_masks

    def independence_table(self) -> np.ndarray:
        """uint8 table over all 2^n subsets; requires n <= desk cap."""
        if self._table is None:
            if self.n > desk_cap():
                raise CapacityError(
                    f"independence table needs 2^{self.n} entries; desk cap is {desk_cap()}")
            table = np.zeros(1 << self.n, dtype=np.uint8)
            for mask in range(1 << self.n):
                table[mask] = 1 if self.is_independent_mask(mask) else 0
            self._table = table
        return self._table

    def rank(self, subset) -> int:
        return self.rank_mask(mask_of(self.n, subset))

    def rank_mask(self, mask: int) -> int:
        """Greedy rank; exact because the oracle is a matroid."""
        cur = 0
        r = 0
        for e in bits_of(mask):
            cand = cur | (1 << e)
            if self.is_independent_mask(cand):
                cur = cand
                r += 1
        return r

    # -- serialization -------------------------------------------------------

    def to_json(self) -> dict:
        if self.kind == "uniform":
            return {"kind": "uniform", "r": self.r, "n": self.n}
        if self.kind == "partition":
            return {"kind": "partition", "blocks": [list(b) for b in self.blocks],
                    "caps": list(self.caps)}
        if self.kind == "graphic":
            return {"kind": "graphic", "vertices": self.vertices,
                    "edges": [list(e) for e in self.edges]}
        return {"kind": "explicit", "n": self.n,
                "independent": sorted([sorted(bits_of(m)) for m in self.indep_masks],
                                      key=lambda s: (len(s), s))}

    @classmethod
    def from_json(cls, obj: dict) -> "Matroid":
        try:
            kind = obj["kind"]
        except KeyError:
            raise InputError("matroid object is missing the 'kind' key") from None
        try:
            if kind == "uniform":
                n = obj.get("n")
                if n is None:
                    raise InputError("uniform matroid needs an 'n' key")
                return cls.uniform(int(n), int(obj["r"]))
            if kind == "partition":
                return cls.partition(obj["blocks"], obj["caps"])
            if kind == "graphic":
                return cls.graphic(int(obj["vertices"]), obj["edges"])
            if kind == "explicit":
                n = obj.get("n")
                return cls.explicit(obj["independent"], n=None if n is None else int(n))
        except KeyError as exc:
            raise InputError(f"matroid object is missing the {exc.args[0]!r} key") from None
        raise InputError(f"unknown matroid kind {kind!r}")

    def __repr__(self):
        return f"Matroid(kind={self.kind!r}, n={self.n})"


def _check_exchange_axiom(n: int, masks: set[int]) -> None:
    by_size: dict[int, list[int]] = {}
    for m in masks:
        by_size.setdefault(popcount(m), []).append(m)
    for size, smaller in sorted(by_size.items()):
        larger = by_size.get(size + 1, [])
        for a in smaller:
            for b in larger:
                extra = b & ~a
                if not any((a | (1 << e)) in masks for e in bits_of(extra)):
                    raise InputError(
                        "explicit independent sets violate the exchange axiom "
                        f"(between {sorted(bits_of(a))} and {sorted(bits_of(b))})")


# -- polytope membership -----------------------------------------------------

def in_polytope(m: Matroid, x, tol: float = TAU_DEC) -> bool:
    """Is x in the matroid polytope {x >= 0 : x(A) <= rank(A) for all A}?

    Enumerates subsets; subsets of the support suffice because zero
    coordinates never tighten a constraint.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (m.n,):
        raise InputError(f"point has shape {x.shape}, expected ({m.n},)")
    if m.n > desk_cap():
        raise CapacityError(f"polytope membership enumerates 2^{m.n} subsets; cap is {desk_cap()}")
    if (x < -tol).any():
        return False
    table = m.independence_table()
    supp = [e for e in range(m.n) if x[e] > 0.0]
    sup_mask = 0
    for e in supp:
        sup_mask |= 1 << e
    sub = sup_mask
    while sub:
        total = 0.0
        r = 0
        cur = 0
        rest = sub
        while rest:
            low = rest & (-rest)
            e = low.bit_length() - 1
            total += x[e]
            if table[cur | low]:
                cur |= low
                r += 1
            rest ^= low
        if total > r + tol:
            return False
        sub = (sub - 1) & sup_mask
    return True


# -- support decomposition ----------------------------------------------------

@dataclass
class SupportDecomposition:
    """x = sum_j betas[j] * 1[masks[j]] with independent sets and sum betas = 1
    (an all-zero mask entry absorbs any leftover mass)."""

    n: int
    masks: np.ndarray   # int64
    betas: np.ndarray   # float64

    @property
    def sets(self) -> list[frozenset]:
        return [frozenset(bits_of(int(m))) for m in self.masks]

    def coverage(self, e: int) -> float:
        """sum of betas over entries containing e; equals x_e up to tolerance."""
        bit = 1 << e
        return float(sum(b for m, b in zip(self.masks, self.betas) if int(m) & bit))

    def eligible(self, e: int) -> list[int]:
        bit = 1 << e
        return [j for j, m in enumerate(self.masks) if int(m) & bit]

    def reconstruct(self) -> np.ndarray:
        x = np.zeros(self.n)
        for m, b in zip(self.masks, self.betas):
            for e in bits_of(int(m)):
                x[e] += b
        return x


def decompose_support(m: Matroid, x, tol: float = TAU_DEC) -> SupportDecomposition:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (m.n,):
        raise InputError(f"point has shape {x.shape}, expected ({m.n},)")
    if not in_polytope(m, x, tol):
        raise DomainError("point is outside the matroid polytope")
    table = m.independence_table()
    n = m.n
    residual = np.maximum(x, 0.0)
    m_rem = 1.0
    masks: list[int] = []
    betas: list[float] = []
    max_iters = max(n * n, 1)
    for _ in range(max_iters):
        supp = [e for e in range(n) if residual[e] > tol]
        if not supp:
            break
        order = sorted(supp, key=lambda e: (-residual[e], e))
        bmask = 0
        for e in order:
            cand = bmask | (1 << e)
            if table[cand]:
                bmask = cand
        sup_mask = 0
        for e in supp:
            sup_mask |= 1 << e
        beta = min(m_rem, min(residual[e] for e in bits_of(bmask)))
        sub = sup_mask
        while sub:
            total = 0.0
            r = 0
            cur = 0
            rest = sub
            while rest:
                low = rest & (-rest)
                e = low.bit_length() - 1
                total += residual[e]
                if table[cur | low]:
                    cur |= low
                    r += 1
                rest ^= low
            denom = r - popcount(sub & bmask)
            if denom > 0:
                bound = (m_rem * r - total) / denom
                if bound < beta:
                    beta = max(bound, 0.0)
            sub = (sub - 1) & sup_mask
        if beta <= 1e-15:
            raise NumericalError(
                f"support decomposition stalled with residual {residual.tolist()}")
        masks.append(bmask)
        betas.append(beta)
        for e in bits_of(bmask):
            residual[e] = max(residual[e] - beta, 0.0)
        m_rem -= beta
    else:
        if any(residual[e] > tol for e in range(n)):
            raise NumericalError(
                f"support decomposition made no progress after {max_iters} iterations; "
                f"residual {residual.tolist()}")
    if m_rem > 1e-12:
        masks.append(0)
        betas.append(m_rem)
    deco = SupportDecomposition(n=n, masks=np.array(masks, dtype=np.int64),
                                betas=np.array(betas, dtype=np.float64))
    if len(masks) > n * n + 1:
        raise InternalError(f"decomposition produced {len(masks)} entries (> n^2+1)")
    err = np.abs(deco.reconstruct() - np.maximum(x, 0.0)).max() if n else 0.0
    if err > 1e-9:
        raise NumericalError(f"decomposition identity off by {err:.3e}")
    return deco


# -- exchange mappings ---------------------------------------------------------

@dataclass
class ExchangeMapping:
    """phi: src -> dst + {bottom}; images[e] is an element of dst or None."""

    src: frozenset
    dst: frozenset
    images: dict[int, int | None]

    def __call__(self, e: int) -> int | None:
        try:
            return self.images[e]
        except KeyError:
            raise InputError(f"element {e} is not in the mapping source") from None


def _kuhn_match(need: list[int], adj: dict[int, list[int]]) -> dict[int, int] | None:
    """Deterministic maximum matching attempt covering `need`.

    Iterative augmenting-path search; the compiled kernels mirror this code
    path exactly (same iteration order) so both lanes build the same maps.
    Returns element -> target, or None if someone in `need` stays unmatched.
    """
    match_of: dict[int, int] = {}  # target -> element
    for e0 in need:
        visited: set[int] = set()
        # frames: (element, next adjacency index, target we arrived through)
        stack: list[list[int]] = [[e0, 0, -1]]
        augmented = False
        while stack:
            e, idx, _via = stack[-1]
            adjl = adj[e]
            if idx >= len(adjl):
                stack.pop()
                continue
            stack[-1][1] = idx + 1
            f = adjl[idx]
            if f in visited:
                continue
            visited.add(f)
            cur = match_of.get(f, -1)
            if cur == -1:
                match_of[f] = e
                for j in range(len(stack) - 1, 0, -1):
                    match_of[stack[j][2]] = stack[j - 1][0]
                augmented = True
                break
            stack.append([cur, 0, f])
        if not augmented:
            return None
    return {e: f for f, e in match_of.items()}


def build_exchange_mapping(m: Matroid, a, b) -> ExchangeMapping:
    amask = mask_of(m.n, a)
    bmask = mask_of(m.n, b)
    if not m.is_independent_mask(amask):
        raise InputError("source set is dependent")
    if not m.is_independent_mask(bmask):
        raise InputError("target set is dependent")
    images: dict[int, int | None] = {e: e for e in bits_of(amask & bmask)}
    need: list[int] = []
    for e in bits_of(amask & ~bmask):
        if m.is_independent_mask(bmask | (1 << e)):
            images[e] = None
        else:
            need.append(e)
    targets = [f for f in bits_of(bmask & ~amask)]
    adj = {e: [f for f in targets
               if m.is_independent_mask((bmask & ~(1 << f)) | (1 << e))]
           for e in need}
    matching = _kuhn_match(need, adj)
    if matching is None:
        raise InternalError(
            f"no exchange mapping covers {sorted(bits_of(amask))} into "
            f"{sorted(bits_of(bmask))}; the exchange lemma guarantees one")
    images.update(matching)
    return ExchangeMapping(src=frozenset(bits_of(amask)), dst=frozenset(bits_of(bmask)),
                           images=images)
