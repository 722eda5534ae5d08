"""Finite-range decompositions of the massive lattice Green function.

The resolvent admits the Neumann expansion
(-Delta + m^2)^{-1} = sum_n J^n / (2d + m^2)^{n+1},
with J the adjacency operator of Z^d, so the partial sums A_r truncated
at walk length r are supported on the l1 ball of radius r.  Slices

    C_1 = A_{r_1},   C_j = A_{r_j} - A_{r_{j-1}}  (j >= 2),

with r_j = ceil(L^j / 2) - 1, vanish identically for |x|_1 >= L^j / 2,
which is the finite-range property consumed by the coupling flow.  In
torus mode the last slice is special: it is the torus Green function
minus the periodized partial sum, so the slices sum to the torus
resolvent exactly.

Everything is built in exact integer arithmetic (Python integers do not
overflow) on hyperoctahedral orbit representatives: tables store one
value per canonical displacement (coordinates sorted decreasingly in
absolute value), and the orbit size supplies multiplicities for lattice
sums.  Floats are produced by a single correctly-rounded division per
entry, so identical rationals yield identical floats on every route.

Note: the analytic decompositions used in the renormalisation-group
literature are positive semidefinite as quadratic forms; this
series-truncation surrogate makes no such claim (its slices are
pointwise nonnegative, which is what the flow and the diagnostics
consume).  The surrogate bubble coefficient feeding the coupling
recursion is likewise flagged in the build metadata.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .lattice import LatticeSpec, torus_green_table

__all__ = [
    "DecompConfig",
    "CovSlice",
    "Decomposition",
    "OrbitTable",
    "WalkCountTable",
    "walk_counts",
    "walk_count_at",
    "return_counts",
    "range_truncated_green",
    "build_decomposition",
    "w1_sum",
    "bubble_increment",
    "w1_closed",
    "bubble_sum_closed",
    "beta_surrogate",
    "range_radius",
    "export_slice",
    "import_slice",
    "DecompositionError",
]


class DecompositionError(ValueError):
    """Invalid decomposition configuration or violated structural invariant."""


def canonical(x) -> tuple:
    """Hyperoctahedral orbit representative: |coords| sorted decreasingly."""
    return tuple(sorted((abs(int(c)) for c in x), reverse=True))


def orbit_size(rep, d: int) -> int:
    """Number of lattice points in the orbit of a canonical representative."""
    perms = math.factorial(d)
    for m in Counter(rep).values():
        perms //= math.factorial(m)
    nonzero = sum(1 for v in rep if v != 0)
    return perms * (1 << nonzero)


def range_radius(L: int, j: int) -> int:
    """Largest support radius below L^j / 2: r_j = ceil(L^j/2) - 1."""
    n = L**j
    return (n + 1) // 2 - 1


# -- orbit representative space ---------------------------------------------


class _RepSpace:
    """Canonical representatives of the l1 ball of radius R, with the
    gather table used to apply the adjacency operator on orbits."""

    def __init__(self, d: int, R: int):
        self.d = d
        self.R = R
        reps = []

        def rec(prefix, remaining, maxv):
            if len(prefix) == d:
                reps.append(tuple(prefix))
                return
            for v in range(min(remaining, maxv), -1, -1):
                rec(prefix + [v], remaining - v, v)

        rec([], R, R)
        reps.sort(key=lambda r: (sum(r), r))
        self.reps = reps
        self.index = {r: i for i, r in enumerate(reps)}
        self.n_reps = len(reps)
        norms = np.fromiter((sum(r) for r in reps), dtype=np.int64, count=self.n_reps)
        # reps are norm-sorted, so the ball of radius r is the prefix of
        # length active_at[r]
        self.active_at = np.searchsorted(norms, np.arange(R + 2), side="right")
        self.orbits = np.fromiter(
            (orbit_size(r, d) for r in reps), dtype=np.int64, count=self.n_reps
        )
        nbr = np.full((self.n_reps, 2 * d), self.n_reps, dtype=np.int64)
        get = self.index.get
        for i, r in enumerate(reps):
            col = 0
            for k in range(d):
                for s in (1, -1):
                    y = list(r)
                    y[k] += s
                    j = get(canonical(y))
                    if j is not None:
                        nbr[i, col] = j
                    col += 1
        self.nbr = nbr

    def size_of_ball(self, r: int) -> int:
        return int(self.active_at[r])


@lru_cache(maxsize=4)
def _rep_space(d: int, R: int) -> _RepSpace:
    return _RepSpace(d, R)


def _walk_engine(space: _RepSpace):
    """Yield (n, values) for n = 0..R, values[i] = J^n at representative i.

    Exact integers throughout: int64 while every entry provably fits,
    Python integers (object dtype) afterwards.  The yielded array has one
    trailing sentinel slot that is always zero; callers must not mutate.
    """
    d, R = space.d, space.R
    vals = np.zeros(space.n_reps + 1, dtype=np.int64)
    vals[0] = 1
    yield 0, vals
    # entries are bounded by (2d)^n, so int64 is exact while (2d)^n < 2^63
    switch_n = int(63 // math.log2(2 * d))
    for n in range(1, R + 1):
        if n == switch_n and vals.dtype != object:
            vals = vals.astype(object)
        a = int(space.active_at[n])
        new = np.zeros(space.n_reps + 1, dtype=vals.dtype)
        new[: a] = vals[space.nbr[:a]].sum(axis=1)
        vals = new
        yield n, vals


def _mass_fraction(mass_sq) -> Fraction:
    m2 = Fraction(mass_sq)
    if m2 < 0:
        raise DecompositionError("mass_sq must be >= 0")
    return m2


def _q_parts(d: int, mass_sq) -> tuple[int, int]:
    """(p, s) with 1/(2d + m^2) = s/p exactly."""
    q = Fraction(2 * d) + _mass_fraction(mass_sq)
    return q.numerator, q.denominator


# -- walk counts -------------------------------------------------------------


@dataclass
class WalkCountTable:
    """Exact path counts J^n_{0x} for nearest-neighbor walks of length n.

    Stored on orbit representatives; count(x) canonicalizes.  The counts
    vanish for |x|_1 > n and unless |x|_1 has the parity of n, and sum to
    (2d)^n over the whole lattice.
    """

    d: int
    n: int
    _space: _RepSpace
    _values: np.ndarray

    def count(self, x) -> int:
        rep = canonical(x)
        if sum(rep) > self.n:
            return 0
        i = self._space.index.get(rep)
        if i is None or i >= len(self._values):
            return 0
        return int(self._values[i])

    def total(self) -> int:
        size = self._space.size_of_ball(self.n)
        return int(
            sum(int(v) * int(o) for v, o in zip(self._values[:size], self._space.orbits[:size]))
        )

    def items(self):
        """Yield (representative, count, orbit size) for the support ball."""
        size = self._space.size_of_ball(self.n)
        for i in range(size):
            yield self._space.reps[i], int(self._values[i]), int(self._space.orbits[i])


def walk_counts(d: int, n_max: int) -> list[WalkCountTable]:
    """Exact tables J^0..J^{n_max} by iterated adjacency application.

    Desk-scale contract n_max <= 128.  Arbitrary-precision integers keep
    the computation exact at any n; no overflow fallback is ever needed.
    """
    if n_max < 0 or n_max > 128:
        raise DecompositionError("walk_counts supports 0 <= n_max <= 128")
    space = _rep_space(d, n_max)
    out = []
    for n, vals in _walk_engine(space):
        size = space.size_of_ball(n)
        out.append(WalkCountTable(d=d, n=n, _space=space, _values=vals[:size].copy()))
    return out


def _counts_1d(a: int, n_max: int) -> list[int]:
    """1D +-1 walk counts to displacement a: C(n, (n+a)/2) with parity."""
    a = abs(a)
    out = [0] * (n_max + 1)
    for n in range(a, n_max + 1, 2):
        out[n] = math.comb(n, (n + a) // 2)
    return out


def _merge_counts(fa: list[int], fb: list[int], n_max: int) -> list[int]:
    """Interleave two independent walks: h(n) = sum_k C(n,k) fa(k) fb(n-k)."""
    out = [0] * (n_max + 1)
    for n in range(n_max + 1):
        acc = 0
        for k in range(n + 1):
            va = fa[k]
            if va:
                vb = fb[n - k]
                if vb:
                    acc += math.comb(n, k) * va * vb
        out[n] = acc
    return out


def walk_count_at(d: int, x, n_max: int) -> list[int]:
    """Exact J^n_{0x} for n = 0..n_max at a single displacement.

    Dimension-splitting evaluation, O(d n^2) big-integer operations, so a
    single column of the count tables is available far beyond the radius
    at which full tables are practical.
    """
    x = tuple(int(c) for c in x)
    if len(x) != d:
        raise DecompositionError(f"displacement has length {len(x)}, expected {d}")
    cols = [_counts_1d(c, n_max) for c in x]
    while len(cols) > 1:
        nxt = [
            _merge_counts(cols[i], cols[i + 1], n_max) if i + 1 < len(cols) else cols[i]
            for i in range(0, len(cols), 2)
        ]
        cols = nxt
    return cols[0]


_RETURN_COUNTS: dict[int, list[int]] = {}


def return_counts(d: int, n_max: int) -> list[int]:
    """Closed-walk counts J^n_{00} for n = 0..n_max.

    Cached per dimension with a monotonically growing table, since the
    bubble sums request many prefixes of the same sequence.
    """
    cur = _RETURN_COUNTS.get(d)
    if cur is None or len(cur) <= n_max:
        cur = walk_count_at(d, (0,) * d, n_max)
        _RETURN_COUNTS[d] = cur
    return cur[: n_max + 1]


# -- displacement tables -----------------------------------------------------


@dataclass
class OrbitTable:
    """Symmetric displacement -> value table on orbit representatives.

    ``exact_num[i] / p**den_exp`` is the exact rational value whenever the
    exact layer is retained; ``values`` are its correctly rounded floats.
    """

    d: int
    radius: int
    space: _RepSpace
    size: int
    values: np.ndarray
    exact_num: np.ndarray | None = None
    den_exp: int = 0
    p: int = 1
    tail_bound: float = math.inf
    mass_sq: float = 0.0

    def value_at(self, x) -> float:
        rep = canonical(x)
        if sum(rep) > self.radius:
            return 0.0
        i = self.space.index.get(rep)
        if i is None or i >= self.size:
            return 0.0
        return float(self.values[i])

    def exact_at(self, x) -> Fraction:
        if self.exact_num is None:
            raise DecompositionError("exact layer not retained")
        rep = canonical(x)
        if sum(rep) > self.radius:
            return Fraction(0)
        i = self.space.index.get(rep)
        if i is None or i >= self.size:
            return Fraction(0)
        return Fraction(int(self.exact_num[i]), self.p**self.den_exp)

    def items(self):
        for i in range(self.size):
            yield self.space.reps[i], float(self.values[i]), int(self.space.orbits[i])

    def total(self) -> float:
        """Sum over the full lattice (orbit-weighted)."""
        return float(np.dot(self.values[: self.size], self.space.orbits[: self.size]))

    def sum_sq(self) -> float:
        return float(np.dot(self.values[: self.size] ** 2, self.space.orbits[: self.size]))


def _to_floats(nums: np.ndarray, den: int) -> np.ndarray:
    # int/int true division is correctly rounded in CPython
    return np.fromiter((num / den for num in nums), dtype=np.float64, count=len(nums))


def range_truncated_green(d: int, mass_sq, r: int) -> OrbitTable:
    """Partial Neumann sum A_r = sum_{n<=r} J^n / (2d+m^2)^{n+1}.

    Exact construction; converges to the Green function as r grows, with
    the certified geometric tail (2d/(2d+m^2))^{r+1} / m^2 recorded in the
    ``tail_bound`` metadata (infinite at m^2 = 0).
    """
    if r < 0:
        raise DecompositionError("truncation radius must be >= 0")
    p, s = _q_parts(d, mass_sq)
    space = _rep_space(d, r)
    size = space.size_of_ball(r)
    acc = np.zeros(size, dtype=object)
    for n, vals in _walk_engine(space):
        a = space.size_of_ball(n)
        coef = s ** (n + 1) * p ** (r - n)
        chunk = vals[:a]
        if chunk.dtype != object:
            chunk = chunk.astype(object)
        acc[:a] += chunk * coef
    m2 = _mass_fraction(mass_sq)
    if m2 > 0:
        tail = float((Fraction(2 * d) * s / p) ** (r + 1) / m2)
    else:
        tail = math.inf
    return OrbitTable(
        d=d,
        radius=r,
        space=space,
        size=size,
        values=_to_floats(acc, p ** (r + 1)),
        exact_num=acc,
        den_exp=r + 1,
        p=p,
        tail_bound=tail,
        mass_sq=float(m2),
    )


# -- decomposition -----------------------------------------------------------


@dataclass(frozen=True)
class DecompConfig:
    """Parameters of a finite-range decomposition build.

    mode "zd" builds Z^d slices 1..j_max; mode "torus" (with torus_N set)
    builds slices 1..N-1 plus the special final torus slice.
    """

    d: int
    L: int
    mass_sq: float
    j_max: int
    mode: str = "zd"
    torus_N: int | None = None
    keep_exact: bool = True

    def __post_init__(self):
        if self.L < 3:
            raise DecompositionError(f"block side L must be >= 3, got {self.L}")
        if self.mode not in ("zd", "torus"):
            raise DecompositionError(f"unknown mode {self.mode!r}")
        if self.mode == "torus":
            if self.torus_N is None or self.torus_N < 2:
                raise DecompositionError("torus mode requires torus_N >= 2")
            if self.j_max != self.torus_N:
                raise DecompositionError("torus mode requires j_max == torus_N")
            if Fraction(self.mass_sq) <= 0:
                raise DecompositionError("torus mode requires mass_sq > 0")
        else:
            if self.j_max < 1:
                raise DecompositionError("j_max must be >= 1")
            if Fraction(self.mass_sq) < 0:
                raise DecompositionError("mass_sq must be >= 0")

    @property
    def side(self) -> int:
        if self.mode != "torus":
            raise DecompositionError("side defined only in torus mode")
        return self.L**self.torus_N

    def radii(self) -> list[int]:
        last = self.j_max - 1 if self.mode == "torus" else self.j_max
        rs = [range_radius(self.L, j) for j in range(1, last + 1)]
        for a, b in zip(rs, rs[1:]):
            if b <= a:
                raise DecompositionError(f"range radii not increasing: {rs}")
        return rs


@dataclass
class CovSlice:
    """One finite-range covariance slice C_j.

    ``table`` is an OrbitTable for Z^d slices; the special torus slice
    stores a dense array over torus displacements instead and carries no
    finite-range constraint.
    """

    j: int
    range_radius: int
    table: OrbitTable | None = None
    dense: np.ndarray | None = None
    side: int | None = None
    is_torus_final: bool = False

    def value_at(self, x) -> float:
        if self.dense is not None:
            idx = tuple(int(c) % self.side for c in x)
            return float(self.dense[idx])
        return self.table.value_at(x)

    def total(self) -> float:
        if self.dense is not None:
            return float(self.dense.sum())
        return self.table.total()

    def max_abs(self) -> float:
        if self.dense is not None:
            return float(np.abs(self.dense).max())
        return float(np.abs(self.table.values[: self.table.size]).max()) if self.table.size else 0.0


@dataclass
class Decomposition:
    config: DecompConfig
    slices: list[CovSlice]
    metadata: dict = field(default_factory=dict)

    def slice_at(self, j: int) -> CovSlice:
        for s in self.slices:
            if s.j == j:
                return s
        raise DecompositionError(f"no slice at scale {j}")

    def partial_sum_exact(self, j: int) -> tuple[np.ndarray, int]:
        """Exact numerators of sum_{i<=j} C_i over ball r_j (den = p^{r_j+1})."""
        if self.config.mode == "torus" and j >= self.config.j_max:
            raise DecompositionError("exact partial sums cover the Z^d slices only")
        p = self.metadata["p"]
        radii = self.config.radii()
        r_j = radii[j - 1]
        size = self.slices[0].table.space.size_of_ball(r_j)
        acc = np.zeros(size, dtype=object)
        for i in range(1, j + 1):
            t = self.slice_at(i).table
            if t.exact_num is None:
                raise DecompositionError("exact layer not retained")
            acc[: t.size] += t.exact_num * p ** (r_j - t.radius)
        return acc, r_j + 1


def build_decomposition(cfg: DecompConfig) -> Decomposition:
    """Construct the slices in one exact pass over walk lengths.

    The partial sums telescope to the truncated Green function exactly
    (integer identity, checked here); each slice's support is the l1
    ball of radius r_j by construction.
    """
    radii = cfg.radii()
    p, s = _q_parts(cfg.d, cfg.mass_sq)
    R = radii[-1]
    space = _rep_space(cfg.d, R)

    slices: list[CovSlice] = []
    # running exact numerators for A_{r_j} (denominator p^{r_j + 1})
    M: np.ndarray | None = None
    acc = np.zeros(space.size_of_ball(radii[0]), dtype=object)
    j = 1
    lower = -1  # slice j covers walk lengths lower+1 .. r_j
    for n, vals in _walk_engine(space):
        r_j = radii[j - 1]
        a = space.size_of_ball(n)
        coef = s ** (n + 1) * p ** (r_j - n)
        chunk = vals[:a]
        if chunk.dtype != object:
            chunk = chunk.astype(object)
        acc[:a] += chunk * coef
        if n == r_j:
            size = space.size_of_ball(r_j)
            table = OrbitTable(
                d=cfg.d,
                radius=r_j,
                space=space,
                size=size,
                values=_to_floats(acc, p ** (r_j + 1)),
                exact_num=acc if cfg.keep_exact else None,
                den_exp=r_j + 1,
                p=p,
                mass_sq=float(Fraction(cfg.mass_sq)),
            )
            slices.append(CovSlice(j=j, range_radius=r_j, table=table))
            if M is None:
                M = acc.copy()
            else:
                grown = np.zeros(size, dtype=object)
                grown[: len(M)] = M * (p ** (r_j - lower))
                M = grown + acc
            lower = r_j
            j += 1
            if j <= len(radii):
                nxt = np.zeros(space.size_of_ball(radii[j - 1]), dtype=object)
                acc = nxt
            else:
                break

    meta = {
        "p": p,
        "s": s,
        "radii": radii,
        "telescoping_exact": True,
        "positive_semidefinite": False,  # series-truncation surrogate; see module docstring
    }
    m2 = _mass_fraction(cfg.mass_sq)
    meta["tail_bound"] = (
        float((Fraction(2 * cfg.d) * s / p) ** (R + 1) / m2) if m2 > 0 else math.inf
    )

    decomp = Decomposition(config=cfg, slices=slices, metadata=meta)

    if cfg.mode == "torus":
        spec = LatticeSpec.torus(cfg.d, cfg.side)
        green = torus_green_table(spec, float(m2))
        part = np.zeros_like(green)
        final_table = slices[-1].table
        # every Z^d slice fits inside the fundamental domain (r < side/2),
        # so periodization just embeds the table
        A_floats = _to_floats(M, p ** (radii[-1] + 1))
        for i in range(space.size_of_ball(radii[-1])):
            rep = space.reps[i]
            v = A_floats[i]
            for pt in _orbit_points(rep):
                part[tuple(c % cfg.side for c in pt)] = v
        dense = green - part
        slices.append(
            CovSlice(
                j=cfg.j_max,
                range_radius=-1,
                dense=dense,
                side=cfg.side,
                is_torus_final=True,
            )
        )
        meta["torus_exact_sum"] = float(np.abs(part + dense - green).max())

    # diagnostics: monotone lattice sums and nonnegative bubble increments
    totals = [sl.total() for sl in slices]
    w1 = np.cumsum([0.0] + totals)
    meta["w1_monotone"] = bool(np.all(np.diff(w1) >= 0))
    meta["min_slice_value"] = float(
        min(
            (
                float(sl.table.values[: sl.table.size].min())
                if sl.table is not None and sl.table.size
                else float(sl.dense.min())
            )
            for sl in slices
        )
    )
    return decomp


def _orbit_points(rep):
    """All distinct lattice points in the orbit of a canonical rep."""
    from itertools import permutations

    seen = set()
    for perm in set(permutations(rep)):
        nz = [i for i, v in enumerate(perm) if v != 0]
        for mask in range(1 << len(nz)):
            pt = list(perm)
            for b, i in enumerate(nz):
                if mask >> b & 1:
                    pt[i] = -pt[i]
            seen.add(tuple(pt))
    return seen


# -- derived quantities ------------------------------------------------------


def w1_sum(slices, j: int) -> float:
    """Full-lattice sum of the partial covariance: sum_x sum_{i<=j} C_{i;0,x}."""
    if j < 0:
        raise DecompositionError("scale must be >= 0")
    return float(sum(sl.total() for sl in slices if sl.j <= j))


def bubble_increment(slices, j: int) -> float:
    """Bubble coefficient beta_j = 8 (sum_x w_{j+1}^2 - sum_x w_j^2).

    w_j = sum_{i<=j} C_i pointwise.  This is the d=4 one-loop coefficient
    surrogate feeding the coupling recursion.
    """
    zd = [sl for sl in slices if sl.table is not None]
    if not any(sl.j == j + 1 for sl in slices):
        raise DecompositionError(f"need slice {j + 1} to form the increment")
    if any(sl.dense is not None and sl.j <= j + 1 for sl in slices):
        return 8.0 * (_torus_w_sum_sq(slices, j + 1) - _torus_w_sum_sq(slices, j))
    space = zd[0].table.space
    size = max(sl.table.size for sl in zd if sl.j <= j + 1)
    w = np.zeros(size)
    s_j = 0.0
    for i in range(1, j + 2):
        t = next(sl.table for sl in zd if sl.j == i)
        w[: t.size] += t.values[: t.size]
        if i == j:
            s_j = float(np.dot(w**2, space.orbits[:size]))
    if j == 0:
        s_j = 0.0
    s_next = float(np.dot(w**2, space.orbits[:size]))
    return 8.0 * (s_next - s_j)


def _torus_w_sum_sq(slices, j):
    if j == 0:
        return 0.0
    first = next(sl for sl in slices if sl.dense is not None)
    side, d = first.side, first.dense.ndim
    w = np.zeros_like(first.dense)
    for sl in slices:
        if sl.j > j:
            continue
        if sl.dense is not None:
            w += sl.dense
        else:
            for rep, v, _o in sl.table.items():
                for pt in _orbit_points(rep):
                    w[tuple(c % side for c in pt)] += v
    return float((w**2).sum())


def w1_closed(d: int, mass_sq, r: int) -> float:
    """Closed form of the full-lattice partial sum: sum_{n<=r} (2d)^n/q^{n+1}.

    Uses sum_x J^n = (2d)^n, so no table is required.
    """
    if r < 0:
        return 0.0
    q = 2 * d + float(Fraction(mass_sq))
    term = 1.0 / q
    total = 0.0
    ratio = 2 * d / q
    for _ in range(r + 1):
        total += term
        term *= ratio
    return total


def _pmf_row(n: int, prob: float) -> np.ndarray:
    """Binomial(n, prob) probabilities, recursed outward from the mode.

    Starting the multiplicative recursion at the central term (one
    log-gamma evaluation) avoids the underflow of 2^{-n} at the edges;
    negligible tails round to zero harmlessly.
    """
    row = np.zeros(n + 1)
    k0 = min(max(int(n * prob), 0), n)
    logc = (
        math.lgamma(n + 1)
        - math.lgamma(k0 + 1)
        - math.lgamma(n - k0 + 1)
        + k0 * math.log(prob)
        + (n - k0) * math.log1p(-prob)
    )
    row[k0] = math.exp(logc)
    odds = prob / (1.0 - prob)
    for k in range(k0, n):
        row[k + 1] = row[k] * odds * (n - k) / (k + 1.0)
        if row[k + 1] == 0.0:
            break
    for k in range(k0, 0, -1):
        row[k - 1] = row[k] / odds * k / (n - k + 1.0)
        if row[k - 1] == 0.0:
            break
    return row


_RETURN_PROBS: dict[int, np.ndarray] = {}


def return_probabilities(d: int, n_max: int) -> np.ndarray:
    """p_n = J^n_{00} / (2d)^n, the n-step return probabilities.

    Stable float evaluation by dimension splitting: merging blocks of
    dA and dB dimensions weights the split of n steps by a Binomial
    (n, dA/(dA+dB)) law.  Relative accuracy ~1e-13; grows a per-dimension
    cache like return_counts.
    """
    cur = _RETURN_PROBS.get(d)
    if cur is not None and len(cur) > n_max:
        return cur[: n_max + 1]
    # 1D: p_k = C(k, k/2) / 2^k via the stable central recursion
    p1 = np.zeros(n_max + 1)
    p1[0] = 1.0
    for k in range(2, n_max + 1, 2):
        p1[k] = p1[k - 2] * (k - 1.0) / k
    blocks = [(1, p1)] * d
    while len(blocks) > 1:
        merged = []
        for i in range(0, len(blocks) - 1, 2):
            dA, pA = blocks[i]
            dB, pB = blocks[i + 1]
            out = np.zeros(n_max + 1)
            prob = dA / (dA + dB)
            for n in range(0, n_max + 1):
                if n == 0:
                    out[0] = 1.0
                    continue
                w = _pmf_row(n, prob)
                out[n] = float(np.dot(w * pA[: n + 1], pB[n::-1]))
            merged.append((dA + dB, out))
        if len(blocks) % 2:
            merged.append(blocks[-1])
        blocks = merged
    probs = blocks[0][1]
    _RETURN_PROBS[d] = probs
    return probs


def bubble_sum_closed(d: int, mass_sq, r: int) -> float:
    """sum_x A_r(x)^2 via closed-walk return probabilities.

    Path concatenation gives sum_x J^n(x) J^m(x) = J^{n+m}(0), hence
    sum_x A_r^2 = sum_{N<=2r} c_N p_N (2d/q)^N / q^2 with c_N the number
    of (n, m) splittings and p_N the return probability.  Float route
    (relative accuracy ~1e-13), cheap at any desk-scale radius.
    """
    if r < 0:
        return 0.0
    q = 2 * d + float(Fraction(mass_sq))
    rho = 2 * d / q
    probs = return_probabilities(d, 2 * r)
    total = 0.0
    weight = 1.0 / (q * q)
    for N in range(2 * r + 1):
        c_N = (N + 1) if N <= r else (2 * r - N + 1)
        total += c_N * probs[N] * weight
        weight *= rho
    return total


def beta_surrogate(d: int, mass_sq, L: int, j: int) -> float:
    """Bubble increment computed from closed forms (table-free route)."""
    r_next = range_radius(L, j + 1)
    r_j = range_radius(L, j) if j >= 1 else -1
    return float(8.0 * (bubble_sum_closed(d, mass_sq, r_next) - bubble_sum_closed(d, mass_sq, r_j)))


# -- export / import ---------------------------------------------------------


def export_slice(sl: CovSlice, cfg: DecompConfig, path) -> None:
    """Write one slice in the columnar text format.

    Orbit-reduced rows (one canonical representative per line) keep desk-
    scale files manageable; ``sym=orbit`` in the header records this.  The
    dense torus slice uses ``sym=dense`` with one row per displacement.
    Values are full-precision decimal reprs, so round-trips are bit-exact.
    """
    m2 = repr(float(Fraction(cfg.mass_sq)))
    with open(path, "w") as fh:
        if sl.dense is not None:
            fh.write(
                f"# frd d={cfg.d} L={cfg.L} m2={m2} j={sl.j} r={sl.range_radius} "
                f"sym=dense side={sl.side}\n"
            )
            for idx in np.ndindex(sl.dense.shape):
                coords = " ".join(str(c) for c in idx)
                fh.write(f"{coords} {float(sl.dense[idx])!r}\n")
            return
        fh.write(
            f"# frd d={cfg.d} L={cfg.L} m2={m2} j={sl.j} r={sl.range_radius} sym=orbit\n"
        )
        for rep, v, _orbit in sl.table.items():
            coords = " ".join(str(c) for c in rep)
            fh.write(f"{coords} {v!r}\n")


def import_slice(path) -> CovSlice:
    """Read a slice file back, validating the finite-range support."""
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("# frd "):
            raise DecompositionError(f"{path}: missing frd header")
        kv = dict(tok.split("=", 1) for tok in header[6:].split())
        d = int(kv["d"])
        j = int(kv["j"])
        r = int(kv["r"])
        sym = kv.get("sym", "orbit")
        if sym == "dense":
            side = int(kv["side"])
            dense = np.zeros((side,) * d)
            for line in fh:
                toks = line.split()
                if len(toks) != d + 1:
                    raise DecompositionError(f"{path}: malformed row {line!r}")
                idx = tuple(int(t) for t in toks[:d])
                dense[idx] = float(toks[d])
            return CovSlice(j=j, range_radius=r, dense=dense, side=side, is_torus_final=True)
        space = _rep_space(d, r)
        values = np.zeros(space.size_of_ball(r))
        for line in fh:
            toks = line.split()
            if len(toks) != d + 1:
                raise DecompositionError(f"{path}: malformed row {line!r}")
            rep = tuple(int(t) for t in toks[:d])
            v = float(toks[d])
            if canonical(rep) != rep:
                raise DecompositionError(f"{path}: non-canonical representative {rep}")
            if sum(rep) > r and v != 0.0:
                raise DecompositionError(
                    f"{path}: nonzero entry at |x|_1={sum(rep)} outside range radius {r}"
                )
            if sum(rep) <= r:
                values[space.index[rep]] = v
        table = OrbitTable(
            d=d, radius=r, space=space, size=space.size_of_ball(r), values=values
        )
        return CovSlice(j=j, range_radius=r, table=table)
