"""Continuous-time Monte Carlo for walks penalized by self-intersections.

The walk jumps at the events of a rate-2d Poisson process, each step
uniform over the 2d neighbors; conditioned on the number of jumps in
[0, T] the jump times are sorted uniforms, which is how paths are drawn.
The penalty weight is exp(-g I(T)) with I(T) = sum_x L_{x,T}^2 the
self-intersection local time built from the occupation field.

Estimators (all plain Monte Carlo, no antithetic or control variates):

- ``kernel_estimate`` / ``kernel_scan``: the fixed-horizon transition
  kernel c_T(a, b) = E_a[exp(-g I(T)) 1{X(T) = b}];
- ``two_point_estimate``: the Laplace transform over T of the kernel on
  a finite grid, with an analytic tail budget from the Cauchy-Schwarz
  floor I(T) >= T^2 / |torus| (so the integrand is at most
  exp(-g T^2/|torus| - nu T));
- ``subadditivity_check``: the submultiplicativity diagnostic for the
  summed kernel.

Reproducibility contract: sample index idx always draws from the
counter-based stream Philox(key=(seed, tag << 40 | idx)), so identical
(seed, config) gives bit-identical paths, coupled runs (same seed,
different g or side) share trajectories pathwise, and any partition of
samples into workers merges to the same totals when partial sums are
combined in chunk order (fixed chunk width 4096).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .lattice import LatticeSpec, torus_heat_kernel_table

CHUNK = 4096
_TAG_SHIFT = 40  # sample index occupies the low 40 bits of the stream key


class TailBudgetError(RuntimeError):
    """Analytic tail of the time integral exceeds the requested tolerance."""


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for one sample stream."""
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), stream & (2**64 - 1)]))


# -- trajectories -------------------------------------------------------------


@dataclass
class Trajectory:
    """One realization: right-continuous piecewise-constant path on the torus.

    positions[0] is the start; positions[i] the site after jump i.
    """

    start: tuple
    T: float
    jump_times: np.ndarray
    positions: list

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    def position_at(self, t: float) -> tuple:
        i = int(np.searchsorted(self.jump_times, t, side="right"))
        return self.positions[i]


@dataclass
class LocalTimeField:
    """Occupation times L_{x,T}; entries sum to the horizon T."""

    occupation: dict
    T: float

    def total_time(self) -> float:
        return float(sum(self.occupation.values()))


@dataclass
class Estimate:
    mean: float
    stderr: float
    n_samples: int
    method: str = "plain"


def _draw_jumps(rng: np.random.Generator, d: int, T: float):
    """Jump times and directions on [0, T] for the rate-2d walk."""
    n = int(rng.poisson(2 * d * T))
    if n == 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    times = rng.random(n) * T
    times.sort()
    dirs = rng.integers(0, 2 * d, n)
    return times, dirs


def sample_trajectory(spec: LatticeSpec, start, T: float, rng: np.random.Generator) -> Trajectory:
    """Exact continuous-time simulation of one path up to horizon T."""
    if not spec.is_torus:
        raise ValueError("simulation runs on tori")
    if T <= 0:
        raise ValueError("horizon must be > 0")
    start = spec.wrap(start)
    times, dirs = _draw_jumps(rng, spec.d, T)
    S = spec.side
    cur = list(start)
    positions = [start]
    for dk in dirs:
        axis = int(dk) >> 1
        sgn = 1 if int(dk) & 1 else -1
        cur[axis] = (cur[axis] + sgn) % S
        positions.append(tuple(cur))
    return Trajectory(start=start, T=T, jump_times=times, positions=positions)


def local_time_field(traj: Trajectory) -> LocalTimeField:
    occ: dict = {}
    t_prev = 0.0
    for i, tj in enumerate(traj.jump_times):
        site = traj.positions[i]
        occ[site] = occ.get(site, 0.0) + (float(tj) - t_prev)
        t_prev = float(tj)
    last = traj.positions[-1]
    occ[last] = occ.get(last, 0.0) + (traj.T - t_prev)
    return LocalTimeField(occupation=occ, T=traj.T)


def intersection_local_time(field: LocalTimeField) -> float:
    """I(T) = sum_x L_{x,T}^2."""
    return float(sum(v * v for v in field.occupation.values()))


# -- core path walker ----------------------------------------------------------


def _walk_checkpoints(spec, start, times, dirs, checkpoints, need_I):
    """Evaluate (site, I) at each checkpoint along one path.

    Occupation is committed per stay segment; a checkpoint inside a stay
    adds the partial square increment dt (2 L_before + dt) without
    committing it.  Checkpoints at a jump time read the post-jump state
    (right continuity); with continuous jump-time draws the tie has
    probability zero anyway.
    """
    S = spec.side
    cur = list(start)
    key = start
    L: dict = {}
    I = 0.0
    t_seg = 0.0
    out = []
    ck_idx = 0
    n_ck = len(checkpoints)
    times = times.tolist()
    dirs = dirs.tolist()
    Lget = L.get
    for i, tj in enumerate(times):
        while ck_idx < n_ck and checkpoints[ck_idx] < tj:
            if need_I:
                dt = checkpoints[ck_idx] - t_seg
                Lb = Lget(key, 0.0)
                out.append((key, I + dt * (2.0 * Lb + dt)))
            else:
                out.append((key, 0.0))
            ck_idx += 1
        if need_I:
            dt = tj - t_seg
            Lb = Lget(key, 0.0)
            L[key] = Lb + dt
            I += dt * (2.0 * Lb + dt)
        dk = dirs[i]
        axis = dk >> 1
        cur[axis] = (cur[axis] + (1 if dk & 1 else -1)) % S
        key = tuple(cur)
        t_seg = tj
    while ck_idx < n_ck:
        if need_I:
            dt = checkpoints[ck_idx] - t_seg
            Lb = Lget(key, 0.0)
            out.append((key, I + dt * (2.0 * Lb + dt)))
        else:
            out.append((key, 0.0))
        ck_idx += 1
    return out


def _chunked_stats(n_samples, width, value_fn):
    """Chunk-ordered accumulation of per-sample vectors.

    Partial sums are folded in fixed chunks so the reduction is
    independent of how samples are partitioned across workers.
    """
    tot = np.zeros(width)
    tot2 = np.zeros(width)
    c1 = np.zeros(width)
    c2 = np.zeros(width)
    filled = 0
    for idx in range(n_samples):
        v = value_fn(idx)
        c1 += v
        c2 += v * v
        filled += 1
        if filled == CHUNK:
            tot += c1
            tot2 += c2
            c1[:] = 0.0
            c2[:] = 0.0
            filled = 0
    if filled:
        tot += c1
        tot2 += c2
    mean = tot / n_samples
    if n_samples >= 2:
        var = np.maximum(tot2 - n_samples * mean**2, 0.0) / (n_samples - 1)
        se = np.sqrt(var / n_samples)
    else:
        se = np.full(width, np.nan)
    return mean, se


# -- kernel estimators ----------------------------------------------------------


def kernel_scan(
    spec: LatticeSpec,
    a,
    displacements,
    T: float,
    g: float,
    n_samples: int,
    seed: int = 0,
    stream_tag: int = 0,
) -> list[Estimate]:
    """c_T(a, a + x) for several displacements x from one shared path set."""
    if not spec.is_torus:
        raise ValueError("simulation runs on tori")
    if g < 0:
        raise ValueError("g must be >= 0")
    a = spec.wrap(a)
    targets = [spec.wrap(tuple(ai + xi for ai, xi in zip(a, x))) for x in displacements]
    if T == 0:
        return [
            Estimate(mean=1.0 if t == a else 0.0, stderr=0.0, n_samples=n_samples, method="exact")
            for t in targets
        ]
    d = spec.d
    need_I = g > 0
    base = stream_tag << _TAG_SHIFT
    width = len(targets)
    vals = np.zeros(width)

    def one(idx):
        rng = stream_rng(seed, base | idx)
        times, dirs = _draw_jumps(rng, d, T)
        (site, I), = _walk_checkpoints(spec, a, times, dirs, (T,), need_I)
        w = math.exp(-g * I) if need_I else 1.0
        vals[:] = 0.0
        for k, t in enumerate(targets):
            if site == t:
                vals[k] = w
        return vals

    mean, se = _chunked_stats(n_samples, width, one)
    return [Estimate(mean=float(m), stderr=float(s), n_samples=n_samples) for m, s in zip(mean, se)]


def kernel_estimate(
    spec: LatticeSpec,
    a,
    b,
    T: float,
    g: float,
    n_samples: int,
    seed: int = 0,
    stream_tag: int = 0,
) -> Estimate:
    """Plain Monte Carlo for c_T(a,b) = E_a[exp(-g I(T)) 1{X(T)=b}]."""
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    disp = tuple(int(bi) - int(ai) for ai, bi in zip(a, b))
    return kernel_scan(spec, a, [disp], T, g, n_samples, seed=seed, stream_tag=stream_tag)[0]


def sum_kernel_estimate(
    spec: LatticeSpec,
    a,
    T: float,
    g: float,
    n_samples: int,
    seed: int = 0,
    stream_tag: int = 0,
) -> Estimate:
    """sum_b c_T(a,b) = E_a[exp(-g I(T))] (endpoint summed out)."""
    if not spec.is_torus:
        raise ValueError("simulation runs on tori")
    a = spec.wrap(a)
    d = spec.d
    base = stream_tag << _TAG_SHIFT
    val = np.zeros(1)

    def one(idx):
        rng = stream_rng(seed, base | idx)
        times, dirs = _draw_jumps(rng, d, T)
        (_site, I), = _walk_checkpoints(spec, a, times, dirs, (T,), True)
        val[0] = math.exp(-g * I)
        return val

    mean, se = _chunked_stats(n_samples, 1, one)
    return Estimate(mean=float(mean[0]), stderr=float(se[0]), n_samples=n_samples)


# -- two-point function -----------------------------------------------------------


def integral_tail_bound(spec: LatticeSpec, g: float, nu: float, T_max: float) -> float:
    """Analytic bound on int_{T_max}^inf of the integrand.

    Two independent dominations of the kernel:

    - exp(-g T^2/|torus|) from the Cauchy-Schwarz floor on I(T), giving a
      Gaussian tail (any nu, needs g > 0; erfcx-stable);
    - the free kernel p_T(a,b) <= 1/|torus| + exp(-gap T) with gap the
      smallest nonzero Laplacian eigenvalue (any g >= 0, needs nu > 0).

    Returns the smaller; raises when neither applies (g = 0 and nu <= 0).
    """
    if g < 0:
        raise ValueError("g must be >= 0")
    bounds = []
    if g > 0:
        alpha = g / spec.volume
        z = (2.0 * alpha * T_max + nu) / (2.0 * math.sqrt(alpha))
        pref = 0.5 * math.sqrt(math.pi / alpha)
        if z <= 0:
            bounds.append(pref * math.exp(nu * nu / (4.0 * alpha)) * special.erfc(z))
        else:
            bounds.append(
                pref * special.erfcx(z) * math.exp(-alpha * T_max * T_max - nu * T_max)
            )
    if nu > 0:
        gap = 2.0 * (1.0 - math.cos(2.0 * math.pi / spec.side))
        bounds.append(
            math.exp(-nu * T_max) / (nu * spec.volume)
            + math.exp(-(nu + gap) * T_max) / (nu + gap)
        )
    if not bounds:
        raise TailBudgetError("tail diverges: g = 0 requires nu > 0")
    return float(min(bounds))


def time_grid(T_max: float, step: float = 0.25, refine_below: float = 1.0) -> list[float]:
    """Trapezoid grid on [0, T_max], four-fold denser below ``refine_below``.

    The kernel varies on the scale of a single holding time near T = 0,
    so a uniform grid wastes its discretization budget there.
    """
    if T_max <= 0 or step <= 0:
        raise ValueError("T_max and step must be > 0")
    fine = step / 4.0
    grid = [0.0]
    t = 0.0
    while t < T_max - 1e-12:
        t += fine if t < min(refine_below, T_max) - 1e-12 else step
        grid.append(min(t, T_max))
    return grid


def _trapezoid_weights(grid):
    w = np.zeros(len(grid))
    diffs = np.diff(grid)
    w[:-1] += diffs / 2.0
    w[1:] += diffs / 2.0
    return w


def two_point_estimate(
    spec: LatticeSpec,
    a,
    b,
    g: float,
    nu: float,
    T_grid,
    n_samples: int,
    seed: int = 0,
    stream_tag: int = 0,
    tail_tol: float | None = None,
):
    """Trapezoid quadrature of the kernel over T_grid, times exp(-nu T).

    Returns (Estimate, budget) where budget holds the analytic tail bound
    beyond T_grid[-1] and an empirical trapezoid-curvature estimate.  The
    T = 0 node (kernel exactly delta_ab) is handled without sampling.
    Raises TailBudgetError when the tail exceeds ``tail_tol``.
    """
    grid = [float(t) for t in T_grid]
    if any(t2 <= t1 for t1, t2 in zip(grid, grid[1:])) or grid[0] < 0:
        raise ValueError("T_grid must be increasing and nonnegative")
    tail = integral_tail_bound(spec, g, nu, grid[-1])
    if tail_tol is not None and tail > tail_tol:
        raise TailBudgetError(f"tail budget {tail:.3e} exceeds tolerance {tail_tol:.3e}")

    a = spec.wrap(a)
    b = spec.wrap(b)
    weights = _trapezoid_weights(grid)
    exact0 = 0.0
    sample_nodes = grid
    sample_weights = weights
    if grid[0] == 0.0:
        exact0 = weights[0] * (1.0 if a == b else 0.0)
        sample_nodes = grid[1:]
        sample_weights = weights[1:]
    coeff = [w * math.exp(-nu * t) for w, t in zip(sample_weights, sample_nodes)]

    d = spec.d
    T_max = grid[-1]
    need_I = g > 0
    base = stream_tag << _TAG_SHIFT
    n_nodes = len(sample_nodes)
    buf = np.zeros(1 + n_nodes)

    def one(idx):
        rng = stream_rng(seed, base | idx)
        times, dirs = _draw_jumps(rng, d, T_max)
        states = _walk_checkpoints(spec, a, times, dirs, sample_nodes, need_I)
        v = 0.0
        buf[:] = 0.0
        for k, (site, I) in enumerate(states):
            if site == b:
                node = math.exp(-g * I) if need_I else 1.0
                v += coeff[k] * node
                buf[1 + k] = node
        buf[0] = v
        return buf

    mean, se = _chunked_stats(n_samples, 1 + n_nodes, one)
    value = exact0 + float(mean[0])
    stderr = float(se[0])

    # trapezoid curvature estimate from the sampled node means
    node_means = [math.exp(-nu * t) * m for t, m in zip(sample_nodes, mean[1:])]
    if grid[0] == 0.0:
        node_means = [1.0 if a == b else 0.0] + node_means
    quad_est = 0.0
    for k in range(1, len(grid) - 1):
        h = 0.5 * (grid[k + 1] - grid[k - 1])
        quad_est += abs(node_means[k + 1] - 2.0 * node_means[k] + node_means[k - 1]) * h / 12.0

    budget = {"tail": tail, "quadrature_est": quad_est, "total": tail + quad_est}
    return Estimate(mean=value, stderr=stderr, n_samples=n_samples), budget


# -- bounds and diagnostics -------------------------------------------------------


def chernoff_displacement_bound(d: int, T: float, k: float) -> float:
    """Poisson Chernoff bound P(jumps >= k) <= e^{-2dT} (2dTe/k)^k for k > 2dT.

    Certifies that sites beyond k steps are unreachable up to this
    probability, which also bounds torus-versus-infinite discrepancies by
    walks long enough to feel the wrap.
    """
    lam = 2 * d * T
    if k <= lam:
        raise ValueError(f"bound requires k > 2dT = {lam}")
    return math.exp(-lam) * (lam * math.e / k) ** k


@dataclass
class SubadditivityReport:
    S: float
    T: float
    lhs: Estimate  # sum_b c_{S+T}
    rhs_product: float
    rhs_stderr: float
    ratio: float
    z_score: float


def subadditivity_check(
    spec: LatticeSpec, a, S: float, T: float, g: float, n_samples: int, seed: int = 0
) -> SubadditivityReport:
    """Statistical check of sum_b c_{S+T} <= (sum_b c_S)(sum_b c_T).

    Independent stream tags per horizon; the product error follows the
    delta method.  Diagnostic only: returns z-scores, asserts nothing.
    """
    e_S = sum_kernel_estimate(spec, a, S, g, n_samples, seed=seed, stream_tag=1)
    e_T = sum_kernel_estimate(spec, a, T, g, n_samples, seed=seed, stream_tag=2)
    e_ST = sum_kernel_estimate(spec, a, S + T, g, n_samples, seed=seed, stream_tag=3)
    prod = e_S.mean * e_T.mean
    prod_se = math.hypot(e_T.mean * e_S.stderr, e_S.mean * e_T.stderr)
    pooled = math.hypot(prod_se, e_ST.stderr)
    z = (e_ST.mean - prod) / pooled if pooled > 0 else 0.0
    ratio = e_ST.mean / prod if prod != 0 else math.inf
    return SubadditivityReport(
        S=S, T=T, lhs=e_ST, rhs_product=prod, rhs_stderr=prod_se, ratio=ratio, z_score=z
    )


def merge_estimates(estimates) -> Estimate:
    """Count-weighted pooling; merge in stream order for exact reproducibility."""
    ests = list(estimates)
    n = sum(e.n_samples for e in ests)
    total = sum(e.n_samples * e.mean for e in ests)
    mean = total / n
    ssq = 0.0
    for e in ests:
        var = e.stderr**2 * e.n_samples
        ssq += var * (e.n_samples - 1) + e.n_samples * e.mean**2
    var = max(ssq - n * mean**2, 0.0) / (n - 1)
    return Estimate(mean=mean, stderr=math.sqrt(var / n), n_samples=n)


def validate_g0(
    spec: LatticeSpec,
    a,
    displacements,
    T_values,
    n_samples: int,
    seed: int = 0,
    z_max: float = 3.0,
):
    """Kernel estimates at g = 0 against the exact spectral heat kernel.

    Returns (cells, n_pass); each cell carries the estimate, the exact
    value and the z-score.  Rows (fixed T) share a path set; estimates
    stay unbiased per cell.
    """
    cells = []
    n_pass = 0
    for ti, T in enumerate(T_values):
        exact_table = torus_heat_kernel_table(spec, T)
        ests = kernel_scan(spec, a, displacements, T, 0.0, n_samples, seed=seed, stream_tag=ti)
        for x, est in zip(displacements, ests):
            exact = float(exact_table[spec.wrap(x)])
            z = (est.mean - exact) / est.stderr if est.stderr > 0 else 0.0
            ok = abs(z) <= z_max
            n_pass += ok
            cells.append(
                {
                    "T": T,
                    "displacement": tuple(x),
                    "estimate": est.mean,
                    "stderr": est.stderr,
                    "exact": exact,
                    "z": z,
                    "pass": bool(ok),
                }
            )
    return cells, n_pass
