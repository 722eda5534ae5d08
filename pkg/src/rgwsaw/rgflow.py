"""Scale-by-scale flow of the observable coupling constants.

The two marked sites a, b carry couplings (lambda_a, lambda_b, q_a, q_b)
driven by the finite-range covariance slices:

- lambda evolves multiplicatively through the bulk feedback term
  delta[nu w] = nu^+ w_{j+1} - nu_j w_j with nu^+ = nu + 2 g C_{j+1;0,0},
  and stops evolving once the scale reaches the coalescence scale j_ab
  (the first scale whose slice can couple a to b);
- q accumulates lambda_a lambda_b C_{j+1;a,b}, which vanishes below j_ab
  by the finite-range property, plus injected remainders.

The iterated flow is an affine recursion with the closed-form solution
lambda_j = (1 + nu_j w_j)^{-1} (1 + sum of check-variable increments);
``run_flow`` evaluates both and requires agreement to 1e-12.  The limit
q_infinity equals (frozen lambda product) x (-Delta + m^2)^{-1}_{ab}
plus the sum of injected q-remainders, which is the identity this
laboratory verifies against the quadrature Green function.

Nonperturbative remainders are not computable here; they are modeled as
seeded draws confined to the bound shapes

    |v_lambda,j| <= K chi_j gtilde_j^2  (j < j_ab),
    |v_q,j|     <= K |a-b|^{-2} chi_j 4^{-(j - j_ab)} gtilde_j  (j >= j_ab),

turning the estimates into testable envelopes.  chi_j is the diagnostic
surrogate min(1, 2^{-(j - j_m)+}) with j_m the mass scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .covdecomp import (
    _q_parts,
    beta_surrogate,
    range_radius,
    return_counts,
    w1_closed,
    walk_count_at,
)
from .lattice import norm2_sq, zd_green_with_error


class FlowError(RuntimeError):
    """Trust-region departure or violated flow contract."""


# -- scales ------------------------------------------------------------------


def mass_scale(L: int, mass_sq: float):
    """Smallest j with L^{2j} m^2 >= 1; math.inf when m^2 = 0."""
    if mass_sq < 0:
        raise FlowError("mass_sq must be >= 0")
    if mass_sq == 0:
        return math.inf
    j = 0
    scale = 1.0
    L2 = float(L) * float(L)
    while scale * mass_sq < 1.0:
        j += 1
        scale *= L2
        if j > 10_000:
            raise FlowError("mass scale out of range")
    return j


def coalescence_scale(L: int, a, b, lambda_init_a: float = 1.0, lambda_init_b: float = 1.0):
    """floor(log_L 2|a-b|) with Euclidean distance, exact in integers.

    Infinite (observable absent, coalescence vacuous) when either initial
    observable coupling is zero.
    """
    if tuple(a) == tuple(b):
        raise FlowError("coalescence scale requires a != b")
    if lambda_init_a == 0 or lambda_init_b == 0:
        return math.inf
    # L^j <= 2|a-b|  <=>  L^{2j} <= 4|a-b|^2, an integer comparison
    n2 = 4 * norm2_sq(tuple(bi - ai for ai, bi in zip(a, b)))
    j = 0
    power = L * L
    while power <= n2:
        j += 1
        power *= L * L
    return j


def chi_surrogate(j: int, j_m) -> float:
    """Diagnostic mass-decay profile: 1 up to the mass scale, then halving."""
    if j_m == math.inf or j <= j_m:
        return 1.0
    return 2.0 ** -(j - j_m)


# -- coupling sequences ------------------------------------------------------


def gbar_flow(g0: float, betas) -> list[float]:
    """Iterate g_{j+1} = g_j - beta_j g_j^2 from g_0, inside (0, 2 g_0).

    Aborts with FlowError when the sequence leaves the trust region
    (bad surrogate coefficients or too-large g0).  g0 = 0 is the exact
    identity flow (everything stays zero).
    """
    if g0 < 0:
        raise FlowError("g0 must be >= 0")
    seq = [float(g0)]
    g = float(g0)
    for j, beta in enumerate(betas):
        g = g - beta * g * g
        if g0 > 0 and not (0.0 < g < 2.0 * g0):
            raise FlowError(f"coupling left trust region at step {j}: g={g!r}")
        seq.append(g)
    return seq


def gtilde(gbar_seq, j: int, j_m) -> float:
    """Massless coupling frozen beyond the mass scale."""
    if j_m == math.inf:
        return gbar_seq[j]
    cut = min(j, j_m)
    return gbar_seq[cut]


def gtilde_sequence(gbar_massless, j_m) -> list[float]:
    return [gtilde(gbar_massless, j, j_m) for j in range(len(gbar_massless))]


# -- flow configuration and state --------------------------------------------


@dataclass(frozen=True)
class FlowConfig:
    """Inputs of one observable-flow run.

    ``remainder_scale`` is the envelope constant K of the bound shapes.
    ``pin_lambda`` keeps lambda fixed at its initial value (identity
    mode); g0 = 0 achieves the same through the recursion itself.
    bulk policies: "frozen-zero" and "gbar-only" both freeze nu = z = 0
    and evolve g through the bubble recursion; "file" injects an external
    (g, nu, z) trajectory.
    """

    d: int
    L: int
    mass_sq: float
    g0: float
    a: tuple
    b: tuple
    j_max: int
    lambda_a0: float = 1.0
    lambda_b0: float = 1.0
    beta_source: str = "surrogate"
    betas: tuple | None = None
    remainder_policy: str = "zero"
    remainder_seed: int = 0
    remainder_scale: float = 1.0
    bulk_policy: str = "frozen-zero"
    bulk_trajectory: tuple | None = None
    pin_lambda: bool = False
    smallness: float = 0.1

    def __post_init__(self):
        if self.L < 3:
            raise FlowError("L must be >= 3")
        if self.j_max < 1:
            raise FlowError("j_max must be >= 1")
        if not (0.0 <= self.g0 < self.smallness):
            raise FlowError(f"g0 must lie in [0, {self.smallness}), got {self.g0}")
        if tuple(self.a) == tuple(self.b):
            raise FlowError("observable sites must differ")
        if self.lambda_a0 not in (0.0, 1.0) or self.lambda_b0 not in (0.0, 1.0):
            raise FlowError("initial observable couplings must be 0 or 1")
        if self.remainder_policy not in ("zero", "bounded-random"):
            raise FlowError(f"unknown remainder policy {self.remainder_policy!r}")
        if self.bulk_policy not in ("frozen-zero", "gbar-only", "file"):
            raise FlowError(f"unknown bulk policy {self.bulk_policy!r}")
        if self.bulk_policy == "file" and self.bulk_trajectory is None:
            raise FlowError("bulk policy 'file' requires a trajectory")
        if self.beta_source not in ("surrogate", "file"):
            raise FlowError(f"unknown beta source {self.beta_source!r}")
        if self.beta_source == "file" and self.betas is None:
            raise FlowError("beta source 'file' requires betas")

    @property
    def displacement(self) -> tuple:
        return tuple(int(bi) - int(ai) for ai, bi in zip(self.a, self.b))


@dataclass(frozen=True)
class FlowState:
    j: int
    g: float
    nu: float
    z: float
    lambda_a: float
    lambda_b: float
    q_a: float
    q_b: float
    delta_q: float

    @property
    def q(self) -> float:
        return 0.5 * (self.q_a + self.q_b)


@dataclass(frozen=True)
class RemainderSample:
    """Per-scale remainder injections for both marked sites."""

    v_lambda_a: float = 0.0
    v_lambda_b: float = 0.0
    v_q_a: float = 0.0
    v_q_b: float = 0.0

    @property
    def v_lambda(self) -> float:
        return 0.5 * (self.v_lambda_a + self.v_lambda_b)

    @property
    def v_q(self) -> float:
        return 0.5 * (self.v_q_a + self.v_q_b)


ZERO_REMAINDER = RemainderSample()


# -- per-scale slice scalars (table-free route) -------------------------------


class SliceScalarProvider:
    """Exact slice values at the two displacements the flow consumes.

    C_j at a single displacement costs O(d r^2) big-integer operations
    via dimension splitting, so no full table is ever built.  Floats are
    correctly rounded from the same rationals as the table constructor,
    hence bit-identical across routes.
    """

    def __init__(self, d: int, L: int, mass_sq: float, j_max: int, disp):
        self.d, self.L, self.j_max = d, L, j_max
        self.radii = [range_radius(L, j) for j in range(1, j_max + 1)]
        R = self.radii[-1]
        p, s = _q_parts(d, mass_sq)
        counts_ab = walk_count_at(d, disp, R)
        counts_00 = return_counts(d, R)
        self.c_ab = [0.0]
        self.c_00 = [0.0]
        lo = 0
        for r in self.radii:
            den = p ** (r + 1)
            num_ab = sum(counts_ab[n] * s ** (n + 1) * p ** (r - n) for n in range(lo, r + 1))
            num_00 = sum(counts_00[n] * s ** (n + 1) * p ** (r - n) for n in range(lo, r + 1))
            self.c_ab.append(num_ab / den)
            self.c_00.append(num_00 / den)
            lo = r + 1
        self.w1 = [0.0] + [w1_closed(d, mass_sq, r) for r in self.radii]

    def slice_ab(self, j: int) -> float:
        return self.c_ab[j]

    def slice_00(self, j: int) -> float:
        return self.c_00[j]

    def w1_at(self, j: int) -> float:
        return self.w1[j]


@lru_cache(maxsize=16)
def _provider(d: int, L: int, mass_sq: float, j_max: int, disp: tuple) -> SliceScalarProvider:
    # parameter sweeps over seeds share the exact slice scalars
    return SliceScalarProvider(d, L, mass_sq, j_max, disp)


@lru_cache(maxsize=256)
def _beta_cached(d: int, mass_sq: float, L: int, j: int) -> float:
    return beta_surrogate(d, mass_sq, L, j)


# -- one step of the observable flow ------------------------------------------


def observable_step(
    state: FlowState,
    c_next,
    w1_j: float,
    w1_next: float,
    remainders: RemainderSample = ZERO_REMAINDER,
    *,
    j_ab,
    disp=None,
    bulk_next=None,
    pin_lambda: bool = False,
) -> FlowState:
    """Advance the observable couplings one scale.

    ``c_next`` is the scale-(j+1) covariance slice (anything with a
    ``value_at``) or a plain (C_{j+1;a,b}, C_{j+1;0,0}) pair.  The bulk
    couplings of the next state default to the current ones.
    """
    if hasattr(c_next, "value_at"):
        if disp is None:
            raise FlowError("displacement required to read the covariance slice")
        c_ab = c_next.value_at(disp)
        c_00 = c_next.value_at((0,) * len(disp))
    else:
        c_ab, c_00 = c_next
    j = state.j
    g_next, nu_next, z_next = bulk_next if bulk_next is not None else (state.g, state.nu, state.z)

    nu_plus = state.nu + 2.0 * state.g * c_00
    delta_nu_w = nu_plus * w1_next - state.nu * w1_j

    if pin_lambda or (j + 1) >= j_ab:
        lam_a, lam_b = state.lambda_a, state.lambda_b
    else:
        lam_a = (1.0 - delta_nu_w) * state.lambda_a + remainders.v_lambda_a
        lam_b = (1.0 - delta_nu_w) * state.lambda_b + remainders.v_lambda_b

    prod = state.lambda_a * state.lambda_b
    q_a = state.q_a + prod * c_ab + remainders.v_q_a
    q_b = state.q_b + prod * c_ab + remainders.v_q_b
    delta_q = prod * c_ab + remainders.v_q

    return FlowState(
        j=j + 1,
        g=g_next,
        nu=nu_next,
        z=z_next,
        lambda_a=lam_a,
        lambda_b=lam_b,
        q_a=q_a,
        q_b=q_b,
        delta_q=delta_q,
    )


# -- remainder draws -----------------------------------------------------------


def _unit_draws(seed: int, j: int) -> tuple[float, float, float, float]:
    """Four uniform draws in [-1, 1], counter-based per (seed, scale)."""
    rng = np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), j]))
    u = rng.uniform(-1.0, 1.0, size=4)
    return float(u[0]), float(u[1]), float(u[2]), float(u[3])


def draw_remainder(cfg: FlowConfig, j: int, j_ab, j_m, gtilde_j: float) -> RemainderSample:
    """Seeded remainder confined to the bound shapes at scale j."""
    if cfg.remainder_policy == "zero":
        return ZERO_REMAINDER
    chi = chi_surrogate(j, j_m)
    K = cfg.remainder_scale
    shape_lam = K * chi * gtilde_j**2 if (j_ab == math.inf or j < j_ab) else 0.0
    if j_ab != math.inf and j >= j_ab:
        shape_q = K * chi * 4.0 ** -(j - j_ab) * gtilde_j / norm2_sq(cfg.displacement)
    else:
        shape_q = 0.0
    ua, ub, uqa, uqb = _unit_draws(cfg.remainder_seed, j)
    return RemainderSample(
        v_lambda_a=ua * shape_lam if cfg.lambda_a0 != 0 else 0.0,
        v_lambda_b=ub * shape_lam if cfg.lambda_b0 != 0 else 0.0,
        v_q_a=uqa * shape_q,
        v_q_b=uqb * shape_q,
    )


# -- full run -------------------------------------------------------------------


@dataclass
class FlowResult:
    config: FlowConfig
    states: list[FlowState]
    remainders: list[RemainderSample]  # remainders[j] applied in step j -> j+1
    gbar: list[float]
    gtilde_seq: list[float]
    summary: dict = field(default_factory=dict)

    def state_at(self, j: int) -> FlowState:
        return self.states[j]


def _bulk_sequences(cfg: FlowConfig):
    if cfg.beta_source == "file":
        betas = list(cfg.betas)[: cfg.j_max]
        if len(betas) < cfg.j_max:
            raise FlowError("beta file shorter than j_max")
        betas_massless = betas
    else:
        betas = [_beta_cached(cfg.d, float(cfg.mass_sq), cfg.L, j) for j in range(cfg.j_max)]
        betas_massless = [_beta_cached(cfg.d, 0.0, cfg.L, j) for j in range(cfg.j_max)]
    gbar = gbar_flow(cfg.g0, betas)
    gbar_massless = gbar_flow(cfg.g0, betas_massless)
    j_m = mass_scale(cfg.L, float(cfg.mass_sq))
    gt = gtilde_sequence(gbar_massless, j_m)
    if cfg.bulk_policy == "file":
        bulk = [tuple(map(float, row)) for row in cfg.bulk_trajectory]
        if len(bulk) < cfg.j_max + 1:
            raise FlowError("bulk trajectory shorter than j_max + 1")
    else:
        # frozen-zero / gbar-only: nu = z = 0, g follows the bubble recursion
        bulk = [(gbar[j], 0.0, 0.0) for j in range(cfg.j_max + 1)]
    return gbar, gt, bulk, j_m


def run_flow(cfg: FlowConfig) -> FlowResult:
    """Iterate the observable flow and verify its closed-form solution.

    The check variables lam (1 + nu_j w_j) satisfy a pure summation
    recursion; both evaluations must agree to 1e-12 at every scale, which
    guards the wiring of the bulk feedback term.
    """
    j_ab = coalescence_scale(cfg.L, cfg.a, cfg.b, cfg.lambda_a0, cfg.lambda_b0)
    gbar, gt, bulk, j_m = _bulk_sequences(cfg)
    provider = _provider(cfg.d, cfg.L, float(cfg.mass_sq), cfg.j_max, cfg.displacement)

    states = [
        FlowState(
            j=0,
            g=bulk[0][0],
            nu=bulk[0][1],
            z=bulk[0][2],
            lambda_a=float(cfg.lambda_a0),
            lambda_b=float(cfg.lambda_b0),
            q_a=0.0,
            q_b=0.0,
            delta_q=0.0,
        )
    ]
    remainders: list[RemainderSample] = []
    # closed-form bookkeeping: running sums of the check-variable increments
    vcheck_sum = {"a": 0.0, "b": 0.0}
    closed_dev = 0.0

    for j in range(cfg.j_max):
        st = states[-1]
        rem = draw_remainder(cfg, j, j_ab, j_m, gt[j])
        remainders.append(rem)
        w1_j, w1_next = provider.w1_at(j), provider.w1_at(j + 1)
        c_pair = (provider.slice_ab(j + 1), provider.slice_00(j + 1))
        nxt = observable_step(
            st,
            c_pair,
            w1_j,
            w1_next,
            rem,
            j_ab=j_ab,
            bulk_next=bulk[j + 1],
            pin_lambda=cfg.pin_lambda,
        )
        states.append(nxt)

        if not cfg.pin_lambda and (j + 1) < j_ab:
            nu_j, nu_next = st.nu, nxt.nu
            nu_plus = st.nu + 2.0 * st.g * provider.slice_00(j + 1)
            delta_nu_w = nu_plus * w1_next - nu_j * w1_j
            for tag, lam_j, v_lam, lam_next in (
                ("a", st.lambda_a, rem.v_lambda_a, nxt.lambda_a),
                ("b", st.lambda_b, rem.v_lambda_b, nxt.lambda_b),
            ):
                vcheck = (
                    (nu_next - nu_plus) * lam_j * w1_next
                    + v_lam * (1.0 + nu_next * w1_next)
                    - delta_nu_w * lam_j * nu_next * w1_next
                )
                vcheck_sum[tag] += vcheck
                lam0 = cfg.lambda_a0 if tag == "a" else cfg.lambda_b0
                lam_closed = (lam0 + vcheck_sum[tag]) / (1.0 + nu_next * w1_next)
                closed_dev = max(closed_dev, abs(lam_closed - lam_next))

    if closed_dev > 1e-12:
        raise FlowError(f"iterated flow deviates from closed form by {closed_dev:.3e}")

    freeze = j_ab if j_ab != math.inf else None
    lam_star_idx = min(max((freeze or 1) - 1, 0), cfg.j_max)
    summary = {
        "j_ab": None if j_ab == math.inf else int(j_ab),
        "j_m": None if j_m == math.inf else int(j_m),
        "lambda_a_star": states[lam_star_idx].lambda_a,
        "lambda_b_star": states[lam_star_idx].lambda_b,
        "closed_form_deviation": closed_dev,
        "gbar_j_ab": gbar[min(int(j_ab), cfg.j_max)] if j_ab != math.inf else None,
        "remainder_K": cfg.remainder_scale if cfg.remainder_policy != "zero" else 0.0,
    }
    return FlowResult(
        config=cfg,
        states=states,
        remainders=remainders,
        gbar=gbar,
        gtilde_seq=gt,
        summary=summary,
    )


def q_infinity(result: FlowResult, massless_budget: float | None = None):
    """Limiting q and its error budget from a completed run.

    q_inf = lambda_a* lambda_b* (-Delta + m^2)^{-1}_{ab} + sum of injected
    q-remainders.  The budget collects the quadrature error, the bound on
    remainders beyond the last computed scale, and (at m^2 = 0, where the
    geometric tail certificate is unavailable) a caller-supplied budget.
    """
    cfg = result.config
    j_ab = coalescence_scale(cfg.L, cfg.a, cfg.b, cfg.lambda_a0, cfg.lambda_b0)
    if j_ab != math.inf and cfg.j_max < j_ab:
        raise FlowError("run too short: j_max below the coalescence scale")
    m2 = float(cfg.mass_sq)
    if m2 == 0 and massless_budget is None:
        raise FlowError(
            "m^2 = 0 carries no geometric tail certificate; pass massless_budget"
        )
    disp = cfg.displacement
    green, quad_err = zd_green_with_error(disp, m2, d=cfg.d)

    if j_ab == math.inf:
        lam_prod = 0.0
    else:
        idx = min(max(int(j_ab) - 1, 0), cfg.j_max)
        lam_prod = result.states[idx].lambda_a * result.states[idx].lambda_b

    v_q_sum = sum(r.v_q for r in result.remainders)

    # bound on remainders never injected (scales >= j_max)
    tail = 0.0
    if cfg.remainder_policy != "zero" and j_ab != math.inf:
        j_m = mass_scale(cfg.L, m2)
        gt_frozen = result.gtilde_seq[-1]
        inv_ab2 = 1.0 / norm2_sq(disp)
        for i in range(cfg.j_max, cfg.j_max + 400):
            term = (
                cfg.remainder_scale
                * chi_surrogate(i, j_m)
                * 4.0 ** -(i - int(j_ab))
                * gt_frozen
                * inv_ab2
            )
            tail += term
            if term < 1e-300:
                break

    q_inf = lam_prod * green + v_q_sum
    budget = {
        "quadrature": quad_err * abs(lam_prod),
        "remainder_tail": tail,
        "massless": massless_budget or 0.0,
        "total": quad_err * abs(lam_prod) + tail + (massless_budget or 0.0),
    }
    return q_inf, green, budget


def flow_rows(result: FlowResult) -> list[dict]:
    """Flatten a run into CSV-ready rows (one per scale)."""
    rows = []
    for st in result.states:
        j = st.j
        rem = result.remainders[j - 1] if j >= 1 else ZERO_REMAINDER
        rows.append(
            {
                "j": j,
                "gbar": result.gbar[j],
                "gtilde": result.gtilde_seq[j],
                "nu": st.nu,
                "z": st.z,
                "lambda_a": st.lambda_a,
                "lambda_b": st.lambda_b,
                "q_a": st.q_a,
                "q_b": st.q_b,
                "delta_q": st.delta_q,
                "v_lambda": rem.v_lambda,
                "v_q": rem.v_q,
            }
        )
    return rows
