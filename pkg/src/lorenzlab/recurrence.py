"""Return times, depth traces, binding periods, pullbacks and backward contraction.

Everything here measures recurrence of (random) orbits into the critical
neighborhood

    B(delta) = f^{-1}(c1+, c1+ + delta)  u  f^{-1}(c1- - delta, c1-),

an interval around c (minus c itself) whose one-sided radii are closed form
for the affine power-law branches.  Long scans run in log space so that
derivative products never overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CriticalHit, DeltaOutOfRange, EmptyPullback
from .maps import CRITICAL_GUARD, MapParams, PerturbedFamily
from .orbits import _noise_prefix

__all__ = [
    "CriticalNeighborhood",
    "critical_neighborhood",
    "d_star",
    "ReturnEvent",
    "landing_time",
    "good_return_time",
    "good_return_or_expansion_time",
    "DepthTrace",
    "depth_trace",
    "BindingPeriodRecord",
    "binding_period",
    "PullbackChain",
    "pullback_component",
    "backward_contraction_check",
]

DEFAULT_DELTA_STAR = 0.05


@dataclass(frozen=True)
class CriticalNeighborhood:
    """Two-sided neighborhood of c pulled back from delta-bands at the critical values."""

    params: MapParams
    delta: float
    left_radius: float
    right_radius: float

    @property
    def length(self) -> float:
        return self.left_radius + self.right_radius

    @property
    def expansion_scale(self) -> float:
        """delta / |B(delta)|, comparable to delta**(1 - 1/ell)."""
        return self.delta / self.length

    @property
    def lo(self) -> float:
        return self.params.c - self.left_radius

    @property
    def hi(self) -> float:
        return self.params.c + self.right_radius

    def contains(self, x: float) -> bool:
        return self.lo < x < self.hi and x != self.params.c

    def contains_vec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x > self.lo) & (x < self.hi)

    def interval(self) -> tuple[float, float]:
        """The filled interval including c (the hat variant)."""
        return self.lo, self.hi


def critical_neighborhood(
    params: MapParams, delta: float, check_range: bool = True
) -> CriticalNeighborhood:
    """Closed-form critical neighborhood at scale delta.

    Radii are c*(delta/u)**(1/ell) on the left and (1-c)*(delta/v)**(1/ell)
    on the right.  Scales must satisfy 0 < delta < min(u - (1 - v), u, v) so
    the two defining bands stay inside the branch images.
    """
    if check_range:
        cap = min(params.u - (1.0 - params.v), params.u, params.v)
        if not 0.0 < delta < cap:
            raise DeltaOutOfRange(f"delta={delta} outside (0, {cap})")
    inv_ell = 1.0 / params.ell
    left = params.c * (delta / params.u) ** inv_ell
    right = (1.0 - params.c) * (delta / params.v) ** inv_ell
    return CriticalNeighborhood(params, delta, left, right)


def d_star(params: MapParams, x: float, delta_star: float = DEFAULT_DELTA_STAR) -> float:
    """Distance-to-critical at reference scale: d(f(x), CV) inside B(delta_star), else delta_star."""
    nb = critical_neighborhood(params, delta_star)
    if nb.contains(x):
        fx = params.eval(x)
        return min(abs(fx - params.c1_plus), abs(fx - params.c1_minus))
    return delta_star


@dataclass
class ReturnEvent:
    """A stopping event of a random orbit with the witnesses of its defining inequality."""

    kind: str  # "landing" | "theta_good" | "tau_scale"
    time: int
    delta: float | None
    theta: float | None
    tau: float | None
    log_df: float
    log_asum: float
    nbhd_length: float | None

    @property
    def df(self) -> float:
        return math.exp(self.log_df)

    @property
    def asum(self) -> float:
        return math.exp(self.log_asum)

    def inequality_holds(self, theta0: float | None = None) -> bool:
        """Re-evaluate the defining inequality from the stored witnesses."""
        if self.kind == "theta_good":
            return math.log(self.theta) + self.log_df >= self.log_asum + math.log(self.nbhd_length)
        if self.kind == "tau_scale":
            return math.log(theta0) + self.log_df >= 1.0 + math.log(self.tau) + self.log_asum
        return True


def _step_state(family, t, x, log_df, log_asum, c, guard, step):
    """One scan step: accumulate the distortion-sum term at x, then map x."""
    d = abs(x - c)
    if d < guard:
        raise CriticalHit(step, x)
    df = family.base.deriv(x)
    if t != 0.0:
        df += t * family.taper_d(x)
    log_asum = np.logaddexp(log_asum, log_df - math.log(d))
    log_df += math.log(df)
    w = family.taper(x) if t != 0.0 else 0.0
    if x < c:
        z = (c - x) / c
        x = family.base.u * (1.0 - z**family.base.ell)
    else:
        z = (x - c) / (1.0 - c)
        x = 1.0 - family.base.v + family.base.v * z**family.base.ell
    if t != 0.0:
        x += t * w
    return x, log_df, log_asum


def landing_time(
    family: PerturbedFamily,
    model,
    x: float,
    omega,
    delta: float,
    horizon: int,
    guard: float = CRITICAL_GUARD,
) -> int | None:
    """First s >= 0 with f_omega^s(x) in B(delta), or None within the horizon."""
    nb = critical_neighborhood(family.base, delta)
    if nb.contains(x):
        return 0
    values = _noise_prefix(omega, horizon)
    c = family.base.c
    y = x
    for s in range(1, horizon + 1):
        if abs(y - c) < guard:
            raise CriticalHit(s - 1, y)
        y = family.eval(float(values[s - 1]), y)
        if nb.contains(y):
            return s
    return None


def good_return_time(
    family: PerturbedFamily,
    model,
    x: float,
    omega,
    delta: float,
    theta: float,
    horizon: int,
    guard: float = CRITICAL_GUARD,
) -> ReturnEvent | None:
    """First s >= 1 returning to B(delta) with distortion controlled by theta.

    The defining inequality is theta * Df_omega^s(x) >= A(x, omega, s) * |B(delta)|;
    a return satisfying it admits a full-size diffeomorphic pullback window.
    """
    nb = critical_neighborhood(family.base, delta)
    values = _noise_prefix(omega, horizon)
    c = family.base.c
    log_theta, log_len = math.log(theta), math.log(nb.length)
    y, log_df, log_a = x, 0.0, -math.inf
    for s in range(1, horizon + 1):
        y, log_df, log_a = _step_state(family, float(values[s - 1]), y, log_df, log_a, c, guard, s - 1)
        if nb.contains(y) and log_theta + log_df >= log_a + log_len:
            return ReturnEvent("theta_good", s, delta, theta, None, log_df, log_a, nb.length)
    return None


def default_scale_grid(params: MapParams, delta: float, delta_star: float = DEFAULT_DELTA_STAR):
    """Geometric grid {delta * e^k} up to delta_star (capped at admissible scales)."""
    cap = min(delta_star, 0.999 * min(params.u - (1.0 - params.v), params.u, params.v))
    grid = []
    d = delta
    while d <= cap * (1.0 + 1e-12):
        grid.append(d)
        d *= math.e
    return grid or [delta]


def good_return_or_expansion_time(
    family: PerturbedFamily,
    model,
    x: float,
    omega,
    delta: float,
    theta: float,
    tau: float,
    horizon: int,
    theta0: float = 0.01,
    delta_star: float = DEFAULT_DELTA_STAR,
    scale_grid=None,
    guard: float = CRITICAL_GUARD,
) -> ReturnEvent | None:
    """Earliest of (a) a theta-good return at some scale >= delta, (b) a tau-scale
    expansion time with theta0 * Df >= e * tau * A.

    The scale infimum runs over a geometric grid with ratio e from delta up to
    delta_star; refining the grid can only make the reported time earlier.
    Ties at the same step report the good return (it carries the scale).
    """
    params = family.base
    if scale_grid is None:
        scale_grid = default_scale_grid(params, delta, delta_star)
    nbs = [critical_neighborhood(params, d) for d in scale_grid]
    log_lens = [math.log(nb.length) for nb in nbs]
    values = _noise_prefix(omega, horizon)
    c = params.c
    log_theta = math.log(theta)
    log_tau_rhs = 1.0 + math.log(tau)  # log(e * tau)
    log_theta0 = math.log(theta0)
    y, log_df, log_a = x, 0.0, -math.inf
    for s in range(1, horizon + 1):
        y, log_df, log_a = _step_state(family, float(values[s - 1]), y, log_df, log_a, c, guard, s - 1)
        for nb, log_len in zip(nbs, log_lens):
            if nb.contains(y) and log_theta + log_df >= log_a + log_len:
                return ReturnEvent("theta_good", s, nb.delta, theta, tau, log_df, log_a, nb.length)
        if log_theta0 + log_df >= log_tau_rhs + log_a:
            return ReturnEvent("tau_scale", s, None, theta, tau, log_df, log_a, None)
    return None


@dataclass
class DepthTrace:
    """Per-step depth values and visit counters of a random orbit.

    ``q[j]`` is the depth of the j-th skew-product state: the smallest
    nonnegative integer q with Df_{omega_j}(x_j) * d(x_j, c) >= e^{-q} * eps.
    ``Q(n1, n2)`` and ``visits(n1, n2)`` are inclusive range sums.
    """

    eps: float
    points: np.ndarray
    q: np.ndarray
    in_nbhd: np.ndarray
    _q_prefix: np.ndarray = field(repr=False, default=None)
    _g_prefix: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        self._q_prefix = np.concatenate([[0], np.cumsum(self.q)])
        self._g_prefix = np.concatenate([[0], np.cumsum(self.in_nbhd.astype(np.int64))])

    @property
    def n(self) -> int:
        return len(self.q) - 1

    def Q(self, n1: int, n2: int) -> int:
        """Sum of depths over steps n1..n2 inclusive."""
        return int(self._q_prefix[n2 + 1] - self._q_prefix[n1])

    def visits(self, n1: int, n2: int) -> int:
        """Number of steps n1..n2 (inclusive) with the orbit inside B(eps)."""
        return int(self._g_prefix[n2 + 1] - self._g_prefix[n1])

    def bad_membership(self, m: int, kappa: float) -> dict:
        """Horizon-limited membership test for the bad set at (m, kappa).

        Clause 1 requires Q(0, s) > min(m, kappa * visits(0, s)) for every
        s up to the horizon; clause 2 (an infinite-time limit) is
        approximated by the horizon value of Q and flagged as such.
        """
        clause1 = True
        for s in range(self.n + 1):
            if not self.Q(0, s) > min(m, kappa * self.visits(0, s)):
                clause1 = False
                break
        clause2 = self.Q(0, self.n) >= m
        return {
            "is_bad": clause1 and clause2,
            "clause1": clause1,
            "clause2_at_horizon": clause2,
            "approximate": True,
            "horizon": self.n,
        }


def depth_value(family: PerturbedFamily, eps: float, t: float, x: float) -> int:
    """Depth q of a single skew-product state (x with next noise t)."""
    df = family.base.deriv(x)
    if t != 0.0:
        df += t * family.taper_d(x)
    prod = df * abs(x - family.base.c)
    if prod >= eps:
        return 0
    return max(0, math.ceil(math.log(eps / prod)))


def depth_trace(
    family: PerturbedFamily,
    model,
    x: float,
    omega,
    eps: float,
    n: int,
    guard: float = CRITICAL_GUARD,
) -> DepthTrace:
    """Depth values, neighborhood visits and cumulative counters for n+1 states."""
    if n < 1:
        raise ValueError("n must be >= 1")
    values = _noise_prefix(omega, n + 1)
    nb = critical_neighborhood(family.base, eps)
    c = family.base.c
    points = np.empty(n + 1)
    q = np.empty(n + 1, dtype=np.int64)
    flags = np.empty(n + 1, dtype=bool)
    y = x
    for j in range(n + 1):
        if abs(y - c) < guard:
            raise CriticalHit(j, y)
        points[j] = y
        q[j] = depth_value(family, eps, float(values[j]), y)
        flags[j] = nb.contains(y)
        if j < n:
            y = family.eval(float(values[j]), y)
    return DepthTrace(eps=eps, points=points, q=q, in_nbhd=flags)


@dataclass
class BindingPeriodRecord:
    """Preferred binding period of a critical value at scale delta with witnesses."""

    v: float
    delta: float
    M: int
    theta: float
    L: float
    zeta: float
    asum: float  # distortion sum of the deterministic orbit over M steps
    df_after: float  # derivative of the (M+1)-step composition at v
    delta_prime: float
    min_cv_clearance: float  # min over j < M of d_*(f^j(v), c) relative to L*delta

    def verify(self, params: MapParams, delta_star: float = DEFAULT_DELTA_STAR) -> bool:
        """Re-check the three defining inequalities from scratch."""
        nbL = critical_neighborhood(params, self.L * self.delta)
        x = self.v
        asum = 0.0
        dfn = 1.0
        for j in range(self.M):
            if nbL.contains(x):
                return False
            asum += dfn / abs(x - params.c)
            dfn *= params.deriv(x)
            x = params.eval(x)
        if asum > self.theta / self.delta * (1.0 + 1e-12):
            return False
        dprime = max(d_star(params, x, delta_star), self.delta)
        df_after = dfn * params.deriv(x)
        return df_after >= (dprime / self.delta) ** (1.0 - self.zeta) * (1.0 - 1e-12)


def binding_period(
    params: MapParams,
    v: float,
    delta: float,
    theta: float,
    L: float,
    zeta: float,
    horizon: int,
    delta_star: float = DEFAULT_DELTA_STAR,
    guard: float = CRITICAL_GUARD,
) -> BindingPeriodRecord | None:
    """Largest binding period M <= horizon with all three witnesses satisfied.

    Locates the maximal N with A(v, f, N) <= theta/delta, then searches M <= N
    (largest first) for which the orbit stays out of B(L*delta) up to M and the
    (M+1)-step derivative clears (delta'/delta)**(1 - zeta).  Returns None with
    no record when no M qualifies, which is possible at coarse scales.
    """
    if not 0.0 < zeta < 1.0 / params.ell:
        raise ValueError(f"zeta={zeta} outside (0, 1/ell)")
    if not L > 2.0 ** (params.ell + 1.0):
        raise ValueError(f"L={L} must exceed 2**(ell+1)")
    nbL = critical_neighborhood(params, L * delta)
    budget = theta / delta
    x = v
    asum = 0.0
    dfn = 1.0
    orbit = [x]
    asums = [0.0]
    dfns = [1.0]
    outside = []
    for j in range(horizon + 1):
        if abs(x - params.c) < guard:
            raise CriticalHit(j, x)
        outside.append(not nbL.contains(x))
        asum += dfn / abs(x - params.c)
        if asum > budget:
            break
        dfn *= params.deriv(x)
        x = params.eval(x)
        orbit.append(x)
        asums.append(asum)
        dfns.append(dfn)
    n_max = len(asums) - 1  # A(v, f, n_max) <= theta/delta
    if n_max < 1:
        return None
    clear_prefix = np.cumprod(outside[: n_max + 1]).astype(bool)
    for M in range(n_max, 0, -1):
        if not clear_prefix[M - 1]:
            continue
        xM = orbit[M]
        dprime = max(d_star(params, xM, delta_star), delta)
        df_after = dfns[M] * params.deriv(xM)
        if df_after >= (dprime / delta) ** (1.0 - zeta):
            clearance = min(
                abs(orbit[j] - params.c) / max(nbL.left_radius, nbL.right_radius)
                for j in range(M)
            )
            return BindingPeriodRecord(
                v=v,
                delta=delta,
                M=M,
                theta=theta,
                L=L,
                zeta=zeta,
                asum=asums[M],
                df_after=df_after,
                delta_prime=dprime,
                min_cv_clearance=clearance,
            )
    return None


@dataclass
class PullbackChain:
    """A backward chain of interval preimages G_0, ..., G_s of a target interval."""

    intervals: list  # [(lo, hi)] with index j = steps remaining to the target
    order: int
    boundary_steps: list

    @property
    def component(self) -> tuple[float, float]:
        return self.intervals[0]

    @property
    def length(self) -> float:
        lo, hi = self.intervals[0]
        return hi - lo


def _pull_once(family: PerturbedFamily, t: float, side: str, interval, tol=1e-12):
    """Preimage component of an interval through one branch of f_t."""
    a, b = interval
    rng_lo, rng_hi = family.branch_range(t, side)
    lo_y, hi_y = max(a, rng_lo), min(b, rng_hi)
    if hi_y <= lo_y:
        raise EmptyPullback(f"interval ({a}, {b}) misses the {side} branch image")
    c = family.base.c
    at_c = False
    if side == "left":
        x_lo = 0.0 if lo_y <= rng_lo else family.inverse_branch(t, lo_y, side, tol=tol)
        if hi_y >= rng_hi:
            x_hi, at_c = c, True
        else:
            x_hi = family.inverse_branch(t, hi_y, side, tol=tol)
    else:
        if lo_y <= rng_lo:
            x_lo, at_c = c, True
        else:
            x_lo = family.inverse_branch(t, lo_y, side, tol=tol)
        x_hi = 1.0 if hi_y >= rng_hi else family.inverse_branch(t, hi_y, side, tol=tol)
    if x_lo is None or x_hi is None or x_hi <= x_lo:
        raise EmptyPullback(f"degenerate preimage of ({a}, {b}) on the {side} branch")
    return (x_lo, x_hi), at_c


def pullback_component(
    params_or_family,
    target: tuple[float, float],
    s: int,
    branch_path=None,
    guide_orbit=None,
    omega=None,
    tol: float = 1e-12,
) -> PullbackChain:
    """Backward chain of component preimages of a target interval.

    The branch at each step comes either from an explicit ``branch_path``
    (sides ordered G_0 -> G_{s-1}) or from a ``guide_orbit`` of points whose
    sides select the components containing them.  ``omega`` supplies noise
    values for perturbed pullbacks and defaults to the zero sequence.
    """
    family = (
        params_or_family
        if isinstance(params_or_family, PerturbedFamily)
        else PerturbedFamily(params_or_family)
    )
    if s < 0:
        raise ValueError("s must be >= 0")
    if s == 0:
        return PullbackChain([tuple(target)], 0, [])
    values = _noise_prefix(omega, s) if omega is not None else np.zeros(s)
    if branch_path is not None:
        sides = list(branch_path)
        if len(sides) != s:
            raise ValueError("branch_path length must equal s")
        sides = ["left" if str(side).lower().startswith("l") else "right" for side in sides]
    else:
        if guide_orbit is None or len(guide_orbit) < s:
            raise ValueError("provide branch_path or a guide_orbit with >= s points")
        c = family.base.c
        sides = ["left" if guide_orbit[j] < c else "right" for j in range(s)]
    intervals = [None] * (s + 1)
    intervals[s] = tuple(target)
    order = 0
    boundary_steps = []
    for j in range(s - 1, -1, -1):
        intervals[j], at_c = _pull_once(family, float(values[j]), sides[j], intervals[j + 1], tol)
        if at_c:
            order += 1
            boundary_steps.append(j)
    return PullbackChain(intervals, order, sorted(boundary_steps))


def _interval_cv_distance(params: MapParams, interval) -> float:
    lo, hi = interval
    dist = math.inf
    for v in (params.c1_plus, params.c1_minus):
        if lo <= v <= hi:
            return 0.0
        dist = min(dist, abs(v - lo), abs(v - hi))
    return dist


def backward_contraction_check(
    params: MapParams,
    r: float,
    delta_ladder,
    s_max: int,
    sample_budget: int = 2000,
    seed: int = 0,
    guard: float = CRITICAL_GUARD,
) -> dict:
    """Search for violations of backward contraction with constant r.

    For each delta in the ladder, enumerates components W of the s-step
    preimages of B(r*delta) near the critical values (single-step components
    in closed form, deeper ones guided by sampled orbits that land in the
    target) and reports every W with dist(W, CV) < delta but |W| >= delta.
    An empty violation list means no violation was found at these scales,
    not a proof.  Coverage is reported as the number of distinct components
    visited.
    """
    family = PerturbedFamily(params)
    rng = np.random.default_rng(seed)
    rows = []
    violations = []
    seen = set()
    cvs = (params.c1_plus, params.c1_minus)
    per_start = max(1, sample_budget // (2 * max(1, len(list(delta_ladder)))))
    for delta in delta_ladder:
        nb_target = critical_neighborhood(params, r * delta)
        target = nb_target.interval()

        def record(chain, s, delta=delta):
            w = chain.component
            key = (s, round(w[0], 10), round(w[1], 10))
            if key in seen:
                return
            seen.add(key)
            dist = _interval_cv_distance(params, w)
            length = w[1] - w[0]
            bad = dist < delta and length >= delta
            rows.append(
                {
                    "delta": delta,
                    "s": s,
                    "w_lo": w[0],
                    "w_hi": w[1],
                    "length": length,
                    "dist_cv": dist,
                    "order": chain.order,
                    "violation": bad,
                }
            )
            if bad:
                violations.append(rows[-1])

        # single-step components in closed form, both branches
        for side in ("left", "right"):
            try:
                interval, at_c = _pull_once(family, 0.0, side, target)
            except EmptyPullback:
                continue
            record(PullbackChain([interval, target], 1 if at_c else 0, []), 1)
        # guided deeper components from orbits started near the critical values
        for v in cvs:
            starts = v + (rng.uniform(-2.0 * delta, 2.0 * delta, per_start))
            starts = starts[(starts > 0.0) & (starts < 1.0)]
            for x0 in starts:
                orbit = [x0]
                y = x0
                dead = False
                for _ in range(s_max):
                    if abs(y - params.c) < guard:
                        dead = True
                        break
                    y = params.eval(y)
                    orbit.append(y)
                if dead:
                    continue
                for s in range(1, len(orbit)):
                    if target[0] < orbit[s] < target[1]:
                        try:
                            chain = pullback_component(
                                params, target, s, guide_orbit=orbit[:s]
                            )
                        except EmptyPullback:
                            continue
                        record(chain, s)
    return {
        "rows": rows,
        "violations": violations,
        "components_visited": len(rows),
        "r": r,
        "s_max": s_max,
    }
