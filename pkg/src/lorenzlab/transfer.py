"""Discretized Perron-Frobenius machinery: Ulam matrices and densities.

The Ulam discretisation of the transfer operator is the row-stochastic
matrix P[i][j] = |bin_i ∩ f^{-1}(bin_j)| / |bin_i|.  Because both branches
are monotone, bin images are intervals and every entry is an exact interval
overlap (up to root-finding tolerance inside the taper zones).  The
randomized variant averages the deterministic matrices of f_t over a noise
quadrature, which keeps matrix assembly deterministic and replayable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    NoConvergence,
    PartitionMismatch,
    PartitionTooCoarse,
)
from .maps import CRITICAL_GUARD, PerturbedFamily
from .noise import NoiseModel
from .orbits import _noise_prefix

__all__ = [
    "Partition",
    "Density",
    "UlamMatrix",
    "build_ulam",
    "stationary_density",
    "birkhoff_density",
    "l1_distance",
    "tv_distance",
    "l1_cross",
    "stability_sweep",
    "push_forward_density",
]

_EDGE_TOL = 1e-12


@dataclass(frozen=True)
class Partition:
    """Strictly increasing bin edges covering [0, 1] exactly."""

    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        if edges[0] != 0.0 or edges[-1] != 1.0:
            raise ValueError("partition must cover [0, 1] exactly")
        if not np.all(np.diff(edges) > 0.0):
            raise ValueError("partition edges must be strictly increasing")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def uniform(cls, n_bins: int, refine_at=()) -> "Partition":
        """Uniform partition with extra edges inserted at the given points.

        Densities of this map class can blow up near the critical values, so
        partitions are normally refined to place edges at c and at both
        critical values; see :func:`partition_for`.
        """
        if n_bins < 2:
            raise ValueError("n_bins must be >= 2")
        edges = np.linspace(0.0, 1.0, n_bins + 1)
        extra = [p for p in refine_at if 0.0 < p < 1.0]
        if extra:
            edges = np.concatenate([edges, np.asarray(extra, dtype=float)])
            edges.sort()
            keep = np.concatenate([[True], np.diff(edges) > _EDGE_TOL])
            edges = edges[keep]
            edges[0], edges[-1] = 0.0, 1.0
        return cls(edges)

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def has_edge_at(self, x: float, tol: float = _EDGE_TOL) -> bool:
        i = np.searchsorted(self.edges, x)
        for j in (i - 1, i, i + 1):
            if 0 <= j < len(self.edges) and abs(self.edges[j] - x) <= tol:
                return True
        return False

    def bin_of(self, x: float) -> int:
        return int(np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.n_bins - 1))

    def same_as(self, other: "Partition") -> bool:
        return len(self.edges) == len(other.edges) and bool(np.all(self.edges == other.edges))


def partition_for(family_or_params, n_bins: int) -> Partition:
    """Uniform partition refined with edges at c and both critical values."""
    params = getattr(family_or_params, "base", family_or_params)
    return Partition.uniform(n_bins, refine_at=(params.c, params.c1_plus, params.c1_minus))


@dataclass
class Density:
    """Piecewise-constant probability density on a partition."""

    partition: Partition
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != self.partition.n_bins:
            raise ValueError("weights length must match the number of bins")
        if np.any(w < -1e-15):
            raise ValueError("density weights must be nonnegative")
        total = float(np.sum(w * self.partition.widths))
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"density mass {total!r} not 1 within 1e-12")
        self.weights = np.maximum(w, 0.0)

    @classmethod
    def from_masses(cls, partition: Partition, masses: np.ndarray) -> "Density":
        masses = np.maximum(np.asarray(masses, dtype=float), 0.0)
        masses = masses / masses.sum()
        return cls(partition, masses / partition.widths)

    @property
    def masses(self) -> np.ndarray:
        return self.weights * self.partition.widths

    @classmethod
    def uniform(cls, partition: Partition) -> "Density":
        return cls(partition, np.ones(partition.n_bins))


@dataclass
class UlamMatrix:
    """Row-stochastic bin-transition matrix for one map or a noise average."""

    partition: Partition
    matrix: np.ndarray
    mode: str  # "deterministic" | "randomized" | "custom"
    eps: float | None = None
    quad_nodes: int | None = None

    def __post_init__(self):
        P = np.asarray(self.matrix, dtype=float)
        n = self.partition.n_bins
        if P.shape != (n, n):
            raise ValueError(f"matrix shape {P.shape} does not match {n} bins")
        if np.any(P < -1e-12):
            raise ValueError("matrix entries must be nonnegative")
        rows = P.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-10):
            raise ValueError(f"rows must sum to 1 within 1e-10 (worst {np.abs(rows - 1.0).max():.3e})")
        self.matrix = P

    def apply(self, density: Density) -> Density:
        """Push a density forward by one operator step (mass preserving)."""
        if not density.partition.same_as(self.partition):
            raise PartitionMismatch("density partition differs from matrix partition")
        return Density.from_masses(self.partition, density.masses @ self.matrix)


def _branch_preimages(family: PerturbedFamily, t: float, side: str, targets: np.ndarray) -> np.ndarray:
    """Preimages of sorted target values under one branch of f_t, clamped to the domain."""
    dom_lo, dom_hi = family.branch_domain(side)
    rng_lo, rng_hi = family.branch_range(t, side)
    params = family.base
    out = np.empty(len(targets), dtype=float)
    if t == 0.0:
        for k, y in enumerate(targets):
            if y <= rng_lo:
                out[k] = dom_lo
            elif y >= rng_hi:
                out[k] = dom_hi
            else:
                out[k] = params.inverse(y, side)
        return out
    for k, y in enumerate(targets):
        if y <= rng_lo:
            out[k] = dom_lo
        elif y >= rng_hi:
            out[k] = dom_hi
        else:
            out[k] = family.inverse_branch(t, y, side)
    return out


def matrix_from_branch_preimages(partition: Partition, branch_rows) -> np.ndarray:
    """Assemble bin-to-bin fractions from per-branch preimages of the edges.

    ``branch_rows`` is a list of (bin_range, preimages) pairs where
    ``preimages[k]`` is the preimage of edge k under that branch, clamped to
    the branch domain.  Useful directly as a test hook: a single branch with
    identity preimages yields the identity matrix.
    """
    edges = partition.edges
    n = partition.n_bins
    P = np.zeros((n, n))
    for bins, pre in branch_rows:
        for i in bins:
            a, b = edges[i], edges[i + 1]
            width = b - a
            lo = np.maximum(pre[:-1], a)
            hi = np.minimum(pre[1:], b)
            overlap = np.maximum(hi - lo, 0.0)
            P[i, :] = overlap / width
    return P


def _deterministic_matrix(family: PerturbedFamily, t: float, partition: Partition) -> np.ndarray:
    edges = partition.edges
    n = partition.n_bins
    c_idx = int(np.argmin(np.abs(edges - family.base.c)))
    branch_rows = [
        (range(0, c_idx), _branch_preimages(family, t, "left", edges)),
        (range(c_idx, n), _branch_preimages(family, t, "right", edges)),
    ]
    return matrix_from_branch_preimages(partition, branch_rows)


def build_ulam(
    family: PerturbedFamily,
    model: NoiseModel | None,
    partition: Partition,
    quad_nodes: int = 32,
) -> UlamMatrix:
    """Assemble the (noise-averaged) Ulam matrix on the given partition.

    Requires an edge exactly at the critical point so no bin straddles c;
    use :func:`partition_for` to build suitable partitions.
    """
    if not partition.has_edge_at(family.base.c):
        raise PartitionTooCoarse(f"no partition edge at the critical point c={family.base.c}")
    if model is None:
        P = _deterministic_matrix(family, 0.0, partition)
        P = P / P.sum(axis=1, keepdims=True)
        return UlamMatrix(partition, P, mode="deterministic")
    if model.eps > family.eps_max:
        raise ValueError(f"model.eps={model.eps} exceeds family eps_max={family.eps_max}")
    nodes, weights = model.quadrature(quad_nodes)
    P = np.zeros((partition.n_bins, partition.n_bins))
    for t, w in zip(nodes, weights):
        P += w * _deterministic_matrix(family, float(t), partition)
    P = P / P.sum(axis=1, keepdims=True)
    return UlamMatrix(partition, P, mode="randomized", eps=model.eps, quad_nodes=quad_nodes)


def stationary_density(
    matrix: UlamMatrix,
    tol: float = 1e-10,
    max_iters: int = 200_000,
    initial: Density | None = None,
    check_every: int = 16,
) -> tuple[Density, dict]:
    """Left fixed vector of the Ulam matrix by damped power iteration.

    Iterates pi <- pi (P + I)/2, which has the same fixed vectors as P but
    damps oscillatory modes (the attractor of a contracting Lorenz map can
    consist of cyclically exchanged bands, putting -1 in the spectrum).  The
    reported residual is the undamped fixed-point defect ||pi P - pi||_1.
    Raises NoConvergence when the residual has not reached ``tol`` after
    ``max_iters`` iterations.
    """
    P = matrix.matrix
    n = matrix.partition.n_bins
    if initial is not None:
        if not initial.partition.same_as(matrix.partition):
            raise PartitionMismatch("initial density partition differs from matrix partition")
        pi = initial.masses.copy()
    else:
        pi = np.full(n, 1.0 / n)
    residual = math.inf
    iterations = 0
    while iterations < max_iters:
        steps = min(check_every, max_iters - iterations)
        for _ in range(steps):
            pi = 0.5 * (pi + pi @ P)
        iterations += steps
        pi = pi / pi.sum()
        nxt = pi @ P
        residual = float(np.abs(nxt - pi).sum())
        if residual <= tol:
            break
    if residual > tol:
        raise NoConvergence(iterations, residual)
    info = {"iterations": iterations, "residual": residual}
    return Density.from_masses(matrix.partition, pi), info


def birkhoff_density(
    family: PerturbedFamily,
    model: NoiseModel | None,
    x0: float,
    n_steps: int,
    burn_in: int,
    partition: Partition,
    stream_id: int = 0,
    guard: float = CRITICAL_GUARD,
    chunk: int = 1 << 16,
) -> tuple[Density, dict]:
    """Normalised orbit histogram after burn-in (the empirical density).

    Critical-guard hits restart the orbit from a deterministically jittered
    point; restarts are counted and reported, never silently absorbed.
    """
    if n_steps <= burn_in:
        raise ValueError("n_steps must exceed burn_in")
    p = family.base
    c, ell, u, v = p.c, p.ell, p.u, p.v
    one_c = 1.0 - c
    edges = partition.edges
    counts = np.zeros(partition.n_bins, dtype=np.int64)
    stream = model.stream(stream_id) if model is not None else None
    restarts = 0
    jitter_scale = 1e-9
    x = x0
    buf = np.empty(chunk, dtype=float)
    fill = 0
    recorded = 0
    total = n_steps
    step = 0
    noise_buf = None
    noise_base = 0
    while step < total:
        if stream is not None:
            if noise_buf is None or step - noise_base >= len(noise_buf):
                noise_base = step
                noise_buf = stream.shift(step).prefix(min(chunk, total - step))
            t = float(noise_buf[step - noise_base])
        else:
            t = 0.0
        if abs(x - c) < guard:
            restarts += 1
            x = c + (guard * 1e3 + jitter_scale * restarts) * (1 if restarts % 2 else -1)
        w = family.taper(x) if t != 0.0 else 0.0
        if x < c:
            z = (c - x) / c
            x = u * (1.0 - z**ell)
        else:
            z = (x - c) / one_c
            x = 1.0 - v + v * z**ell
        if t != 0.0:
            x += t * w
        step += 1
        if step > burn_in:
            buf[fill] = x
            fill += 1
            recorded += 1
            if fill == chunk:
                counts += np.histogram(buf, bins=edges)[0]
                fill = 0
    if fill:
        counts += np.histogram(buf[:fill], bins=edges)[0]
    density = Density.from_masses(partition, counts.astype(float))
    return density, {"restarts": restarts, "recorded": recorded}


def l1_distance(a: Density, b: Density) -> float:
    """Integral of |a - b| over [0, 1]; requires identical partitions."""
    if not a.partition.same_as(b.partition):
        raise PartitionMismatch("densities live on different partitions")
    return float(np.sum(np.abs(a.weights - b.weights) * a.partition.widths))


def tv_distance(a: Density, b: Density) -> float:
    """Total variation distance = half the L1 distance."""
    return 0.5 * l1_distance(a, b)


def l1_cross(a: Density, b: Density) -> float:
    """L1 distance between densities on different partitions (union refinement)."""
    edges = np.union1d(a.partition.edges, b.partition.edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    wa = a.weights[np.clip(np.searchsorted(a.partition.edges, mids) - 1, 0, a.partition.n_bins - 1)]
    wb = b.weights[np.clip(np.searchsorted(b.partition.edges, mids) - 1, 0, b.partition.n_bins - 1)]
    return float(np.sum(np.abs(wa - wb) * np.diff(edges)))


def stability_sweep(
    family: PerturbedFamily,
    eps_ladder,
    partition: Partition,
    noise_kind: str = "uniform",
    L: float = 2.0,
    seed: int = 0,
    quad_nodes: int = 32,
    tol: float = 1e-10,
    max_iters: int = 200_000,
) -> list[dict]:
    """Distance of the stationary density to the zero-noise density per rung.

    The ladder must be sorted in descending order and every rung must be an
    admissible amplitude.  A rung whose power iteration fails is recorded
    with its final residual and does not abort the sweep.
    """
    ladder = [float(e) for e in eps_ladder]
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("eps ladder must be sorted in descending order")
    if any(e > family.eps_max for e in ladder):
        raise ValueError("eps ladder exceeds family eps_max")
    det_matrix = build_ulam(family, None, partition)
    zeta0, det_info = stationary_density(det_matrix, tol=tol, max_iters=max_iters)
    rows = []
    for eps in ladder:
        model = NoiseModel(eps=eps, kind=noise_kind, L=L, seed=seed)
        matrix = build_ulam(family, model, partition, quad_nodes=quad_nodes)
        try:
            zeta_eps, info = stationary_density(matrix, tol=tol, max_iters=max_iters)
            rows.append(
                {
                    "eps": eps,
                    "l1": l1_distance(zeta_eps, zeta0),
                    "tv": tv_distance(zeta_eps, zeta0),
                    "residual": info["residual"],
                    "iterations": info["iterations"],
                    "error": "",
                    "density": zeta_eps,
                }
            )
        except NoConvergence as exc:
            rows.append(
                {
                    "eps": eps,
                    "l1": float("nan"),
                    "tv": float("nan"),
                    "residual": exc.residual,
                    "iterations": exc.iterations,
                    "error": "no convergence",
                    "density": None,
                }
            )
    return rows, zeta0, det_info


def push_forward_density(
    family: PerturbedFamily,
    omega,
    interval: tuple[float, float],
    n: int,
    partition: Partition,
    n_grid: int = 10_000,
    guard: float = CRITICAL_GUARD,
) -> Density:
    """Histogram of the n-step image of normalised Lebesgue measure on J.

    Pushes a fine midpoint grid on J through the random composition and bins
    the images with equal mass 1/len(grid); grid points that enter the
    critical guard are dropped and the remainder renormalised.  Converges to
    the exact pushforward density in the joint bin/grid limit.
    """
    a, b = interval
    if not (0.0 <= a < b <= 1.0):
        raise ValueError("interval must satisfy 0 <= a < b <= 1")
    values = _noise_prefix(omega, n)
    offsets = (np.arange(n_grid) + 0.5) / n_grid
    pts = a + offsets * (b - a)
    alive = np.ones(len(pts), dtype=bool)
    c = family.base.c
    for i in range(n):
        alive &= np.abs(pts - c) >= guard
        pts[alive] = family.eval_vec(float(values[i]), pts[alive])
    pts = pts[alive]
    if len(pts) == 0:
        raise ValueError("every grid point hit the critical guard")
    counts = np.histogram(pts, bins=partition.edges)[0]
    return Density.from_masses(partition, counts.astype(float))
