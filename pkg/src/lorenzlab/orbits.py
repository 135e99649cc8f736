"""Random orbits with exact chain-rule propagation of derivatives.

An orbit record tracks, step by step, the composed map value, the first and
second derivatives of the composition, and the distortion sum

    A(x, omega, n) = sum_{i<n} Df_omega^i(x) / d(x_i, c),

which controls how far the composition stays from the critical point in the
derivative sense.  Orbits stop early (with a flag, not an exception) when a
point falls inside the machine guard around c.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .maps import CRITICAL_GUARD, PerturbedFamily

__all__ = ["OrbitRecord", "random_orbit"]


@dataclass
class OrbitRecord:
    """A random orbit together with its derivative cocycle and distortion sum.

    ``points[i]`` is the i-th iterate, ``d1[i]`` and ``d2[i]`` the first and
    second derivatives of the i-step composition at ``x0``, and ``asum[i]``
    the distortion sum over the first i steps.  When ``hit_critical`` is
    True the arrays are truncated at the offending point and everything past
    it is invalid (the distortion sum is conventionally infinite from there).
    """

    x0: float
    omega: np.ndarray
    points: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    asum: np.ndarray
    hit_critical: bool = False
    hit_index: int | None = None

    @property
    def n(self) -> int:
        """Number of completed steps."""
        return len(self.points) - 1

    def distance_to_critical(self, c: float) -> np.ndarray:
        return np.abs(self.points - c)


def random_orbit(
    family: PerturbedFamily,
    x0: float,
    omega,
    n: int,
    guard: float = CRITICAL_GUARD,
) -> OrbitRecord:
    """Iterate f_omega^n(x0) recording derivatives and the distortion sum.

    ``omega`` is any sequence of noise values of length >= n (a NoiseStream
    prefix works).  Early critical hits truncate the record and set
    ``hit_critical``; they do not raise.
    """
    omega = _noise_prefix(omega, n)
    c = family.base.c
    points = np.empty(n + 1, dtype=float)
    d1 = np.empty(n + 1, dtype=float)
    d2 = np.empty(n + 1, dtype=float)
    asum = np.empty(n + 1, dtype=float)
    points[0], d1[0], d2[0], asum[0] = x0, 1.0, 0.0, 0.0
    x = x0
    hit = None
    for i in range(n):
        if abs(x - c) < guard:
            hit = i
            break
        t = float(omega[i])
        df, df2 = family.derivatives(t, x)
        asum[i + 1] = asum[i] + d1[i] / abs(x - c)
        d2[i + 1] = df2 * d1[i] * d1[i] + df * d2[i]
        d1[i + 1] = df * d1[i]
        x = family.eval(t, x)
        points[i + 1] = x
    if hit is not None:
        k = hit + 1
        return OrbitRecord(
            x0=x0,
            omega=omega[:hit],
            points=points[:k],
            d1=d1[:k],
            d2=d2[:k],
            asum=asum[:k],
            hit_critical=True,
            hit_index=hit,
        )
    return OrbitRecord(x0=x0, omega=omega, points=points, d1=d1, d2=d2, asum=asum)


def _noise_prefix(omega, n: int) -> np.ndarray:
    """Normalise a noise source to an ndarray prefix of length n."""
    if hasattr(omega, "prefix"):
        return omega.prefix(n)
    arr = np.asarray(omega, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if len(arr) < n:
        raise ValueError(f"noise prefix of length {len(arr)} shorter than n={n}")
    return arr[:n]
