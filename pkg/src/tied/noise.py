"""Geometric noise schedule and sampling from the forward noise kernel ``k_t``.

The kernel is the law at time ``t`` of left-invariant Brownian motion started
at the identity, ``dw = w * gamma(t) dW``, discretized as

    w_0 = e,   w_{i+1} = w_i exp(gamma(i dt) z_i),   z_i ~ N(0, dt I)

so a draw at ``t = m dt`` is an ordered product of ``m`` exponentials.  The
log modular function of that product is a running sum over increments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GridError
from .lie import GroupDescriptor, GroupElement, modular_log
from .streams import as_generator

GRID_TOL = 1e-12


@dataclass(frozen=True)
class NoiseSchedule:
    gamma_min: float
    gamma_max: float

    def __post_init__(self):
        lo, hi = float(self.gamma_min), float(self.gamma_max)
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo <= 0 or hi <= lo:
            raise ValueError(f"need 0 < gamma_min < gamma_max, got ({lo}, {hi})")

    @property
    def ratio(self) -> float:
        return self.gamma_max / self.gamma_min

    def __call__(self, t):
        return self.gamma_min * self.ratio ** np.asarray(t, dtype=float)

    def variance(self, t):
        """Closed-form integrated variance ``int_0^t gamma(s)^2 ds`` per coordinate."""
        t = np.asarray(t, dtype=float)
        log_r = math.log(self.ratio)
        return self.gamma_min**2 * np.expm1(2 * t * log_r) / (2 * log_r)

    def grid_variance(self, m: int, dt: float) -> float:
        """Variance of the discretized kernel after ``m`` steps of size ``dt``."""
        return float(np.sum(self(np.arange(m) * dt) ** 2) * dt)


def gamma_at(t: float, sched: NoiseSchedule) -> float:
    """``gamma_min * (gamma_max / gamma_min) ** t`` for ``t`` in ``[0, 1]``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    return float(sched(t))


def grid_index(t: float, dt: float) -> int:
    """Number of steps ``m`` with ``m * dt == t``; raises if ``t`` is off-grid."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    m = int(round(t / dt))
    if m < 0 or abs(m * dt - t) > GRID_TOL:
        raise GridError(f"t={t!r} is not a multiple of dt={dt!r}")
    return m


@dataclass(frozen=True, eq=False)
class NoiseSample:
    """One draw ``w ~ k_t`` with its log modular correction.

    ``increments`` holds the algebra coefficients ``gamma(i dt) z_i``; it is
    ``None`` in streaming mode, where only the running ``log_lambda`` is kept.
    """

    w: GroupElement
    log_lambda: float
    increments: np.ndarray | None
    t: float

    def rebuild(self) -> np.ndarray:
        """Recompute ``w`` from the stored increments."""
        if self.increments is None:
            raise ValueError("increments were not stored")
        group = self.w.group
        out = group.identity()
        for mat in group.exp(self.increments):
            out = group.maybe_project(out @ mat)
        return out


def draw_increments(group: GroupDescriptor, sched: NoiseSchedule, dt: float, steps, rng,
                    size=()) -> np.ndarray:
    """Scaled Gaussian increments for the given step indices, shape ``size + (len(steps), n)``."""
    steps = np.asarray(steps, dtype=float)
    size = (size,) if isinstance(size, (int, np.integer)) else tuple(size)
    z = rng.standard_normal(size + (len(steps), group.n))
    return z * (sched(steps * dt) * math.sqrt(dt))[:, None]


def sample_noise(group: GroupDescriptor, t: float, sched: NoiseSchedule, dt: float, rng=None,
                 store_increments: bool = True) -> NoiseSample:
    """Draw ``w ~ k_t`` by ``t / dt`` Euler steps from the identity."""
    m = grid_index(t, dt)
    rng = as_generator(rng)
    inc = draw_increments(group, sched, dt, np.arange(m), rng)
    w = group.identity()
    if m:
        for mat in group.exp(inc):
            w = group.maybe_project(w @ mat)
    log_lam = modular_log(inc, group)
    return NoiseSample(GroupElement(w, group), log_lam, inc if store_increments else None, float(t))


def kernel_batch(group: GroupDescriptor, sched: NoiseSchedule, dt: float, m: int, size: int, rng):
    """``size`` independent draws from ``k_{m dt}``: matrices and log modular values.

    On abelian groups the ordered product collapses to one exponential of the
    summed increments, which is Gaussian with the summed variance; it is drawn
    directly.  Otherwise the full path is simulated for every draw.
    """
    if m == 0:
        return np.broadcast_to(group.identity(), (size, group.m, group.m)).copy(), np.zeros(size)
    if group.abelian:
        std = math.sqrt(sched.grid_variance(m, dt))
        return group.exp(rng.standard_normal((size, group.n)) * std), np.zeros(size)
    inc = draw_increments(group, sched, dt, np.arange(m), rng, size=size)
    return path_product(group, inc), -(inc.sum(axis=-2) @ group.modular_vector)


def path_product(group: GroupDescriptor, inc: np.ndarray) -> np.ndarray:
    """Ordered products ``exp(v_0) exp(v_1) ...`` along axis -2 of ``inc``."""
    mats = group.exp(inc)
    w = mats[..., 0, :, :]
    for i in range(1, inc.shape[-2]):
        w = group.maybe_project(w @ mats[..., i, :, :])
    return w
