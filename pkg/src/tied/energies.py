"""Built-in energies and exact low-dimensional oracles on the circle.

The circle oracles work on SO(2) through the angle ``theta = atan2(X21, X11)``.
``oracle_density_circle`` normalizes ``exp(-E)`` by periodic trapezoid
quadrature; ``oracle_noisy_score_circle`` convolves that density with the
wrapped-normal heat kernel of variance ``int_0^t gamma(s)^2 ds`` and
differentiates the result spectrally.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import EvaluationError
from .inversion import DataEnergy
from .lie import GroupElement, angle2
from .noise import NoiseSchedule
from .sampler import EnergyHandle

TWO_PI = 2 * math.pi


# -- group energies -----------------------------------------------------------


def quadratic_entry_energy(coef: float = 10.0, row: int = 0, col: int = 0) -> EnergyHandle:
    """``E(X) = -coef * X[row, col]^2`` for any matrix group."""

    def ev(x):
        return -coef * x[..., row, col] ** 2

    def grad(x):
        out = np.zeros_like(x)
        out[..., row, col] = -2 * coef * x[..., row, col]
        return out

    return EnergyHandle(ev, grad, name=f"quadratic[{coef:g}]")


SO10_QUADRATIC = quadratic_entry_energy(10.0)


def so10_quadratic_energy(g) -> float:
    """``-10 * X_11^2``; bounded in ``[-10, 0]`` on SO(n)."""
    mat = g.matrix if isinstance(g, GroupElement) else np.asarray(g)
    return float(-10.0 * mat[0, 0] ** 2)


def bimodal_circle_energy(beta: float = 4.0) -> EnergyHandle:
    """``E(theta) = -beta cos(2 theta)`` on SO(2).

    Evaluated through ``cos 2theta = X11^2 - X21^2``, which is exact on SO(2)
    and gives a polynomial matrix gradient.
    """

    def ev(x):
        return -beta * (x[..., 0, 0] ** 2 - x[..., 1, 0] ** 2)

    def grad(x):
        out = np.zeros_like(x)
        out[..., 0, 0] = -2 * beta * x[..., 0, 0]
        out[..., 1, 0] = 2 * beta * x[..., 1, 0]
        return out

    return EnergyHandle(ev, grad, name=f"bimodal[{beta:g}]")


def circle_bimodal_energy(g, beta: float = 4.0) -> float:
    mat = g.matrix if isinstance(g, GroupElement) else np.asarray(g)
    return float(-beta * math.cos(2 * math.atan2(mat[1, 0], mat[0, 0])))


def constant_energy(value: float = 0.0) -> EnergyHandle:
    return EnergyHandle(lambda x: np.full(x.shape[:-2], float(value)), lambda x: np.zeros_like(x),
                        name="constant")


def angle_energy(fn: Callable[[np.ndarray], np.ndarray], dfn: Callable | None = None, name="angle") -> EnergyHandle:
    """Lift a function of the SO(2) angle to an energy handle.

    ``dfn`` is ``dE/dtheta``; the matrix gradient is then
    ``dE/dtheta * dtheta/dX`` with ``dtheta/dX11 = -X21`` and
    ``dtheta/dX21 = X11`` on the unit circle.
    """

    def ev(x):
        return fn(angle2(x))

    grad = None
    if dfn is not None:
        def grad(x):
            d = dfn(angle2(x))
            out = np.zeros_like(x)
            out[..., 0, 0] = -d * x[..., 1, 0]
            out[..., 1, 0] = d * x[..., 0, 0]
            return out

    return EnergyHandle(ev, grad, name=name)


# -- data priors ----------------------------------------------------------------


def gaussian_prior_energy(x, center, scale: float = 1.0) -> float:
    """``||x - center||^2 / (2 scale^2)``, summed over all points."""
    x, center = np.asarray(x, float), np.asarray(center, float)
    if x.shape != center.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {center.shape}")
    return float(((x - center) ** 2).sum() / (2 * scale**2))


def gaussian_prior(center, scale: float = 1.0) -> DataEnergy:
    """Batched isotropic Gaussian prior around a template point cloud."""
    center = np.asarray(center, dtype=float)
    inv = 1.0 / scale**2

    def ev(x):
        return 0.5 * inv * ((x - center) ** 2).sum(axis=(-1, -2))

    def grad(x):
        return inv * (x - center)

    return DataEnergy(ev, grad, shape=center.shape, name=f"gaussian[{scale:g}]")


# -- circle oracles -------------------------------------------------------------


@dataclass(frozen=True)
class OracleDensity:
    """Density on a uniform periodic angle grid ``grid[j] = -pi + j * width``."""

    grid: np.ndarray
    density: np.ndarray
    t: float = 0.0

    @property
    def width(self) -> float:
        return TWO_PI / len(self.grid)

    def bin_masses(self, bins: int) -> np.ndarray:
        """Probability of each of ``bins`` equal arcs covering ``[-pi, pi)``.

        Integrates the periodic trapezoid interpolant exactly; requires the
        fine grid to be a multiple of ``bins`` or falls back to interpolating
        the cumulative mass.
        """
        n = len(self.grid)
        if n % bins == 0:
            k = n // bins
            # trapezoid weights: cell j spans grid[j] .. grid[j+1]
            cell = 0.5 * (self.density + np.roll(self.density, -1)) * self.width
            return cell.reshape(bins, k).sum(axis=1)
        cell = 0.5 * (self.density + np.roll(self.density, -1)) * self.width
        cum = np.concatenate([[0.0], np.cumsum(cell)])
        nodes = np.concatenate([self.grid, [math.pi]])
        edges = np.linspace(-math.pi, math.pi, bins + 1)
        return np.diff(np.interp(edges, nodes, cum))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["theta", "density"])
            for th, p in zip(self.grid, self.density):
                writer.writerow([f"{th:.17g}", f"{p:.17g}"])

    @classmethod
    def from_csv(cls, path, t: float = 0.0) -> "OracleDensity":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], t)


def circle_grid(bins: int) -> np.ndarray:
    return -math.pi + TWO_PI * np.arange(bins) / bins


def _rotations(theta: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def _circle_energy_values(energy: EnergyHandle, theta: np.ndarray) -> np.ndarray:
    with np.errstate(all="ignore"):
        e = np.asarray(energy.eval(_rotations(theta)), dtype=float)
    if not np.all(np.isfinite(e)):
        raise EvaluationError("energy is non-finite on the oracle grid")
    return e


def oracle_density_circle(energy: EnergyHandle, bins: int = 4096) -> OracleDensity:
    """Normalized ``exp(-E)`` on SO(2) by periodic trapezoid quadrature."""
    if bins < 64:
        raise ValueError("oracle needs at least 64 bins")
    theta = circle_grid(bins)
    e = _circle_energy_values(energy, theta)
    p = np.exp(-(e - e.min()))
    p /= p.sum() * (TWO_PI / bins)
    return OracleDensity(theta, p, 0.0)


def wrapped_normal(theta, var: float) -> np.ndarray:
    """Wrapped normal density on the circle; image sum over ``max(6 sigma wraps, 50)`` terms."""
    theta = np.asarray(theta, dtype=float)
    if var <= 0:
        raise ValueError("variance must be positive")
    sigma = math.sqrt(var)
    wraps = max(int(math.ceil(6 * sigma / TWO_PI)) + 1, 50)
    k = np.arange(-wraps, wraps + 1)
    z = theta[..., None] + TWO_PI * k
    return np.exp(-0.5 * z**2 / var).sum(axis=-1) / math.sqrt(TWO_PI * var)


def oracle_noisy_density_circle(energy: EnergyHandle, t: float, sched: NoiseSchedule, bins: int = 4096,
                                variance: float | None = None) -> OracleDensity:
    """``p_t = p_0 (*) wrapped normal`` on the circle by periodic quadrature (FFT)."""
    var = float(sched.variance(t)) if variance is None else float(variance)
    p0 = oracle_density_circle(energy, bins)
    h = p0.width
    theta = p0.grid
    # kernel sampled at offsets 0, h, 2h, ... for a circular convolution
    kern = wrapped_normal(TWO_PI * np.arange(bins) / bins, var)
    kern /= kern.sum() * h
    pt = np.real(np.fft.ifft(np.fft.fft(p0.density) * np.fft.fft(kern))) * h
    pt = np.maximum(pt, 0.0)
    pt /= pt.sum() * h
    return OracleDensity(theta, pt, float(t))


def oracle_noisy_score_circle(energy: EnergyHandle, t: float, sched: NoiseSchedule, bins: int = 4096,
                              variance: float | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """Return ``theta -> d/dtheta log p_t(theta)`` for the SO(2) circle.

    The convolved density is represented by its Fourier series on the grid,
    which gives both the derivative and off-grid evaluation spectrally.
    """
    if variance is None and not 0 < t <= 1:
        raise ValueError("t must lie in (0, 1]")
    dens = oracle_noisy_density_circle(energy, t, sched, bins, variance)
    coef = np.fft.rfft(dens.density) / bins
    k = np.arange(len(coef))
    weight = np.where((k == 0) | ((bins % 2 == 0) & (k == bins // 2)), 1.0, 2.0)
    coef = coef * weight
    theta0 = dens.grid[0]

    def score(theta):
        theta = np.asarray(theta, dtype=float)
        phase = np.exp(1j * np.multiply.outer(theta - theta0, k))
        p = np.real(phase @ coef)
        dp = np.real(phase @ (1j * k * coef))
        return dp / p

    return score
