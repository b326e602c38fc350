"""Group actions on planar point clouds and the transformation posterior.

Three actions are supported, each with an exact Jacobian log-determinant:

* ``rotation``   -- SO(d) acting by ``p -> R p``
* ``affine``     -- Aff(d) in homogeneous form acting by ``p -> A p + b``
* ``homography`` -- SL(3) acting projectively, ``p -> (H p^)_{1:2} / (H p^)_3``

For an observed cloud ``x~`` and a data prior with energy ``E_x`` the
posterior over transformations has energy

    E(g) = E_x(g^{-1} . x~) - log |det J_{g^{-1}}(x~)|

The posterior assumes the action is free on ``x~``.  Clouds with a
nontrivial stabilizer (e.g. a lone point at the rotation center, or
collinear points under the affine group) leave flat directions in ``E``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import EstimationError, HorizonError
from .lie import GroupDescriptor, GroupElement, inverse
from .sampler import EnergyHandle, SamplerConfig, tied_sample

HORIZON = 1e-9
ACTION_KINDS = ("rotation", "affine", "homography")


@dataclass(frozen=True)
class DataEnergy:
    """Energy on point clouds, vectorized over leading axes of ``(..., k, d)``."""

    eval: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    shape: tuple | None = None
    name: str = "prior"

    def __call__(self, x) -> float:
        return float(self.eval(np.asarray(x, dtype=float)))


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError(f"point cloud must be a non-empty (k, d) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud has non-finite entries")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def k(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y"] if self.d == 2 else [f"x{i + 1}" for i in range(self.d)])
            for row in self.points:
                writer.writerow([f"{v:.17g}" for v in row])

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.points.tolist()))

    @classmethod
    def read(cls, path) -> "PointCloud":
        """Load from ``.json`` (array of arrays) or CSV with a header row."""
        path = Path(path)
        if path.suffix.lower() == ".json":
            data = json.loads(path.read_text())
            if not isinstance(data, list) or not data or not all(isinstance(r, list) for r in data):
                raise ValueError(f"{path}: expected a JSON array of arrays")
            widths = {len(r) for r in data}
            if len(widths) != 1:
                raise ValueError(f"{path}: ragged rows")
            return cls(np.array(data, dtype=float))
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise ValueError(f"{path}: expected a header and at least one point")
        width = len(rows[0])
        body = [r for r in rows[1:] if r]
        if any(len(r) != width for r in body):
            raise ValueError(f"{path}: every row needs {width} columns")
        return cls(np.array(body, dtype=float))


def _points(x) -> np.ndarray:
    if isinstance(x, PointCloud):
        return x.points
    return PointCloud(x).points


@dataclass(frozen=True)
class ActionDescriptor:
    kind: str
    group: GroupDescriptor

    def __post_init__(self):
        fam, m = self.group.family, self.group.m
        ok = {
            "rotation": fam == "so",
            "affine": fam == "aff",
            "homography": fam == "sl" and m == 3,
        }.get(self.kind)
        if ok is None:
            raise ValueError(f"unknown action kind {self.kind!r}; choose from {ACTION_KINDS}")
        if not ok:
            raise ValueError(f"{self.kind} action is incompatible with group {self.group.name}")

    @property
    def dim(self) -> int:
        return self.group.m if self.kind == "rotation" else (self.group.m - 1)


def _homogeneous(x: np.ndarray) -> np.ndarray:
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


def act_matrices(mats: np.ndarray, x: np.ndarray, kind: str, strict: bool = True) -> np.ndarray:
    """Apply a stack of transformation matrices ``(..., m, m)`` to one cloud ``(k, d)``.

    With ``strict=False`` homography points near the horizon come back as NaN
    instead of raising.
    """
    mats = np.asarray(mats, dtype=float)
    if kind == "rotation":
        return x @ np.swapaxes(mats, -1, -2)
    if kind == "affine":
        d = x.shape[-1]
        return x @ np.swapaxes(mats[..., :d, :d], -1, -2) + mats[..., None, :d, d]
    u = _homogeneous(x) @ np.swapaxes(mats, -1, -2)
    w = u[..., 2:]
    near = np.abs(w) < HORIZON
    if np.any(near):
        if strict:
            raise HorizonError("homography maps a point to within 1e-9 of the horizon")
        w = np.where(near, np.nan, w)
    return u[..., :2] / w


def logdet_matrices(mats: np.ndarray, x: np.ndarray, kind: str, strict: bool = True) -> np.ndarray:
    """Total ``log|det J_g(x)|`` over the cloud for a stack of matrices."""
    mats = np.asarray(mats, dtype=float)
    k = x.shape[0]
    if kind == "rotation":
        return np.zeros(mats.shape[:-2])
    if kind == "affine":
        d = x.shape[-1]
        return k * np.log(np.abs(np.linalg.det(mats[..., :d, :d])))
    w = (_homogeneous(x) @ np.swapaxes(mats, -1, -2))[..., 2]
    near = np.abs(w) < HORIZON
    if np.any(near):
        if strict:
            raise HorizonError("homography maps a point to within 1e-9 of the horizon")
        w = np.where(near, np.nan, w)
    # general projective Jacobian: det J = det(H) / w^3
    return k * np.log(np.abs(np.linalg.det(mats))) - 3 * np.log(np.abs(w)).sum(axis=-1)


def act(g: GroupElement, x, a: ActionDescriptor) -> np.ndarray:
    """Transform every point of ``x`` by ``g``."""
    pts = _points(x)
    if pts.shape[1] != a.dim:
        raise ValueError(f"{a.kind} on {a.group.name} needs {a.dim}-d points, got {pts.shape[1]}")
    return act_matrices(g.matrix, pts, a.kind)


def log_abs_det_jacobian(g: GroupElement, x, a: ActionDescriptor) -> float:
    pts = _points(x)
    if pts.shape[1] != a.dim:
        raise ValueError(f"{a.kind} on {a.group.name} needs {a.dim}-d points")
    return float(logdet_matrices(g.matrix, pts, a.kind))


def _safe_inv(group: GroupDescriptor, mats: np.ndarray):
    """Inverse of a stack; non-finite or singular entries become the identity and are flagged."""
    mats = np.asarray(mats, dtype=float)
    ok = np.isfinite(mats).all(axis=(-1, -2))
    if group.family != "so":
        with np.errstate(invalid="ignore", over="ignore"):
            det = np.linalg.det(np.where(ok[..., None, None], mats, 0.0))
        ok &= np.isfinite(det) & (np.abs(det) > 1e-300)
    safe = np.where(ok[..., None, None], mats, np.eye(mats.shape[-1]))
    return group.inv(safe), ok


def posterior_handle(prior: DataEnergy, x_tilde, a: ActionDescriptor) -> EnergyHandle:
    """Posterior energy ``E(g) = E_x(g^{-1} x~) - log|det J_{g^{-1}}(x~)|`` as a batched handle.

    Points pushed to the homography horizon give ``+inf`` (the sampler drops
    such terms).  A matrix gradient is attached when the prior has one.
    """
    xt = _points(x_tilde)
    group, kind = a.group, a.kind
    k = xt.shape[0]

    def ev(mats):
        h, ok = _safe_inv(group, mats)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            y = act_matrices(h, xt, kind, strict=False)
            e = prior.eval(y) - logdet_matrices(h, xt, kind, strict=False)
        return np.where(np.isfinite(e) & ok, e, np.inf)

    grad = None
    if prior.grad is not None:
        def grad(mats):
            h, _ = _safe_inv(group, mats)
            with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
                y = act_matrices(h, xt, kind, strict=False)
                gy = prior.grad(y)
                if kind == "rotation":
                    d_h = np.einsum("...pi,pj->...ij", gy, xt)
                elif kind == "affine":
                    d = xt.shape[1]
                    d_h = np.zeros(mats.shape)
                    d_h[..., :d, :d] = np.einsum("...pi,pj->...ij", gy, xt)
                    d_h[..., :d, d] = gy.sum(axis=-2)
                    d_h -= k * np.swapaxes(mats, -1, -2)
                else:
                    xh = _homogeneous(xt)
                    w = (xh @ np.swapaxes(h, -1, -2))[..., 2]
                    gu = np.concatenate([gy / w[..., None], (-(gy * y).sum(-1) / w)[..., None]], axis=-1)
                    d_h = np.einsum("...pi,pj->...ij", gu, xh)
                    d_h -= k * np.swapaxes(mats, -1, -2)
                    d_h[..., 2, :] += 3 * np.einsum("...p,pj->...j", 1.0 / w, xh)
                ht = np.swapaxes(h, -1, -2)
                return -ht @ d_h @ ht

    return EnergyHandle(ev, grad, name=f"posterior[{prior.name},{kind}]")


def posterior_energy(g: GroupElement, prior: DataEnergy, x_tilde, a: ActionDescriptor) -> float:
    h = inverse(g)
    xt = _points(x_tilde)
    return float(prior.eval(act(h, xt, a))) - log_abs_det_jacobian(h, xt, a)


def canonicalize(x_tilde, prior: DataEnergy, a: ActionDescriptor, cfg: SamplerConfig, rng=None):
    """Sample ``h`` from the posterior and return ``(h, h^{-1} . x~)``."""
    xt = _points(x_tilde)
    batch = tied_sample(posterior_handle(prior, xt, a), a.group, replace(cfg, chains=1, trace=False), rng)
    if batch.failures:
        raise EstimationError(batch.failures[0])
    h = GroupElement(batch.samples[0], a.group)
    return h, act(inverse(h), xt, a)


def equivariant_predict(f: Callable, x_tilde, prior: DataEnergy, a: ActionDescriptor, cfg: SamplerConfig,
                        ensemble: int = 1, rng=None, invariant: bool = False):
    """Average of ``g . f(g^{-1} . x~)`` over ``ensemble`` posterior draws.

    ``invariant=True`` declares that ``f``'s output does not transform, and the
    outer action is skipped.  Otherwise ``f`` must return a point cloud.
    """
    if ensemble < 1:
        raise ValueError("ensemble must be >= 1")
    xt = _points(x_tilde)
    batch = tied_sample(posterior_handle(prior, xt, a), a.group,
                        replace(cfg, chains=ensemble, trace=False), rng)
    if batch.failures:
        raise EstimationError(next(iter(batch.failures.values())))
    outs = []
    for mat in batch.samples:
        h = GroupElement(mat, a.group)
        y = f(act(inverse(h), xt, a))
        outs.append(np.asarray(y, dtype=float) if invariant else act(h, y, a))
    return np.mean(outs, axis=0)


def data_distance(x, y) -> float:
    """Root-mean-square point-to-point distance between two clouds."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    return float(np.sqrt(((x - y) ** 2).sum(axis=-1).mean()))
