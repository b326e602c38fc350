"""Matrix Lie groups: catalog, exponential map, group operations, brackets.

Every group is realized as a set of real ``m x m`` matrices together with a
fixed basis ``e_1..e_n`` of its Lie algebra.  Algebra elements are handled as
coefficient vectors in that basis, and the coefficient inner product (the one
making the basis orthonormal) fixes the left-invariant metric used for
gradients and Brownian noise.  Basis conventions per group are listed in
``docs/groups.md``.

Most helpers on :class:`GroupDescriptor` are vectorized over leading axes so
that the samplers can push whole batches of chains and noise draws through a
single call.  The module-level functions (``exp_map``, ``multiply``, ...) are
the single-element API and wrap :class:`GroupElement`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    EvaluationError,
    GroupError,
    GroupMismatchError,
    MembershipError,
    NumericRangeError,
)

# Padé [6/6] numerator coefficients; denominator uses alternating signs.
_PADE6 = np.array([1.0, 1 / 2, 5 / 44, 1 / 66, 1 / 792, 1 / 15840, 1 / 665280])
_EXP_NORM_TARGET = 0.5


def expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential of a stack of square matrices.

    Scaling and squaring around a Padé [6/6] kernel.  The squaring count is
    chosen per matrix so that the scaled 1-norm is at most 0.5, where the
    kernel's truncation error sits below double-precision round-off.  Each
    matrix in the stack is processed independently of the others, so results
    do not depend on how a batch is partitioned.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected (..., m, m) matrices, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix exponential of a non-finite matrix")
    m = a.shape[-1]
    norm = np.abs(a).sum(axis=-2).max(axis=-1)
    with np.errstate(divide="ignore"):
        s = np.where(norm > _EXP_NORM_TARGET, np.ceil(np.log2(norm / _EXP_NORM_TARGET)), 0.0)
    s = s.astype(int)
    x = a * np.ldexp(1.0, -s)[..., None, None]

    eye = np.broadcast_to(np.eye(m), x.shape)
    x2 = x @ x
    x4 = x2 @ x2
    x6 = x4 @ x2
    c = _PADE6
    u = x @ (c[1] * eye + c[3] * x2 + c[5] * x4)
    v = c[0] * eye + c[2] * x2 + c[4] * x4 + c[6] * x6
    r = np.linalg.solve(v - u, v + u)

    smax = int(s.max()) if s.size else 0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(smax):
            mask = (s > k)[..., None, None]
            r = np.where(mask, r @ r, r)
    if not np.all(np.isfinite(r)):
        raise NumericRangeError("matrix exponential overflowed double precision")
    return r


@dataclass(frozen=True, eq=False)
class GroupDescriptor:
    """Immutable catalog entry for a matrix Lie group.

    ``basis[k]`` is the ``m x m`` matrix of the k-th algebra generator and
    ``structure_constants[i, j, k]`` the coefficient of ``e_k`` in
    ``[e_i, e_j]``.  The basis of every catalog group is orthogonal under the
    Frobenius inner product, which makes coefficient extraction a scaled dot
    product.
    """

    name: str
    family: str
    size: int
    n: int
    m: int
    basis: np.ndarray
    structure_constants: np.ndarray
    membership_tol: float = 1e-8
    _gram: np.ndarray = field(init=False, repr=False)
    modular_vector: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        basis = np.array(self.basis, dtype=float)
        c = np.array(self.structure_constants, dtype=float)
        if basis.shape != (self.n, self.m, self.m):
            raise GroupError(f"basis shape {basis.shape} != {(self.n, self.m, self.m)}")
        if c.shape != (self.n,) * 3:
            raise GroupError("structure constants must be n x n x n")
        gram = np.einsum("iab,jab->ij", basis, basis)
        if not np.allclose(gram, np.diag(np.diag(gram)), atol=1e-14):
            raise GroupError("catalog bases must be Frobenius-orthogonal")
        a = np.einsum("kjj->k", c)
        for arr in (basis, c, a):
            arr.setflags(write=False)
        gdiag = np.diag(gram).copy()
        gdiag.setflags(write=False)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "structure_constants", c)
        object.__setattr__(self, "_gram", gdiag)
        object.__setattr__(self, "modular_vector", a)

    def __repr__(self):
        return f"GroupDescriptor({self.name!r}, n={self.n}, m={self.m})"

    @property
    def abelian(self) -> bool:
        return not np.any(self.structure_constants)

    @property
    def unimodular(self) -> bool:
        return not np.any(self.modular_vector)

    @property
    def compact(self) -> bool:
        return self.family == "so"

    # -- algebra <-> matrices -------------------------------------------------

    def hat(self, v) -> np.ndarray:
        """Coefficient vectors ``(..., n)`` to algebra matrices ``(..., m, m)``."""
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.n:
            raise GroupError(f"{self.name}: expected {self.n} coefficients, got {v.shape[-1]}")
        return np.tensordot(v, self.basis, axes=([-1], [0]))

    def vee(self, a, check: bool = False) -> np.ndarray:
        """Coefficients of algebra matrices in the basis (orthogonal projection)."""
        a = np.asarray(a, dtype=float)
        coeffs = np.einsum("...ab,kab->...k", a, self.basis) / self._gram
        if check:
            resid = np.abs(a - self.hat(coeffs)).max() if a.size else 0.0
            scale = max(1.0, float(np.abs(a).max()) if a.size else 1.0)
            if resid > 1e-9 * scale:
                raise GroupError(f"{self.name}: matrix is not in the algebra (residual {resid:.2e})")
        return coeffs

    def pair(self, a) -> np.ndarray:
        """Frobenius pairings ``<a, e_k>`` for each basis matrix (no normalization).

        These are the directional derivatives needed for trivialized gradients:
        if ``a = g^T dF/dX`` then ``d/dv_k F(g exp(v))`` at zero is ``<a, e_k>``.
        """
        return np.einsum("...ab,kab->...k", np.asarray(a, dtype=float), self.basis)

    # -- group-level helpers (batched) ---------------------------------------

    def identity(self) -> np.ndarray:
        return np.eye(self.m)

    def exp(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("exp of non-finite algebra coefficients")
        a = self.hat(v)
        if self.family == "so" and self.m == 2:
            c, s = np.cos(v[..., 0]), np.sin(v[..., 0])
            return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
        if self.family == "so" and self.m == 3:
            # Rodrigues; the generators have unit angular speed so |v| is the angle
            th = np.linalg.norm(v, axis=-1)[..., None, None]
            small = th < 1e-4
            ths = np.where(small, 1.0, th)
            f1 = np.where(small, 1 - th**2 / 6, np.sin(ths) / ths)
            f2 = np.where(small, 0.5 - th**2 / 24, (1 - np.cos(ths)) / ths**2)
            return np.eye(3) + f1 * a + f2 * (a @ a)
        if self.family == "r":
            return np.eye(self.m) + a
        if self.family == "heis":
            return np.eye(self.m) + a + 0.5 * (a @ a)
        return expm(a)

    def inv(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if self.family == "so":
            return np.swapaxes(g, -1, -2)
        return np.linalg.inv(g)

    def defect(self, g) -> np.ndarray:
        """Distance of each matrix from the group manifold (0 for exact members)."""
        g = np.asarray(g, dtype=float)
        m = self.m
        if self.family == "so":
            gram = np.swapaxes(g, -1, -2) @ g - np.eye(m)
            d = np.abs(gram).max(axis=(-1, -2))
            return np.where(np.linalg.det(g) > 0, d, np.inf)
        if self.family == "sl":
            return np.abs(np.linalg.det(g) - 1.0)
        if self.family in ("aff", "r"):
            bottom = np.abs(g[..., -1, :] - np.eye(m)[-1]).max(axis=-1)
            if self.family == "r":
                lin = np.abs(g[..., :-1, :-1] - np.eye(m - 1)).max(axis=(-1, -2))
                return np.maximum(bottom, lin)
            det = np.linalg.det(g[..., :-1, :-1])
            return np.where(det > 0, bottom, np.inf)
        if self.family == "heis":
            lower = np.tril(g) - np.eye(m)
            return np.abs(lower).max(axis=(-1, -2))
        raise GroupError(self.family)

    def is_member(self, g, tol: float | None = None) -> np.ndarray:
        tol = self.membership_tol if tol is None else tol
        return self.defect(g) <= tol

    def project(self, g) -> np.ndarray:
        """Snap matrices back onto the manifold.

        SO(n) uses the polar factor, SL(n) rescales by ``det^(-1/n)``; the
        affine, translation and Heisenberg families reset their fixed entries.
        """
        g = np.array(g, dtype=float)
        m = self.m
        if self.family == "so":
            u, _, vt = np.linalg.svd(g)
            return u @ vt
        if self.family == "sl":
            det = np.linalg.det(g)
            return g * (np.sign(det) * np.abs(det) ** (-1.0 / m))[..., None, None]
        if self.family in ("aff", "r"):
            g[..., -1, :] = np.eye(m)[-1]
            if self.family == "r":
                g[..., :-1, :-1] = np.eye(m - 1)
            return g
        if self.family == "heis":
            iu = np.triu_indices(m, 1)
            out = np.broadcast_to(np.eye(m), g.shape).copy()
            out[..., iu[0], iu[1]] = g[..., iu[0], iu[1]]
            return out
        raise GroupError(self.family)

    def maybe_project(self, g) -> np.ndarray:
        """Re-project only the matrices whose drift exceeds ``membership_tol / 10``."""
        g = np.asarray(g, dtype=float)
        drift = self.defect(g) > self.membership_tol / 10
        if not np.any(drift):
            return g
        return np.where(drift[..., None, None], self.project(g), g)

    def adjoint(self, g) -> np.ndarray:
        """Batched ``Ad(g)`` matrices, columns are images of basis vectors."""
        g = np.asarray(g, dtype=float)
        conj = g[..., None, :, :] @ self.basis @ self.inv(g)[..., None, :, :]
        coeffs = self.vee(conj)
        resid = conj - self.hat(coeffs)
        scale = max(1.0, float(np.abs(conj).max()))
        if np.abs(resid).max() > 1e-8 * scale:
            raise GroupError(f"{self.name}: conjugation left the algebra; descriptor is inconsistent")
        return np.swapaxes(coeffs, -1, -2)


@dataclass(frozen=True, eq=False)
class GroupElement:
    matrix: np.ndarray
    group: GroupDescriptor

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=float)
        if mat.shape != (self.group.m, self.group.m):
            raise MembershipError(f"{self.group.name}: expected {self.group.m}x{self.group.m} matrix")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    def check(self, tol: float | None = None) -> "GroupElement":
        if not self.group.is_member(self.matrix, tol):
            raise MembershipError(
                f"{self.group.name}: matrix off the manifold (defect {float(self.group.defect(self.matrix)):.2e})"
            )
        return self


# -- catalog -----------------------------------------------------------------


def _unit(m: int, i: int, j: int) -> np.ndarray:
    e = np.zeros((m, m))
    e[i, j] = 1.0
    return e


def _so_basis(n: int) -> list[np.ndarray]:
    # rotation generator in the (i, j) plane; unit angular speed
    return [_unit(n, j, i) - _unit(n, i, j) for i in range(n) for j in range(i + 1, n)]


def _sl_basis(n: int) -> list[np.ndarray]:
    out = [_unit(n, i, j) for i in range(n) for j in range(n) if i != j]
    for k in range(1, n):
        d = np.zeros((n, n))
        d[np.arange(k), np.arange(k)] = 1.0
        d[k, k] = -float(k)
        out.append(d / math.sqrt(k * (k + 1)))
    return out


def _aff_basis(d: int) -> list[np.ndarray]:
    m = d + 1
    linear = [_unit(m, i, j) for i in range(d) for j in range(d)]
    return linear + [_unit(m, i, d) for i in range(d)]


def _r_basis(d: int) -> list[np.ndarray]:
    return [_unit(d + 1, i, d) for i in range(d)]


def _heis_basis() -> list[np.ndarray]:
    return [_unit(3, 0, 1), _unit(3, 1, 2), _unit(3, 0, 2)]


def structure_constants_from_basis(basis: np.ndarray) -> np.ndarray:
    """``c[i, j, k]`` from matrix commutators of an orthogonal basis.

    Only ``i < j`` is computed; the lower triangle is filled by negation so
    antisymmetry holds exactly.
    """
    basis = np.asarray(basis, dtype=float)
    n = len(basis)
    gram = np.einsum("iab,iab->i", basis, basis)
    c = np.zeros((n, n, n))
    for i in range(n):
        for j in range(i + 1, n):
            comm = basis[i] @ basis[j] - basis[j] @ basis[i]
            coeffs = np.einsum("ab,kab->k", comm, basis) / gram
            if np.abs(comm - np.tensordot(coeffs, basis, axes=1)).max() > 1e-12:
                raise GroupError("basis is not closed under the commutator")
            c[i, j] = coeffs
            c[j, i] = -coeffs
    return c


_FAMILIES = {
    "so": ("SO({})", _so_basis, 2),
    "sl": ("SL({},R)", _sl_basis, 2),
    "aff": ("Aff({},R)", _aff_basis, 1),
    "r": ("R^{}", _r_basis, 1),
    "heis": ("H(1,R)", lambda _: _heis_basis(), 1),
}
_ALIASES = {
    "homography": ("sl", 3),
    "pgl3": ("sl", 3),
    "h1": ("heis", 1),
    "heisenberg": ("heis", 1),
}
_DEFAULT_SIZE = {"heis": 1}


def parse_group_name(name: str, size: int | None = None) -> tuple[str, int]:
    """Split catalog names such as ``"so10"`` or ``("so", 10)`` into (family, size)."""
    key = name.strip().lower().replace("(", "").replace(")", "").replace(",", "").replace("_", "")
    if key in _ALIASES:
        fam, sz = _ALIASES[key]
        if size is not None and size != sz:
            raise GroupError(f"{name} has fixed size {sz}")
        return fam, sz
    match = re.fullmatch(r"([a-z]+?)(\d*)", key)
    if match is None or match.group(1) not in _FAMILIES:
        raise GroupError(f"unknown group {name!r}; catalog: {sorted(_FAMILIES)}")
    fam, digits = match.group(1), match.group(2)
    if digits:
        if size is not None and size != int(digits):
            raise GroupError(f"conflicting sizes for {name!r}: {digits} vs {size}")
        size = int(digits)
    if size is None:
        size = _DEFAULT_SIZE.get(fam)
    if size is None:
        raise GroupError(f"group family {fam!r} needs a size")
    return fam, int(size)


def make_group(name: str, size: int | None = None, membership_tol: float = 1e-8) -> GroupDescriptor:
    """Build a catalog group by name: ``so``, ``sl``, ``aff``, ``r``, ``heis``.

    >>> make_group("so", 2).basis[0].tolist()
    [[0.0, -1.0], [1.0, 0.0]]
    """
    fam, size = parse_group_name(name, size)
    label, builder, min_size = _FAMILIES[fam]
    if isinstance(size, bool) or size < min_size:
        raise GroupError(f"{fam}: size must be >= {min_size}, got {size}")
    if fam == "heis" and size != 1:
        raise GroupError("only H(1,R) is in the catalog")
    basis = np.array(builder(size))
    c = structure_constants_from_basis(basis)
    return GroupDescriptor(
        name=f"{fam}{size}",
        family=fam,
        size=size,
        n=len(basis),
        m=basis.shape[-1],
        basis=basis,
        structure_constants=c,
        membership_tol=membership_tol,
    )


CATALOG = ("so2", "so3", "so10", "sl2", "sl3", "aff1", "aff2", "heis1", "r1", "r2", "r3")


# -- single-element API ------------------------------------------------------


def _same_group(g: GroupElement, h: GroupElement) -> GroupDescriptor:
    if g.group is not h.group and g.group.name != h.group.name:
        raise GroupMismatchError(f"{g.group.name} vs {h.group.name}")
    return g.group


def identity(group: GroupDescriptor) -> GroupElement:
    return GroupElement(group.identity(), group)


def exp_map(v, group: GroupDescriptor) -> GroupElement:
    return GroupElement(group.exp(v), group)


def multiply(g: GroupElement, h: GroupElement) -> GroupElement:
    group = _same_group(g, h)
    return GroupElement(group.maybe_project(g.matrix @ h.matrix), group)


def inverse(g: GroupElement) -> GroupElement:
    group = g.group
    if group.family != "so" and abs(np.linalg.det(g.matrix)) < 1e-300:
        raise MembershipError(f"{group.name}: singular matrix has no inverse")
    try:
        return GroupElement(group.maybe_project(group.inv(g.matrix)), group)
    except np.linalg.LinAlgError as exc:
        raise MembershipError(f"{group.name}: singular matrix has no inverse") from exc


def bracket(u, v, group: GroupDescriptor) -> np.ndarray:
    """Lie bracket in coefficients: ``out_k = sum_ij u_i v_j c[i, j, k]``."""
    return np.einsum("...i,...j,ijk->...k", np.asarray(u, float), np.asarray(v, float),
                     group.structure_constants)


def trivialized_gradient(
    f: Callable[[np.ndarray], float],
    g: GroupElement,
    mode: str = "finite_difference",
    h_fd: float = 1e-5,
    euclidean_grad: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Gradient of ``f`` at ``g`` expressed in the Lie algebra.

    ``f`` maps an ``m x m`` matrix to a scalar.  In finite-difference mode the
    k-th component is ``[f(g exp(h e_k)) - f(g exp(-h e_k))] / 2h``.  In
    analytic mode ``euclidean_grad(X)`` must return ``dF/dX`` entrywise and the
    result is ``<g^T dF/dX, e_k>``, the exact derivative of ``v -> f(g exp v)``.
    """
    group = g.group
    if mode == "analytic":
        if euclidean_grad is None:
            raise ValueError("analytic mode needs euclidean_grad")
        grad = np.asarray(euclidean_grad(g.matrix), dtype=float)
        if not np.all(np.isfinite(grad)):
            raise EvaluationError("non-finite analytic gradient")
        return group.pair(g.matrix.T @ grad)
    if mode not in ("finite_difference", "fd"):
        raise ValueError(f"unknown mode {mode!r}")
    if not h_fd > 0:
        raise ValueError("h_fd must be positive")
    steps = group.exp(np.concatenate([np.eye(group.n), -np.eye(group.n)]) * h_fd)
    out = np.empty(group.n)
    for k in range(group.n):
        fp = float(f(g.matrix @ steps[k]))
        fm = float(f(g.matrix @ steps[group.n + k]))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise EvaluationError(f"non-finite f near g along e_{k + 1}")
        out[k] = (fp - fm) / (2 * h_fd)
    return out


def modular_log(increments: Sequence, group: GroupDescriptor) -> float:
    """Log of the modular function at ``exp(b_1) ... exp(b_m)``: ``-sum_i a . b_i``."""
    if group.unimodular:
        return 0.0
    inc = np.asarray(increments, dtype=float)
    if inc.size == 0:
        return 0.0
    return -float(inc.reshape(-1, group.n).sum(axis=0) @ group.modular_vector)


def adjoint_matrix(g: GroupElement) -> np.ndarray:
    """Matrix of ``v -> g v g^{-1}`` in the algebra basis."""
    return g.group.adjoint(g.matrix)


def rotation2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def angle2(mat) -> np.ndarray:
    """Rotation angle(s) in ``(-pi, pi]`` of SO(2) matrices."""
    mat = np.asarray(mat, dtype=float)
    return np.arctan2(mat[..., 1, 0], mat[..., 0, 0])
