import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from tied.errors import (EvaluationError, GroupError, GroupMismatchError, MembershipError, NumericRangeError)
from tied.lie import (CATALOG, GroupElement, adjoint_matrix, angle2, bracket, exp_map, expm, identity, inverse,
                      make_group, modular_log, multiply, rotation2, trivialized_gradient)

GROUPS = {name: make_group(name) for name in CATALOG}
group_names = st.sampled_from(CATALOG)
seeds = st.integers(0, 2**32 - 1)


def random_vector(group, seed, max_norm=2.0):
    r = np.random.default_rng(seed)
    v = r.standard_normal(group.n)
    return v / np.linalg.norm(v) * r.uniform(0, max_norm)


def random_element(group, seed, max_norm=1.5):
    return exp_map(random_vector(group, seed, max_norm), group)


# -- catalog -------------------------------------------------------------------


def test_so2_descriptor():
    g = make_group("so", 2)
    assert (g.n, g.m) == (1, 2)
    np.testing.assert_array_equal(g.basis[0], [[0, -1], [1, 0]])


def test_so10_dimensions():
    g = make_group("so", 10)
    assert (g.n, g.m) == (45, 10)


def test_aff1_structure():
    g = make_group("aff", 1)
    assert (g.n, g.m) == (2, 2)
    assert g.structure_constants[0, 1, 1] == 1.0
    np.testing.assert_array_equal(g.modular_vector, [1.0, 0.0])


@pytest.mark.parametrize("name,size", [("so", 1), ("so", 0), ("sl", 1), ("spin", 3), ("heis", 2)])
def test_rejects_bad_groups(name, size):
    with pytest.raises(GroupError):
        make_group(name, size)


def test_name_aliases():
    assert make_group("homography").name == "sl3"
    assert make_group("SO(3)").name == "so3"
    assert make_group("heisenberg").name == "heis1"


@pytest.mark.parametrize("name", CATALOG)
def test_structure_constants_antisymmetric_exactly(name):
    c = GROUPS[name].structure_constants
    assert np.array_equal(c, -np.swapaxes(c, 0, 1))


@pytest.mark.parametrize("name", CATALOG)
def test_jacobi_identity(name):
    c = GROUPS[name].structure_constants
    jac = (np.einsum("ijm,mkl->ijkl", c, c) + np.einsum("jkm,mil->ijkl", c, c)
           + np.einsum("kim,mjl->ijkl", c, c))
    assert np.abs(jac).max() <= 1e-12


@pytest.mark.parametrize("name", CATALOG)
def test_commutators_match_structure_constants(name):
    g = GROUPS[name]
    e = g.basis
    comm = np.einsum("iab,jbc->ijac", e, e) - np.einsum("jab,ibc->ijac", e, e)
    expanded = np.einsum("ijk,kab->ijab", g.structure_constants, e)
    assert np.abs(comm - expanded).max() <= 1e-12


@pytest.mark.parametrize("name", CATALOG)
def test_basis_orthogonal_and_independent(name):
    g = GROUPS[name]
    gram = np.einsum("iab,jab->ij", g.basis, g.basis)
    np.testing.assert_allclose(gram, np.diag(np.diag(gram)), atol=0)
    assert np.linalg.matrix_rank(g.basis.reshape(g.n, -1)) == g.n


# -- exponential ---------------------------------------------------------------


@pytest.mark.parametrize("name", CATALOG)
def test_exp_zero_is_identity(name):
    g = GROUPS[name]
    np.testing.assert_array_equal(exp_map(np.zeros(g.n), g).matrix, np.eye(g.m))


def test_exp_so2_pi():
    np.testing.assert_allclose(exp_map([math.pi], GROUPS["so2"]).matrix, -np.eye(2), atol=1e-15)


def test_exp_sl2_unit_determinant(rng):
    g = GROUPS["sl2"]
    for _ in range(20):
        assert abs(np.linalg.det(exp_map(rng.standard_normal(3), g).matrix) - 1) <= 1e-10


@given(group_names, seeds)
def test_exp_inverse_pair(name, seed):
    g = GROUPS[name]
    v = random_vector(g, seed)
    prod = multiply(exp_map(v, g), exp_map(-v, g)).matrix
    assert np.abs(prod - np.eye(g.m)).max() <= 1e-10


@given(group_names, seeds)
def test_det_exp_is_exp_trace(name, seed):
    g = GROUPS[name]
    v = random_vector(g, seed)
    det = np.linalg.det(g.exp(v))
    want = math.exp(np.trace(g.hat(v)))
    assert abs(det - want) <= 1e-8 * want


@given(group_names, seeds)
def test_exp_lands_in_group(name, seed):
    g = GROUPS[name]
    assert g.is_member(g.exp(random_vector(g, seed, 3.0)))


@given(group_names, seeds)
def test_expm_matches_reference(name, seed):
    g = GROUPS[name]
    a = g.hat(random_vector(g, seed, 4.0))
    ref = scipy.linalg.expm(a)
    assert np.abs(expm(a) - ref).max() <= 1e-12 * max(1.0, np.abs(ref).max())
    assert np.abs(g.exp(g.vee(a)) - ref).max() <= 1e-12 * max(1.0, np.abs(ref).max())


def test_expm_batch_independent_of_partition(rng):
    g = GROUPS["sl3"]
    a = g.hat(rng.standard_normal((16, g.n)) * np.linspace(0.01, 5, 16)[:, None])
    whole = expm(a)
    parts = np.concatenate([expm(a[:5]), expm(a[5:])])
    assert np.array_equal(whole, parts)


def test_exp_overflow_raises():
    with pytest.raises(NumericRangeError):
        exp_map(np.full(8, 1e3), GROUPS["sl3"])


def test_exp_rejects_nonfinite():
    with pytest.raises(ValueError):
        exp_map([np.nan], GROUPS["so2"])


# -- multiply / inverse ----------------------------------------------------------


@given(group_names, seeds)
def test_multiply_identity_and_inverse(name, seed):
    g = GROUPS[name]
    x = random_element(g, seed)
    np.testing.assert_allclose(multiply(x, identity(g)).matrix, x.matrix, atol=1e-15)
    assert np.abs(multiply(x, inverse(x)).matrix - np.eye(g.m)).max() <= 1e-10


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_so2_angle_addition(a, b):
    g = GROUPS["so2"]
    prod = multiply(GroupElement(rotation2(a), g), GroupElement(rotation2(b), g))
    assert np.abs(prod.matrix - rotation2(a + b)).max() <= 1e-12


def test_so2_inverse_negates_angle():
    g = GROUPS["so2"]
    assert abs(float(angle2(inverse(GroupElement(rotation2(0.7), g)).matrix)) + 0.7) < 1e-15
    np.testing.assert_array_equal(inverse(identity(g)).matrix, np.eye(2))


def test_aff2_inverse_closed_form(rng):
    g = GROUPS["aff2"]
    x = exp_map(rng.standard_normal(6) * 0.5, g)
    a, b = x.matrix[:2, :2], x.matrix[:2, 2]
    inv = inverse(x).matrix
    np.testing.assert_allclose(inv[:2, :2], np.linalg.inv(a), atol=1e-12)
    np.testing.assert_allclose(inv[:2, 2], -np.linalg.inv(a) @ b, atol=1e-12)


def test_multiply_group_mismatch():
    with pytest.raises(GroupMismatchError):
        multiply(identity(GROUPS["so3"]), identity(GROUPS["sl3"]))


def test_inverse_singular_raises():
    with pytest.raises(MembershipError):
        inverse(GroupElement(np.zeros((3, 3)), GROUPS["sl3"]))


def test_multiply_reprojects_drift():
    g = GROUPS["so3"]
    drifted = np.eye(3) + 1e-6 * np.array([[0, 1, 0], [0, 0, 0], [0, 0, 0]])
    assert not g.is_member(drifted)
    out = multiply(GroupElement(drifted, g), identity(g)).matrix
    assert g.defect(out) <= 1e-12


def test_membership_check():
    g = GROUPS["sl2"]
    with pytest.raises(MembershipError):
        GroupElement(np.diag([2.0, 2.0]), g).check()
    GroupElement(np.diag([2.0, 0.5]), g).check()


# -- brackets ----------------------------------------------------------------------


@given(group_names, seeds)
def test_bracket_self_is_zero(name, seed):
    g = GROUPS[name]
    u = random_vector(g, seed)
    assert np.abs(bracket(u, u, g)).max() <= 1e-15


@given(seeds)
def test_bracket_matches_commutator(seed):
    for g in GROUPS.values():
        u, v = random_vector(g, seed), random_vector(g, seed + 1)
        a, b = g.hat(u), g.hat(v)
        assert np.abs(g.hat(bracket(u, v, g)) - (a @ b - b @ a)).max() <= 1e-12


@pytest.mark.parametrize("name", ["r1", "r2", "r3"])
def test_translation_brackets_vanish(name, rng):
    g = GROUPS[name]
    assert np.all(bracket(rng.standard_normal(g.n), rng.standard_normal(g.n), g) == 0)


def test_aff1_bracket():
    np.testing.assert_array_equal(bracket([1, 0], [0, 1], GROUPS["aff1"]), [0, 1])


# -- trivialized gradient ------------------------------------------------------------


def test_gradient_of_constant_is_zero():
    g = GROUPS["so3"]
    np.testing.assert_array_equal(trivialized_gradient(lambda x: 3.0, identity(g)), np.zeros(3))


def test_gradient_trace_so2():
    g = GroupElement(rotation2(math.pi / 2), GROUPS["so2"])
    fd = trivialized_gradient(lambda x: np.trace(x), g)
    an = trivialized_gradient(lambda x: np.trace(x), g, "analytic", euclidean_grad=lambda x: np.eye(2))
    np.testing.assert_allclose(fd, [-2.0], rtol=1e-9)
    np.testing.assert_allclose(an, [-2.0], rtol=1e-15)


def test_gradient_so10_quadratic_at_identity():
    g = identity(GROUPS["so10"])
    f = lambda x: -10 * x[0, 0] ** 2
    assert np.abs(trivialized_gradient(f, g)).max() <= 1e-12
    grad = lambda x: np.where(np.arange(100).reshape(10, 10) == 0, -20 * x[0, 0], 0.0)
    assert np.abs(trivialized_gradient(f, g, "analytic", euclidean_grad=grad)).max() == 0


@pytest.mark.parametrize("h", [1e-4, 1e-5])
@given(name=group_names, seed=seeds)
def test_gradient_fd_matches_analytic_linear(h, name, seed):
    g = GROUPS[name]
    c = np.random.default_rng(seed).standard_normal((g.m, g.m))
    x = random_element(g, seed)
    f = lambda mat: float((mat * c).sum())
    fd = trivialized_gradient(f, x, h_fd=h)
    an = trivialized_gradient(f, x, "analytic", euclidean_grad=lambda mat: c)
    assert np.linalg.norm(fd - an) <= 1e-5 * max(np.linalg.norm(an), 1e-3)


def test_gradient_nonfinite_raises():
    g = identity(GROUPS["so2"])
    with pytest.raises(EvaluationError):
        trivialized_gradient(lambda x: np.inf, g)


# -- modular function ---------------------------------------------------------------


@pytest.mark.parametrize("name", CATALOG)
def test_unimodular_groups_have_zero_modular_vector(name):
    g = GROUPS[name]
    if g.family != "aff":
        assert np.all(g.modular_vector == 0)
        assert modular_log(np.ones((4, g.n)), g) == 0.0


def test_modular_log_aff1_single_increment():
    g = GROUPS["aff1"]
    assert modular_log([[0.3, 0.0]], g) == pytest.approx(-0.3, abs=1e-15)
    w = exp_map([0.3, 0.0], g)
    assert -math.log(np.linalg.det(adjoint_matrix(w))) == pytest.approx(-0.3, abs=1e-12)


def test_modular_log_empty():
    assert modular_log(np.zeros((0, 2)), GROUPS["aff1"]) == 0.0


@given(st.sampled_from(["aff1", "aff2"]), seeds, st.integers(1, 5))
def test_modular_log_matches_adjoint_determinant(name, seed, count):
    g = GROUPS[name]
    r = np.random.default_rng(seed)
    inc = r.standard_normal((count, g.n))
    inc /= np.maximum(np.linalg.norm(inc, axis=1, keepdims=True), 1.0)
    w = np.eye(g.m)
    for v in inc:
        w = w @ g.exp(v)
    oracle = -math.log(np.linalg.det(adjoint_matrix(GroupElement(w, g))))
    assert abs(modular_log(inc, g) - oracle) <= 1e-6


# -- adjoint ------------------------------------------------------------------------


@pytest.mark.parametrize("name", CATALOG)
def test_adjoint_identity(name):
    g = GROUPS[name]
    np.testing.assert_allclose(adjoint_matrix(identity(g)), np.eye(g.n), atol=1e-15)


@given(st.sampled_from(["so2", "so3", "so10"]), seeds)
def test_adjoint_det_one_on_so(name, seed):
    g = GROUPS[name]
    assert abs(np.linalg.det(adjoint_matrix(random_element(g, seed))) - 1) <= 1e-8


@given(st.floats(-3, 3))
def test_adjoint_aff1_scaling(s):
    g = GROUPS["aff1"]
    assert np.linalg.det(adjoint_matrix(exp_map([s, 0.0], g))) == pytest.approx(math.exp(s), rel=1e-8)


@given(group_names, seeds)
def test_adjoint_is_conjugation(name, seed):
    g = GROUPS[name]
    x = random_element(g, seed)
    v = random_vector(g, seed + 7)
    lhs = g.hat(adjoint_matrix(x) @ v)
    rhs = x.matrix @ g.hat(v) @ np.linalg.inv(x.matrix)
    assert np.abs(lhs - rhs).max() <= 1e-9 * max(1.0, np.abs(rhs).max())
