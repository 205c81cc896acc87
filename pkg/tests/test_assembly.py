import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from compatswe.assembly import (BoundaryTangent, Curl, Div, Factorization, GradScalar, Mass, PerpProj,
                                SolverError, Source, WeightedMass, assemble, assemble_vector,
                                boundary_quadrature, perp, solve)
from compatswe.fem import Field, build_space, project
from compatswe.mesh import disk_polygon_area

from conftest import disk, torus


@pytest.fixture(scope="module")
def spaces():
    m = disk(2)
    return dict(V0=build_space(m, "CG", 2), V0r=build_space(m, "CG", 2, restricted=True),
                V1=build_space(m, "BDM", 1), V1r=build_space(m, "BDM", 1, restricted=True),
                V2=build_space(m, "DG", 0))


def linear_field(a, b, c, d, e, f):
    return lambda x, y: np.stack([a + b * x + c * y, d + e * x + f * y], axis=-1)


def test_perp_convention():
    v = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert np.array_equal(perp(v), [[0.0, 1.0], [-1.0, 0.0]])
    w = np.array([0.3, -1.2])
    u = np.array([2.0, 0.5])
    assert perp(w) @ perp(u) == pytest.approx(w @ u)


def test_dg0_mass_is_cell_areas(spaces):
    M = assemble(Mass(spaces["V2"])).toarray()
    assert np.allclose(M, np.diag(disk(2).cell_areas()), atol=1e-16)


def test_unit_weighted_mass_equals_mass(spaces):
    V0 = spaces["V0"]
    assert abs(assemble(WeightedMass(V0, 1.0)) - assemble(Mass(V0))).max() == 0.0


def test_mass_symmetric_positive(spaces):
    for key in ("V0", "V1r", "V2"):
        M = assemble(Mass(spaces[key])).toarray()
        assert np.allclose(M, M.T, atol=1e-16)
        assert np.linalg.eigvalsh(M).min() > 0


@given(st.integers(0, 2 ** 31 - 1))
def test_perp_projection_antisymmetric(spaces, seed):
    V1 = spaces["V1r"]
    q = np.random.default_rng(seed).standard_normal(V1.JxW.shape)
    P = assemble(PerpProj(V1, q))
    assert abs(P + P.T).max() < 1e-14


def test_div_and_swapped_div_are_transposes(spaces):
    B = assemble(Div(spaces["V2"], spaces["V1r"]))
    Bt = assemble(Div(spaces["V1r"], spaces["V2"]))
    assert abs(B.T - Bt).max() < 1e-15


def test_curl_and_swapped_curl_are_transposes(spaces):
    C = assemble(Curl(spaces["V0"], spaces["V1"]))
    Ct = assemble(Curl(spaces["V1"], spaces["V0"]))
    assert abs(C.T - Ct).max() < 1e-15


def test_gradscalar_with_unit_weight_matches_perp_curl(spaces):
    # grad(gamma).F = perp-grad(gamma).perp(F)
    V0, V1 = spaces["V0"], spaces["V1"]
    G = assemble(GradScalar(V0, V1, 1.0))
    rng = np.random.default_rng(0)
    F = Field(V1, rng.standard_normal(V1.dim))
    assert np.allclose(G @ F.coefficients, assemble_vector(GradScalar(V0, V1, 1.0), F), atol=1e-14)


def test_divergence_of_restricted_against_constant_vanishes(spaces):
    V1r, V2 = spaces["V1r"], spaces["V2"]
    Bt = assemble(Div(V1r, V2))
    const = np.full(V2.dim, 3.7)
    assert np.max(np.abs(Bt @ const)) < 1e-13


def test_boundary_tangent_vanishes_on_torus():
    m = torus(3)
    T = assemble(BoundaryTangent(build_space(m, "CG", 2), build_space(m, "BDM", 1)))
    assert T.nnz == 0 or abs(T).max() == 0.0


def test_boundary_tangent_circulation_oracle(spaces):
    # solid rotation: circulation around the polygon = 2 * polygon area (Stokes, u is linear)
    V0, V1 = spaces["V0"], spaces["V1"]
    u = project(linear_field(0, 0, -1, 0, 1, 0), V1)
    T = assemble(BoundaryTangent(V0, V1))
    assert np.sum(T @ u.coefficients) == pytest.approx(2 * disk_polygon_area(2), rel=1e-13)


@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_green_identity_for_linear_fields(spaces, coefs):
    # <perp-grad gamma, u> - <<gamma, n^perp.u>> = -<gamma, curl u> for every gamma in V0
    V0, V1 = spaces["V0"], spaces["V1"]
    a, b, c, d, e, f = coefs
    u = project(linear_field(a, b, c, d, e, f), V1)
    C = assemble(Curl(V0, V1))
    T = assemble(BoundaryTangent(V0, V1))
    lhs = C @ u.coefficients - T @ u.coefficients
    rhs = -(e - c) * V0.test_integral(np.ones(V0.JxW.shape))
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_boundary_quadrature_length(spaces):
    bq, tab = boundary_quadrature(spaces["V0"])
    m = disk(2)
    perimeter = 24 * 2 * np.sin(np.pi / 24)
    assert bq.weights.sum() == pytest.approx(perimeter, rel=1e-14)
    # boundary points lie on the polygon edges, so their radius is <= 1
    assert np.all(np.hypot(*bq.points.reshape(-1, 2).T) <= 1 + 1e-14)
    assert np.allclose(tab.sum(axis=-1), 1.0)


def test_assemble_vector_matches_matrix(spaces, rng):
    V0, V1r, V2 = spaces["V0"], spaces["V1r"], spaces["V2"]
    u = Field(V1r, rng.standard_normal(V1r.dim))
    D = Field(V2, rng.standard_normal(V2.dim))
    q = Field(V0, rng.standard_normal(V0.dim))
    assert np.allclose(assemble_vector(Div(V2, V1r), u), assemble(Div(V2, V1r)) @ u.coefficients)
    assert np.allclose(assemble_vector(Div(V1r, V2), D), assemble(Div(V1r, V2)) @ D.coefficients)
    assert np.allclose(assemble_vector(Curl(V0, V1r), u), assemble(Curl(V0, V1r)) @ u.coefficients)
    assert np.allclose(assemble_vector(Curl(V1r, V0), q), assemble(Curl(V1r, V0)) @ q.coefficients)
    assert np.allclose(assemble_vector(Mass(V1r), u), assemble(Mass(V1r)) @ u.coefficients)
    assert np.allclose(assemble_vector(PerpProj(V1r, q), u), assemble(PerpProj(V1r, q)) @ u.coefficients)
    assert np.allclose(assemble_vector(WeightedMass(V0, D), q), assemble(WeightedMass(V0, D)) @ q.coefficients)
    assert np.allclose(assemble_vector(BoundaryTangent(V0, V1r), u),
                       assemble(BoundaryTangent(V0, V1r)) @ u.coefficients)


def test_restriction_override_keeps_boundary_rows(spaces, rng):
    V0r, V1r = spaces["V0r"], spaces["V1r"]
    u = Field(V1r, rng.standard_normal(V1r.dim))
    full = assemble_vector(Curl(V0r, V1r), u, restricted=False)
    ring = assemble_vector(Curl(V0r, V1r), u)
    assert full.shape == (V0r.full_dim,)
    assert np.allclose(full[V0r.free], ring)


def test_source_vector(spaces):
    V2 = spaces["V2"]
    b = assemble_vector(Source(V2, 2.0))
    assert np.allclose(b, 2.0 * disk(2).cell_areas())


def test_mesh_mismatch_rejected(spaces):
    other = build_space(disk(1), "DG", 0)
    with pytest.raises(ValueError):
        assemble(Div(other, spaces["V1"]))


def test_unknown_tag_rejected():
    with pytest.raises(TypeError):
        assemble(object())


def test_factorization_rejects_singular_matrices():
    with pytest.raises(SolverError, match="singular"):
        Factorization(sp.csc_matrix(np.array([[1.0, 2.0], [2.0, 4.0]])))
    with pytest.raises(SolverError, match="pivot 1"):
        Factorization(sp.csc_matrix(np.array([[1.0, 0.0], [0.0, 1e-17]])))


def test_solve_residual_bound(rng):
    A = sp.random(40, 40, density=0.2, random_state=1) + 10 * sp.eye(40)
    b = rng.standard_normal(40)
    x = solve(A, b)
    assert np.linalg.norm(A @ x - b, np.inf) < 1e-12
    with pytest.raises(SolverError):
        Factorization(sp.csc_matrix(np.ones((2, 3))))
