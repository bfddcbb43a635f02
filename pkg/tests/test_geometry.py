import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_correlation, random_frame, random_spd
from manifold_ess.geometry import (
    Chain,
    CorrelationMatrix,
    GrassmannPoint,
    Rotation,
    SpdMatrix,
    UnitVector,
    ValidationError,
    cholesky_embed,
    cholesky_factor,
    haar_rotation,
    projection_distance,
    projection_embed,
    sphere_geodesic_distance,
    sym_exp,
    sym_log,
    uniform_sphere,
)


# ---- point types -----------------------------------------------------------


def test_unit_vector_renormalizes_within_slack():
    u = UnitVector([0.0, 0.0, 1.0 + 5e-7])
    assert abs(np.linalg.norm(u.coords) - 1.0) <= 1e-10


def test_unit_vector_rejects_far_from_unit():
    with pytest.raises(ValidationError, match="norm"):
        UnitVector([0.0, 0.0, 0.9])


def test_unit_vector_needs_two_dims():
    with pytest.raises(ValidationError):
        UnitVector([1.0])


def test_unit_vector_is_read_only():
    u = UnitVector([1.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        u.coords[0] = 2.0


def test_spd_rejects_asymmetric_and_singular():
    with pytest.raises(ValidationError, match="symmetric"):
        SpdMatrix([[1.0, 0.1], [0.0, 1.0]])
    with pytest.raises(ValidationError, match="eigenvalue"):
        SpdMatrix([[1.0, 1.0], [1.0, 1.0]])


def test_correlation_rejects_off_unit_diagonal():
    with pytest.raises(ValidationError, match="diagonal"):
        CorrelationMatrix([[1.0, 0.2], [0.2, 1.1]])
    CorrelationMatrix([[1.0, 0.2], [0.2, 1.0]])


def test_grassmann_checks_frame():
    GrassmannPoint([[1.0], [0.0]])
    with pytest.raises(ValidationError, match="orthonormal"):
        GrassmannPoint([[1.0], [0.1]])
    with pytest.raises(ValidationError, match="p < m"):
        GrassmannPoint(np.eye(2))


def test_rotation_rejects_reflection():
    with pytest.raises(ValidationError, match="determinant"):
        Rotation(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValidationError, match="orthogonal"):
        Rotation(np.diag([1.0, 1.1, 1.0]))


def test_chain_invariants(rng):
    pts = uniform_sphere(5, 3, rng)
    c = Chain("sphere", pts, {"seed": 1})
    assert len(c) == 5 and c.dims == (3,)
    assert isinstance(c.point(0), UnitVector)
    with pytest.raises(ValidationError):
        Chain("sphere", np.empty((0, 3)))
    with pytest.raises(ValidationError):
        Chain("torus", pts)
    with pytest.raises(ValueError):
        c.points[0, 0] = 1.0


def test_chain_from_points_rejects_mixed():
    with pytest.raises(ValidationError, match="mixed"):
        Chain.from_points([UnitVector([1.0, 0.0]), UnitVector([1.0, 0.0, 0.0])])
    with pytest.raises(ValidationError):
        Chain.from_points([UnitVector([1.0, 0.0]), SpdMatrix(np.eye(2))])
    c = Chain.from_points([SpdMatrix(np.eye(2)), SpdMatrix(2 * np.eye(2))])
    assert c.manifold == "spd" and len(c) == 2


# ---- matrix maps -----------------------------------------------------------


def test_sym_log_identity_is_zero():
    assert np.abs(sym_log(np.eye(3))).max() <= 1e-15


def test_sym_log_diagonal():
    np.testing.assert_allclose(sym_log(np.diag([np.e, 1.0])), np.diag([1.0, 0.0]), atol=1e-15)


def test_sym_log_matches_scipy_logm(rng):
    # independent oracle: scipy's general (Schur-Pade) logm / expm
    for _ in range(10):
        a = random_spd(rng, 4, spread=2.0)
        log_a = sym_log(a)
        np.testing.assert_allclose(log_a, np.real(scipy.linalg.logm(a)), atol=1e-10)
        assert np.abs(log_a - log_a.T).max() <= 1e-9
        assert np.linalg.norm(sym_exp(log_a) - a) <= 1e-8
        np.testing.assert_allclose(sym_exp(log_a), scipy.linalg.expm(log_a), atol=1e-9)


def test_sym_log_reports_bad_eigenvalue():
    with pytest.raises(ValidationError, match="eigenvalue"):
        sym_log(np.diag([1.0, -0.5]))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5))
def test_log_exp_round_trip_on_bounded_spectrum(seed, m):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    s = (q * rng.uniform(-5, 5, m)) @ q.T
    s = 0.5 * (s + s.T)
    assert np.linalg.norm(sym_log(sym_exp(s)) - s) <= 1e-8


def test_projection_embed_examples():
    np.testing.assert_array_equal(projection_embed(np.array([[1.0], [0.0]])), [[1.0, 0.0], [0.0, 0.0]])
    assert projection_distance(np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]])) == pytest.approx(1.0, abs=1e-15)


def test_projection_embed_properties(rng):
    for _ in range(20):
        u = random_frame(rng, 5, 2)
        p = projection_embed(GrassmannPoint(u))
        assert np.linalg.norm(p @ p - p) <= 1e-9
        assert abs(np.trace(p) - 2) <= 1e-9
        ev = np.linalg.eigvalsh(p)
        assert np.all(np.minimum(np.abs(ev), np.abs(ev - 1)) <= 1e-8)


def test_projection_distance_ignores_frame_choice(rng):
    u, v = random_frame(rng, 5, 2), random_frame(rng, 5, 2)
    d = projection_distance(u, v)
    for _ in range(20):
        o = haar_rotation(2, rng).matrix
        assert abs(projection_distance(u @ o, v) - d) <= 1e-10


def test_cholesky_embed_examples():
    np.testing.assert_array_equal(cholesky_embed(np.eye(3)), np.zeros(3))
    assert cholesky_embed(np.array([[1.0, 0.3], [0.3, 1.0]])) == pytest.approx([0.3], abs=1e-15)
    np.testing.assert_array_equal(cholesky_embed(np.eye(3), "lecm"), np.zeros(6))


def test_cholesky_lecm_layout(rng):
    c = random_correlation(rng, 4)
    low = cholesky_factor(c)
    out = cholesky_embed(c, "lecm")
    np.testing.assert_allclose(out[:4], np.log(np.diag(low)), atol=1e-15)
    np.testing.assert_allclose(out[4:], cholesky_embed(c, "ecm"), atol=0)
    # the strict-lower part is row-major: L21, L31, L32, L41, ...
    np.testing.assert_allclose(out[4:7], [low[1, 0], low[2, 0], low[2, 1]], atol=0)


def test_cholesky_round_trip(rng):
    for _ in range(10):
        c = random_correlation(rng, 4)
        low = cholesky_factor(CorrelationMatrix(c))
        assert np.abs(low @ low.T - c).max() <= 1e-10


def test_cholesky_embed_failure():
    with pytest.raises(ValidationError, match="Cholesky"):
        cholesky_embed(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValidationError):
        cholesky_embed(np.eye(2), "xyz")


# ---- rotations and distances ------------------------------------------------


def test_haar_rotation_is_rotation_and_deterministic():
    for d in (2, 3, 5):
        q = haar_rotation(d, np.random.default_rng(9)).matrix
        assert np.abs(q.T @ q - np.eye(d)).max() <= 1e-10
        assert abs(np.linalg.det(q) - 1) <= 1e-8
        assert np.array_equal(q, haar_rotation(d, np.random.default_rng(9)).matrix)
    with pytest.raises(ValidationError):
        haar_rotation(1, np.random.default_rng(0))


def test_haar_rotation_mean_is_zero():
    rng = np.random.default_rng(2024)
    mean = sum(haar_rotation(3, rng).matrix for _ in range(10000)) / 10000
    assert np.abs(mean).max() <= 0.05


def test_haar_rotation_uniform_axis_angle():
    rng = np.random.default_rng(5)
    tr = np.array([np.trace(haar_rotation(3, rng).matrix) for _ in range(20000)])
    # E[trace] = 0 and E[trace^2] = 1 for the defining representation of SO(3)
    assert abs(tr.mean()) < 4 * tr.std() / np.sqrt(tr.size)
    assert abs((tr**2).mean() - 1.0) < 0.05


def test_rotation_preserves_inner_products(rng):
    for _ in range(100):
        q = haar_rotation(3, rng)
        x, y = uniform_sphere(2, 3, rng)
        qx, qy = q.apply(x[None])[0], q.apply(y[None])[0]
        assert abs(qx @ qy - x @ y) <= 1e-12


def test_geodesic_distance_examples():
    e1, e2 = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    assert sphere_geodesic_distance(e1, e1) == 0.0
    assert sphere_geodesic_distance(e1, -e1) == pytest.approx(np.pi, abs=1e-15)
    assert sphere_geodesic_distance(UnitVector(e1), UnitVector(e2)) == pytest.approx(np.pi / 2, abs=1e-15)
    with pytest.raises(ValidationError):
        sphere_geodesic_distance(e1, np.array([1.0, 0.0]))
