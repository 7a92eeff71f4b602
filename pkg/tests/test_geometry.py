import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathforms import geometry as geo
from pathforms.errors import GeometryError, StepTooLarge

S2 = geo.sphere(2)
S3 = geo.sphere(3)
E2 = geo.euclidean(2)
T2 = geo.flat_torus(2)


def unit(v):
    return np.asarray(v, dtype=float) / np.linalg.norm(v)


class TestSpec:
    def test_labels_round_trip(self):
        for spec in (S2, S3, E2, T2, geo.euclidean(5)):
            assert geo.spec_from_label(spec.label()) == spec

    def test_ambient_dims(self):
        assert S2.ambient_dim == 3
        assert S3.ambient_dim == 4
        assert E2.ambient_dim == 2
        assert T2.ambient_dim == 2

    def test_rejects_unknown(self):
        with pytest.raises(GeometryError):
            geo.ManifoldSpec("hyperbolic", 2)
        with pytest.raises(GeometryError):
            geo.sphere(1)
        with pytest.raises(GeometryError):
            geo.spec_from_label("sphere[2]")

    def test_wrap_is_torus_only(self):
        x = np.array([7.0, -1.0])
        assert np.allclose(geo.wrap_point(T2, x), [7.0 - 2 * math.pi, 2 * math.pi - 1.0])
        assert np.allclose(geo.wrap_point(E2, x), x)


class TestProjection:
    def test_sphere_projection_formula(self):
        x = unit([1.0, 2.0, -2.0])
        w = np.array([0.3, -1.0, 0.7])
        p = geo.project(S2, x, w)
        assert np.allclose(p, w - np.dot(w, x) * x)
        assert abs(np.dot(p, x)) < 1e-14

    def test_projection_idempotent(self):
        rng = np.random.default_rng(10)
        x = geo.random_point(S3, rng, batch=(50,))
        w = rng.standard_normal((50, 4))
        p1 = geo.project(S3, x, w)
        assert np.allclose(geo.project(S3, x, p1), p1, atol=1e-13)

    def test_flat_projection_is_identity(self):
        w = np.array([1.0, 2.0])
        assert np.allclose(geo.project(E2, np.zeros(2), w), w)

    def test_projection_matrix_consistency(self):
        rng = np.random.default_rng(11)
        x = geo.random_point(S2, rng, batch=(20,))
        w = rng.standard_normal((20, 3))
        via_mat = np.einsum("sab,sb->sa", geo.projection_matrix(S2, x), w)
        assert np.allclose(via_mat, geo.project(S2, x, w), atol=1e-13)

    def test_nabla_x_values(self):
        x = unit([0.0, 1.0, 0.0])
        v = np.array([1.0, 0.0, 0.0])
        e = np.array([0.0, 2.0, 0.5])
        # -<x, e> v
        assert np.allclose(geo.nabla_x(S2, x, v, e), -2.0 * v)
        # vanishes on tangent arguments
        assert np.allclose(geo.nabla_x(S2, x, v, np.array([0.3, 0.0, -1.0])), 0.0)
        assert np.allclose(geo.nabla_x(E2, np.zeros(2), np.ones(2), np.ones(2)), 0.0)


class TestCurvatureTransforms:
    def test_ricci_eigenvalues(self):
        rng = np.random.default_rng(12)
        for spec, lam in ((S2, 1.0), (S3, 2.0)):
            x = geo.random_point(spec, rng)
            f = geo.tangent_frame(spec, x)
            ric = geo.ricci_matrix(spec, x)
            assert np.allclose(ric @ f, lam * f, atol=1e-13)
            assert np.allclose(ric @ x, 0.0, atol=1e-13)

    def test_curvature_op_identity_on_tangent_wedges(self):
        rng = np.random.default_rng(13)
        for spec in (S2, S3):
            x = geo.random_point(spec, rng)
            basis = geo.wedge_basis(geo.tangent_frame(spec, x))
            assert np.allclose(geo.curvature_op(spec, x, basis), basis, atol=1e-13)

    def test_weitzenbock2_scalar(self):
        rng = np.random.default_rng(14)
        for spec, lam in ((S2, 0.0), (S3, 2.0)):
            x = geo.random_point(spec, rng)
            basis = geo.wedge_basis(geo.tangent_frame(spec, x))
            assert np.allclose(geo.weitzenbock2(spec, x, basis), lam * basis, atol=1e-12)

    def test_flat_transforms_vanish(self):
        g = geo.wedge_vectors(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert np.allclose(geo.curvature_op(E2, np.zeros(2), g), 0.0)
        assert np.allclose(geo.weitzenbock2(T2, np.zeros(2), g), 0.0)

    def test_weitzenbock_residual_random_points(self):
        rng = np.random.default_rng(15)
        for spec in (S2, S3, E2, T2):
            worst = max(
                geo.weitzenbock_residual(spec, geo.random_point(spec, rng))
                for _ in range(25)
            )
            assert worst <= 1e-12


class TestGeodesics:
    def test_quarter_turn_oracle(self):
        # from the first pole along e2 by pi/2: lands on e2, transport
        # rotates e2 to -e1 and fixes e3
        x = np.array([1.0, 0.0, 0.0])
        v = np.array([0.0, math.pi / 2, 0.0])
        y, tau = geo.geodesic_step(S2, x, v, step_cap=math.pi)
        assert np.allclose(y, [0.0, 1.0, 0.0], atol=1e-14)
        assert np.allclose(tau @ np.array([0.0, 1.0, 0.0]), [-1.0, 0.0, 0.0], atol=1e-14)
        assert np.allclose(tau @ np.array([0.0, 0.0, 1.0]), [0.0, 0.0, 1.0], atol=1e-14)

    def test_transport_orthogonal_and_normal_tracking(self):
        rng = np.random.default_rng(16)
        x = geo.random_point(S2, rng, batch=(40,))
        w = geo.project(S2, x, 0.7 * rng.standard_normal((40, 3)))
        y, tau = geo.geodesic_step(S2, x, w, step_cap=math.pi)
        assert np.allclose(tau @ np.swapaxes(tau, -1, -2), np.eye(3), atol=1e-13)
        assert np.allclose(np.einsum("sab,sb->sa", tau, x), y, atol=1e-13)

    def test_great_circle_composition(self):
        # two quarter turns equal one half turn
        x = np.array([1.0, 0.0, 0.0])
        v = np.array([0.0, math.pi / 2, 0.0])
        y1, t1 = geo.geodesic_step(S2, x, v, step_cap=math.pi)
        v2 = np.einsum("ab,b->a", t1, v)
        y2, t2 = geo.geodesic_step(S2, y1, v2, step_cap=math.pi)
        yh, th = geo.geodesic_step(S2, x, 2 * v, step_cap=1.1 * math.pi)
        assert np.allclose(y2, yh, atol=1e-13)
        assert np.allclose(t2 @ t1, th, atol=1e-13)

    def test_small_step_series_safety(self):
        x = np.array([0.0, 0.0, 1.0])
        w = np.array([1e-9, -2e-9, 0.0])
        y, tau = geo.geodesic_step(S2, x, w)
        assert np.allclose(y, x + w, atol=1e-17)
        assert np.allclose(tau, np.eye(3), atol=1e-8)
        assert abs(np.linalg.norm(y) - 1.0) < 1e-15

    def test_step_cap(self):
        x = np.array([1.0, 0.0, 0.0])
        with pytest.raises(StepTooLarge):
            geo.geodesic_step(S2, x, np.array([0.0, 2.0, 0.0]))

    def test_flat_step(self):
        y, tau = geo.geodesic_step(E2, np.array([1.0, 1.0]), np.array([0.5, -0.25]))
        assert np.allclose(y, [1.5, 0.75])
        assert np.allclose(tau, np.eye(2))

    def test_midpoint(self):
        x = np.array([1.0, 0.0, 0.0])
        v = np.array([0.0, math.pi / 2, 0.0])
        mid, tau_half = geo.geodesic_midpoint(S2, x, v)
        assert np.allclose(mid, unit([1.0, 1.0, 0.0]), atol=1e-14)
        full, tau = geo.geodesic_step(S2, x, v, step_cap=math.pi)
        _, tau_rest = geo.geodesic_step(
            S2, mid, np.einsum("ab,b->a", tau_half, 0.5 * v), step_cap=math.pi
        )
        assert np.allclose(tau_rest @ tau_half, tau, atol=1e-13)

    def test_log_inverts_step(self):
        rng = np.random.default_rng(77)
        for spec in (S2, S3, E2, T2):
            x = geo.random_point(spec, rng, batch=(60,))
            w = geo.project(spec, x, 0.8 * rng.standard_normal(x.shape))
            y, _ = geo.geodesic_step(spec, x, w, step_cap=math.pi)
            back = geo.geodesic_log(spec, x, y)
            assert np.allclose(back, w, atol=1e-12), spec.label()
            again, _ = geo.geodesic_step(spec, x, back, step_cap=math.pi)
            assert np.allclose(again, y, atol=1e-12)

    def test_log_small_angle_safe(self):
        x = np.array([0.0, 1.0, 0.0])
        w = np.array([3e-9, 0.0, -4e-9])
        y, _ = geo.geodesic_step(S2, x, w)
        assert np.allclose(geo.geodesic_log(S2, x, y), w, atol=1e-16)

    def test_log_torus_wraps_to_shortest(self):
        x = np.array([0.1, 6.0])
        y = np.array([6.2, 0.2])
        w = geo.geodesic_log(T2, x, y)
        assert np.all(np.abs(w) <= math.pi)
        assert np.allclose(
            geo.wrap_point(T2, x + w), geo.wrap_point(T2, y), atol=1e-12
        )

    def test_log_rejects_antipode(self):
        with pytest.raises(GeometryError):
            geo.geodesic_log(S2, np.array([1.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0]))


class TestFramesAndWedges:
    def test_frame_orthonormal_tangent(self):
        rng = np.random.default_rng(17)
        for spec in (S2, S3):
            x = geo.random_point(spec, rng, batch=(30,))
            f = geo.tangent_frame(spec, x)
            gram = np.einsum("sai,saj->sij", f, f)
            assert np.allclose(gram, np.eye(spec.dim), atol=1e-13)
            assert np.allclose(np.einsum("sa,sai->si", x, f), 0.0, atol=1e-13)

    def test_wedge_basis_orthonormal(self):
        rng = np.random.default_rng(18)
        x = geo.random_point(S3, rng)
        basis = geo.wedge_basis(geo.tangent_frame(S3, x))
        assert basis.shape == (3, 4, 4)
        gram = np.einsum("kab,lab->kl", basis, basis)
        assert np.allclose(gram, np.eye(3), atol=1e-13)
        ambient = geo.wedge_basis(np.eye(4))
        assert ambient.shape == (6, 4, 4)
        assert np.allclose(
            np.einsum("kab,lab->kl", ambient, ambient), np.eye(6), atol=1e-13
        )

    def test_wedge_inner_matches_determinant_rule(self):
        rng = np.random.default_rng(19)
        u, v, a, b = rng.standard_normal((4, 5))
        lhs = geo.two_vector_inner(geo.wedge_vectors(u, v), geo.wedge_vectors(a, b))
        rhs = 0.5 * (np.dot(u, a) * np.dot(v, b) - np.dot(u, b) * np.dot(v, a))
        assert np.isclose(lhs, rhs)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_transport_preserves_inner_products(seed):
    rng = np.random.default_rng(seed)
    x = geo.random_point(S2, rng)
    w = geo.project(S2, x, rng.standard_normal(3))
    norm = np.linalg.norm(w)
    if norm > 1.4:
        w = w * (1.4 / norm)
    _, tau = geo.geodesic_step(S2, x, w)
    a = geo.project(S2, x, rng.standard_normal(3))
    b = geo.project(S2, x, rng.standard_normal(3))
    assert np.isclose(np.dot(tau @ a, tau @ b), np.dot(a, b), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_wedge_bilinear_antisymmetric(seed):
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, 4))
    c = float(rng.standard_normal())
    w1 = geo.wedge_vectors(u, v)
    assert np.allclose(w1, -geo.wedge_vectors(v, u), atol=1e-12)
    assert np.allclose(geo.wedge_vectors(c * u, v), c * w1, atol=1e-10)
    assert np.allclose(w1 + np.swapaxes(w1, -1, -2), 0.0, atol=1e-14)
