import math
import warnings

import numpy as np
import pytest

from pathforms import cylindrical as C
from pathforms import geometry as geo
from pathforms import paths as P
from pathforms import transports as T
from pathforms import two_tensors as TT
from pathforms.errors import GridSnapWarning

S2 = geo.sphere(2)
E2 = geo.euclidean(2)
T2 = geo.flat_torus(2)


def make_chain(spec, seed=50, n=32, s_count=5):
    path = P.simulate(spec, P.Driver(seed, n), np.arange(s_count))
    return T.damped_chain(P.transport_chain(path))


def lifted(dch, seed):
    h = P.CameronMartinPath.fourier(
        np.random.default_rng(seed), dch.n_steps, dch.spec.ambient_dim
    )
    return T.conditional_ti(dch, h)


def tangent_nodes(path, seed):
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal(path.points.shape)
    v = geo.project(path.spec, path.points, raw)
    v[:, 0] = 0.0
    return v


class TestPointPoly:
    def test_grad_matches_fd(self):
        rng = np.random.default_rng(3)
        g = C.random_point_poly(rng, 3)
        x = rng.standard_normal((8, 3))
        dx = rng.standard_normal((8, 3))
        eps = 1e-6
        fd = (g.value(x + eps * dx) - g.value(x - eps * dx)) / (2 * eps)
        assert np.allclose(fd, np.einsum("sm,sm->s", g.grad(x), dx), atol=1e-8)

    def test_linear(self):
        q = np.array([2.0, -1.0, 0.5])
        g = C.PointPoly.linear(q)
        x = np.random.default_rng(4).standard_normal((6, 3))
        assert np.allclose(g.value(x), x @ q)
        assert np.allclose(g.grad(x), np.broadcast_to(q, x.shape))


class TestCylindricalFunction:
    def test_linear_endpoint_value(self):
        path = P.simulate(E2, P.Driver(7, 16), np.arange(9))
        q = np.array([1.5, -0.25])
        f = C.CylindricalFunction.linear(1.0, q)
        assert np.allclose(f.value(path), path.points[:, -1] @ q)

    def test_torus_values_use_unwrapped_nodes(self):
        path = P.simulate(T2, P.Driver(8, 16), np.arange(9))
        f = C.CylindricalFunction.linear(0.5, np.array([1.0, 2.0]))
        idx = 8
        assert np.allclose(f.value(path), path.points[:, idx] @ [1.0, 2.0])

    def test_snap_warns_and_matches_nearest_node(self):
        path = P.simulate(S2, P.Driver(9, 16), np.arange(4))
        q = np.array([0.3, 1.0, -0.7])
        off = C.CylindricalFunction.linear(0.5 + 0.2 * path.dt, q)
        on = C.CylindricalFunction.linear(0.5, q)
        with pytest.warns(GridSnapWarning):
            vals = off.value(path)
        assert np.array_equal(vals, on.value(path))

    def test_product_rule(self):
        dch = make_chain(S2, seed=11)
        path = dch.path
        rng = np.random.default_rng(12)
        times = (0.25, 0.5, 1.0)
        f = C.random_cylindrical(rng, S2, times)
        g = C.random_cylindrical(rng, S2, times)
        v = tangent_nodes(path, 13)
        lhs = C.d_cyl(f * g, path, v)
        rhs = f.value(path) * C.d_cyl(g, path, v) + g.value(path) * C.d_cyl(
            f, path, v
        )
        assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_fd_oracle_on_sphere(self):
        # pointwise exponential perturbation of every node; the chain rule
        # for the snapped polynomial gives exactly the projected-gradient sum
        dch = make_chain(S2, seed=21, n=16)
        path = dch.path
        rng = np.random.default_rng(22)
        f = C.random_cylindrical(rng, S2, (0.5, 1.0), n_terms=3)
        v = tangent_nodes(path, 23)
        exact = C.d_cyl(f, path, v)
        gaps = []
        for eps in (1e-3, 5e-4):
            up, _ = geo.geodesic_step(S2, path.points, eps * v, step_cap=3.0)
            dn, _ = geo.geodesic_step(S2, path.points, -eps * v, step_cap=3.0)
            pu = P.path_from_points(S2, path.driver, path.samples, up)
            pd = P.path_from_points(S2, path.driver, path.samples, dn)
            fd = (f.value(pu) - f.value(pd)) / (2 * eps)
            gaps.append(np.max(np.abs(fd - exact)))
        assert gaps[0] < 1e-5
        assert gaps[1] < 0.3 * gaps[0]

    def test_exterior_matches_derivative(self):
        dch = make_chain(S2, seed=31)
        path = dch.path
        rng = np.random.default_rng(32)
        f = C.random_cylindrical(rng, S2, (0.25, 0.75), n_terms=3)
        v = tangent_nodes(path, 33)
        a = C.one_form_apply(C.exterior_cyl(f), path, v)
        assert np.max(np.abs(a - C.d_cyl(f, path, v))) < 1e-12


class TestGradField:
    def test_flat_linear_kernel_is_constant(self):
        dch = make_chain(E2, seed=41, n=16)
        q = np.array([0.8, -1.2])
        f = C.CylindricalFunction.linear(1.0, q)
        gf = C.grad_field(dch, f)
        assert np.allclose(gf.kernel, np.broadcast_to(q, gf.kernel.shape))

    @pytest.mark.parametrize("spec", [S2, E2], ids=lambda s: s.label())
    def test_riesz_reproduces_derivative(self, spec):
        dch = make_chain(spec, seed=43)
        path = dch.path
        rng = np.random.default_rng(44)
        f = C.random_cylindrical(rng, spec, (0.25, 0.5, 1.0), n_terms=3)
        for seed in (45, 46):
            v = lifted(dch, seed)
            lhs = T.h_inner(C.grad_field(dch, f), v)
            rhs = C.d_cyl(f, path, v.values())
            assert np.max(np.abs(lhs - rhs)) < 1e-10

    def test_one_form_riesz_reproduces_pairing(self):
        dch = make_chain(S2, seed=51)
        path = dch.path
        rng = np.random.default_rng(52)
        phi = C.random_one_form(rng, S2, (0.25, 0.5), (0.5, 1.0))
        v = lifted(dch, 53)
        lhs = T.h_inner(C.one_form_riesz(dchain=dch, phi=phi), v)
        rhs = C.one_form_apply(phi, path, v.values())
        assert np.max(np.abs(lhs - rhs)) < 1e-10


class TestDformEval:
    def test_vector_route_single_term(self):
        dch = make_chain(S2, seed=61)
        path = dch.path
        q = np.array([0.2, -1.0, 0.4])
        f = C.CylindricalFunction.linear(0.5, q)
        g = C.PointPoly.linear(np.array([1.0, 0.3, -0.2]))
        phi = C.CylindricalOneForm([(f, 1.0, g)])
        v = lifted(dch, 62)
        idx = path.driver.n_steps
        x = path.points[:, idx]
        ga = geo.project(S2, x, g.grad(x))
        expect = f.value(path) * np.einsum("sm,sm->s", ga, v.values()[:, idx])
        assert np.allclose(C.dform_eval(phi, dch, v), expect, atol=1e-13)

    def test_wedge_pair_alternation_identity(self):
        dch = make_chain(S2, seed=63)
        path = dch.path
        rng = np.random.default_rng(64)
        f = C.random_cylindrical(rng, S2, (0.25, 0.75))
        g = C.random_point_poly(rng, 3)
        phi = C.CylindricalOneForm([(f, 0.5, g)])
        v1, v2 = lifted(dch, 65), lifted(dch, 66)
        got = C.dform_eval(phi, dch, (v1, v2))
        beta = C.CylindricalOneForm(
            [(C.CylindricalFunction.constant(1.0), 0.5, g)]
        )
        a1 = C.d_cyl(f, path, v1.values())
        a2 = C.d_cyl(f, path, v2.values())
        b1 = C.one_form_apply(beta, path, v1.values())
        b2 = C.one_form_apply(beta, path, v2.values())
        assert np.allclose(got, 0.5 * (a1 * b2 - a2 * b1), atol=1e-12)

    def test_pair_route_matches_materialized_grid(self):
        dch = make_chain(S2, seed=67, n=16)
        rng = np.random.default_rng(68)
        phi = C.random_one_form(rng, S2, (0.25,), (0.5, 1.0))
        v1, v2 = lifted(dch, 69), lifted(dch, 70)
        a = C.dform_eval(phi, dch, (v1, v2))
        b = C.dform_eval(phi, dch, TT.wedge2(v1, v2))
        assert np.max(np.abs(a - b)) < 1e-10

    def test_jpath_route_matches_materialized_grid(self):
        dch = make_chain(S2, seed=71, n=16)
        rng = np.random.default_rng(72)
        phi = C.random_one_form(rng, S2, (0.25,), (0.5, 1.0))
        v1, v2 = lifted(dch, 73), lifted(dch, 74)
        jp = TT.wedge_q_jpath(v1, v2)
        a = C.dform_eval(phi, dch, jp)
        b = C.dform_eval(phi, dch, TT.grid_sand_t(dch, jp))
        assert np.max(np.abs(a - b)) < 1e-10

    def test_constant_coefficients_make_it_closed(self):
        dch = make_chain(S2, seed=75)
        g = C.PointPoly.linear(np.array([0.5, 0.5, -1.0]))
        phi = C.CylindricalOneForm(
            [(C.CylindricalFunction.constant(2.0), 1.0, g)]
        )
        v1, v2 = lifted(dch, 76), lifted(dch, 77)
        vals = C.dform_eval(phi, dch, (v1, v2))
        assert np.array_equal(vals, np.zeros(dch.path.n_samples))

    def test_derivation_rule_for_scaled_forms(self):
        # exterior derivative of f phi against a wedge splits into the
        # alternating part and f times the derivative of phi
        dch = make_chain(S2, seed=81, n=16)
        path = dch.path
        rng = np.random.default_rng(82)
        f = C.random_cylindrical(rng, S2, (0.25, 0.5))
        phi = C.random_one_form(rng, S2, (0.5,), (0.75, 1.0))
        scaled = C.CylindricalOneForm(
            [(f * fa, ta, ga) for fa, ta, ga in phi.terms]
        )
        v1, v2 = lifted(dch, 83), lifted(dch, 84)
        arg = (v1, v2)
        lhs = C.dform_eval(scaled, dch, arg)
        cross = C.wedge_pair_eval(
            C.exterior_cyl(f),
            phi,
            dch,
            arg,
        )
        rhs = cross + f.value(path) * C.dform_eval(phi, dch, arg)
        assert np.max(np.abs(lhs - rhs)) < 1e-11
