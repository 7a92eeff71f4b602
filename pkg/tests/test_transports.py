import math

import numpy as np
import pytest

from pathforms import geometry as geo
from pathforms import paths as P
from pathforms import transports as T
from pathforms.errors import PathMismatch

S2 = geo.sphere(2)
S3 = geo.sphere(3)
E2 = geo.euclidean(2)
T2 = geo.flat_torus(2)


def make_chain(spec, seed=21, n=64, s_count=12, horizon=1.0):
    path = P.simulate(spec, P.Driver(seed, n, horizon), np.arange(s_count))
    return T.damped_chain(P.transport_chain(path))


class TestDampedChain:
    def test_flat_thetas_are_identity(self):
        for spec in (E2, T2):
            dch = make_chain(spec, n=16, s_count=4)
            assert np.allclose(dch.theta, np.eye(2), atol=1e-14)
            assert np.allclose(dch.theta2, np.eye(1), atol=1e-14)

    def test_sphere_decay_rates(self):
        for spec, lam1, lam2 in ((S2, 0.5, 0.0), (S3, 1.0, 1.0)):
            dch = make_chain(spec, n=64, s_count=8)
            defs = T.damping_defects(dch)
            assert defs["w_defect"] < 5 * dch.dt
            assert defs["w2_defect"] < 5 * dch.dt

    def test_normal_direction_is_undamped(self):
        dch = make_chain(S2, n=32, s_count=6)
        x0 = dch.path.points[:, 0]
        moved = np.einsum("snab,sb->sna", dch.theta, x0)
        assert np.allclose(moved, x0[:, None], atol=1e-10)

    def test_damped_between_cocycle(self):
        dch = make_chain(S2, n=32, s_count=6)
        ab = dch.damped_between(4, 12)
        bc = dch.damped_between(12, 27)
        ac = dch.damped_between(4, 27)
        assert np.allclose(bc @ ab, ac, atol=1e-12)

    def test_damped_between_scalar_on_tangent(self):
        dch = make_chain(S2, n=128, s_count=6)
        i, j = 10, 90
        w = dch.damped_between(i, j)
        par_ij = dch.par[:, j] @ dch.par_inv[:, i]
        scale = math.exp(-0.5 * (dch.times[j] - dch.times[i]))
        frame = geo.tangent_frame(S2, dch.path.points[:, i])
        lhs = np.einsum("sab,sbk->sak", w, frame)
        rhs = scale * np.einsum("sab,sbk->sak", par_ij, frame)
        assert float(np.max(np.abs(lhs - rhs))) < 5 * dch.dt

    def test_condition_report(self):
        dch = make_chain(S2, n=64, s_count=6)
        rep = dch.condition_report()
        # tangent decay exp(-T/2) against the untouched normal direction
        assert abs(rep["max_cond_w"] - math.exp(0.5)) < 0.05


class TestFieldViews:
    def test_round_trip_kernel_field_kernel(self):
        dch = make_chain(S2, n=64, s_count=10)
        rng = np.random.default_rng(1)
        kernel = geo.project(
            S2, dch.path.points[:, :-1], rng.standard_normal((10, 64, 3))
        )
        f = T.field_from_kernel(dch, kernel)
        back = T.kernel_from_field(dch, f.values())
        assert float(np.max(np.abs(back.kernel - kernel))) < 1e-9

    def test_round_trip_field_kernel_field(self):
        dch = make_chain(S2, n=64, s_count=10)
        h = P.CameronMartinPath.fourier(np.random.default_rng(2), 64, 3)
        f = T.conditional_ti(dch, h)
        again = T.field_from_kernel(dch, T.kernel_from_field(dch, f.values()).kernel)
        assert float(np.max(np.abs(again.values() - f.values()))) < 1e-9

    def test_values_start_at_zero_and_are_tangent(self):
        dch = make_chain(S2, n=32, s_count=8)
        h = P.CameronMartinPath.fourier(np.random.default_rng(3), 32, 3)
        v = T.conditional_ti(dch, h).values()
        assert np.allclose(v[:, 0], 0.0)
        assert float(np.max(geo.tangency_defect(S2, dch.path.points, v))) < 1e-10

    def test_flat_conditional_field_is_h(self):
        dch = make_chain(E2, n=32, s_count=4)
        h = P.CameronMartinPath.fourier(np.random.default_rng(4), 32, 2)
        v = T.conditional_ti(dch, h).values()
        assert np.allclose(v, h.nodes()[None], atol=1e-12)

    def test_flat_energy_identity(self):
        dch = make_chain(E2, n=32, s_count=4)
        h = P.CameronMartinPath.fourier(np.random.default_rng(5), 32, 2)
        f = T.conditional_ti(dch, h)
        assert np.allclose(T.h_inner(f, f), h.energy(), atol=1e-12)

    def test_base_slope_lift_flat(self):
        dch = make_chain(E2, n=16, s_count=3)
        dot = np.random.default_rng(6).standard_normal((16, 2))
        f = T.field_from_base_slope(dch, dot)
        h = P.CameronMartinPath(dot, 1.0)
        assert np.allclose(f.values(), h.nodes()[None], atol=1e-12)

    def test_field_arithmetic(self):
        dch = make_chain(S2, n=16, s_count=4)
        rng = np.random.default_rng(7)
        k1 = geo.project(S2, dch.path.points[:, :-1], rng.standard_normal((4, 16, 3)))
        k2 = geo.project(S2, dch.path.points[:, :-1], rng.standard_normal((4, 16, 3)))
        f1, f2 = T.field_from_kernel(dch, k1), T.field_from_kernel(dch, k2)
        s = (f1 + f2).values()
        assert np.allclose(s, f1.values() + f2.values(), atol=1e-12)
        weights = rng.standard_normal(4)
        sc = f1.scaled(weights).values()
        assert np.allclose(sc, weights[:, None, None] * f1.values(), atol=1e-12)

    def test_mixed_chain_rejected(self):
        a = make_chain(S2, seed=8, n=16, s_count=4)
        b = make_chain(S2, seed=9, n=16, s_count=4)
        h = P.CameronMartinPath.fourier(np.random.default_rng(8), 16, 3)
        with pytest.raises(PathMismatch):
            T.h_inner(T.conditional_ti(a, h), T.conditional_ti(b, h))

    def test_polarization(self):
        dch = make_chain(S2, n=32, s_count=5)
        rng = np.random.default_rng(9)
        k1 = geo.project(S2, dch.path.points[:, :-1], rng.standard_normal((5, 32, 3)))
        k2 = geo.project(S2, dch.path.points[:, :-1], rng.standard_normal((5, 32, 3)))
        f1, f2 = T.field_from_kernel(dch, k1), T.field_from_kernel(dch, k2)
        lhs = T.h_inner(f1, f2)
        rhs = 0.25 * (T.h_inner(f1 + f2, f1 + f2) - T.h_inner(f1 - f2, f1 - f2))
        assert np.allclose(lhs, rhs, atol=1e-10)
