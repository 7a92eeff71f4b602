import math

import numpy as np
import pytest

from pathforms import geometry as geo
from pathforms import paths as P
from pathforms.errors import NonSkewRotation, StepTooLarge

S2 = geo.sphere(2)
E2 = geo.euclidean(2)


class TestDriver:
    def test_per_sample_streams_do_not_depend_on_batching(self):
        drv = P.Driver(seed=42, n_steps=16)
        block = drv.normals(3, np.arange(8))
        single = drv.normals(3, np.array([5]))
        assert np.array_equal(block[5], single[0])
        shuffled = drv.normals(3, np.array([7, 2, 5]))
        assert np.array_equal(shuffled[2], block[5])
        assert np.array_equal(shuffled[1], block[2])

    def test_seed_changes_stream(self):
        a = P.Driver(seed=1, n_steps=8).normals(2, np.array([0]))
        b = P.Driver(seed=2, n_steps=8).normals(2, np.array([0]))
        assert not np.allclose(a, b)

    def test_moments(self):
        z = P.Driver(seed=3, n_steps=64).normals(3, np.arange(400)).ravel()
        assert abs(z.mean()) < 4.0 / math.sqrt(z.size)
        assert abs(z.var() - 1.0) < 0.02

    def test_resume_blocks_extend_the_stream(self):
        drv = P.Driver(seed=4, n_steps=8)
        first = drv.normals(2, np.array([3]))[0]
        again = drv.normals_resume(2, 3, 0)
        assert np.array_equal(first, again)
        fresh = drv.normals_resume(2, 3, 1)
        assert not np.allclose(first, fresh)

    def test_coarsen_sums_pairs(self):
        drv = P.Driver(seed=5, n_steps=8)
        incr = drv.increments(2, np.arange(3))
        c = P.coarsen_increments(incr)
        assert c.shape == (3, 4, 2)
        assert np.allclose(c[:, 0], incr[:, 0] + incr[:, 1])


class TestSimulate:
    def test_stays_on_manifold(self):
        path = P.simulate(S2, P.Driver(6, 64), np.arange(32))
        assert float(np.max(geo.point_defect(S2, path.points))) < 1e-12
        assert float(np.max(geo.tangency_defect(S2, path.points[:, :-1], path.steps))) < 1e-12

    def test_deterministic_per_sample(self):
        drv = P.Driver(7, 32)
        a = P.simulate(S2, drv, np.arange(10))
        b = P.simulate(S2, drv, np.array([4]))
        assert np.array_equal(a.points[4], b.points[0])

    def test_flat_path_is_cumsum(self):
        drv = P.Driver(8, 16)
        path = P.simulate(E2, drv, np.arange(5))
        expect = np.concatenate(
            [np.zeros((5, 1, 2)), np.cumsum(path.increments, axis=1)], axis=1
        )
        assert np.allclose(path.points, expect, atol=1e-14)

    def test_external_increments_are_respected(self):
        drv = P.Driver(9, 16)
        incr = drv.increments(3, np.arange(4))
        a = P.simulate(S2, drv, np.arange(4))
        b = P.simulate(S2, drv, np.arange(4), increments=incr)
        assert np.allclose(a.points, b.points)

    def test_abort_policy_raises(self):
        # dt = 4 makes oversized projected increments near-certain
        drv = P.Driver(10, 2, horizon=8.0)
        with pytest.raises(StepTooLarge):
            P.simulate(S2, drv, np.arange(64), on_large_step="abort")

    def test_resample_policy_stays_on_manifold_and_is_deterministic(self):
        drv = P.Driver(10, 2, horizon=8.0)
        a = P.simulate(S2, drv, np.arange(64))
        assert a.resample_count > 0
        assert float(np.max(geo.point_defect(S2, a.points))) < 1e-12
        assert float(np.max(np.linalg.norm(a.steps, axis=-1))) < math.pi / 2
        b = P.simulate(S2, drv, np.arange(64))
        assert np.array_equal(a.points, b.points)

    def test_rebuild_from_points_round_trips(self):
        drv = P.Driver(12, 48)
        for spec in (S2, E2):
            a = P.simulate(spec, drv, np.arange(8))
            b = P.path_from_points(spec, drv, a.samples, a.points)
            assert np.allclose(b.points, a.points, atol=1e-14)
            assert np.allclose(b.steps, a.steps, atol=1e-11)

    def test_rebuild_rejects_wrong_grid(self):
        drv = P.Driver(12, 48)
        a = P.simulate(S2, drv, np.arange(3))
        with pytest.raises(P.PathMismatch):
            P.path_from_points(S2, P.Driver(12, 24), a.samples, a.points)

    def test_endpoint_mean_matches_scheme_oracle(self):
        # the scheme's finite-N mean is the radial-quadrature multiplier to
        # the N-th power; no continuum bias allowance is needed
        drv = P.Driver(11, 64)
        path = P.simulate(S2, drv, np.arange(30000))
        vals = path.endpoint()[:, 0]
        se = vals.std() / math.sqrt(vals.size)
        oracle = P.endpoint_mean_multiplier(S2, drv.dt) ** 64
        assert abs(vals.mean() - oracle) < 4 * se


class TestWeakOrder:
    def test_scheme_bias_is_first_order(self):
        # deterministic part: the exact finite-N mean approaches the
        # continuum damping factor at rate dt
        exact = math.exp(-1.0)
        errs = [
            abs(P.endpoint_mean_multiplier(S2, 1.0 / n) ** n - exact)
            for n in (8, 16, 32, 64)
        ]
        for a, b in zip(errs, errs[1:]):
            assert 1.85 < a / b < 2.15

    def test_coupled_refinement_difference(self):
        # same Brownian driver on two dyadic grids; the mean gap between the
        # endpoint observables matches the oracle gap within Monte Carlo noise
        s_count = 20000
        samples = np.arange(s_count)
        drv = P.Driver(12, 32)
        incr = drv.increments(3, samples)
        coarse = P.coarsen_increments(incr)
        fine_path = P.simulate(S2, drv, samples, increments=incr, step_cap=3.0)
        coarse_path = P.simulate(
            S2, P.Driver(12, 16), samples, increments=coarse, step_cap=3.0
        )
        d = coarse_path.endpoint()[:, 0] - fine_path.endpoint()[:, 0]
        oracle = (
            P.endpoint_mean_multiplier(S2, 1.0 / 16) ** 16
            - P.endpoint_mean_multiplier(S2, 1.0 / 32) ** 32
        )
        se = d.std() / math.sqrt(s_count)
        assert abs(d.mean() - oracle) < 4 * se


class TestTransportChain:
    def test_orthogonal_and_anchored(self):
        path = P.simulate(S2, P.Driver(13, 32), np.arange(16))
        ch = P.transport_chain(path)
        assert np.allclose(ch.par[:, 0], np.eye(3))
        prod = ch.par @ ch.par_inv
        assert np.allclose(prod, np.eye(3), atol=1e-12)
        # transports track the path's normal direction
        moved = np.einsum("snab,sb->sna", ch.par, path.points[:, 0])
        assert np.allclose(moved, path.points, atol=1e-12)

    def test_flat_chain_is_identity(self):
        path = P.simulate(E2, P.Driver(14, 16), np.arange(4))
        ch = P.transport_chain(path)
        assert np.allclose(ch.par, np.eye(2))


class TestCameronMartin:
    def test_round_trip(self):
        h = P.CameronMartinPath.fourier(np.random.default_rng(0), 32, 3)
        h2 = P.CameronMartinPath.from_nodes(h.nodes(), 1.0)
        assert np.allclose(h.dot, h2.dot, atol=1e-12)

    def test_energy(self):
        dot = np.ones((4, 2))
        h = P.CameronMartinPath(dot, 1.0)
        assert np.isclose(h.energy(), 2.0)
        assert np.allclose(h.nodes()[-1], [1.0, 1.0])


class TestDerivativeFlow:
    def test_flat_flow_equals_nodes(self):
        path = P.simulate(E2, P.Driver(15, 32), np.arange(6))
        ch = P.transport_chain(path)
        h = P.CameronMartinPath.fourier(np.random.default_rng(1), 32, 2)
        v = P.derivative_flow(ch, h)
        assert np.allclose(v, h.nodes()[None], atol=1e-13)

    def test_sphere_flow_tangent_and_linear(self):
        path = P.simulate(S2, P.Driver(16, 32), np.arange(8))
        ch = P.transport_chain(path)
        rng = np.random.default_rng(2)
        h1 = P.CameronMartinPath.fourier(rng, 32, 3)
        h2 = P.CameronMartinPath.fourier(rng, 32, 3)
        v1 = P.derivative_flow(ch, h1)
        v2 = P.derivative_flow(ch, h2)
        both = P.derivative_flow(
            ch, P.CameronMartinPath(2.0 * h1.dot - 0.5 * h2.dot, 1.0)
        )
        assert np.allclose(both, 2.0 * v1 - 0.5 * v2, atol=1e-10)
        assert float(np.max(geo.tangency_defect(S2, path.points, v1))) < 1e-12


class TestDivergence:
    def test_flat_ito_isometry(self):
        path = P.simulate(E2, P.Driver(17, 64), np.arange(20000))
        h = P.CameronMartinPath.fourier(np.random.default_rng(3), 64, 2)
        d = P.skorohod_div_adapted(path, h)
        assert abs(d.mean()) < 4 * d.std() / math.sqrt(d.size)
        assert abs(d.var() - h.energy()) < 0.1 * h.energy()


class TestRotations:
    def test_non_skew_rejected(self):
        path = P.simulate(E2, P.Driver(18, 8), np.arange(3))
        ch = P.transport_chain(path)
        bad = P.constant_rotations(path, np.array([[1.0, 0.0], [0.0, -1.0]]))
        with pytest.raises(NonSkewRotation):
            P.rotation_field(ch, bad)

    def test_flat_constant_rotation_is_alpha_b(self):
        path = P.simulate(E2, P.Driver(19, 16), np.arange(5))
        ch = P.transport_chain(path)
        alpha = np.array([[0.0, 1.0], [-1.0, 0.0]])
        rf = P.rotation_field(ch, P.constant_rotations(path, alpha))
        b = np.concatenate(
            [np.zeros((5, 1, 2)), np.cumsum(path.increments, axis=1)], axis=1
        )
        assert np.allclose(rf.values, np.einsum("ab,snb->sna", alpha, b), atol=1e-13)

    def test_sphere_cross_rotations(self):
        path = P.simulate(S2, P.Driver(20, 32), np.arange(8))
        ch = P.transport_chain(path)
        weights = np.random.default_rng(4).standard_normal(32)
        rf = P.rotation_field(ch, P.cross_rotations(path, weights))
        assert rf.skew_defect < 1e-12
        td = geo.tangency_defect(S2, path.points, rf.values)
        assert float(np.max(td)) < 1e-10
