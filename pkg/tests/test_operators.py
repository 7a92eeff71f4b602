import numpy as np
import pytest

from pathforms import geometry as geo
from pathforms import paths as P
from pathforms import transports as T
from pathforms import two_tensors as TT
from pathforms import operators as OP
from pathforms.errors import PathMismatch, UnsupportedPairing

S2 = geo.sphere(2)
E2 = geo.euclidean(2)


def make_chain(spec, seed=50, n=64, s_count=4):
    path = P.simulate(spec, P.Driver(seed, n), np.arange(s_count))
    return T.damped_chain(P.transport_chain(path))


def coupled_chain(spec, n, seed=123, s_count=6, n_fine=256):
    # one Brownian draw at the finest level, coarsened down, so residual
    # ratios across n compare the same paths
    drv = P.Driver(seed, n_fine)
    incr = drv.increments(spec.ambient_dim, np.arange(s_count))
    while incr.shape[1] > n:
        incr = P.coarsen_increments(incr)
    path = P.simulate(
        spec, P.Driver(seed, n), np.arange(s_count), increments=incr, step_cap=3.0
    )
    return T.damped_chain(P.transport_chain(path))


def field(dch, seed):
    h = P.CameronMartinPath.fourier(
        np.random.default_rng(seed), dch.n_steps, dch.spec.ambient_dim
    )
    return T.conditional_ti(dch, h)


class TestKernelActions:
    def test_profile_route_matches_grid_route(self):
        # an (s ^ t) grid acted through its profile must agree with the
        # generic difference route on its materialized entries
        dch = make_chain(S2)
        f1, f2, v = field(dch, 1), field(dch, 2), field(dch, 3)
        qg = TT.q_apply(TT.wedge2(f1, f2))
        stripped = TT.TwoTensorGrid(dch, qg.ghat, None)
        for pairing in ("frame", "metric"):
            via_jp = OP.apply_jpath(dch, qg.jpath, v, pairing)
            via_grid = OP.kernel_op_apply(stripped, v, pairing)
            gap = np.max(np.abs(via_jp.values() - via_grid.values()))
            assert gap < 1e-12

    def test_jpath_dispatch(self):
        dch = make_chain(S2)
        f1, f2, v = field(dch, 1), field(dch, 2), field(dch, 3)
        qg = TT.q_apply(TT.wedge2(f1, f2))
        a = OP.kernel_op_apply(qg, v)
        b = OP.apply_jpath(dch, qg.jpath, v)
        assert np.allclose(a.values(), b.values())

    def test_wedge_metric_action_is_elementary(self):
        # (1/2)(v1 (x) v2 - v2 (x) v1) acting in the metric convention
        # contracts the second slot: exact, no quadrature error
        dch = make_chain(S2)
        f1, f2, v = field(dch, 1), field(dch, 2), field(dch, 3)
        act = OP.kernel_op_apply(TT.wedge2(f1, f2), v, pairing="metric")
        ref = f1.scaled(0.5 * T.h_inner(f2, v)) - f2.scaled(0.5 * T.h_inner(f1, v))
        assert np.max(np.abs(act.values() - ref.values())) < 1e-12

    def test_conventions_coincide_flat(self):
        dch = make_chain(E2, n=32)
        f1, f2, v = field(dch, 1), field(dch, 2), field(dch, 3)
        g = TT.smooth_random_grid(dch, np.random.default_rng(7))
        a = OP.kernel_op_apply(g, v, pairing="frame")
        b = OP.kernel_op_apply(g, v, pairing="metric")
        assert np.max(np.abs(a.values() - b.values())) < 1e-12

    def test_linear_profile_composes_pointwise(self):
        # j(t) = t A with A constant skew: the action is h |-> A h at
        # every node, exactly, on a flat kind
        dch = make_chain(E2, n=32)
        v = field(dch, 3)
        a = np.array([[0.0, 1.0], [-1.0, 0.0]])
        s_count, n1 = dch.path.n_samples, dch.n_steps + 1
        j = dch.times[None, :, None, None] * a
        j = np.broadcast_to(j, (s_count, n1, 2, 2)).copy()
        jp = TT.JPath(j, np.diff(j, axis=1) / dch.dt)
        out = OP.apply_jpath(dch, jp, v)
        expect = np.einsum("ab,snb->sna", a, v.values())
        assert np.max(np.abs(out.values() - expect)) < 1e-12

    def test_skew_adjointness(self):
        dch = make_chain(S2, n=128)
        f1, f2, h, k = (field(dch, s) for s in (1, 2, 3, 4))
        w = TT.wedge2(f1, f2)
        assert OP.skew_adjoint_defect(w, h, k) < 1e-12
        assert OP.skew_adjoint_defect(TT.q_apply(w), h, k) < 1e-8

    def test_unknown_pairing_rejected(self):
        dch = make_chain(S2)
        f1, f2, v = field(dch, 1), field(dch, 2), field(dch, 3)
        with pytest.raises(UnsupportedPairing):
            OP.kernel_op_apply(TT.wedge2(f1, f2), v, pairing="weak")

    def test_mixed_chain_rejected(self):
        a = make_chain(S2, seed=51)
        b = make_chain(S2, seed=52)
        with pytest.raises(PathMismatch):
            OP.kernel_op_apply(
                TT.wedge2(field(a, 1), field(a, 2)), field(b, 3)
            )


class TestConjugation:
    def test_flat_collapse_exact(self):
        dch = make_chain(E2, n=32)
        f1, f2, v = field(dch, 1), field(dch, 2), field(dch, 3)
        out = OP.mult_conjugate_check(f1, f2, v)
        assert np.max(out["residual"]) == 0.0
        assert out["skew_defect"] == 0.0
        assert np.max(np.abs(out["via_profile"].values())) == 0.0
        assert OP.mult_conjugate_residual(f1, f2, v) == 0.0

    def test_multiplier_exactly_skew(self):
        dch = make_chain(S2)
        out = OP.mult_conjugate_check(field(dch, 1), field(dch, 2), field(dch, 3))
        assert out["skew_defect"] < 1e-14

    def test_two_routes_first_order(self):
        res = {}
        for n in (64, 128):
            dch = coupled_chain(S2, n)
            f1, f2, v = field(dch, 1), field(dch, 2), field(dch, 3)
            res[n] = OP.mult_conjugate_residual(f1, f2, v)
            assert res[n] < 1.0 * dch.dt
        assert 1.6 < res[64] / res[128] < 2.4


class TestInteriorExterior:
    def test_flat_interior_is_wedge_contraction(self):
        dch = make_chain(E2, n=32)
        f1, f2, v = field(dch, 1), field(dch, 2), field(dch, 3)
        it = OP.interior(v, f1, f2)
        ref = f2.scaled(0.5 * T.h_inner(f1, v)) - f1.scaled(0.5 * T.h_inner(f2, v))
        assert np.max(np.abs(it.values() - ref.values())) < 1e-14

    def test_flat_pairing_identity(self):
        dch = make_chain(E2, n=32)
        fs = [field(dch, k) for k in (1, 2, 3, 4)]
        assert np.max(OP.pairing_residual(fs[3], fs[2], fs[0], fs[1])) < 1e-10

    def test_pairing_residual_first_order(self):
        res = {}
        for n in (64, 128):
            dch = coupled_chain(S2, n)
            fs = [field(dch, k) for k in (1, 2, 3, 4)]
            res[n] = float(np.max(OP.pairing_residual(fs[3], fs[2], fs[0], fs[1])))
            assert res[n] < 2.0 * dch.dt
        assert 1.6 < res[64] / res[128] < 2.4

    def test_exterior_det_block_antisymmetric(self):
        dch = make_chain(S2)
        f1, f2, v, ell = (field(dch, k) for k in (1, 2, 3, 4))
        ab = OP.exterior_pair(ell, v, f1, f2)
        ba = OP.exterior_pair(ell, v, f2, f1)
        assert np.allclose(ab, -ba, atol=1e-12)


class TestTracePairing:
    def test_rank_one_pairs(self):
        dch = make_chain(S2)
        f1, f2, v, ell = (field(dch, k) for k in (1, 2, 3, 4))
        fr1 = OP.FiniteRankOp([(f1, f2)])
        fr2 = OP.FiniteRankOp([(v, ell)])
        lhs = OP.trace_pairing(fr1, fr2)
        rhs = T.h_inner(f1, v) * T.h_inner(f2, ell)
        assert np.allclose(lhs, rhs, atol=1e-12)
        assert np.allclose(fr1.trace(), T.h_inner(f1, f2), atol=1e-12)

    def test_finite_rank_against_wedge_grid(self):
        # the alternating rank-two operator of a wedge pairs with another
        # wedge grid exactly as the degree-two energy pairing
        dch = make_chain(S2)
        f1, f2, v, ell = (field(dch, k) for k in (1, 2, 3, 4))
        fr = OP.FiniteRankOp([(f1.scaled(0.5), f2), (f2.scaled(-0.5), f1)])
        lhs = OP.trace_pairing(fr, TT.wedge2(v, ell))
        rhs = TT.wedge_h2_inner(f1, f2, v, ell)
        assert np.allclose(lhs, rhs, atol=1e-12)
        sym = OP.trace_pairing(TT.wedge2(v, ell), fr)
        assert np.allclose(sym, rhs, atol=1e-12)

    def test_grid_against_grid(self):
        dch = make_chain(S2)
        f1, f2, v, ell = (field(dch, k) for k in (1, 2, 3, 4))
        lhs = OP.trace_pairing(TT.wedge2(f1, f2), TT.wedge2(v, ell))
        rhs = TT.wedge_h2_inner(f1, f2, v, ell)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_apply_matches_metric_action(self):
        dch = make_chain(S2)
        f1, f2, v = field(dch, 1), field(dch, 2), field(dch, 3)
        fr = OP.FiniteRankOp([(f1.scaled(0.5), f2), (f2.scaled(-0.5), f1)])
        lhs = fr.apply(v)
        rhs = OP.kernel_op_apply(TT.wedge2(f1, f2), v, pairing="metric")
        assert np.max(np.abs(lhs.values() - rhs.values())) < 1e-12

    def test_two_profile_grids_refused(self):
        dch = make_chain(S2)
        f1, f2, v, ell = (field(dch, k) for k in (1, 2, 3, 4))
        q1 = TT.q_apply(TT.wedge2(f1, f2))
        q2 = TT.q_apply(TT.wedge2(v, ell))
        with pytest.raises(UnsupportedPairing):
            OP.trace_pairing(q1, q2)
        # one profile grid is fine when the partner has a kernel
        out = OP.trace_pairing(q1, TT.wedge2(v, ell))
        assert np.all(np.isfinite(out))
