"""Operator views of two-tensor grids on the path space Hilbert module.

A grid acts on vector fields in two inequivalent ways, both needed by the
calculus.  The frame convention conjugates by the damped transport: the
output's base kernel is the exact cell difference of the grid's pullback
profile applied to the input's base kernel, which is how multiplication
operators with profile derivative multipliers arise.  The metric
convention is the canonical Hilbert action, pairing the second slot's
kernel derivative with the input's kernel under the Riemannian metric;
on rank-one wedges it reproduces the elementary tensor action exactly.
The two coincide on flat kinds and differ by the squared damping factor
on spheres, so every identity pins one convention and the tests exercise
both routes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PathMismatch, UnsupportedPairing
from .transports import (
    DampedChain,
    HVectorField,
    h_inner,
    h_norm,
    kernel_from_field,
)
from .two_tensors import (
    JPath,
    TwoTensorGrid,
    h2_inner,
    jpath_from_diag,
    wedge_q_jpath,
)

PAIRINGS = ("frame", "metric")


def _check_pairing(pairing: str) -> None:
    if pairing not in PAIRINGS:
        raise UnsupportedPairing(f"unknown pairing convention {pairing!r}")


def apply_jpath(
    dchain: DampedChain, jp: JPath, f: HVectorField, pairing: str = "frame"
) -> HVectorField:
    """Action of an (s ^ t)-type grid given by its profile.

    frame: output base kernel dj_r a_r.  metric: dj_r theta_r^T theta_r a_r,
    the squared damping factor entering through the Riemannian pairing of
    ambient kernels.  Both are exact in the profile (no difference
    approximation: dj is the profile's own cell increment).
    """
    _check_pairing(pairing)
    if f.dchain is not dchain:
        raise PathMismatch("field lives over a different chain")
    a = f.base_kernel()
    th = dchain.theta[:, :-1]
    if pairing == "metric":
        a = np.einsum("srba,srbc,src->sra", th, th, a)
    aout = np.einsum("srab,srb->sra", jp.dj, a)
    par = dchain.par[:, :-1]
    v = np.einsum("srab,srb->sra", th, aout)
    kernel = np.einsum("srab,srb->sra", par, v)
    return HVectorField(dchain, kernel)


def kernel_op_apply(
    grid: TwoTensorGrid, f: HVectorField, pairing: str = "frame"
) -> HVectorField:
    """Act on a field by the operator a grid represents.

    Grids carrying a profile use the exact routes in apply_jpath.  General
    grids are differentiated cellwise: the frame route differentiates the
    damped pullback in the second slot, the metric route differentiates
    the half-pulled-back entries, both with the grid's own left-to-right
    increments so (s ^ t) grids fall back to the exact formulas.
    """
    _check_pairing(pairing)
    dchain = grid.dchain
    if f.dchain is not dchain:
        raise PathMismatch("field lives over a different chain")
    if grid.jpath is not None:
        return apply_jpath(dchain, grid.jpath, f, pairing)

    a = f.base_kernel()
    if pairing == "frame":
        gb = grid.base_grid()  # (S, N+1, N+1, m, m)
        dgb = gb[:, :, 1:] - gb[:, :, :-1]
        qout = np.einsum("sirab,srb->sia", dgb, a)
        v = np.einsum("siab,sib->sia", dchain.theta, qout)
        values = np.einsum("siab,sib->sia", dchain.par, v)
        return kernel_from_field(dchain, values)

    ti = dchain.theta_inv
    mhalf = np.einsum("sijab,sjcb->sijac", grid.ghat, ti)
    dm = mhalf[:, :, 1:] - mhalf[:, :, :-1]
    th = dchain.theta[:, :-1]
    t1 = np.einsum("srba,srbc,src->sra", th, th, a)
    vout = np.einsum("sirab,srb->sia", dm, t1)
    values = np.einsum("siab,sib->sia", dchain.par, vout)
    return kernel_from_field(dchain, values)


# ---------------------------------------------------------------------------
# multiplication operators and the conjugation check


def analytic_multiplier(
    dchain: DampedChain, f1: HVectorField, f2: HVectorField
) -> np.ndarray:
    """Profile derivative of the perturbed wedge, evaluated pointwise.

    Returns (S, N, m, m) base matrices theta^{-1} Rhat(Vhat + Qhat) theta^{-T}
    at cell left nodes: the multiplier of the conjugated kernel operator,
    exactly antisymmetric because the curvature transform maps into
    two-vectors.
    """
    from .two_tensors import _rhat_of_diag

    dchain2 = f1.dchain
    if dchain2 is not dchain or f2.dchain is not dchain:
        raise PathMismatch("fields live over a different chain")
    v1 = np.einsum("snab,snb->sna", dchain.theta, f1.base_profile())
    v2 = np.einsum("snab,snb->sna", dchain.theta, f2.base_profile())
    vdiag = 0.5 * (
        np.einsum("sna,snb->snab", v1, v2) - np.einsum("sna,snb->snab", v2, v1)
    )
    jp = jpath_from_diag(dchain, vdiag)
    # perturbed diagonal Qhat_rr = theta j theta^T added to the wedge diagonal
    qdiag = np.einsum("snab,snbc,sndc->snad", dchain.theta, jp.j, dchain.theta)
    rhat = _rhat_of_diag(dchain, vdiag + qdiag)
    ti = dchain.theta_inv
    mult = np.einsum("snab,snbc,sndc->snad", ti, rhat, ti)
    return mult[:, :-1]


def mult_conjugate_check(
    f1: HVectorField, f2: HVectorField, h: HVectorField
) -> dict:
    """Two routes to the conjugated action of the perturbed wedge.

    Route one applies the damped perturbation profile of the wedge through
    the frame convention (exact cell differences).  Route two evaluates the
    analytic multiplier, the curvature transform of the perturbed diagonal,
    and integrates it against the input kernel.  Their gap is pure
    quadrature, first order in dt, and vanishes identically on flat kinds.
    """
    dchain = f1.dchain
    jp = wedge_q_jpath(f1, f2)
    via_profile = apply_jpath(dchain, jp, h, pairing="frame")

    mult = analytic_multiplier(dchain, f1, f2)
    skew = float(np.max(np.abs(mult + np.swapaxes(mult, -1, -2))))
    a = h.base_kernel()
    aout = np.einsum("srab,srb->sra", mult, a)
    th = dchain.theta[:, :-1]
    par = dchain.par[:, :-1]
    v = np.einsum("srab,srb->sra", th, aout)
    kernel = np.einsum("srab,srb->sra", par, v)
    via_multiplier = HVectorField(dchain, kernel)

    gap = via_profile.values() - via_multiplier.values()
    return {
        "residual": np.max(np.abs(gap), axis=(1, 2)),
        "skew_defect": skew,
        "via_profile": via_profile,
        "via_multiplier": via_multiplier,
    }


def mult_conjugate_residual(
    f1: HVectorField, f2: HVectorField, h: HVectorField
) -> float:
    """Sup-norm gap of the two conjugation routes across samples."""
    return float(np.max(mult_conjugate_check(f1, f2, h)["residual"]))


def skew_adjoint_defect(grid: TwoTensorGrid, h: HVectorField, k: HVectorField) -> float:
    """Normalized skew-adjointness defect of the grid's operator.

    For wedge grids the metric action is skew by its algebraic form; for
    perturbation grids the frame action is skew because the multiplier
    commutes with the squared damping on the model spaces, up to the
    integrator's second order per-step defects.
    """
    pairing = "frame" if grid.jpath is not None else "metric"
    num = h_inner(kernel_op_apply(grid, h, pairing), k) + h_inner(
        h, kernel_op_apply(grid, k, pairing)
    )
    scale = np.maximum(h_norm(h) * h_norm(k), 1e-300)
    return float(np.max(np.abs(num) / scale))


# ---------------------------------------------------------------------------
# interior and exterior pairings of perturbed wedges


def interior(
    v: HVectorField, f1: HVectorField, f2: HVectorField
) -> HVectorField:
    """Contraction of the perturbed wedge (1 + Q)(f1 ^ f2) with v.

    The wedge part contracts through the energy pairing.  The perturbation
    part must act through the metric convention: that is the exact grid
    adjoint of the energy pairing of the closure against v-wedge-ell
    elements, so the duality <ell, interior> = pairing holds without a
    discretization gap on the profile side.
    """
    c1 = h_inner(f1, v)
    c2 = h_inner(f2, v)
    wedge_part = f2.scaled(0.5 * c1) - f1.scaled(0.5 * c2)
    jp = wedge_q_jpath(f1, f2)
    q_part = apply_jpath(v.dchain, jp, v, pairing="metric")
    return wedge_part - q_part


def exterior_pair(
    ell: HVectorField, v: HVectorField, f1: HVectorField, f2: HVectorField
) -> np.ndarray:
    """Pair the two-form ell ^ v against the perturbed wedge, per sample.

    The wedge block follows the determinant rule; the perturbation block
    integrates the analytic multiplier between the two one-form kernels.
    This is the route that does NOT use the grid profile, so comparing with
    the interior contraction is a genuine two-route check.
    """
    dchain = ell.dchain
    det_part = 0.5 * (
        h_inner(f1, v) * h_inner(f2, ell) - h_inner(f2, v) * h_inner(f1, ell)
    )
    mult = analytic_multiplier(dchain, f1, f2)
    av = v.base_kernel()
    al = ell.base_kernel()
    th = dchain.theta[:, :-1]
    # metric convention on both slots, matching the interior adjoint
    avm = np.einsum("srba,srbc,src->sra", th, th, av)
    sv = np.einsum("srab,srb->sra", mult, avm)
    lhs = np.einsum("srba,srbc,src->sra", th, th, al)
    q_part = np.einsum("sra,sra->s", lhs, sv) * dchain.dt
    return det_part - q_part


def pairing_residual(
    ell: HVectorField, v: HVectorField, f1: HVectorField, f2: HVectorField
) -> np.ndarray:
    """Gap between the exterior pairing and the interior-contraction route."""
    via_interior = h_inner(ell, interior(v, f1, f2))
    return np.abs(exterior_pair(ell, v, f1, f2) - via_interior)


# ---------------------------------------------------------------------------
# trace pairings


@dataclass
class FiniteRankOp:
    """Sum of elementary tensors a_k (x) b_k of vector fields."""

    pairs: list

    def __post_init__(self):
        if not self.pairs:
            raise PathMismatch("finite rank operator needs at least one pair")
        dchain = self.pairs[0][0].dchain
        for a, b in self.pairs:
            if a.dchain is not dchain or b.dchain is not dchain:
                raise PathMismatch("operator pairs live over different chains")

    @property
    def dchain(self) -> DampedChain:
        return self.pairs[0][0].dchain

    def apply(self, h: HVectorField) -> HVectorField:
        out = None
        for a, b in self.pairs:
            term = a.scaled(h_inner(b, h))
            out = term if out is None else out + term
        return out

    def trace(self) -> np.ndarray:
        return sum(h_inner(a, b) for a, b in self.pairs)


def trace_pairing(s, t) -> np.ndarray:
    """Trace-class against bounded pairing, per sample.

    Finite rank against anything pairs through the action; two grids pair
    through the double-kernel inner product.  Two (s ^ t)-type grids are
    both outside the kernel class, so that combination is refused.
    """
    if isinstance(s, FiniteRankOp) and isinstance(t, FiniteRankOp):
        out = None
        for a, b in s.pairs:
            for c, d in t.pairs:
                term = h_inner(a, c) * h_inner(b, d)
                out = term if out is None else out + term
        return out
    if isinstance(s, FiniteRankOp) and isinstance(t, TwoTensorGrid):
        out = None
        for a, b in s.pairs:
            term = h_inner(a, kernel_op_apply(t, b, pairing="metric"))
            out = term if out is None else out + term
        return out
    if isinstance(s, TwoTensorGrid) and isinstance(t, FiniteRankOp):
        return trace_pairing(t, s)
    if isinstance(s, TwoTensorGrid) and isinstance(t, TwoTensorGrid):
        if s.jpath is not None and t.jpath is not None:
            raise UnsupportedPairing(
                "both operands are of (s ^ t) type; neither side is trace class"
            )
        return h2_inner(s, t)
    raise UnsupportedPairing(f"cannot pair {type(s).__name__} with {type(t).__name__}")
