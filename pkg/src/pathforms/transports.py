"""Damped parallel transports along discrete paths.

The damped transport W solves W' = -(1/2) Ric W along the path, with the
corresponding degree-two version driven by the curvature-Weitzenboeck
transform on two-vectors.  Both are integrated in transported coordinates:
writing W = par * Theta moves the equation to the fixed tangent space at
the base point, where an explicit midpoint step is exact enough to keep
the global defect first order in dt.

Vector fields over a path batch are stored by their cell kernels: the
N tangent vectors obtained by differentiating the W-pulled-back field on
each cell.  With left-node quadrature the kernel and node-value views are
exact mutual inverses, which the whole grid calculus relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import PathMismatch
from .paths import CameronMartinPath, DiscretePath, ParallelChain


def _node_generators(spec, points, par):
    """Degree-one damping generator at each node, base coordinates.

    Returns (..., m, m): par^T Ric(x) par, acting on T_{x0} plus the
    ambient normal directions (where it vanishes for flat kinds and is
    handled exactly by the transported Ricci matrix on spheres).
    """
    ric = geo.ricci_matrix(spec, points)
    return np.einsum("...ba,...bc,...cd->...ad", par, ric, par)


def _node_generators2(spec, points, par, basis):
    """Degree-two damping generator on the ambient two-vector basis.

    Column k holds the coefficients of
    par^{-1} ( curvature-Weitzenboeck at x applied to par E_k par^T ) par^{-T}.
    """
    mk = np.einsum("...ab,kbc,...dc->...kad", par, basis, par)
    wk = geo.weitzenbock2(spec, points[..., None, :], mk)
    back = np.einsum("...ba,...kbc,...cd->...kad", par, wk, par)
    return np.einsum("jab,...kab->...jk", basis, back)


@dataclass
class DampedChain:
    """Parallel and damped transports along one path batch.

    theta and theta2 carry the damped factors in base coordinates:
    W_i = par_i theta_i on vectors and, on the ambient two-vector
    coefficient basis, W2_i = wedge^2(par_i) theta2_i.  The degree-two
    factor is integrated on first use; its generators cost several times
    the whole degree-one chain, and many callers never touch two-tensors.
    Batches are consumed by the thread that built them, so the deferred
    fill never races in practice; a concurrent first touch would only
    write the same arrays twice.
    """

    chain: ParallelChain
    theta: np.ndarray
    theta_inv: np.ndarray
    basis: np.ndarray
    _theta2: np.ndarray | None = field(default=None, repr=False)
    _theta2_inv: np.ndarray | None = field(default=None, repr=False)
    _w: np.ndarray | None = field(default=None, repr=False)

    @property
    def theta2(self) -> np.ndarray:
        if self._theta2 is None:
            self._theta2, self._theta2_inv = _integrate_two(self.chain, self.basis)
        return self._theta2

    @property
    def theta2_inv(self) -> np.ndarray:
        if self._theta2_inv is None:
            self._theta2, self._theta2_inv = _integrate_two(self.chain, self.basis)
        return self._theta2_inv

    @property
    def path(self) -> DiscretePath:
        return self.chain.path

    @property
    def spec(self) -> geo.ManifoldSpec:
        return self.path.spec

    @property
    def par(self) -> np.ndarray:
        return self.chain.par

    @property
    def par_inv(self) -> np.ndarray:
        return self.chain.par_inv

    @property
    def dt(self) -> float:
        return self.path.dt

    @property
    def times(self) -> np.ndarray:
        return self.path.times

    @property
    def n_steps(self) -> int:
        return self.path.n_steps

    def w_mats(self) -> np.ndarray:
        if self._w is None:
            self._w = self.par @ self.theta
        return self._w

    def w_apply(self, i: int, q: np.ndarray) -> np.ndarray:
        return np.einsum("sab,s...b->s...a", self.w_mats()[:, i], q)

    def w_solve(self, i: int, v: np.ndarray) -> np.ndarray:
        pulled = np.einsum("sba,s...b->s...a", self.par[:, i], v)
        return np.einsum("sab,s...b->s...a", self.theta_inv[:, i], pulled)

    def damped_between(self, i: int, j: int) -> np.ndarray:
        """W_j W_i^{-1}: the damped transport from node i to node j."""
        mid = self.theta[:, j] @ self.theta_inv[:, i]
        return np.einsum("sab,sbc,sdc->sad", self.par[:, j], mid, self.par[:, i])

    def to_coeff(self, g: np.ndarray) -> np.ndarray:
        return np.einsum("kab,...ab->...k", self.basis, g)

    def from_coeff(self, c: np.ndarray) -> np.ndarray:
        return np.einsum("...k,kab->...ab", c, self.basis)

    def condition_report(self) -> dict:
        w = self.w_mats()
        conds = np.linalg.cond(w[:, -1])
        return {
            "max_cond_w": float(np.max(conds)),
            "mean_cond_w": float(np.mean(conds)),
        }


def damped_chain(chain: ParallelChain) -> DampedChain:
    """Integrate the degree-one damping equation along every path."""
    path = chain.path
    spec = path.spec
    s_count, n, m = path.steps.shape
    dt = path.dt
    basis = geo.wedge_basis(np.eye(m))

    x_mid, tau_half = geo.geodesic_midpoint(spec, path.points[:, :-1], path.steps)
    par_mid = tau_half @ chain.par[:, :-1]

    gen_node = _node_generators(spec, path.points, chain.par)
    gen_mid = _node_generators(spec, x_mid, par_mid)

    theta = np.empty((s_count, n + 1, m, m))
    theta[:, 0] = np.eye(m)
    for i in range(n):
        a0 = -0.5 * gen_node[:, i]
        am = -0.5 * gen_mid[:, i]
        half = theta[:, i] + (0.5 * dt) * (a0 @ theta[:, i])
        theta[:, i + 1] = theta[:, i] + dt * (am @ half)

    theta_inv = np.linalg.inv(theta)
    return DampedChain(chain, theta, theta_inv, basis)


def _integrate_two(chain: ParallelChain, basis: np.ndarray) -> tuple:
    """Heun pass for the degree-two factor, same stepping as the degree-one."""
    path = chain.path
    spec = path.spec
    s_count, n, m = path.steps.shape
    dt = path.dt
    kk = basis.shape[0]

    x_mid, tau_half = geo.geodesic_midpoint(spec, path.points[:, :-1], path.steps)
    par_mid = tau_half @ chain.par[:, :-1]
    gen2_node = _node_generators2(spec, path.points, chain.par, basis)
    gen2_mid = _node_generators2(spec, x_mid, par_mid, basis)

    theta2 = np.empty((s_count, n + 1, kk, kk))
    theta2[:, 0] = np.eye(kk)
    for i in range(n):
        b0 = -0.5 * gen2_node[:, i]
        bm = -0.5 * gen2_mid[:, i]
        half2 = theta2[:, i] + (0.5 * dt) * (b0 @ theta2[:, i])
        theta2[:, i + 1] = theta2[:, i] + dt * (bm @ half2)

    return theta2, np.linalg.inv(theta2)


@dataclass
class HVectorField:
    """Finite-energy vector field along a path batch.

    kernel holds the N ambient cell vectors u_r = (D v)_r, tangent at the
    left node of each cell.  Node values are recovered by the damped
    integral v_i = W_i * dt * sum_{r<i} W_r^{-1} u_r; the two views invert
    each other exactly on the grid.
    """

    dchain: DampedChain
    kernel: np.ndarray
    _values: np.ndarray | None = field(default=None, repr=False)
    _base: np.ndarray | None = field(default=None, repr=False)

    @property
    def dt(self) -> float:
        return self.dchain.dt

    def base_kernel(self) -> np.ndarray:
        """Cell kernels pulled back to the base tangent space, (S, N, m)."""
        if self._base is None:
            par = self.dchain.par[:, :-1]
            ti = self.dchain.theta_inv[:, :-1]
            pulled = np.einsum("snba,snb->sna", par, self.kernel)
            self._base = np.einsum("snab,snb->sna", ti, pulled)
        return self._base

    def base_profile(self) -> np.ndarray:
        """W-pulled-back node values q_i, (S, N+1, m); q_0 = 0."""
        a = self.base_kernel()
        s_count, n, m = a.shape
        q = np.zeros((s_count, n + 1, m))
        np.cumsum(a * self.dt, axis=1, out=q[:, 1:])
        return q

    def values(self) -> np.ndarray:
        """Ambient node values, (S, N+1, m)."""
        if self._values is None:
            q = self.base_profile()
            th = self.dchain.theta
            par = self.dchain.par
            v = np.einsum("snab,snb->sna", th, q)
            self._values = np.einsum("snab,snb->sna", par, v)
        return self._values

    def endpoint(self) -> np.ndarray:
        return self.values()[:, -1]

    def value_at(self, node: int) -> np.ndarray:
        """Ambient value at one node, (S, m), without the full value grid."""
        a = self.base_kernel()[:, :node]
        q = a.sum(axis=1) * self.dt
        v = np.einsum("sab,sb->sa", self.dchain.theta[:, node], q)
        return np.einsum("sab,sb->sa", self.dchain.par[:, node], v)

    def scaled(self, c) -> "HVectorField":
        """Scale by a constant or by per-sample weights (S,)."""
        c = np.asarray(c, dtype=float)
        if c.ndim == 0:
            return HVectorField(self.dchain, self.kernel * c)
        return HVectorField(self.dchain, self.kernel * c[:, None, None])

    def __add__(self, other: "HVectorField") -> "HVectorField":
        if other.dchain is not self.dchain:
            raise PathMismatch("fields live over different chains")
        return HVectorField(self.dchain, self.kernel + other.kernel)

    def __sub__(self, other: "HVectorField") -> "HVectorField":
        if other.dchain is not self.dchain:
            raise PathMismatch("fields live over different chains")
        return HVectorField(self.dchain, self.kernel - other.kernel)


def field_from_kernel(dchain: DampedChain, kernel: np.ndarray) -> HVectorField:
    """Wrap cell kernels (S, N, m) or a deterministic (N, m) block."""
    s_count = dchain.path.n_samples
    n = dchain.n_steps
    m = dchain.spec.ambient_dim
    kernel = np.asarray(kernel, dtype=float)
    if kernel.shape == (n, m):
        kernel = np.broadcast_to(kernel, (s_count, n, m)).copy()
    if kernel.shape != (s_count, n, m):
        raise PathMismatch("kernel block has the wrong shape")
    return HVectorField(dchain, kernel)


def field_from_base_slope(dchain: DampedChain, dot: np.ndarray) -> HVectorField:
    """Damped lift of a base-space slope: kernel u_r = W_r dot_r."""
    n = dchain.n_steps
    m = dchain.spec.ambient_dim
    dot = np.asarray(dot, dtype=float)
    if dot.shape != (n, m):
        raise PathMismatch("slope block has the wrong shape")
    th = dchain.theta[:, :-1]
    par = dchain.par[:, :-1]
    v = np.einsum("snab,nb->sna", th, dot)
    kernel = np.einsum("snab,snb->sna", par, v)
    return HVectorField(dchain, kernel)


def kernel_from_field(dchain: DampedChain, values: np.ndarray) -> HVectorField:
    """Differentiate node values (S, N+1, m) back into cell kernels."""
    s_count = dchain.path.n_samples
    n = dchain.n_steps
    m = dchain.spec.ambient_dim
    values = np.asarray(values, dtype=float)
    if values.shape != (s_count, n + 1, m):
        raise PathMismatch("value block has the wrong shape")
    pulled = np.einsum("snba,snb->sna", dchain.par, values)
    q = np.einsum("snab,snb->sna", dchain.theta_inv, pulled)
    a = np.diff(q, axis=1) / dchain.dt
    th = dchain.theta[:, :-1]
    par = dchain.par[:, :-1]
    v = np.einsum("snab,snb->sna", th, a)
    kernel = np.einsum("snab,snb->sna", par, v)
    return HVectorField(dchain, kernel)


def conditional_ti(dchain: DampedChain, h: CameronMartinPath) -> HVectorField:
    """Adapted field whose kernel is the projected slope of h."""
    path = dchain.path
    if h.n_steps != path.n_steps:
        raise PathMismatch("perturbation grid does not match the path grid")
    x = path.points[:, :-1]
    kernel = geo.project(path.spec, x, np.broadcast_to(h.dot, x.shape))
    return HVectorField(dchain, kernel)


def h_inner(f: HVectorField, g: HVectorField) -> np.ndarray:
    """Riemannian energy pairing of two fields, per sample (S,)."""
    if f.dchain is not g.dchain:
        raise PathMismatch("fields live over different chains")
    return np.einsum("snm,snm->s", f.kernel, g.kernel) * f.dt


def h_norm(f: HVectorField) -> np.ndarray:
    return np.sqrt(np.maximum(h_inner(f, f), 0.0))


def damping_defects(dchain: DampedChain) -> dict:
    """Distance of the integrated transports from their closed forms.

    On a sphere of dimension n the damped transport is
    exp(-(n-1)t/2) times parallel transport on tangent vectors, and the
    degree-two factor is exp(-(n-2)t) times wedge-squared transport.
    Flat kinds damp nothing.  Returns max spectral defects over nodes
    and samples, measured on the tangent (wedge-tangent) subspace at x0.
    """
    spec = dchain.spec
    path = dchain.path
    times = dchain.times
    m = spec.ambient_dim
    if spec.kind == "sphere":
        lam1 = 0.5 * (spec.dim - 1)
        lam2 = float(spec.dim - 2)
    else:
        lam1 = 0.0
        lam2 = 0.0
    scale1 = np.exp(-lam1 * times)
    scale2 = np.exp(-lam2 * times)

    x0 = path.points[:, 0]
    frame0 = geo.tangent_frame(spec, x0)
    # theta should equal scale1 on tangent directions at x0
    d1 = np.einsum("snab,sbc->snac", dchain.theta, frame0)
    d1 = d1 - scale1[None, :, None, None] * frame0[:, None]
    sv1 = np.linalg.svd(d1, compute_uv=False)
    w_defect = float(np.max(sv1))

    # columns of tangential wedge coefficients at x0, shape (S, K, Ktan)
    wb0 = geo.wedge_basis(frame0)
    coeffs = np.einsum("jab,skab->sjk", dchain.basis, wb0)
    d2 = np.einsum("snjk,skq->snjq", dchain.theta2, coeffs)
    d2 = d2 - scale2[None, :, None, None] * coeffs[:, None]
    sv2 = np.linalg.svd(d2, compute_uv=False)
    w2_defect = float(np.max(sv2))
    return {"w_defect": w_defect, "w2_defect": w2_defect}
