"""Closed-form geometry of the model manifolds.

Three kinds are supported: ``euclidean(n)``, ``flat_torus(n)`` (coordinates
modulo 2*pi, wrapped only when a point is read out), and ``sphere(n)`` as the
unit sphere in R^{n+1}.  Points and tangent vectors are plain ndarrays in
ambient coordinates; every function broadcasts over leading batch axes.

The gradient projection field X(x) maps an ambient vector to the tangent
space at x.  For the sphere, X(x)w = w - <w,x>x, its covariant derivative is
nabla_v X(e) = -<x,e> v, the Ricci transform is (n-1) * identity on T_x, the
curvature operator on two-vectors is the tangential identity, and the
two-vector Weitzenboeck transform is (2n-4) * identity.  Flat kinds have
identity projection and zero curvature throughout.

Two-vectors are stored as antisymmetric m x m matrices with
u ^ v = (u v^T - v u^T) / 2; the matrix inner product is Frobenius, which
matches the normalized determinant pairing on wedges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, StepTooLarge

KINDS = ("euclidean", "flat_torus", "sphere")

TORUS_PERIOD = 2.0 * np.pi


@dataclass(frozen=True)
class ManifoldSpec:
    """Model manifold selector: a kind plus intrinsic dimension."""

    kind: str
    dim: int

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise GeometryError(f"unknown manifold kind {self.kind!r}")
        if self.dim < 1:
            raise GeometryError("dimension must be >= 1")
        if self.kind == "sphere" and self.dim < 2:
            # dim 1 spheres have no two-vector calculus worth checking
            raise GeometryError("sphere dimension must be >= 2")

    @property
    def ambient_dim(self) -> int:
        return self.dim + 1 if self.kind == "sphere" else self.dim

    @property
    def is_flat(self) -> bool:
        return self.kind != "sphere"

    def label(self) -> str:
        return f"{self.kind}({self.dim})"


def euclidean(n: int) -> ManifoldSpec:
    return ManifoldSpec("euclidean", n)


def flat_torus(n: int) -> ManifoldSpec:
    return ManifoldSpec("flat_torus", n)


def sphere(n: int) -> ManifoldSpec:
    return ManifoldSpec("sphere", n)


def spec_from_label(label: str) -> ManifoldSpec:
    """Parse labels like ``sphere(2)`` or ``euclidean(3)``."""
    label = label.strip()
    if "(" not in label or not label.endswith(")"):
        raise GeometryError(f"cannot parse manifold label {label!r}")
    kind, _, rest = label.partition("(")
    try:
        dim = int(rest[:-1])
    except ValueError as exc:
        raise GeometryError(f"cannot parse manifold label {label!r}") from exc
    return ManifoldSpec(kind.strip(), dim)


# ---------------------------------------------------------------------------
# points


def random_point(spec: ManifoldSpec, rng: np.random.Generator, batch: tuple = ()) -> np.ndarray:
    m = spec.ambient_dim
    if spec.kind == "sphere":
        x = rng.standard_normal(batch + (m,))
        return x / np.linalg.norm(x, axis=-1, keepdims=True)
    if spec.kind == "flat_torus":
        return rng.uniform(0.0, TORUS_PERIOD, batch + (m,))
    return rng.standard_normal(batch + (m,))


def wrap_point(spec: ManifoldSpec, x: np.ndarray) -> np.ndarray:
    """Canonical representative; the torus wraps coordinates, others pass through."""
    if spec.kind == "flat_torus":
        return np.mod(x, TORUS_PERIOD)
    return x


def point_defect(spec: ManifoldSpec, x: np.ndarray) -> np.ndarray:
    """Distance-to-manifold indicator: |1 - |x|| on the sphere, 0 on flat kinds."""
    if spec.kind == "sphere":
        return np.abs(np.linalg.norm(x, axis=-1) - 1.0)
    return np.zeros(np.shape(x)[:-1])


def validate_point(spec: ManifoldSpec, x: np.ndarray, tol: float = 1e-9) -> None:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.ambient_dim:
        raise GeometryError(
            f"point has ambient dim {x.shape[-1]}, expected {spec.ambient_dim}"
        )
    d = point_defect(spec, x)
    if np.any(d > tol):
        raise GeometryError(f"point off manifold by {float(np.max(d)):.3e}")


def tangency_defect(spec: ManifoldSpec, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    if spec.kind == "sphere":
        return np.abs(np.einsum("...i,...i->...", x, v))
    return np.zeros(np.broadcast_shapes(np.shape(x)[:-1], np.shape(v)[:-1]))


def validate_tangent(spec: ManifoldSpec, x: np.ndarray, v: np.ndarray, tol: float = 1e-9) -> None:
    d = tangency_defect(spec, x, v)
    scale = 1.0 + np.linalg.norm(np.asarray(v, dtype=float), axis=-1)
    if np.any(d > tol * scale):
        raise GeometryError(f"vector not tangent, defect {float(np.max(d)):.3e}")


# ---------------------------------------------------------------------------
# the gradient projection field and its derived transforms


def project(spec: ManifoldSpec, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """X(x)w: tangential projection of an ambient vector."""
    if spec.kind == "sphere":
        return w - np.einsum("...i,...i->...", w, x)[..., None] * x
    return np.asarray(w, dtype=float) + np.zeros_like(np.asarray(x, dtype=float))


def projection_matrix(spec: ManifoldSpec, x: np.ndarray) -> np.ndarray:
    m = spec.ambient_dim
    eye = np.eye(m)
    if spec.kind == "sphere":
        return eye - np.einsum("...i,...j->...ij", x, x)
    return np.broadcast_to(eye, np.shape(x)[:-1] + (m, m)).copy()


def normal_component(spec: ManifoldSpec, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Kernel-space part of an ambient vector: w - X(x)w."""
    return np.asarray(w, dtype=float) - project(spec, x, w)


def nabla_x(spec: ManifoldSpec, x: np.ndarray, v: np.ndarray, e: np.ndarray) -> np.ndarray:
    """nabla_v X(e) for tangent v and ambient e.

    Sphere: -<x,e> v.  Flat kinds: zero.  Vanishes whenever e is tangent,
    which is exactly the statement that the projection's derivative only sees
    the kernel-space component of e.
    """
    if spec.kind == "sphere":
        return -np.einsum("...i,...i->...", x, e)[..., None] * v
    return np.zeros(np.broadcast_shapes(np.shape(v), np.shape(e)))


def ricci_matrix(spec: ManifoldSpec, x: np.ndarray) -> np.ndarray:
    """Ric# at x as an ambient matrix acting on the tangent space."""
    if spec.kind == "sphere":
        return (spec.dim - 1.0) * projection_matrix(spec, x)
    m = spec.ambient_dim
    return np.zeros(np.shape(x)[:-1] + (m, m))


def curvature_op(spec: ManifoldSpec, x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Curvature operator on two-vectors (antisymmetric matrices).

    Sphere of any dimension: the identity on Lambda^2 T_x, realized as the
    two-sided tangential projection so stray normal components are removed.
    Flat kinds: zero.
    """
    if spec.kind == "sphere":
        p = projection_matrix(spec, x)
        return p @ g @ np.swapaxes(p, -1, -2)
    return np.zeros_like(np.asarray(g, dtype=float))


def d_wedge2(s: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Derivation extension of a linear map to two-vectors: S g + g S^T."""
    return s @ g + g @ np.swapaxes(s, -1, -2)


def weitzenbock2(spec: ManifoldSpec, x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Two-vector Weitzenboeck transform: d^2(Ric#) - 2 * curvature operator."""
    ric = ricci_matrix(spec, x)
    return d_wedge2(ric, g) - 2.0 * curvature_op(spec, x, g)


# ---------------------------------------------------------------------------
# geodesics and parallel transport


def _sinc(theta: np.ndarray) -> np.ndarray:
    return np.sinc(theta / np.pi)


def _haver(theta: np.ndarray) -> np.ndarray:
    # (1 - cos theta) / theta^2, series-safe
    half = _sinc(theta / 2.0)
    return 0.5 * half * half


def geodesic_step(
    spec: ManifoldSpec, x: np.ndarray, w: np.ndarray, step_cap: float = np.pi / 2
) -> tuple[np.ndarray, np.ndarray]:
    """Exponential step and its parallel transport.

    Returns (y, tau) with y = exp_x(w) and tau the ambient matrix of parallel
    transport along the geodesic from x to y.  w must be tangent at x.  On
    flat kinds y = x + w and tau is the identity.  On the sphere tau rotates
    the plane span(x, w) and fixes its orthogonal complement; it maps the
    normal direction x onto the normal direction at y, so chains of steps
    conjugate normal spaces exactly.

    Raises StepTooLarge when |w| exceeds step_cap on the sphere.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    m = spec.ambient_dim
    if spec.is_flat:
        y = x + w
        tau = np.broadcast_to(np.eye(m), np.broadcast_shapes(x.shape, w.shape)[:-1] + (m, m))
        return y, tau.copy()

    theta = np.linalg.norm(w, axis=-1)
    if np.any(theta >= step_cap):
        raise StepTooLarge(
            f"geodesic step of size {float(np.max(theta)):.4f} exceeds cap {step_cap:.4f}"
        )
    ct = np.cos(theta)[..., None]
    y = ct * x + _sinc(theta)[..., None] * w

    xxT = np.einsum("...i,...j->...ij", x, x)
    wwT = np.einsum("...i,...j->...ij", w, w)
    wxT = np.einsum("...i,...j->...ij", w, x)
    xwT = np.swapaxes(wxT, -1, -2)
    one_minus_ct = (1.0 - np.cos(theta))[..., None, None]
    tau = (
        np.eye(m)
        - one_minus_ct * xxT
        - _haver(theta)[..., None, None] * wwT
        + _sinc(theta)[..., None, None] * (wxT - xwT)
    )
    return y, tau


def geodesic_midpoint(
    spec: ManifoldSpec, x: np.ndarray, w: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint of the step and the transport from x to it."""
    return geodesic_step(spec, x, 0.5 * np.asarray(w, dtype=float), step_cap=np.pi)


def geodesic_log(spec: ManifoldSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Inverse of geodesic_step in its first return value.

    Returns the tangent vector w at x with exp_x(w) = y.  Flat kinds
    subtract; the torus picks the shortest representative, so consecutive
    points must be closer than half a period per coordinate for the round
    trip to be exact.  The sphere needs y away from the antipode of x.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if spec.kind == "euclidean":
        return y - x
    if spec.kind == "flat_torus":
        return np.mod(y - x + 0.5 * TORUS_PERIOD, TORUS_PERIOD) - 0.5 * TORUS_PERIOD

    c = np.clip(np.einsum("...i,...i->...", x, y), -1.0, 1.0)
    if np.any(c < -1.0 + 1e-12):
        raise GeometryError("logarithm undefined near the antipode")
    theta = np.arccos(c)
    rest = y - c[..., None] * x
    # theta / sin(theta), safe at zero through the sinc series
    return rest / _sinc(theta)[..., None]


def tangent_frame(spec: ManifoldSpec, x: np.ndarray) -> np.ndarray:
    """Orthonormal tangent frame at x, shape (..., m, n), columns tangent.

    Flat kinds return the ambient identity frame.  The sphere completes x to
    an ambient orthonormal basis by a Householder reflection and drops the
    normal column.
    """
    m = spec.ambient_dim
    n = spec.dim
    if spec.is_flat:
        return np.broadcast_to(np.eye(m), np.shape(x)[:-1] + (m, m)).copy()

    x = np.asarray(x, dtype=float)
    s = np.where(x[..., -1] >= 0.0, 1.0, -1.0)
    u = x.copy()
    u[..., -1] += s
    norm2 = np.einsum("...i,...i->...", u, u)[..., None, None]
    house = np.eye(m) - 2.0 * np.einsum("...i,...j->...ij", u, u) / norm2
    # column m-1 of house is -s * x (the normal); the first n columns span T_x
    return house[..., :n]


# ---------------------------------------------------------------------------
# two-vector helpers


def wedge_vectors(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """u ^ v as an antisymmetric matrix, (u v^T - v u^T) / 2."""
    uvT = np.einsum("...i,...j->...ij", u, v)
    return 0.5 * (uvT - np.swapaxes(uvT, -1, -2))


def two_vector_inner(g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
    """Frobenius pairing; equals the normalized determinant rule on wedges."""
    return np.einsum("...ij,...ij->...", g1, g2)


def wedge_basis(frame: np.ndarray) -> np.ndarray:
    """Frobenius-orthonormal basis of Lambda^2 of the frame's span.

    frame: (..., m, n) with orthonormal columns.  Returns
    (..., n*(n-1)//2, m, m) matrices sqrt(2) * (f_i ^ f_j), i < j.
    """
    n = frame.shape[-1]
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            fi = frame[..., :, i]
            fj = frame[..., :, j]
            out.append(np.sqrt(2.0) * wedge_vectors(fi, fj))
    return np.stack(out, axis=-3)


def weitzenbock_residual(spec: ManifoldSpec, x: np.ndarray) -> float:
    """Operator norm of -d^2(Ric#/2) + sum_i nabla X^i ^ nabla X^i + W2/2 on Lambda^2 T_x.

    The middle term is assembled from nabla_x along an ambient basis, the
    outer terms from the closed-form Ricci and Weitzenboeck transforms, so
    the cancellation is a genuine cross-check of two independent routes.
    Expected to vanish identically for all supported kinds.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise GeometryError("weitzenbock_residual expects a single point")
    m = spec.ambient_dim
    frame = tangent_frame(spec, x)
    basis = wedge_basis(frame)  # (K, m, m)
    k = basis.shape[0]
    ric = ricci_matrix(spec, x)

    # nabla X^i as a map T_x -> T_x for each ambient basis vector e_i
    grads = []
    for i in range(m):
        e = np.zeros(m)
        e[i] = 1.0
        cols = [nabla_x(spec, x, frame[:, a], e) for a in range(spec.dim)]
        # matrix in the ambient coordinates, acting on tangent vectors
        grads.append(np.stack(cols, axis=-1) @ frame.T)

    resid = np.zeros((k, k))
    for b in range(k):
        g = basis[b]
        term = -0.5 * d_wedge2(ric, g) + 0.5 * weitzenbock2(spec, x, g)
        for s in grads:
            term += s @ g @ s.T
        resid[:, b] = [two_vector_inner(basis[a], term) for a in range(k)]
    return float(np.linalg.norm(resid, ord=2))
