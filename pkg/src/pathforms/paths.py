"""Discrete Brownian paths on model manifolds and their pathwise fields.

A path is advanced by geodesic steps: the ambient Gaussian increment is
projected onto the tangent space at the current point and the exponential
map is applied.  Every per-sample random stream is keyed by
``(seed, sample_index)`` so a given sample is bit-identical no matter how
samples are grouped into batches or distributed over workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import PathMismatch, NonSkewRotation, StepTooLarge

_INV_2_53 = 2.0 ** -53


def _philox(seed: int, sample: int) -> np.random.Philox:
    key = np.array([seed, sample], dtype=np.uint64)
    return np.random.Philox(key=key)


def _raws_to_normals(raws: np.ndarray, count: int) -> np.ndarray:
    """Box-Muller on 53-bit uniforms. Consumption is fixed: 2 raws per pair."""
    u = ((raws >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53
    u = u.reshape(-1, 2)
    r = np.sqrt(-2.0 * np.log(u[:, 0]))
    ang = (2.0 * math.pi) * u[:, 1]
    z = np.empty(u.shape[0] * 2)
    z[0::2] = r * np.cos(ang)
    z[1::2] = r * np.sin(ang)
    return z[:count]


@dataclass(frozen=True)
class Driver:
    """Time grid plus the seeded Gaussian increment source.

    ``n_steps`` normal vectors of dimension m are drawn per sample, scaled
    by sqrt(dt).  ``coarsen`` sums adjacent pairs, which realises the same
    Brownian driver on the halved grid; refinement studies rely on that
    coupling.
    """

    seed: int
    n_steps: int
    horizon: float = 1.0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    def normals(self, m: int, samples: np.ndarray) -> np.ndarray:
        """Unit normals, shape (len(samples), n_steps, m)."""
        samples = np.asarray(samples, dtype=np.int64)
        count = self.n_steps * m
        n_raws = 2 * ((count + 1) // 2)
        out = np.empty((samples.size, count))
        for row, s in enumerate(samples):
            bg = _philox(self.seed, int(s))
            out[row] = _raws_to_normals(bg.random_raw(n_raws), count)
        return out.reshape(samples.size, self.n_steps, m)

    def normals_resume(self, m: int, sample: int, attempt: int) -> np.ndarray:
        """Fresh (n_steps, m) block from the tail of one sample's stream.

        attempt k skips the k blocks already consumed, so redraws stay
        deterministic and independent of every other sample.
        """
        count = self.n_steps * m
        n_raws = 2 * ((count + 1) // 2)
        bg = _philox(self.seed, int(sample))
        bg.advance(attempt * n_raws)
        return _raws_to_normals(bg.random_raw(n_raws), count).reshape(self.n_steps, m)

    def increments(self, m: int, samples: np.ndarray) -> np.ndarray:
        return self.normals(m, samples) * math.sqrt(self.dt)

    def coarsened(self) -> "Driver":
        if self.n_steps % 2:
            raise ValueError("cannot halve an odd step count")
        return Driver(self.seed, self.n_steps // 2, self.horizon)


def coarsen_increments(incr: np.ndarray) -> np.ndarray:
    """Sum adjacent increment pairs: the same driver on half the grid."""
    s, n, m = incr.shape
    if n % 2:
        raise ValueError("cannot halve an odd step count")
    return incr.reshape(s, n // 2, 2, m).sum(axis=2)


def endpoint_mean_multiplier(spec: geo.ManifoldSpec, dt: float) -> float:
    """Exact per-step factor of E[<p, x_{i+1}> | x_i] for the geodesic scheme.

    The projected increment is rotation invariant in the tangent space, so
    conditioning gives E[cos |w|] with |w|^2 = dt * chi^2_n.  Evaluated by
    radial quadrature; the N-step scheme mean is this factor to the N-th
    power, an oracle that needs no Monte Carlo and no continuum limit.
    Flat kinds return 1 (linear observables are martingales there).
    """
    if spec.is_flat:
        return 1.0
    n = spec.dim
    r = np.linspace(1e-8, 12.0, 20001)
    dens = r ** (n - 1) * np.exp(-r * r / 2.0)
    trapz = getattr(np, "trapezoid", None) or np.trapz
    dens = dens / trapz(dens, r)
    return float(trapz(np.cos(math.sqrt(dt) * r) * dens, r))


def default_base_point(spec: geo.ManifoldSpec) -> np.ndarray:
    m = spec.ambient_dim
    x0 = np.zeros(m)
    if spec.kind == "sphere":
        x0[0] = 1.0
    return x0


@dataclass
class DiscretePath:
    """A batch of geodesic-step paths on one manifold.

    points has shape (S, N+1, m); increments and steps have shape (S, N, m).
    ``steps`` holds the projected tangent vectors actually fed to the
    exponential map, so every downstream transport can be replayed exactly.
    """

    spec: geo.ManifoldSpec
    driver: Driver
    samples: np.ndarray
    points: np.ndarray
    increments: np.ndarray
    steps: np.ndarray
    resample_count: int = 0

    @property
    def n_samples(self) -> int:
        return self.points.shape[0]

    @property
    def n_steps(self) -> int:
        return self.driver.n_steps

    @property
    def dt(self) -> float:
        return self.driver.dt

    @property
    def times(self) -> np.ndarray:
        return self.driver.times

    def wrapped_points(self) -> np.ndarray:
        return geo.wrap_point(self.spec, self.points)

    def endpoint(self) -> np.ndarray:
        return self.points[:, -1]


def simulate(
    spec: geo.ManifoldSpec,
    driver: Driver,
    samples,
    x0: np.ndarray | None = None,
    step_cap: float = math.pi / 2,
    on_large_step: str = "resample",
    increments: np.ndarray | None = None,
) -> DiscretePath:
    """Run the geodesic-step scheme for the given sample indices.

    Oversized projected increments (possible only on spheres, with
    probability decaying like exp(-c/dt)) are handled per the policy:
    "resample" redraws the offending sample's whole increment block from
    its own stream, "abort" raises StepTooLarge.

    ``increments`` overrides the driver's draw (used by coupled-refinement
    studies); resampling is disabled in that case.
    """
    samples = np.atleast_1d(np.asarray(samples, dtype=np.int64))
    m = spec.ambient_dim
    if x0 is None:
        x0 = default_base_point(spec)
    x0 = np.asarray(x0, dtype=float)
    geo.validate_point(spec, x0)

    if increments is None:
        incr = driver.increments(m, samples)
        external = False
    else:
        incr = np.array(increments, dtype=float)
        if incr.shape != (samples.size, driver.n_steps, m):
            raise PathMismatch("increment block has the wrong shape")
        external = True

    n = driver.n_steps
    s_count = samples.size
    pts = np.empty((s_count, n + 1, m))
    steps = np.empty((s_count, n, m))
    pts[:, 0] = x0
    resamples = 0

    i = 0
    while i < n:
        x = pts[:, i]
        w = geo.project(spec, x, incr[:, i])
        if spec.kind == "sphere":
            bad = np.linalg.norm(w, axis=-1) >= step_cap
            if bad.any():
                if on_large_step == "abort" or external:
                    raise StepTooLarge(
                        f"{int(bad.sum())} projected increments exceed the step cap"
                    )
                for row in np.nonzero(bad)[0]:
                    attempt = 1
                    while True:
                        fresh = driver.normals_resume(m, int(samples[row]), attempt)
                        # the whole sample restarts from scratch with the
                        # fresh block, so earlier rows must be rebuilt too
                        incr[row] = fresh * math.sqrt(driver.dt)
                        resamples += 1
                        xr = x0
                        ok = True
                        for k in range(n):
                            wk = geo.project(spec, xr, incr[row, k])
                            if np.linalg.norm(wk) >= step_cap:
                                ok = False
                                break
                            pts[row, k] = xr
                            steps[row, k] = wk
                            xr, _ = geo.geodesic_step(spec, xr, wk, step_cap=step_cap)
                            pts[row, k + 1] = xr
                        if ok:
                            break
                        attempt += 1
                # recompute the current slice for rows just rebuilt
                x = pts[:, i]
                w = geo.project(spec, x, incr[:, i])
        steps[:, i] = w
        y, _ = geo.geodesic_step(spec, x, w, step_cap=math.pi)
        pts[:, i + 1] = y
        i += 1

    return DiscretePath(spec, driver, samples, pts, incr, steps, resamples)


def path_from_points(
    spec: geo.ManifoldSpec,
    driver: Driver,
    samples: np.ndarray,
    points: np.ndarray,
) -> DiscretePath:
    """Rebuild a path batch from explicit node points.

    Steps are recovered by the geodesic logarithm, so every transport and
    chain construction replays exactly as if the points had been produced
    by simulate.  The increments slot is filled with the tangent steps
    themselves (they are their own projections); pathwise-perturbation
    code must therefore not feed rebuilt paths to consumers that need the
    raw ambient draws.
    """
    points = np.asarray(points, dtype=float)
    s_count, n1, m = points.shape
    if n1 != driver.n_steps + 1 or m != spec.ambient_dim:
        raise PathMismatch("point block does not match the driver grid")
    steps = geo.geodesic_log(spec, points[:, :-1], points[:, 1:])
    return DiscretePath(
        spec, driver, np.asarray(samples), points, steps.copy(), steps
    )


@dataclass
class ParallelChain:
    """Cumulative parallel transports along each path.

    par[:, i] maps T_{x_0} to T_{x_i}; the matrices are ambient-orthogonal,
    so the inverse is the transpose.
    """

    path: DiscretePath
    par: np.ndarray
    step_transports: np.ndarray

    @property
    def par_inv(self) -> np.ndarray:
        return np.swapaxes(self.par, -1, -2)

    def pull_back(self, i: int, v: np.ndarray) -> np.ndarray:
        return np.einsum("sba,sb->sa", self.par[:, i], v)


def transport_chain(path: DiscretePath) -> ParallelChain:
    spec = path.spec
    _, tau = geo.geodesic_step(
        spec, path.points[:, :-1], path.steps, step_cap=math.pi
    )
    s_count, n, m = path.steps.shape
    par = np.empty((s_count, n + 1, m, m))
    par[:, 0] = np.eye(m)
    for i in range(n):
        par[:, i + 1] = tau[:, i] @ par[:, i]
    return ParallelChain(path, par, tau)


@dataclass(frozen=True)
class CameronMartinPath:
    """Deterministic finite-energy perturbation direction.

    Stored by its slope on each cell; node values follow by summation from
    zero.  dot has shape (N, m) and is shared across the sample batch.
    """

    dot: np.ndarray
    horizon: float

    @property
    def n_steps(self) -> int:
        return self.dot.shape[0]

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def nodes(self) -> np.ndarray:
        n, m = self.dot.shape
        out = np.zeros((n + 1, m))
        np.cumsum(self.dot * self.dt, axis=0, out=out[1:])
        return out

    def energy(self) -> float:
        return float(np.sum(self.dot * self.dot) * self.dt)

    @staticmethod
    def from_nodes(values: np.ndarray, horizon: float) -> "CameronMartinPath":
        values = np.asarray(values, dtype=float)
        n = values.shape[0] - 1
        dot = np.diff(values, axis=0) / (horizon / n)
        return CameronMartinPath(dot, horizon)

    @staticmethod
    def fourier(
        rng: np.random.Generator,
        n_steps: int,
        m: int,
        horizon: float = 1.0,
        modes: int = 3,
        scale: float = 1.0,
    ) -> "CameronMartinPath":
        """Random low-frequency slope; smooth enough for refinement sweeps."""
        t_mid = (np.arange(n_steps) + 0.5) * (horizon / n_steps)
        dot = np.zeros((n_steps, m))
        for k in range(1, modes + 1):
            a = rng.standard_normal(m) * scale / k
            b = rng.standard_normal(m) * scale / k
            dot += np.outer(np.cos(k * math.pi * t_mid / horizon), a)
            dot += np.outer(np.sin(k * math.pi * t_mid / horizon), b)
        return CameronMartinPath(dot, horizon)


def derivative_flow(
    chain: ParallelChain, h: CameronMartinPath
) -> np.ndarray:
    """Pathwise derivative of the geodesic scheme along direction h.

    Midpoint rule for the linearised step: the variation is moved to the
    step's geodesic midpoint, the projection-field correction
    (grad X)(increment) is applied there implicitly, and the drift slot
    gets X(x_mid) h_dot dt.  Linear in h; equals the node values of h on
    flat kinds.  Returns (S, N+1, m).
    """
    path = chain.path
    spec = path.spec
    if h.n_steps != path.n_steps or abs(h.horizon - path.driver.horizon) > 1e-12:
        raise PathMismatch("perturbation grid does not match the path grid")
    s_count, n, m = path.steps.shape
    dt = path.dt
    v = np.zeros((s_count, n + 1, m))
    x_mid, tau_half = geo.geodesic_midpoint(spec, path.points[:, :-1], path.steps)
    tau = chain.step_transports
    # transport from midpoint to step end along the same geodesic
    tau_rest = tau @ np.swapaxes(tau_half, -1, -2)
    for i in range(n):
        z = np.einsum("sab,sb->sa", tau_half[:, i], v[:, i])
        b = geo.project(spec, x_mid[:, i], np.broadcast_to(h.dot[i], (s_count, m))) * dt
        if spec.kind == "sphere":
            c = -np.einsum("sa,sa->s", x_mid[:, i], path.increments[:, i])
            znew = ((1.0 + 0.5 * c)[:, None] * z + b) / (1.0 - 0.5 * c)[:, None]
        else:
            znew = z + b
        v[:, i + 1] = np.einsum("sab,sb->sa", tau_rest[:, i], znew)
    return v


def derivative_flow_probes(
    chain: ParallelChain,
    dots: np.ndarray,
    horizon: float,
    requests: list,
) -> np.ndarray:
    """Batched scalar readouts of derivative flows for many directions.

    dots stacks K slope blocks (K, N, m); requests is a list of
    (channel, node, probe) triples asking for <flow_k at node, probe>.
    One pass of the same per-step arithmetic as derivative_flow serves
    every channel, so a request reproduces the single-direction value.
    Returns (S, len(requests)).
    """
    path = chain.path
    spec = path.spec
    s_count, n, m = path.steps.shape
    dots = np.asarray(dots, dtype=float)
    if dots.ndim != 3 or dots.shape[1] != n or dots.shape[2] != m:
        raise PathMismatch("slope stack does not match the path grid")
    if abs(horizon - path.driver.horizon) > 1e-12:
        raise PathMismatch("perturbation horizon does not match the path")
    k_count = dots.shape[0]
    dt = path.dt
    by_node: dict[int, list] = {}
    for r, (k, node, probe) in enumerate(requests):
        if not 0 <= node <= n:
            raise PathMismatch("requested node is off the grid")
        by_node.setdefault(int(node), []).append((r, int(k), np.asarray(probe)))

    out = np.zeros((s_count, len(requests)))
    v = np.zeros((s_count, k_count, m))

    def emit(node):
        for r, k, probe in by_node.get(node, ()):
            out[:, r] = np.einsum("sm,m->s", v[:, k], probe)

    emit(0)
    x_mid, tau_half = geo.geodesic_midpoint(spec, path.points[:, :-1], path.steps)
    tau = chain.step_transports
    tau_rest = tau @ np.swapaxes(tau_half, -1, -2)
    for i in range(n):
        z = np.einsum("sab,skb->ska", tau_half[:, i], v)
        b = geo.project(
            spec,
            x_mid[:, i][:, None, :],
            np.broadcast_to(dots[:, i], (s_count, k_count, m)),
        ) * dt
        if spec.kind == "sphere":
            c = -np.einsum("sa,sa->s", x_mid[:, i], path.increments[:, i])
            znew = ((1.0 + 0.5 * c)[:, None, None] * z + b) / (
                1.0 - 0.5 * c
            )[:, None, None]
        else:
            znew = z + b
        v = np.einsum("sab,skb->ska", tau_rest[:, i], znew)
        emit(i + 1)
    return out


def skorohod_div_adapted(path: DiscretePath, h: CameronMartinPath) -> np.ndarray:
    """Divergence of the adapted damped field generated by h.

    Left-point evaluation makes the sum an Ito integral, so on flat kinds
    the variance equals the energy of h exactly in law.
    Returns minus the integral sum, shape (S,).
    """
    if h.n_steps != path.n_steps:
        raise PathMismatch("perturbation grid does not match the path grid")
    return -np.einsum("rm,srm->s", h.dot, path.steps)


@dataclass
class RotationField:
    """Adapted vector field built from pathwise tangent rotations."""

    chain: ParallelChain
    values: np.ndarray
    skew_defect: float


def rotation_field(
    chain: ParallelChain,
    alphas: np.ndarray,
    skew_tol: float = 1e-10,
) -> RotationField:
    """Integrate left-adapted rotations against the projected increments.

    alphas: (S, N, m, m), each a map of the tangent space at the current
    point into itself with skew tangential part.  The field value is
    R_i = par_i * sum_{s<i} par_s^T (alpha_s w_s); its divergence vanishes
    in the weak sense because each rotation is antisymmetric under the
    Ito pairing.
    """
    path = chain.path
    spec = path.spec
    s_count, n, m = path.steps.shape
    if alphas.shape != (s_count, n, m, m):
        raise PathMismatch("rotation block has the wrong shape")
    x = path.points[:, :-1]
    proj = geo.projection_matrix(spec, x)
    tang = proj @ (alphas + np.swapaxes(alphas, -1, -2)) @ proj
    defect = float(np.max(np.abs(tang))) if tang.size else 0.0
    if defect > skew_tol:
        raise NonSkewRotation(
            f"tangential symmetric part has magnitude {defect:.3e}"
        )
    rotated = np.einsum("snab,snb->sna", alphas, path.steps)
    tang_defect = geo.tangency_defect(spec, x, rotated)
    if float(np.max(tang_defect, initial=0.0)) > 1e-8:
        raise NonSkewRotation("rotations must preserve tangency")
    pulled = np.einsum("snba,snb->sna", chain.par[:, :-1], rotated)
    acc = np.zeros((s_count, n + 1, m))
    np.cumsum(pulled, axis=1, out=acc[:, 1:])
    values = np.einsum("snab,snb->sna", chain.par, acc)
    return RotationField(chain, values, defect)


def cross_rotations(path: DiscretePath, axis_weights: np.ndarray) -> np.ndarray:
    """Pathwise rotations for the 2-sphere: multiples of the cross product
    with the current point, the generic tangential skew map in ambient R^3.

    axis_weights: (N,) or (S, N) scalars a_s; alpha_s = a_s [x_s]_x.
    """
    if path.spec.kind != "sphere" or path.spec.dim != 2:
        raise PathMismatch("cross rotations need the 2-sphere")
    s_count, n, m = path.steps.shape
    a = np.asarray(axis_weights, dtype=float)
    if a.ndim == 1:
        a = np.broadcast_to(a, (s_count, n))
    x = path.points[:, :-1]
    alphas = np.zeros((s_count, n, 3, 3))
    alphas[..., 0, 1] = -x[..., 2]
    alphas[..., 0, 2] = x[..., 1]
    alphas[..., 1, 0] = x[..., 2]
    alphas[..., 1, 2] = -x[..., 0]
    alphas[..., 2, 0] = -x[..., 1]
    alphas[..., 2, 1] = x[..., 0]
    return alphas * a[..., None, None]


def constant_rotations(path: DiscretePath, alpha: np.ndarray) -> np.ndarray:
    """One fixed ambient skew matrix on every cell (flat kinds)."""
    s_count, n, m = path.steps.shape
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (m, m):
        raise PathMismatch("rotation matrix has the wrong shape")
    return np.broadcast_to(alpha, (s_count, n, m, m)).copy()
