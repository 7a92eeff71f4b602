"""Monte Carlo residual estimation with worker-independent reductions.

Every check here estimates the mean of a per-sample residual that a
structural identity says is zero, and reports it against a tolerance of
z standard errors plus an explicit bias allowance for the step-size
error of the discretization.  Sample batches are fixed by index before
any thread runs, each batch draws its own increments from the
counter-based driver, and the final reduction is a compensated sum over
samples in index order, so the report is bit-for-bit identical no
matter how many workers participate.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .cylindrical import (
    CylindricalFunction,
    CylindricalOneForm,
    PointPoly,
    d_cyl,
    dform_eval,
    one_form_apply,
    random_cylindrical,
)
from .divergence import (
    LiftSpec,
    bracket_torsion_fd,
    div_wedge,
    nabla_star_wedge,
)
from .errors import ConfigError
from .paths import (
    CameronMartinPath,
    Driver,
    coarsen_increments,
    constant_rotations,
    cross_rotations,
    derivative_flow,
    derivative_flow_probes,
    rotation_field,
    simulate,
    transport_chain,
)
from .transports import conditional_ti, damped_chain
from .two_tensors import JPath, jpath_entry_ambient, wedge_q_jpath

DEFAULT_BATCH = 1024


@dataclass(frozen=True)
class MCReport:
    """Result of one Monte Carlo residual estimate."""

    experiment: str
    manifold: str
    n_steps: int
    n_samples: int
    estimate: float
    std_error: float
    tolerance: float
    verdict: bool
    z: float = 3.0
    bias_allowance: float = 0.0
    n_nonfinite: int = 0

    def row(self) -> dict:
        return {
            "experiment": self.experiment,
            "manifold": self.manifold,
            "N": self.n_steps,
            "samples": self.n_samples,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "tolerance": self.tolerance,
            "verdict": "pass" if self.verdict else "fail",
        }


def _batches(n_samples: int, batch_size: int):
    starts = range(0, n_samples, batch_size)
    return [np.arange(s, min(s + batch_size, n_samples)) for s in starts]


def reduce_samples(values: np.ndarray) -> tuple[float, float, int]:
    """Mean and standard error by fixed-order compensated summation."""
    finite = values[np.isfinite(values)]
    n = finite.size
    if n < 2:
        raise ConfigError("too few finite samples to form an estimate")
    mean = math.fsum(finite.tolist()) / n
    var = math.fsum(((finite - mean) ** 2).tolist()) / (n - 1)
    return mean, math.sqrt(var / n), int(values.size - n)


def run_mc(
    sampler,
    n_samples: int,
    *,
    experiment: str,
    manifold: str,
    n_steps: int,
    z: float = 3.0,
    bias_allowance: float = 0.0,
    batch_size: int = DEFAULT_BATCH,
    workers: int = 1,
) -> MCReport:
    """Estimate E[residual] and compare against z * SE + bias allowance.

    sampler(indices) must return one residual per index and depend only
    on the index values, never on scheduling; batches are fixed up front
    and merged in index order.  Samples that come back non-finite are
    dropped from the estimate, counted, and fail the verdict when they
    exceed one in a thousand.
    """
    if n_samples < 100:
        raise ConfigError("need at least 100 samples for a stable error bar")
    batches = _batches(n_samples, batch_size)
    out: list = [None] * len(batches)
    if workers <= 1:
        for k, idx in enumerate(batches):
            out[k] = np.asarray(sampler(idx), dtype=float)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(sampler, idx): k for k, idx in enumerate(batches)
            }
            for fut, k in futures.items():
                out[k] = np.asarray(fut.result(), dtype=float)
    values = np.concatenate(out)
    mean, se, n_bad = reduce_samples(values)
    tol = z * se + bias_allowance
    ok = abs(mean) <= tol and (n_bad * 1000 <= n_samples)
    return MCReport(
        experiment=experiment,
        manifold=manifold,
        n_steps=n_steps,
        n_samples=n_samples,
        estimate=mean,
        std_error=se,
        tolerance=tol,
        verdict=bool(ok),
        z=z,
        bias_allowance=bias_allowance,
        n_nonfinite=n_bad,
    )


# ---------------------------------------------------------------------------
# sampler builders


def _chain_for(mspec, driver, idx):
    path = simulate(mspec, driver, idx)
    chain = transport_chain(path)
    return path, chain, damped_chain(chain)


def gaussian_moment_sampler(mspec: geo.ManifoldSpec, driver: Driver):
    """Flat-driver toy: squared endpoint norm minus its exact mean."""
    m = mspec.ambient_dim
    target = m * driver.horizon

    def sampler(idx):
        inc = driver.increments(m, idx)
        end = inc.sum(axis=1)
        return np.einsum("sm,sm->s", end, end) - target

    return sampler


def ibp_one_vector_sampler(
    mspec: geo.ManifoldSpec,
    driver: Driver,
    f: CylindricalFunction,
    vspec,
):
    """Residual of the first-order integration by parts for a lifted field."""

    def sampler(idx):
        path, chain, dch = _chain_for(mspec, driver, idx)
        u = vspec.build(dch)
        return d_cyl(f, path, u.values()) + f.value(path) * vspec.div(dch)

    return sampler


def ibp_two_vector_sampler(
    mspec: geo.ManifoldSpec,
    driver: Driver,
    phi: CylindricalOneForm,
    spec1,
    spec2,
    eps: float = 1e-3,
):
    """Residual of the second-order integration by parts on a closed wedge.

    The divergence of the closed wedge is the adjoint-connection value:
    the wedge divergence plus half the torsion, assembled directly.
    """

    def sampler(idx):
        path, chain, dch = _chain_for(mspec, driver, idx)
        rep = nabla_star_wedge(dch, spec1, spec2, eps)
        u1 = spec1.build(dch)
        u2 = spec2.build(dch)
        qjp = wedge_q_jpath(u1, u2)
        lhs = dform_eval(phi, dch, (u1, u2)) + dform_eval(phi, dch, qjp)
        rhs = one_form_apply(phi, path, rep.field.values())
        return lhs + rhs

    return sampler


def rotation_div_sampler(
    mspec: geo.ManifoldSpec,
    driver: Driver,
    f: CylindricalFunction,
    alpha_fn,
):
    """Residual of the divergence-free rotation field: E[df(R)] alone.

    alpha_fn(path) must return adapted cell rotations (S, N, m, m); the
    integrated field has vanishing divergence, so the bare derivative of
    any cylindrical function against it is centered.
    """

    def sampler(idx):
        path, chain, dch = _chain_for(mspec, driver, idx)
        rot = rotation_field(chain, alpha_fn(path))
        return d_cyl(f, path, rot.values)

    return sampler


def torsion_divergence_sampler(
    mspec: geo.ManifoldSpec,
    driver: Driver,
    phi: CylindricalOneForm,
    spec1,
    spec2,
    eps: float = 1e-3,
    control: bool = False,
):
    """Residual of the closure-divergence identity on adapted wedges.

    The exterior derivative of a one-form against the curvature closure
    of an adapted wedge balances half the torsion of the damped
    connection.  With control=True the torsion term is dropped, which
    must push the estimate out of the confidence band on curved kinds.
    """

    def sampler(idx):
        path, chain, dch = _chain_for(mspec, driver, idx)
        u1 = spec1.build(dch)
        u2 = spec2.build(dch)
        qjp = wedge_q_jpath(u1, u2)
        lhs = dform_eval(phi, dch, qjp)
        if control:
            return lhs
        _, tor = bracket_torsion_fd(dch, spec1, spec2, eps)
        return lhs + 0.5 * one_form_apply(phi, path, tor.values())

    return sampler


def composite_divergence_sampler(
    mspec: geo.ManifoldSpec,
    driver: Driver,
    phi: CylindricalOneForm,
    h1: CameronMartinPath,
    h2: CameronMartinPath,
    eps: float = 1e-3,
):
    """Residual tying the closure divergence to the two transfer routes.

    The divergence of the closed wedge of transferred slopes splits into
    the transferred wedge divergence minus the intrinsic wedge
    divergence; all three terms are estimated on the same draw.  The
    coefficients of the one-form are measurable functions of the path,
    so conditioning drops out of the expectation.
    """
    spec1, spec2 = LiftSpec(h1), LiftSpec(h2)

    def sampler(idx):
        path, chain, dch = _chain_for(mspec, driver, idx)
        u1 = spec1.build(dch)
        u2 = spec2.build(dch)
        qjp = wedge_q_jpath(u1, u2)
        lhs = dform_eval(phi, dch, qjp)
        transfer = div_wedge(dch, spec1, spec2, eps, via="transfer")
        intrinsic = div_wedge(dch, spec1, spec2, eps, via="bracket")
        return (
            lhs
            + one_form_apply(phi, path, transfer.values())
            - one_form_apply(phi, path, intrinsic.values())
        )

    return sampler


def conditional_one_vector_sampler(
    mspec: geo.ManifoldSpec,
    driver: Driver,
    f: CylindricalFunction,
    h: CameronMartinPath,
    node: int,
    probe: np.ndarray,
):
    """Weak gap between the scheme derivative and the adapted lift.

    Pairs the difference at one node against a fixed covector, weighted
    by a function of the path; the conditional-expectation statement says
    the mean vanishes up to the scheme's weak first-order error.
    """
    p = np.asarray(probe, dtype=float)

    def sampler(idx):
        path, chain, dch = _chain_for(mspec, driver, idx)
        tfl = derivative_flow(chain, h)
        lift = conditional_ti(dch, h).values()
        gap = tfl[:, node] - lift[:, node]
        return f.value(path) * np.einsum("sm,m->s", gap, p)

    return sampler


def conditional_two_vector_sampler(
    mspec: geo.ManifoldSpec,
    driver: Driver,
    f: CylindricalFunction,
    h1: CameronMartinPath,
    h2: CameronMartinPath,
    node_s: int,
    node_t: int,
    probe_s: np.ndarray,
    probe_t: np.ndarray,
):
    """Weak gap between the transferred wedge and its conditioned closure.

    Evaluates both two-tensors at one node pair through fixed covectors.
    The closure side is the wedge of adapted lifts plus the curvature
    perturbation entry; the transfer side is the plain wedge of scheme
    derivatives.
    """
    gs = np.asarray(probe_s, dtype=float)
    gt = np.asarray(probe_t, dtype=float)

    def sampler(idx):
        path, chain, dch = _chain_for(mspec, driver, idx)
        t1 = derivative_flow(chain, h1)
        t2 = derivative_flow(chain, h2)
        u1 = conditional_ti(dch, h1).values()
        u2 = conditional_ti(dch, h2).values()
        qjp = wedge_q_jpath(
            conditional_ti(dch, h1), conditional_ti(dch, h2)
        )

        def pair(a, b):
            return np.einsum("sm,m->s", a[:, node_s], gs) * np.einsum(
                "sm,m->s", b[:, node_t], gt
            )

        lhs = 0.5 * (pair(t1, t2) - pair(t2, t1))
        rhs = 0.5 * (pair(u1, u2) - pair(u2, u1))
        entry = jpath_entry_ambient(dch, qjp, node_s, node_t)
        rhs = rhs + np.einsum("m,smk,k->s", gs, entry, gt)
        return f.value(path) * (lhs - rhs)

    return sampler


# ---------------------------------------------------------------------------
# conditional weak checks, two-level form


@dataclass(frozen=True)
class FourierSlope:
    """Low-frequency slope with frozen coefficients, evaluable on any grid.

    The conditional checks compare functionals on a grid and its
    refinement, so the perturbation direction must be a fixed continuum
    object rather than a per-grid array.
    """

    cos_coeff: np.ndarray
    sin_coeff: np.ndarray
    horizon: float = 1.0

    def dot(self, n_steps: int) -> np.ndarray:
        modes = self.cos_coeff.shape[0]
        t_mid = (np.arange(n_steps) + 0.5) * (self.horizon / n_steps)
        arg = np.pi * np.outer(np.arange(1, modes + 1), t_mid) / self.horizon
        out = np.einsum("km,kn->nm", self.cos_coeff, np.cos(arg))
        out += np.einsum("km,kn->nm", self.sin_coeff, np.sin(arg))
        return out

    def path(self, n_steps: int) -> CameronMartinPath:
        return CameronMartinPath(self.dot(n_steps), self.horizon)

    @staticmethod
    def draw(
        rng: np.random.Generator,
        m: int,
        modes: int = 3,
        scale: float = 1.0,
        horizon: float = 1.0,
    ) -> "FourierSlope":
        fall = scale / np.arange(1, modes + 1)[:, None]
        return FourierSlope(
            cos_coeff=rng.standard_normal((modes, m)) * fall,
            sin_coeff=rng.standard_normal((modes, m)) * fall,
            horizon=horizon,
        )


def _unit_covector(rng: np.random.Generator, m: int) -> np.ndarray:
    g = rng.standard_normal(m)
    return g / np.linalg.norm(g)


def _draw_weak_configs(rng, mspec, mode, n_coarse, horizon, n_configs):
    m = mspec.ambient_dim
    lo = max(2, n_coarse // 4)
    grid = horizon / n_coarse
    configs = []
    for _ in range(n_configs):
        times = sorted(
            {int(j) * grid for j in rng.integers(lo, n_coarse + 1, size=2)}
        )
        f = random_cylindrical(rng, mspec, times)
        if mode == "lift":
            h = FourierSlope.draw(rng, m, horizon=horizon)
            node = int(rng.integers(lo, n_coarse + 1))
            configs.append((f, h, node, _unit_covector(rng, m)))
        else:
            h1 = FourierSlope.draw(rng, m, horizon=horizon)
            h2 = FourierSlope.draw(rng, m, horizon=horizon)
            pair = rng.integers(lo, n_coarse + 1, size=2)
            while pair[0] == pair[1]:
                pair = rng.integers(lo, n_coarse + 1, size=2)
            ns, nt = int(pair.min()), int(pair.max())
            configs.append(
                (f, h1, h2, ns, nt, _unit_covector(rng, m), _unit_covector(rng, m))
            )
    return configs


def _lift_psi(mspec, path, configs, horizon, level_scale):
    chain = transport_chain(path)
    dch = damped_chain(chain)
    n = path.n_steps
    dots = np.stack([h.dot(n) for (_, h, _, _) in configs])
    requests = [
        (k, node * level_scale, probe)
        for k, (_, _, node, probe) in enumerate(configs)
    ]
    flows = derivative_flow_probes(chain, dots, horizon, requests)
    psi = np.empty((path.n_samples, len(configs)))
    for k, (f, h, node, probe) in enumerate(configs):
        lift = conditional_ti(dch, h.path(n))
        cond = np.einsum("sm,m->s", lift.value_at(node * level_scale), probe)
        psi[:, k] = f.value(path) * (flows[:, k] - cond)
    return psi


def _wedge_psi(mspec, path, configs, horizon, level_scale):
    chain = transport_chain(path)
    dch = damped_chain(chain)
    n = path.n_steps
    dots = []
    requests = []
    for k, (_, h1, h2, ns, nt, gs, gt) in enumerate(configs):
        dots.append(h1.dot(n))
        dots.append(h2.dot(n))
        s, t = ns * level_scale, nt * level_scale
        base = 2 * k
        requests.extend(
            [
                (base, s, gs),
                (base, t, gt),
                (base + 1, s, gs),
                (base + 1, t, gt),
            ]
        )
    flows = derivative_flow_probes(chain, np.stack(dots), horizon, requests)
    psi = np.empty((path.n_samples, len(configs)))
    for k, (f, h1, h2, ns, nt, gs, gt) in enumerate(configs):
        s, t = ns * level_scale, nt * level_scale
        t1s, t1t, t2s, t2t = flows[:, 4 * k : 4 * k + 4].T
        u1 = conditional_ti(dch, h1.path(n))
        u2 = conditional_ti(dch, h2.path(n))
        u1s = np.einsum("sm,m->s", u1.value_at(s), gs)
        u1t = np.einsum("sm,m->s", u1.value_at(t), gt)
        u2s = np.einsum("sm,m->s", u2.value_at(s), gs)
        u2t = np.einsum("sm,m->s", u2.value_at(t), gt)
        lhs = 0.5 * (t1s * t2t - t2s * t1t)
        rhs = 0.5 * (u1s * u2t - u2s * u1t)
        entry = jpath_entry_ambient(dch, wedge_q_jpath(u1, u2), s, t)
        rhs = rhs + np.einsum("m,smk,k->s", gs, entry, gt)
        psi[:, k] = f.value(path) * (lhs - rhs)
    return psi


def conditional_weak_suite(
    mspec: geo.ManifoldSpec,
    *,
    mode: str,
    seed: int,
    n_samples: int,
    n_coarse: int,
    n_configs: int = 20,
    horizon: float = 1.0,
    z: float = 3.0,
    batch_size: int = 2048,
    workers: int = 1,
    experiment: str | None = None,
) -> list[MCReport]:
    """Randomized weak equality checks for the conditional lift identities.

    mode "lift" tests the one-vector identity: the scheme derivative and
    the adapted closed-form lift agree against any bounded path functional
    in mean.  mode "wedge" tests the two-vector closure: the wedge of two
    scheme derivatives agrees with the perturbed wedge of the adapted
    lifts.  Every sample evaluates the residual on a fine path and on its
    half-grid coarsening driven by the same increments, and contributes
    the extrapolant 2 psi_fine - psi_coarse, which cancels the first-order
    step-size error of both discretizations while the standard error stays
    at the single-level scale.  The verdict is pure z * SE, no allowance.

    All configs share the path batches, so the per-config reports are
    correlated across configs but individually exact.  Batches are fixed
    by index before any thread runs; worker count cannot change a bit.
    """
    if mode not in ("lift", "wedge"):
        raise ConfigError("mode must be 'lift' or 'wedge'")
    if n_coarse < 8:
        raise ConfigError("need at least 8 coarse steps")
    if n_samples < 100:
        raise ConfigError("need at least 100 samples for a stable error bar")
    name = experiment or f"conditional-{mode}-weak"
    m = mspec.ambient_dim
    rng = np.random.default_rng(seed)
    configs = _draw_weak_configs(rng, mspec, mode, n_coarse, horizon, n_configs)
    drv_f = Driver(seed, 2 * n_coarse, horizon)
    drv_c = drv_f.coarsened()

    def work(idx):
        incs = drv_f.increments(m, idx)
        path_f = simulate(mspec, drv_f, idx, increments=incs)
        path_c = simulate(mspec, drv_c, idx, increments=coarsen_increments(incs))
        if mode == "lift":
            psi_f = _lift_psi(mspec, path_f, configs, horizon, 2)
            psi_c = _lift_psi(mspec, path_c, configs, horizon, 1)
        else:
            psi_f = _wedge_psi(mspec, path_f, configs, horizon, 2)
            psi_c = _wedge_psi(mspec, path_c, configs, horizon, 1)
        return 2.0 * psi_f - psi_c

    batches = _batches(n_samples, batch_size)
    out: list = [None] * len(batches)
    if workers <= 1:
        for k, idx in enumerate(batches):
            out[k] = work(idx)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(work, idx): k for k, idx in enumerate(batches)}
            for fut, k in futures.items():
                out[k] = fut.result()
    values = np.concatenate(out, axis=0)

    reports = []
    for k in range(n_configs):
        mean, se, n_bad = reduce_samples(values[:, k])
        tol = z * se
        ok = abs(mean) <= tol and (n_bad * 1000 <= n_samples)
        reports.append(
            MCReport(
                experiment=f"{name}:{k:02d}",
                manifold=mspec.label(),
                n_steps=2 * n_coarse,
                n_samples=n_samples,
                estimate=mean,
                std_error=se,
                tolerance=tol,
                verdict=bool(ok),
                z=z,
                bias_allowance=0.0,
                n_nonfinite=n_bad,
            )
        )
    return reports


def flat_rotation_samplers(driver: Driver):
    """The unit-rate rotation triple on the two-dimensional flat driver.

    Returns three samplers: the deterministic pairing of the exterior
    derivative with the profile two-tensor minus one, the endpoint form
    on the rotation divergence plus one, and their sum, whose mean is the
    integration-by-parts residual.
    """
    mspec = geo.euclidean(2)
    alpha = np.array([[0.0, 1.0], [-1.0, 0.0]])
    horizon = driver.horizon
    n = driver.n_steps
    e1 = np.array([1.0, 0.0])
    e2 = np.array([0.0, 1.0])
    f = CylindricalFunction.linear(horizon, e1)
    phi = CylindricalOneForm(((f, horizon, PointPoly.linear(e2)),))

    def with_chain(make):
        def sampler(idx):
            path, chain, dch = _chain_for(mspec, driver, idx)
            return make(path, chain, dch)

        return sampler

    def profile_pair(path, chain, dch):
        times = dch.times
        j = times[None, :, None, None] * alpha
        j = np.broadcast_to(
            j, (path.n_samples, n + 1, 2, 2)
        ).copy()
        jp = JPath(j, np.diff(j, axis=1) / dch.dt)
        return dform_eval(phi, dch, jp) - 1.0

    def endpoint_div(path, chain, dch):
        rot = rotation_field(chain, constant_rotations(path, alpha))
        return one_form_apply(phi, path, rot.values) + 1.0

    def combined(path, chain, dch):
        return profile_pair(path, chain, dch) + endpoint_div(
            path, chain, dch
        )

    return (
        with_chain(profile_pair),
        with_chain(endpoint_div),
        with_chain(combined),
    )


def cross_rotation_alpha(weights: np.ndarray):
    """alpha_fn for the sphere's cross-product rotations."""

    def alpha_fn(path):
        return cross_rotations(path, weights)

    return alpha_fn


def constant_rotation_alpha(mat: np.ndarray):
    def alpha_fn(path):
        return constant_rotations(path, mat)

    return alpha_fn
