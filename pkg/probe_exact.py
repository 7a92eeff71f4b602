"""Scratch: exact conditional expectation of the discrete derivative flow.

Given the path, the normal components of the raw increments stay independent
Gaussians; the per-cell step map of derivative_flow is a scalar Moebius map of
that component, so its conditional expectation is a Gauss-Hermite quadrature.
The recursion below averages the per-cell map cell by cell, which is exact by
independence across cells.
"""
import time

import numpy as np

from pathforms import geometry as geo
from pathforms.geometry import sphere
from pathforms.paths import CameronMartinPath, Driver, derivative_flow, simulate, transport_chain
from pathforms.transports import conditional_ti, damped_chain
from pathforms.cylindrical import CylindricalFunction
from pathforms.mc import reduce_samples

HG_NODES, HG_WEIGHTS = np.polynomial.hermite.hermgauss(24)


def exact_cond_flow(chain, h):
    """E[derivative_flow | path] by per-cell Gauss-Hermite averaging."""
    path = chain.path
    spec = path.spec
    s_count, n, m = path.steps.shape
    dt = path.dt
    v = np.zeros((s_count, n + 1, m))
    x_mid, tau_half = geo.geodesic_midpoint(spec, path.points[:, :-1], path.steps)
    tau = chain.step_transports
    tau_rest = tau @ np.swapaxes(tau_half, -1, -2)
    sig = np.sqrt(2.0 * dt)
    for i in range(n):
        z = np.einsum("sab,sb->sa", tau_half[:, i], v[:, i])
        b = geo.project(
            spec, x_mid[:, i], np.broadcast_to(h.dot[i], (s_count, m))
        ) * dt
        if spec.kind == "sphere":
            c0 = -np.einsum("sa,sa->s", x_mid[:, i], path.steps[:, i])
            c1 = -np.einsum("sa,sa->s", x_mid[:, i], path.points[:, i])
            # c(xi) = c0 + c1*xi, xi ~ N(0, dt) independent of the path
            cq = c0[:, None] + c1[:, None] * (sig * HG_NODES)[None, :]
            lam_q = (1.0 + 0.5 * cq) / (1.0 - 0.5 * cq)
            mu_q = 1.0 / (1.0 - 0.5 * cq)
            wsum = HG_WEIGHTS / np.sqrt(np.pi)
            lam = lam_q @ wsum
            mu = mu_q @ wsum
            znew = lam[:, None] * z + mu[:, None] * b
        else:
            znew = z + b
        v[:, i + 1] = np.einsum("sab,sb->sa", tau_rest[:, i], znew)
    return v


spec = sphere(2)
T = 1.0


def make_h(n, kind):
    t = (np.arange(n) + 0.5) * (T / n)
    if kind == 0:
        dot = np.stack([np.ones(n), 0.5 * np.sin(2 * np.pi * t), 0.25 * t], axis=1)
    else:
        dot = np.stack([np.cos(np.pi * t), -0.3 * np.ones(n), 0.6 * t**2], axis=1)
    return CameronMartinPath(dot=dot, horizon=T)


probe = np.array([0.3, -0.7, 0.5])
f_one = CylindricalFunction.constant(1.0)

for N in (16, 32, 64):
    drv = Driver(101, N, T)
    h = make_h(N, 0)
    tower = []
    gap = []
    t0 = time.time()
    for lo in range(0, 20000, 2000):
        idx = np.arange(lo, lo + 2000)
        path = simulate(spec, drv, idx)
        chain = transport_chain(path)
        dch = damped_chain(chain)
        tfl = derivative_flow(chain, h)
        ex = exact_cond_flow(chain, h)
        ct = conditional_ti(dch, h).values()
        pair = lambda a: np.einsum("sm,m->s", a[:, N], probe)
        tower.append(pair(tfl) - pair(ex))
        gap.append(pair(ex) - pair(ct))
    tower = np.concatenate(tower)
    gap = np.concatenate(gap)
    tm, ts, _ = reduce_samples(tower)
    gm, gs, _ = reduce_samples(gap)
    print(
        f"N={N:3d} tower={tm:+.5f}+-{ts:.5f}  gap={gm:+.6f}+-{gs:.6f} "
        f"(gap sd={gs*np.sqrt(len(gap)):.4f}) t={time.time()-t0:.1f}s"
    )
