"""Scratch: does two-level extrapolation kill the conditional weak-check bias?"""
import time

import numpy as np

from pathforms.geometry import sphere
from pathforms.paths import (
    CameronMartinPath,
    Driver,
    coarsen_increments,
    derivative_flow,
    simulate,
    transport_chain,
)
from pathforms.transports import conditional_ti, damped_chain
from pathforms.cylindrical import CylindricalFunction
from pathforms.mc import reduce_samples

spec = sphere(2)
T = 1.0
probe = np.array([0.3, -0.7, 0.5])
f_one = CylindricalFunction.constant(1.0)


def h_dot(n):
    t = (np.arange(n) + 0.5) * (T / n)
    return np.stack([np.ones(n), 0.5 * np.sin(2 * np.pi * t), 0.25 * t], axis=1)


def psi(path, h):
    chain = transport_chain(path)
    dch = damped_chain(chain)
    tfl = derivative_flow(chain, h)
    ct = conditional_ti(dch, h).values()
    n = path.n_steps
    gap = tfl[:, n] - ct[:, n]
    return np.einsum("sm,m->s", gap, probe)


def run(N, n_samples, seed=7):
    drv_f = Driver(seed, 2 * N, T)
    h_f = CameronMartinPath(h_dot(2 * N), T)
    h_c = CameronMartinPath(h_dot(N), T)
    fine, coarse, extrap = [], [], []
    for lo in range(0, n_samples, 2000):
        idx = np.arange(lo, min(lo + 2000, n_samples))
        incs = drv_f.increments(3, idx)
        path_f = simulate(spec, drv_f, idx, increments=incs)
        path_c = simulate(
            spec, Driver(seed, N, T), idx, increments=coarsen_increments(incs)
        )
        pf = psi(path_f, h_f)
        pc = psi(path_c, h_c)
        fine.append(pf)
        coarse.append(pc)
        extrap.append(2.0 * pf - pc)
    out = {}
    for name, vals in (("fine", fine), ("coarse", coarse), ("extrap", extrap)):
        v = np.concatenate(vals)
        m, s, _ = reduce_samples(v)
        out[name] = (m, s, s * np.sqrt(len(v)))
    return out


for N in (32, 64, 128):
    t0 = time.time()
    r = run(N, 40000)
    dtm = time.time() - t0
    print(
        f"N={N:3d}/{2*N:3d}  coarse={r['coarse'][0]:+.5f}+-{r['coarse'][1]:.5f}"
        f"  fine={r['fine'][0]:+.5f}+-{r['fine'][1]:.5f}"
        f"  extrap={r['extrap'][0]:+.5f}+-{r['extrap'][1]:.5f}"
        f"  sd(extrap)={r['extrap'][2]:.4f} vs sd(fine)={r['fine'][2]:.4f}"
        f"  t={dtm:.1f}s"
    )
