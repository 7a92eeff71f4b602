"""Scratch: calibrate conditional weak-check bias/variance on sphere(2)."""
import time

import numpy as np

from pathforms.geometry import sphere
from pathforms.paths import CameronMartinPath, Driver
from pathforms.cylindrical import CylindricalFunction
from pathforms.mc import (
    conditional_one_vector_sampler,
    conditional_two_vector_sampler,
    run_mc,
)

spec = sphere(2)
T = 1.0


def make_h(n, kind):
    t = (np.arange(n) + 0.5) * (T / n)
    if kind == 0:
        dot = np.stack([np.ones(n), 0.5 * np.sin(2 * np.pi * t), 0.25 * t], axis=1)
    else:
        dot = np.stack([np.cos(np.pi * t), -0.3 * np.ones(n), 0.6 * t**2], axis=1)
    return CameronMartinPath(dot=dot, horizon=T)


f_lin = CylindricalFunction.linear(0.5, np.array([0.8, -0.4, 0.3]))
f_one = CylindricalFunction.constant(1.0)

probe = np.array([0.3, -0.7, 0.5])
probe2 = np.array([-0.2, 0.4, 0.9])

for N in (16, 32, 64):
    drv = Driver(101, N, T)
    for fname, f in (("f=1", f_one), ("f=lin", f_lin)):
        s = conditional_one_vector_sampler(spec, drv, f, make_h(N, 0), N, probe)
        t0 = time.time()
        rep = run_mc(s, 20000, experiment="cond1", manifold="sphere(2)", n_steps=N)
        print(
            f"one-vec N={N:3d} {fname:6s} est={rep.estimate:+.5f} "
            f"se={rep.std_error:.5f} t={time.time()-t0:.1f}s"
        )

for N in (16, 32, 64):
    drv = Driver(202, N, T)
    s = conditional_two_vector_sampler(
        spec, drv, f_lin, make_h(N, 0), make_h(N, 1), N // 2, N, probe, probe2
    )
    t0 = time.time()
    rep = run_mc(s, 20000, experiment="cond2", manifold="sphere(2)", n_steps=N)
    print(
        f"two-vec N={N:3d} est={rep.estimate:+.5f} se={rep.std_error:.5f} "
        f"t={time.time()-t0:.1f}s"
    )
