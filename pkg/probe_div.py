import numpy as np

import pathforms.geometry as geo
import pathforms.paths as P
import pathforms.transports as T
import pathforms.two_tensors as TT
import pathforms.divergence as DV
import pathforms.cylindrical as CY

S2 = geo.sphere(2)
E2 = geo.euclidean(2)
rng = np.random.default_rng(7)


def chain(spec, n, seed=123, s=5):
    drv = P.Driver(seed, n)
    path = P.simulate(spec, drv, np.arange(s))
    return T.damped_chain(P.transport_chain(path))


def coupled(spec, n, seed=123, s=5, nf=256):
    drv = P.Driver(seed, nf)
    incs = drv.increments(spec.ambient_dim, np.arange(s))
    while incs.shape[1] > n:
        incs = P.coarsen_increments(incs)
    d2 = P.Driver(seed, n)
    path = P.simulate(spec, d2, np.arange(s), increments=incs, step_cap=3.0)
    return T.damped_chain(P.transport_chain(path))


h1 = P.CameronMartinPath.fourier(np.random.default_rng(1), 64, 3, modes=3)
h2 = P.CameronMartinPath.fourier(np.random.default_rng(2), 64, 3, modes=3)

# --- flat zeros ---
hf1 = P.CameronMartinPath.fourier(np.random.default_rng(1), 64, 2, modes=3)
hf2 = P.CameronMartinPath.fourier(np.random.default_rng(2), 64, 2, modes=3)
dcf = chain(E2, 64)
s1, s2 = DV.LiftSpec(hf1), DV.LiftSpec(hf2)
br, tor = DV.bracket_torsion_fd(dcf, s1, s2)
print("flat bracket max", np.max(np.abs(br.values())), "torsion", np.max(np.abs(tor.values())))
rot = DV.wedge_rotation_part(s1.build(dcf), s2.build(dcf))
print("flat rotation", np.max(np.abs(rot.values)))

# --- sphere bracket, Richardson ---
for n in (32, 64):
    dc = coupled(S2, n)
    hh1 = P.CameronMartinPath.fourier(np.random.default_rng(1), n, 3, modes=3)
    hh2 = P.CameronMartinPath.fourier(np.random.default_rng(2), n, 3, modes=3)
    b, t = DV.bracket_torsion_fd(dc, DV.LiftSpec(hh1), DV.LiftSpec(hh2))
    print(f"N={n} sphere bracket sup {np.max(np.abs(b.values())):.4f} torsion sup {np.max(np.abs(t.values())):.4f}")

# torsion vs eps stability (should be eps-independent limit)
dc = chain(S2, 64)
hh1 = P.CameronMartinPath.fourier(np.random.default_rng(1), 64, 3, modes=3)
hh2 = P.CameronMartinPath.fourier(np.random.default_rng(2), 64, 3, modes=3)
for eps in (4e-3, 2e-3, 1e-3, 1e-5, 1e-7):
    try:
        b, t = DV.bracket_torsion_fd(dc, DV.LiftSpec(hh1), DV.LiftSpec(hh2), eps=eps)
        print(f"eps={eps:.0e} bracket[0,7] {b.values()[0,7]} ok")
    except Exception as e:
        print(f"eps={eps:.0e} -> {type(e).__name__}: {e}")

# --- antisymmetry ---
b12, t12 = DV.bracket_torsion_fd(dc, DV.LiftSpec(hh1), DV.LiftSpec(hh2))
b21, t21 = DV.bracket_torsion_fd(dc, DV.LiftSpec(hh2), DV.LiftSpec(hh1))
print("bracket antisym", np.max(np.abs(b12.values() + b21.values())),
      "torsion antisym", np.max(np.abs(t12.values() + t21.values())))

# --- nabla_star consistency ---
rep = DV.nabla_star_wedge(dc, DV.LiftSpec(hh1), DV.LiftSpec(hh2))
print("nabla_star residual", rep.consistency_residual)

# scaled lift variant
f = CY.CylindricalFunction.linear(0.5, np.array([1.0, 0.0, 0.0]))
rep2 = DV.nabla_star_wedge(dc, DV.ScaledLiftSpec(f, hh1), DV.LiftSpec(hh2))
print("nabla_star scaled residual", rep2.consistency_residual)

# --- curvature action halving ---
for n in (32, 64, 128):
    dc2 = coupled(S2, n)
    g = TT.smooth_random_grid(dc2, np.random.default_rng(5))
    hh = T.conditional_ti(dc2, P.CameronMartinPath.fourier(np.random.default_rng(3), n, 3, modes=3))
    gap = DV.damped_curvature_check(g, hh)
    print(f"N={n} curvature check gap {gap:.6f}  gap/dt {gap * n:.4f}")

# flat curvature check
gf = TT.smooth_random_grid(dcf, np.random.default_rng(5))
hhf = T.conditional_ti(dcf, hf1)
print("flat curvature gap", DV.damped_curvature_check(gf, hhf))

# --- derivation_check ---
for spec, tag, ns in ((E2, "flat", (32,)), (S2, "sphere", (32, 64, 128))):
    for n in ns:
        dc3 = coupled(spec, n) if spec is S2 else chain(spec, n)
        m = spec.ambient_dim
        rloc = np.random.default_rng(11)
        f = CY.random_cylindrical(rloc, spec, [0.25, 0.5], n_terms=2)
        phi = CY.random_one_form(rloc, spec, [0.5], [0.75], n_terms=2)
        u1 = T.conditional_ti(dc3, P.CameronMartinPath.fourier(np.random.default_rng(1), n, m, modes=3))
        u2 = T.conditional_ti(dc3, P.CameronMartinPath.fourier(np.random.default_rng(2), n, m, modes=3))
        res = DV.derivation_check(dc3, f, phi, u1, u2)
        print(f"{tag} N={n} derivation residual {res:.3e}  res*N {res * n:.4f}")

# --- div_wedge flat closed form ---
dw = DV.div_wedge(dcf, s1, s2)
u1f, u2f = s1.build(dcf), s2.build(dcf)
d1 = DV.adapted_div(u1f)
d2 = DV.adapted_div(u2f)
expect = 0.5 * (-d2[:, None, None] * u1f.values() + d1[:, None, None] * u2f.values())
print("flat div_wedge vs closed form", np.max(np.abs(dw.values() - expect)))

# --- transfer route flat agreement ---
dwt = DV.div_wedge(dcf, s1, s2, via="transfer")
print("flat transfer vs bracket route", np.max(np.abs(dwt.values() - dw.values())))
