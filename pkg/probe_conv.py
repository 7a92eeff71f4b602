import numpy as np

import pathforms.geometry as geo
import pathforms.paths as P
import pathforms.transports as T
import pathforms.two_tensors as TT
import pathforms.operators as OP
import pathforms.cylindrical as CY

S2 = geo.sphere(2)


def coupled(spec, n, seed=123, s=4, nf=256):
    drv = P.Driver(seed, nf)
    incs = drv.increments(spec.ambient_dim, np.arange(s))
    while incs.shape[1] > n:
        incs = P.coarsen_increments(incs)
    d2 = P.Driver(seed, n)
    path = P.simulate(spec, d2, np.arange(s), increments=incs, step_cap=3.0)
    return T.damped_chain(P.transport_chain(path))


for n in (32, 64):
    dc = coupled(S2, n)
    m = 3
    rloc = np.random.default_rng(11)
    f = CY.random_cylindrical(rloc, S2, [0.25, 0.5], n_terms=2)
    phi = CY.random_one_form(rloc, S2, [0.5], [0.75], n_terms=2)
    u1 = T.conditional_ti(dc, P.CameronMartinPath.fourier(np.random.default_rng(1), n, m, modes=3))
    u2 = T.conditional_ti(dc, P.CameronMartinPath.fourier(np.random.default_rng(2), n, m, modes=3))
    qjp = TT.wedge_q_jpath(u1, u2)
    qgrid = TT.grid_sand_t(dc, qjp)

    v = CY.grad_field(dc, f)
    ell = CY.one_form_riesz(dc, phi)

    # oracle: energy pairing of the closure against the materialized wedge
    O = TT.h2_inner(qgrid, TT.wedge2(v, ell))

    # my exact cross pairing via node entries
    fphi = CY.CylindricalOneForm(tuple((f * fa, ta, ga) for fa, ta, ga in phi.terms))
    X = CY.dform_eval(fphi, dc, qjp) - f.value(dc.path) * CY.dform_eval(phi, dc, qjp)

    # candidate adjoints
    Zf = T.h_inner(ell, OP.apply_jpath(dc, qjp, v, pairing="frame"))
    Zm = T.h_inner(ell, OP.apply_jpath(dc, qjp, v, pairing="metric"))

    det = 0.5 * (T.h_inner(u1, v) * T.h_inner(u2, ell) - T.h_inner(u2, v) * T.h_inner(u1, ell))
    qpart = det - OP.exterior_pair(ell, v, u1, u2)

    # det sanity: materialized wedge pairing vs determinant rule
    det_h2 = TT.h2_inner(TT.wedge2(u1, u2), TT.wedge2(v, ell))

    print(f"N={n}")
    print("  oracle O            ", O[:3])
    print("  X exact node pairing", X[:3])
    print("  -Zm (metric adjoint)", -Zm[:3])
    print("  -Zf (frame adjoint) ", -Zf[:3])
    print("  qpart (multiplier)  ", qpart[:3])
    print("  det vs h2 wedge gap ", np.max(np.abs(det - det_h2)))
    print("  |O - X|", np.max(np.abs(O - X)), " |O + Zm|", np.max(np.abs(O + Zm)),
          " |O + Zf|", np.max(np.abs(O + Zf)), " |O - Zm|", np.max(np.abs(O - Zm)))
