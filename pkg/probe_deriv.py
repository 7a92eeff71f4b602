import numpy as np

import pathforms.geometry as geo
import pathforms.paths as P
import pathforms.transports as T
import pathforms.two_tensors as TT
import pathforms.operators as OP
import pathforms.cylindrical as CY

S2 = geo.sphere(2)


def coupled(spec, n, seed=123, s=5, nf=256):
    drv = P.Driver(seed, nf)
    incs = drv.increments(spec.ambient_dim, np.arange(s))
    while incs.shape[1] > n:
        incs = P.coarsen_increments(incs)
    d2 = P.Driver(seed, n)
    path = P.simulate(spec, d2, np.arange(s), increments=incs, step_cap=3.0)
    return T.damped_chain(P.transport_chain(path))


for n in (32, 64, 128):
    dc = coupled(S2, n)
    m = 3
    rloc = np.random.default_rng(11)
    f = CY.random_cylindrical(rloc, S2, [0.25, 0.5], n_terms=2)
    phi = CY.random_one_form(rloc, S2, [0.5], [0.75], n_terms=2)
    u1 = T.conditional_ti(dc, P.CameronMartinPath.fourier(np.random.default_rng(1), n, m, modes=3))
    u2 = T.conditional_ti(dc, P.CameronMartinPath.fourier(np.random.default_rng(2), n, m, modes=3))
    qjp = TT.wedge_q_jpath(u1, u2)

    fphi = CY.CylindricalOneForm(tuple((f * fa, ta, ga) for fa, ta, ga in phi.terms))
    # exact cross part: (df wedge phi) paired against Q, by Leibniz splitting
    X = CY.dform_eval(fphi, dc, qjp) - f.value(dc.path) * CY.dform_eval(phi, dc, qjp)

    v = CY.grad_field(dc, f)
    ell = CY.one_form_riesz(dc, phi)
    ep = OP.exterior_pair(ell, v, u1, u2)
    det = 0.5 * (T.h_inner(u1, v) * T.h_inner(u2, ell) - T.h_inner(u2, v) * T.h_inner(u1, ell))
    qpart = det - ep  # exterior_pair = det - qpart

    # adjoint route: ell(iota_v Q W) from the interior machinery
    inter = OP.interior(v, u1, u2)
    det_fields = u2.scaled(0.5 * T.h_inner(u1, v)) - u1.scaled(0.5 * T.h_inner(u2, v))
    iq = det_fields - inter  # = apply_jpath(qjp, v) part
    Z = T.h_inner(ell, iq)

    print(f"N={n}")
    print("  X (exact cross)     ", X[:3])
    print("  qpart (multiplier)  ", qpart[:3])
    print("  Z (interior adjoint)", Z[:3])
    print("  |X - qpart| max", np.max(np.abs(X - qpart)), " |X - Z| max", np.max(np.abs(X - Z)),
          " |Z - qpart| max", np.max(np.abs(Z - qpart)))
