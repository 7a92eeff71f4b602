"""Polynomial test data depending on finitely many path nodes.

Functions here are sums of products of pairings between fixed ambient
vectors and path nodes, so every derivative the calculus needs exists in
closed form.  Finite differences appear only as oracles in tests.

Evaluation times are snapped to the nearest grid node; a snap that moves
a time emits GridSnapWarning once per call site.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import geometry as geo
from .errors import GridSnapWarning, PathMismatch
from .paths import DiscretePath
from .transports import DampedChain, HVectorField
from .two_tensors import JPath, TwoTensorGrid, jpath_entry_ambient


def snap_node(path: DiscretePath, t: float) -> int:
    """Nearest grid node for an evaluation time in [0, horizon]."""
    n = path.driver.n_steps
    idx = int(round(t / path.dt))
    idx = min(max(idx, 0), n)
    if abs(t - idx * path.dt) > 1e-9 * max(1.0, path.driver.horizon):
        warnings.warn(
            f"time {t} is off the grid, snapped to node {idx}",
            GridSnapWarning,
            stacklevel=2,
        )
    return idx


class PointPoly:
    """Polynomial in the ambient coordinates of one manifold point.

    terms is a sequence of (coeff, ((q, power), ...)); each factor
    contributes <q, x> ** power.
    """

    def __init__(self, terms):
        cleaned = []
        for coeff, factors in terms:
            fs = tuple((np.asarray(q, dtype=float), int(p)) for q, p in factors)
            cleaned.append((float(coeff), fs))
        self.terms = tuple(cleaned)

    @classmethod
    def linear(cls, q) -> "PointPoly":
        return cls([(1.0, ((q, 1),))])

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for coeff, factors in self.terms:
            term = np.full(x.shape[:-1], coeff)
            for q, p in factors:
                term = term * np.einsum("...i,i->...", x, q) ** p
            out = out + term
        return out

    def grad(self, x: np.ndarray) -> np.ndarray:
        """Ambient gradient, same leading shape as x."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for coeff, factors in self.terms:
            vals = [np.einsum("...i,i->...", x, q) for q, _ in factors]
            for j, (q, p) in enumerate(factors):
                if p == 0:
                    continue
                part = coeff * p * vals[j] ** (p - 1)
                for k, (_, pk) in enumerate(factors):
                    if k != j:
                        part = part * vals[k] ** pk
                out = out + part[..., None] * q
        return out


class CylindricalFunction:
    """Sum of products of node pairings.

    terms is a sequence of (coeff, ((t, q, power), ...)); a term with an
    empty factor tuple is the constant coeff.  Values and node gradients
    are polynomial in the path nodes, so the product rule and the energy
    representative are exact.
    """

    def __init__(self, terms):
        cleaned = []
        for coeff, factors in terms:
            fs = tuple(
                (float(t), np.asarray(q, dtype=float), int(p))
                for t, q, p in factors
            )
            cleaned.append((float(coeff), fs))
        self.terms = tuple(cleaned)

    @classmethod
    def constant(cls, c: float) -> "CylindricalFunction":
        return cls([(c, ())])

    @classmethod
    def linear(cls, t: float, q) -> "CylindricalFunction":
        return cls([(1.0, ((t, q, 1),))])

    def times(self) -> tuple:
        return tuple(sorted({t for _, fs in self.terms for t, _, _ in fs}))

    def __mul__(self, other: "CylindricalFunction") -> "CylindricalFunction":
        out = []
        for ca, fa in self.terms:
            for cb, fb in other.terms:
                out.append((ca * cb, fa + fb))
        return CylindricalFunction(out)

    def __add__(self, other: "CylindricalFunction") -> "CylindricalFunction":
        return CylindricalFunction(self.terms + other.terms)

    def scaled(self, c: float) -> "CylindricalFunction":
        return CylindricalFunction([(c * coeff, fs) for coeff, fs in self.terms])

    def value(self, path: DiscretePath) -> np.ndarray:
        out = np.zeros(path.n_samples)
        for coeff, factors in self.terms:
            term = np.full(path.n_samples, coeff)
            for t, q, p in factors:
                idx = snap_node(path, t)
                term = term * np.einsum("sm,m->s", path.points[:, idx], q) ** p
            out += term
        return out

    def node_grads(self, path: DiscretePath) -> dict:
        """Ambient gradients keyed by snapped node index, each (S, m).

        Factors snapping to the same node merge, so the keys are distinct
        even when the declared times are not.
        """
        grads: dict[int, np.ndarray] = {}
        for coeff, factors in self.terms:
            idxs = [snap_node(path, t) for t, _, _ in factors]
            vals = [
                np.einsum("sm,m->s", path.points[:, idx], q)
                for idx, (_, q, _) in zip(idxs, factors)
            ]
            for j, (_, q, p) in enumerate(factors):
                if p == 0:
                    continue
                part = coeff * p * vals[j] ** (p - 1)
                for k, (_, _, pk) in enumerate(factors):
                    if k != j:
                        part = part * vals[k] ** pk
                g = part[:, None] * q
                idx = idxs[j]
                if idx in grads:
                    grads[idx] = grads[idx] + g
                else:
                    grads[idx] = g
        return grads


class CylindricalOneForm:
    """Finite sum of coefficient-times-pullback terms.

    terms is a sequence of (f, t, g) with f a CylindricalFunction, t the
    evaluation time and g a PointPoly; the form acts on a field V as
    sum f(x) <dg at x_t, V_t>, point gradients projected to the tangent
    space.
    """

    def __init__(self, terms):
        self.terms = tuple((f, float(t), g) for f, t, g in terms)


def exterior_cyl(f: CylindricalFunction) -> CylindricalOneForm:
    """Exterior derivative of a node polynomial as a one-form.

    Each factor of each term contributes its point differential at its
    own node, weighted by the product of the remaining factors.
    """
    out = []
    for coeff, factors in f.terms:
        for j, (t, q, p) in enumerate(factors):
            if p == 0:
                continue
            rest = [
                (1.0, tuple(fk for k, fk in enumerate(factors) if k != j))
            ]
            weight = CylindricalFunction(rest).scaled(coeff)
            out.append((weight, t, PointPoly([(1.0, ((q, p),))])))
    return CylindricalOneForm(out)


def _node_values(arg) -> np.ndarray:
    vals = getattr(arg, "values", None)
    if callable(vals):
        return np.asarray(vals())
    if vals is not None:
        return np.asarray(vals, dtype=float)
    return np.asarray(arg, dtype=float)


def d_cyl(f: CylindricalFunction, path: DiscretePath, v) -> np.ndarray:
    """Derivative of f along node values v, per sample (S,).

    v may be an HVectorField, a rotation field, or a raw (S, N+1, m)
    block.  Gradients are projected before pairing, so only tangential
    components of v are seen.
    """
    vals = _node_values(v)
    if vals.shape != path.points.shape:
        raise PathMismatch("node values do not match the path grid")
    out = np.zeros(path.n_samples)
    for idx, g in f.node_grads(path).items():
        gp = geo.project(path.spec, path.points[:, idx], g)
        out += np.einsum("sm,sm->s", gp, vals[:, idx])
    return out


def one_form_apply(phi: CylindricalOneForm, path: DiscretePath, v) -> np.ndarray:
    """Evaluate the one-form on node values, per sample (S,)."""
    vals = _node_values(v)
    if vals.shape != path.points.shape:
        raise PathMismatch("node values do not match the path grid")
    out = np.zeros(path.n_samples)
    for f_a, t_a, g_a in phi.terms:
        idx = snap_node(path, t_a)
        x = path.points[:, idx]
        ga = geo.project(path.spec, x, g_a.grad(x))
        out += f_a.value(path) * np.einsum("sm,sm->s", ga, vals[:, idx])
    return out


def _pair_entry_fn(dchain: DampedChain, arg):
    """Node-pair entry accessor for the supported degree-two arguments.

    Returns a callable (i, j) -> (S, m, m) ambient values, or None when
    arg is vector-like.  Wedge pairs evaluate entries from node values
    directly, so no full grid is ever materialized.
    """
    if isinstance(arg, TwoTensorGrid):
        if arg.dchain is not dchain:
            raise PathMismatch("grid lives over a different chain")
        return arg.entry_ambient
    if isinstance(arg, JPath):
        return lambda i, j: jpath_entry_ambient(dchain, arg, i, j)
    if isinstance(arg, (tuple, list)) and len(arg) == 2:
        f1, f2 = arg
        if f1.dchain is not dchain or f2.dchain is not dchain:
            raise PathMismatch("fields live over a different chain")
        v1 = f1.values()
        v2 = f2.values()

        def entry(i: int, j: int) -> np.ndarray:
            return 0.5 * (
                np.einsum("sa,sb->sab", v1[:, i], v2[:, j])
                - np.einsum("sa,sb->sab", v2[:, i], v1[:, j])
            )

        return entry
    return None


def wedge_pair_eval(
    alpha: CylindricalOneForm,
    beta: CylindricalOneForm,
    dchain: DampedChain,
    arg,
) -> np.ndarray:
    """Pair the degree-two form alpha wedge beta with arg, per sample.

    Uses the half-alternating convention: on a decomposable u wedge v the
    value is (alpha(u) beta(v) - alpha(v) beta(u)) / 2.
    """
    entry = _pair_entry_fn(dchain, arg)
    if entry is None:
        raise PathMismatch("argument is not a degree-two object")
    path = dchain.path
    out = np.zeros(path.n_samples)
    for f_a, t_a, g_a in alpha.terms:
        ia = snap_node(path, t_a)
        xa = path.points[:, ia]
        ga = geo.project(path.spec, xa, g_a.grad(xa))
        wa = f_a.value(path)
        for f_b, t_b, g_b in beta.terms:
            ib = snap_node(path, t_b)
            xb = path.points[:, ib]
            gb = geo.project(path.spec, xb, g_b.grad(xb))
            w = wa * f_b.value(path)
            u_ab = entry(ia, ib)
            u_ba = entry(ib, ia)
            out += 0.5 * w * (
                np.einsum("sm,smn,sn->s", ga, u_ab, gb)
                - np.einsum("sm,smn,sn->s", gb, u_ba, ga)
            )
    return out


def dform_eval(phi: CylindricalOneForm, dchain: DampedChain, arg) -> np.ndarray:
    """Evaluate phi on a field, or its exterior derivative on a two-tensor.

    Vector-like arguments give phi itself.  A TwoTensorGrid, a JPath, or
    a (field, field) wedge pair gives the exterior derivative paired with
    that object; terms with constant coefficient drop out exactly because
    the pullback part is closed.
    """
    entry = _pair_entry_fn(dchain, arg)
    if entry is None:
        return one_form_apply(phi, dchain.path, arg)
    path = dchain.path
    out = np.zeros(path.n_samples)
    for f_a, t_a, g_a in phi.terms:
        term_form = CylindricalOneForm(
            [(CylindricalFunction.constant(1.0), t_a, g_a)]
        )
        out += wedge_pair_eval(exterior_cyl(f_a), term_form, dchain, arg)
    return out


def _riesz_from_node_covectors(dchain: DampedChain, pairs) -> HVectorField:
    """Kernel of the energy representative of V -> sum <g_i, V_{node_i}>.

    pairs yields (node index, (S, m) tangent covector).  The representative
    integrates the damped-transport transposes backwards from each node:
    cells left of the node collect W_r^{-T} W_i^T g_i.
    """
    path = dchain.path
    s_count = path.n_samples
    n = dchain.n_steps
    m = dchain.spec.ambient_dim
    c = np.zeros((s_count, n, m))
    w = dchain.w_mats()
    for idx, g in pairs:
        if idx == 0:
            continue
        ci = np.einsum("sba,sb->sa", w[:, idx], g)
        c[:, :idx] += ci[:, None, :]
    ti_t = np.swapaxes(dchain.theta_inv[:, :-1], -1, -2)
    pulled = np.einsum("snab,snb->sna", ti_t, c)
    kernel = np.einsum("snab,snb->sna", dchain.par[:, :-1], pulled)
    return HVectorField(dchain, kernel)


def grad_field(dchain: DampedChain, f: CylindricalFunction) -> HVectorField:
    """Energy representative of the derivative of f.

    Pairing the result with any field through the cell-kernel inner
    product reproduces d_cyl on that field's node values.
    """
    path = dchain.path
    pairs = []
    for idx, g in f.node_grads(path).items():
        gp = geo.project(path.spec, path.points[:, idx], g)
        pairs.append((idx, gp))
    return _riesz_from_node_covectors(dchain, pairs)


def one_form_riesz(dchain: DampedChain, phi: CylindricalOneForm) -> HVectorField:
    """Energy representative of a cylindrical one-form."""
    path = dchain.path
    pairs = []
    for f_a, t_a, g_a in phi.terms:
        idx = snap_node(path, t_a)
        x = path.points[:, idx]
        ga = geo.project(path.spec, x, g_a.grad(x))
        pairs.append((idx, f_a.value(path)[:, None] * ga))
    return _riesz_from_node_covectors(dchain, pairs)


def random_point_poly(rng: np.random.Generator, m: int, max_power: int = 2) -> PointPoly:
    terms = []
    for _ in range(rng.integers(1, 3)):
        factors = tuple(
            (rng.standard_normal(m) / np.sqrt(m), int(rng.integers(1, max_power + 1)))
            for _ in range(rng.integers(1, 3))
        )
        terms.append((float(rng.standard_normal()), factors))
    return PointPoly(terms)


def random_cylindrical(
    rng: np.random.Generator,
    spec: geo.ManifoldSpec,
    times,
    n_terms: int = 2,
    max_power: int = 2,
) -> CylindricalFunction:
    """Random node polynomial over the given times, O(1) coefficients."""
    m = spec.ambient_dim
    times = tuple(times)
    terms = []
    for _ in range(n_terms):
        width = int(rng.integers(1, min(len(times), 2) + 1))
        chosen = rng.choice(len(times), size=width, replace=False)
        factors = tuple(
            (
                times[int(i)],
                rng.standard_normal(m) / np.sqrt(m),
                int(rng.integers(1, max_power + 1)),
            )
            for i in chosen
        )
        terms.append((float(rng.standard_normal()), factors))
    return CylindricalFunction(terms)


def random_one_form(
    rng: np.random.Generator,
    spec: geo.ManifoldSpec,
    coeff_times,
    eval_times,
    n_terms: int = 2,
) -> CylindricalOneForm:
    """Random cylindrical one-form with polynomial coefficients."""
    m = spec.ambient_dim
    terms = []
    for _ in range(n_terms):
        f = random_cylindrical(rng, spec, coeff_times, n_terms=1)
        t = float(eval_times[int(rng.integers(0, len(eval_times)))])
        terms.append((f, t, random_point_poly(rng, m)))
    return CylindricalOneForm(terms)
