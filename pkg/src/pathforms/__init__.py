"""Numerical checks for the damped-transport form calculus on Brownian path spaces.

The package simulates Brownian paths on closed-form model manifolds
(spheres, flat tori, Euclidean space), builds the damped parallel transports
and the two-tensor curvature-perturbation operators along each discrete path,
and verifies the structural identities of the associated one- and two-form
calculus both pathwise (grid algebra, refinement sweeps) and in the weak
sense (Monte Carlo integration by parts).
"""

from .geometry import ManifoldSpec, euclidean, flat_torus, sphere, spec_from_label

__all__ = [
    "ManifoldSpec",
    "euclidean",
    "flat_torus",
    "sphere",
    "spec_from_label",
]

__version__ = "0.1.0"
