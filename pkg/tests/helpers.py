"""Shared test fixtures that are plain functions."""

import numpy as np

from hjbnav import gp
from hjbnav.env import MotionProfile
from hjbnav.models import ElementModel
from hjbnav.trainer import CostParams

COST = CostParams(0.1, 1.0)


def analytic_model(shape, motion=(0.0, 0.0), radius=12.0, lengthscale=1.0) -> ElementModel:
    """GP interpolant of ``V = sqrt(2) d`` and ``u* = -sqrt(2) grad d`` for a shape's distance ``d``."""
    X = gp.lattice_in_disc(radius, lengthscale)
    g = gp.build(X, gp.KernelParams(lengthscale=lengthscale))
    d = np.maximum(shape.signed_distance(X), 0.0)
    h = 1e-6
    grad = np.stack(
        [(shape.signed_distance(X + h * e) - shape.signed_distance(X - h * e)) / (2 * h) for e in np.eye(2)], axis=1
    )
    inside = d == 0
    grad[inside] = 0.0
    g.mu_v[:] = np.sqrt(2.0) * d
    g.mu_u[:] = -np.sqrt(2.0) * grad
    return ElementModel(g, shape, MotionProfile(motion), radius, COST, {"dt": 0.05})
