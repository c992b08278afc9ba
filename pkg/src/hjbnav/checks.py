"""Self-checks run by ``hjbnav validate``; each compares against an independent oracle."""

from __future__ import annotations

import math

import numpy as np

from . import gp, safety, trainer
from .env import Event, MotionProfile, Rectangle, Sample
from .trainer import CostParams
from .validation import Grid, finite_diff, qcqp_grid_search, value_iteration


def _rel(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


def random_model(rng: np.random.Generator, n: int = 12, scale: float = 3.0) -> gp.GpModel:
    X = rng.uniform(-scale, scale, size=(n, 2))
    m = gp.build(X, gp.KernelParams(lengthscale=rng.uniform(0.7, 1.5)))
    m.mu_v[:] = rng.normal(size=n)
    m.mu_u[:] = rng.normal(size=(n, 2))
    return m


def random_sample(rng: np.random.Generator, scale: float = 3.0) -> Sample:
    u = rng.normal(size=2)
    return Sample(rng.uniform(-scale, scale, 2), u - rng.normal(size=2) * 0.5, u, Event.NONE)


def check_gp_gradient(rng, n_models: int = 10, n_points: int = 10) -> float:
    worst = 0.0
    for _ in range(n_models):
        m = random_model(rng)
        for _ in range(n_points):
            x = rng.uniform(-3, 3, 2)
            fd = finite_diff(lambda z: gp.predict_value(m, z), x, h=1e-5)
            worst = max(worst, _rel(gp.predict_value_grad(m, x), fd))
    return worst


def check_trainer_gradient(rng, n: int = 20) -> float:
    worst = 0.0
    cost = CostParams(lam=0.1, qc=1.0)
    for _ in range(n):
        m = random_model(rng)
        s = random_sample(rng)
        dV, dU = trainer.gradients(m, cost, s)

        def f_v(mu):
            keep = m.mu_v.copy()
            m.mu_v[:] = mu
            out = trainer.loss(m, cost, s)
            m.mu_v[:] = keep
            return out

        def f_u(mu):
            keep = m.mu_u.copy()
            m.mu_u[:] = mu.reshape(keep.shape)
            out = trainer.loss(m, cost, s)
            m.mu_u[:] = keep
            return out

        worst = max(worst, _rel(dV, finite_diff(f_v, m.mu_v.copy(), h=1e-6)))
        worst = max(worst, _rel(dU.ravel(), finite_diff(f_u, m.mu_u.ravel().copy(), h=1e-6)))
    return worst


def random_qcqp(rng):
    k = int(rng.integers(0, 7))
    cons = [safety.LinearConstraint(rng.normal(size=2), float(rng.normal())) for _ in range(k)]
    return rng.normal(size=2) * 1.5, cons


def check_qcqp(rng, n: int = 200, perturb: bool = False) -> tuple[float, float, float]:
    """Worst (objective excess over the grid, constraint violation, KKT residual)."""
    excess = viol = kkt = 0.0
    for _ in range(n):
        u_g, cons = random_qcqp(rng)
        res = safety.solve_qcqp(u_g, cons, 1.0)
        if perturb:
            # test hook: a solver that misses the optimum must be caught
            res.u = res.u * 0.9
            res.objective = float((res.u - u_g) @ (res.u - u_g))
        if res.status is not safety.QcqpStatus.OPTIMAL:
            continue
        _, obj = qcqp_grid_search(u_g, cons, 1.0)
        if math.isfinite(obj):
            excess = max(excess, res.objective - obj)
        viol = max([viol] + [-c.slack(res.u) for c in cons])
        kkt = max(kkt, safety.kkt_residual(res, u_g, cons, 1.0)[0])
    return excess, viol, kkt


def check_slab(u_max: float = 2.0, d: float = 1.0) -> float:
    """Relative error of value iteration against the 1-D analytic ``sqrt(2 q_c) d``."""
    slab = Rectangle(2.0, 200.0)
    grid = Grid((1.0, 3.0), (-0.1, 0.1), 101, 11)
    vf = value_iteration(slab, MotionProfile(), CostParams(lam=0.0, qc=1.0), u_max, grid)
    got = float(vf.interpolate(np.array([[1.0 + d, 0.0]]))[0])
    return abs(got - math.sqrt(2.0) * d) / (math.sqrt(2.0) * d)


def check_vdot_identity(rng, n: int = 1000) -> float:
    worst = 0.0
    for _ in range(n):
        V, lam = rng.uniform(0, 5), rng.uniform(0, 1)
        us, u = rng.normal(size=2), rng.normal(size=2)
        lin, const = safety.vdot_affine(V, us, lam)
        direct = 0.5 * (u - us) @ (u - us) - 0.5 * u @ u + lam * V
        worst = max(worst, abs(lin @ u + const - direct))
    return worst


def run_checks(seed: int = 0, perturb_solver: bool = False) -> list[dict]:
    rng = np.random.default_rng(seed)
    out = []

    def add(name, measured, tol):
        out.append({"name": name, "measured": float(measured), "tolerance": tol, "passed": bool(measured <= tol)})

    add("vdot_affine identity (abs)", check_vdot_identity(rng), 1e-12)
    add("GP value gradient vs finite differences (rel)", check_gp_gradient(rng), 1e-5)
    add("trainer gradients vs finite differences (rel)", check_trainer_gradient(rng), 1e-4)
    excess, viol, kkt = check_qcqp(rng, perturb=perturb_solver)
    add("QCQP objective excess over grid oracle", excess, 1e-3)
    add("QCQP constraint violation", viol, 1e-8)
    add("QCQP KKT stationarity residual", kkt, 1e-8)
    add("value iteration vs 1-D analytic slab (rel)", check_slab(), 0.02)
    return out
