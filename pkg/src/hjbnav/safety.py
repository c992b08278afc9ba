"""Online composition: learned value functions as barrier functions.

Each obstacle contributes one linear inequality on the action, obtained by
substituting the model-based, affine-in-u reconstruction of ``dV/dt`` into the
sharpened barrier condition

    q V^(q-1) dV/dt + c (V^q - V_min) >= 0.

The action is the point closest to the goal policy inside the intersection of
those half-planes and the input disc, found by exhaustive KKT enumeration.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from . import gp
from .env import outline

FEAS_TOL = 1e-10
ACTIVE_TOL = 1e-9


@dataclass(frozen=True)
class SafetyParams:
    c: float = 1.0
    q: float = 0.5
    v_min: float = 0.5
    u_max: float = 1.0
    lam: float | None = None  # None: take each model's training discount
    c_per_obstacle: tuple | None = None
    margin: float = 0.0  # assumed bound on the error of the reconstructed dV/dt

    def __post_init__(self):
        if not (0 < self.q <= 1):
            raise ValueError(f"q must lie in (0, 1], got {self.q}")
        if self.c < 0 or self.v_min < 0 or self.margin < 0 or not self.u_max > 0:
            raise ValueError(f"invalid safety parameters: {self}")
        if self.c_per_obstacle is not None and any(c < 0 for c in self.c_per_obstacle):
            raise ValueError("per-obstacle gains must be non-negative")

    def gain(self, j: int) -> float:
        if self.c_per_obstacle is not None and j < len(self.c_per_obstacle):
            return float(self.c_per_obstacle[j])
        return self.c


@dataclass
class LinearConstraint:
    """``a @ u <= b``."""

    a: np.ndarray
    b: float

    def slack(self, u) -> float:
        return float(self.b - self.a @ np.asarray(u, dtype=float))


class QcqpStatus(enum.Enum):
    OPTIMAL = "optimal"
    RELAXED_INFEASIBLE = "relaxed_infeasible"


@dataclass
class QcqpResult:
    u: np.ndarray
    status: QcqpStatus
    active_set: list[int] = field(default_factory=list)  # constraint indices; -1 marks the disc
    objective: float = 0.0


def vdot_affine(V: float, u_star, lam: float, qc: float = 0.0) -> tuple[np.ndarray, float]:
    """``dV/dt = lin @ u + const`` implied by a converged actor-critic pair.

    From ``0.5|u - u*|^2 = 0.5|u|^2 + q_c + dV/dt - lam V``.
    """
    u_star = np.asarray(u_star, dtype=float)
    return -u_star, 0.5 * float(u_star @ u_star) + lam * V - qc


def cbf_constraint(V: float, u_star, p: SafetyParams, j: int = 0, lam: float = 0.1, qc: float = 0.0) -> LinearConstraint:
    if not math.isfinite(V):
        raise ValueError(f"non-finite value {V} for obstacle {j}")
    u_star = np.asarray(u_star, dtype=float)
    if V <= 0.0:
        # inside the zero level set V^(q-1) is singular; force a full-speed retreat
        n = float(np.linalg.norm(u_star))
        a = u_star / n if n > 0 else np.zeros_like(u_star)
        return LinearConstraint(a, -p.u_max)
    lin, const = vdot_affine(V, u_star, lam, qc)
    scale = p.q * V ** (p.q - 1.0)
    return LinearConstraint(-scale * lin, p.gain(j) * (V**p.q - p.v_min) + scale * (const - p.margin))


def _candidates(u_g: np.ndarray, A: np.ndarray, b: np.ndarray, u_max: float) -> np.ndarray:
    """Every KKT point candidate over all active-set choices, in 2-D, as rows."""
    out = [u_g[None]]
    n = float(np.linalg.norm(u_g))
    if n > 0:
        out.append(u_g[None] * (u_max / n))
    norms2 = np.einsum("ij,ij->i", A, A)
    keep = norms2 > 0
    Ak, bk, nk = A[keep], b[keep], norms2[keep]
    if len(bk):
        # one active line
        out.append(u_g[None] - ((Ak @ u_g - bk) / nk)[:, None] * Ak)
        # one active line plus the circle
        foot = (bk / nk)[:, None] * Ak
        rem = u_max**2 - np.einsum("ij,ij->i", foot, foot)
        hit = rem >= 0
        perp = np.stack([-Ak[:, 1], Ak[:, 0]], axis=1) / np.sqrt(nk)[:, None]
        t = np.sqrt(np.where(hit, rem, 0.0))[:, None]
        out.append((foot + t * perp)[hit])
        out.append((foot - t * perp)[hit])
        # two active lines
        i, k = np.triu_indices(len(bk), 1)
        if len(i):
            det = Ak[i, 0] * Ak[k, 1] - Ak[i, 1] * Ak[k, 0]
            ok = np.abs(det) > 1e-14 * np.maximum(1.0, nk[i] * nk[k])
            i, k, det = i[ok], k[ok], det[ok]
            ux = (bk[i] * Ak[k, 1] - bk[k] * Ak[i, 1]) / det
            uy = (Ak[i, 0] * bk[k] - Ak[k, 0] * bk[i]) / det
            out.append(np.stack([ux, uy], axis=1))
    return np.vstack(out)


def _feasible_rows(U: np.ndarray, A: np.ndarray, b: np.ndarray, u_max: float) -> np.ndarray:
    ok = np.einsum("ij,ij->i", U, U) <= u_max**2 * (1 + 1e-12) + 1e-14
    if len(b):
        tol = FEAS_TOL * np.maximum(1.0, np.maximum(np.abs(b), np.linalg.norm(A, axis=1) * u_max))
        ok &= np.all(U @ A.T <= b + tol, axis=1)
    return ok & np.all(np.isfinite(U), axis=1)


def _active(u: np.ndarray, A: np.ndarray, b: np.ndarray, u_max: float) -> list[int]:
    idx = [
        i
        for i in range(len(b))
        if abs(A[i] @ u - b[i]) <= ACTIVE_TOL * max(1.0, abs(b[i]), float(np.linalg.norm(A[i])) * u_max)
    ]
    if abs(float(np.linalg.norm(u)) - u_max) <= ACTIVE_TOL * u_max:
        idx.append(-1)
    return idx


def _relax(A: np.ndarray, b: np.ndarray, u_max: float) -> np.ndarray:
    """Least total squared violation over the disc."""

    def f(u):
        v = np.maximum(A @ u - b, 0.0)
        return float(v @ v)

    def g(u):
        v = np.maximum(A @ u - b, 0.0)
        return 2.0 * A.T @ v

    res = optimize.minimize(
        f,
        np.zeros(2),
        jac=g,
        method="SLSQP",
        constraints=[{"type": "ineq", "fun": lambda u: u_max**2 - u @ u, "jac": lambda u: -2.0 * u}],
        options={"ftol": 1e-14, "maxiter": 200},
    )
    u = np.asarray(res.x, dtype=float)
    if not np.all(np.isfinite(u)):
        raise FloatingPointError("relaxation diverged")
    n = float(np.linalg.norm(u))
    return u * (u_max / n) if n > u_max else u


def solve_qcqp(u_g, cons: Sequence[LinearConstraint], u_max: float) -> QcqpResult:
    """Exact minimiser of ``|u - u_g|^2`` over the half-planes and the disc ``|u| <= u_max``.

    Falls back to the least-violation action when the feasible set is empty.
    """
    u_g = np.asarray(u_g, dtype=float)
    if not np.all(np.isfinite(u_g)):
        raise ValueError(f"non-finite goal action {u_g}")
    if u_g.shape != (2,):
        raise ValueError("solve_qcqp handles planar inputs only")
    A = np.array([c.a for c in cons], dtype=float).reshape(-1, 2)
    b = np.array([c.b for c in cons], dtype=float)

    U = _candidates(u_g, A, b, u_max)
    ok = _feasible_rows(U, A, b, u_max)
    if np.any(ok):
        U = U[ok]
        obj = np.sum((U - u_g) ** 2, axis=1)
        best = U[int(np.argmin(obj))]
        n = float(np.linalg.norm(best))
        if n > u_max:
            best = best * (u_max / n)
        return QcqpResult(best, QcqpStatus.OPTIMAL, _active(best, A, b, u_max), float((best - u_g) @ (best - u_g)))

    try:
        u = _relax(A, b, u_max)
    except (FloatingPointError, ValueError):
        u = np.zeros(2)
    return QcqpResult(u, QcqpStatus.RELAXED_INFEASIBLE, _active(u, A, b, u_max), float((u - u_g) @ (u - u_g)))


def kkt_residual(result: QcqpResult, u_g, cons: Sequence[LinearConstraint], u_max: float) -> tuple[float, np.ndarray]:
    """Stationarity residual with the best non-negative multipliers on the active set."""
    u = result.u
    r = -2.0 * (u - np.asarray(u_g, dtype=float))
    cols = [np.asarray(cons[i].a, dtype=float) if i >= 0 else 2.0 * u for i in result.active_set]
    if not cols:
        return float(np.linalg.norm(r)), np.zeros(0)
    G = np.column_stack(cols)
    mult, res = optimize.nnls(G, r)
    return float(res), mult


# -- composition ------------------------------------------------------------

class MissingModelError(ValueError):
    pass


@dataclass
class ObstacleReport:
    V: float
    slack: float
    active: bool
    in_range: bool


@dataclass
class ComposeResult:
    u: np.ndarray
    u_goal: np.ndarray
    qcqp: QcqpResult
    obstacles: list[ObstacleReport]

    @property
    def status(self) -> QcqpStatus:
        return self.qcqp.status


def _discount(model, p: SafetyParams) -> float:
    lam = model.cost.lam
    if p.lam is not None and not math.isclose(p.lam, lam, rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError(f"safety discount {p.lam} differs from the model's training discount {lam}")
    return lam


def compose_step(goal, obstacles, p: SafetyParams) -> ComposeResult:
    """One composed action.

    ``goal`` is a ``(model, relative_state)`` pair and ``obstacles`` a sequence
    of such pairs. Models need ``value_and_policy``, ``in_range`` and ``cost``.
    An obstacle outside its model's training radius contributes the vacuous
    constraint ``0 @ u <= 0`` so the constraint count always equals the
    obstacle count.
    """
    g_model, g_x = goal
    if g_model is None:
        raise MissingModelError("goal element has no model")
    _, u_g = g_model.value_and_policy(g_x)
    n = float(np.linalg.norm(u_g))
    if n > p.u_max:
        u_g = u_g * (p.u_max / n)

    cons: list[LinearConstraint] = []
    values: list[float] = []
    ranged: list[bool] = []
    for j, (model, x) in enumerate(obstacles):
        if model is None:
            raise MissingModelError(f"obstacle {j} has no model")
        if not model.in_range(x):
            cons.append(LinearConstraint(np.zeros(2), 0.0))
            values.append(math.nan)
            ranged.append(False)
            continue
        V, u_star = model.value_and_policy(x)
        cons.append(cbf_constraint(V, u_star, p, j, lam=_discount(model, p), qc=model.cost.qc))
        values.append(V)
        ranged.append(True)

    res = solve_qcqp(u_g, cons, p.u_max)
    active = set(res.active_set)
    reports = [
        ObstacleReport(values[j], cons[j].slack(res.u), ranged[j] and j in active, ranged[j])
        for j in range(len(cons))
    ]
    return ComposeResult(res.u, u_g, res, reports)


def contact_v_min(models, q: float, buffer: float = 0.1) -> float:
    """Largest learned ``V^q`` on any obstacle outline, plus ``buffer``.

    A learned value does not vanish exactly on contact, so a level below this
    one may admit states that touch the obstacle.
    """
    level = 0.0
    for m in models:
        values, _, _ = gp.predict_batch(m.gp, outline(m.shape))
        level = max(level, float(np.max(np.maximum(values, 0.0))) ** q)
    return level + buffer
