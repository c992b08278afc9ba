"""Brute-force reference solutions.

None of these share code paths with the learner or the solver they check:
value iteration solves the discounted reach problem on a grid, the QCQP
oracle scans a dense grid over the input disc, and ``finite_diff`` is plain
central differencing.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .env import MotionProfile, Shape


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class Grid:
    x_bounds: tuple[float, float]
    y_bounds: tuple[float, float]
    nx: int
    ny: int

    @classmethod
    def square(cls, half_width: float, n: int) -> "Grid":
        return cls((-half_width, half_width), (-half_width, half_width), n, n)

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(*self.x_bounds, self.nx)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(*self.y_bounds, self.ny)

    @property
    def hx(self) -> float:
        return (self.x_bounds[1] - self.x_bounds[0]) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.y_bounds[1] - self.y_bounds[0]) / (self.ny - 1)

    def points(self) -> np.ndarray:
        gx, gy = np.meshgrid(self.xs, self.ys, indexing="xy")
        return np.stack([gx, gy], axis=-1)  # (ny, nx, 2)


@dataclass
class GridValueFunction:
    grid: Grid
    values: np.ndarray  # (ny, nx)
    terminal: np.ndarray  # bool (ny, nx)
    sweeps: int = 0
    deltas: list[float] = field(default_factory=list)

    def interpolate(self, pts) -> np.ndarray:
        """Bilinear interpolation, clamped at the grid edges."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        g = self.grid
        fx = np.clip((pts[:, 0] - g.x_bounds[0]) / g.hx, 0, g.nx - 1)
        fy = np.clip((pts[:, 1] - g.y_bounds[0]) / g.hy, 0, g.ny - 1)
        i0 = np.minimum(np.floor(fx).astype(int), g.nx - 2)
        j0 = np.minimum(np.floor(fy).astype(int), g.ny - 2)
        tx, ty = fx - i0, fy - j0
        V = self.values
        return (
            (1 - ty) * ((1 - tx) * V[j0, i0] + tx * V[j0, i0 + 1])
            + ty * ((1 - tx) * V[j0 + 1, i0] + tx * V[j0 + 1, i0 + 1])
        )

    def to_csv(self, path) -> None:
        pts = self.grid.points().reshape(-1, 2)
        with open(path, "w") as fh:
            fh.write("x,y,V\n")
            for (x, y), v in zip(pts, self.values.ravel()):
                fh.write(f"{x!r},{y!r},{v!r}\n")


def action_set(u_max: float, n_directions: int = 64, n_magnitudes: int = 8) -> np.ndarray:
    """Polar action grid on the input disc plus the zero action."""
    ang = 2 * np.pi * np.arange(n_directions) / n_directions
    mags = u_max * np.arange(1, n_magnitudes + 1) / n_magnitudes
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    acts = (mags[:, None, None] * dirs[None]).reshape(-1, 2)
    return np.vstack([np.zeros((1, 2)), acts])


def value_iteration(
    shape: Shape,
    motion: MotionProfile,
    cost,
    u_max: float,
    grid: Grid,
    dt: float | None = None,
    oob_radius: float | None = None,
    actions: np.ndarray | None = None,
    tol: float = 1e-8,
    max_sweeps: int = 100_000,
) -> GridValueFunction:
    """Discounted reach-or-exit value function by semi-Lagrangian value iteration.

    Backup: ``V(x) = min_u  C(u) (1 - exp(-lam dt)) / lam + exp(-lam dt) V(x + dt (u - v))``
    with bilinear interpolation. Contact cells and cells outside ``oob_radius``
    are absorbing with value zero. Beyond the array edges the grid is clamped,
    which makes the edges act as a homogeneous continuation.
    """
    h = min(grid.hx, grid.hy)
    speed = u_max + float(np.linalg.norm(motion.vector))
    if dt is None:
        dt = h / speed
    if not speed * dt < 2 * h:
        raise ValueError(f"dt={dt} too large for cell size {h}: need (u_max+|v|) dt < 2 h")
    acts = action_set(u_max) if actions is None else np.asarray(actions, dtype=float)

    pts = grid.points()
    terminal = shape.signed_distance(pts) <= 0.0
    if oob_radius is not None:
        terminal |= np.linalg.norm(pts, axis=-1) > oob_radius
    free = ~terminal

    gamma = math.exp(-cost.lam * dt)
    run_weight = dt if cost.lam == 0 else (1 - gamma) / cost.lam
    step_cost = run_weight * (0.5 * np.sum(acts**2, axis=1) + cost.qc)

    # every action's bilinear backup is a weighted sum of a few whole-grid shifts
    shift_index: dict[tuple[int, int], int] = {}
    W_rows = []
    for a in acts:
        d = dt * (a - motion.vector)
        sx, sy = d[0] / grid.hx, d[1] / grid.hy
        ox, oy = math.floor(sx), math.floor(sy)
        tx, ty = sx - ox, sy - oy
        row = {}
        for (dx, dy), w in (((0, 0), (1 - tx) * (1 - ty)), ((1, 0), tx * (1 - ty)), ((0, 1), (1 - tx) * ty), ((1, 1), tx * ty)):
            key = (ox + dx, oy + dy)
            k = shift_index.setdefault(key, len(shift_index))
            row[k] = row.get(k, 0.0) + w
        W_rows.append(row)
    W = np.zeros((len(acts), len(shift_index)))
    for r, row in enumerate(W_rows):
        for k, w in row.items():
            W[r, k] = w
    ix = np.arange(grid.nx)
    iy = np.arange(grid.ny)
    shifts = [
        (np.clip(iy + oy, 0, grid.ny - 1), np.clip(ix + ox, 0, grid.nx - 1))
        for (ox, oy), _ in sorted(shift_index.items(), key=lambda kv: kv[1])
    ]
    free_idx = np.flatnonzero(free.ravel())
    chunk = max(1, 4_000_000 // max(len(free_idx), 1))

    V = np.zeros((grid.ny, grid.nx))
    deltas: list[float] = []
    for sweep in range(1, max_sweeps + 1):
        S = np.stack([V[np.ix_(yy, xx)].ravel()[free_idx] for yy, xx in shifts])
        best = np.full(len(free_idx), np.inf)
        for lo in range(0, len(acts), chunk):
            q = step_cost[lo : lo + chunk, None] + gamma * (W[lo : lo + chunk] @ S)
            np.minimum(best, q.min(axis=0), out=best)
        new_V = np.zeros_like(V)
        new_V.ravel()[free_idx] = best
        delta = float(np.max(np.abs(new_V - V)))
        V = new_V
        deltas.append(delta)
        if delta < tol:
            return GridValueFunction(grid, V, terminal, sweep, deltas)
    raise OracleError(f"value iteration did not converge in {max_sweeps} sweeps (last delta {deltas[-1]:.3e})")


@functools.lru_cache(maxsize=8)
def _disc_grid(u_max: float, resolution: int) -> np.ndarray:
    ticks = np.linspace(-u_max, u_max, resolution)
    gx, gy = np.meshgrid(ticks, ticks)
    U = np.stack([gx.ravel(), gy.ravel()], axis=1)
    U = U[np.sum(U**2, axis=1) <= u_max**2]
    U.flags.writeable = False
    return U


def qcqp_grid_search(u_g, cons: Sequence, u_max: float, resolution: int = 401) -> tuple[np.ndarray | None, float]:
    """Best feasible point of ``|u - u_g|^2`` on a dense grid over the input disc.

    Returns ``(None, inf)`` if no grid point is feasible.
    """
    if resolution < 101:
        raise ValueError("resolution must be >= 101")
    U = _disc_grid(float(u_max), int(resolution))
    if cons:
        A = np.array([np.asarray(c.a, dtype=float) for c in cons])
        b = np.array([float(c.b) for c in cons])
        U = U[np.all(U @ A.T <= b, axis=1)]
    if len(U) == 0:
        return None, math.inf
    obj = np.sum((U - np.asarray(u_g, dtype=float)) ** 2, axis=1)
    k = int(np.argmin(obj))
    return U[k].copy(), float(obj[k])


def finite_diff(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g
