"""Relative single-integrator dynamics around one environment element.

The agent is a planar single integrator and each element (goal or obstacle)
translates at a constant velocity, so in element-relative coordinates

    xdot = u - v

which is input-affine with drift ``-v`` and identity input map. The learner
never sees ``v``; it only observes ``(x, xdot, u)`` triples and termination
events.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DEFAULT_DT = 0.05
MAX_REJECTION_DRAWS = 10_000


class ConfigurationError(ValueError):
    """Raised for element/range/scenario configurations that violate invariants."""


class EpisodeAborted(RuntimeError):
    """Raised when a policy produces a non-finite action during a rollout."""


class Event(enum.Enum):
    NONE = "none"
    CONTACT = "contact"
    OUT_OF_BOUND = "out_of_bound"


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned rectangle centred on the element origin."""

    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ConfigurationError(f"rectangle sides must be positive, got {self.width}x{self.height}")

    @property
    def circumradius(self) -> float:
        return 0.5 * math.hypot(self.width, self.height)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        q = np.abs(p) - np.array([0.5 * self.width, 0.5 * self.height])
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def to_dict(self) -> dict:
        return {"type": "rectangle", "width": self.width, "height": self.height}


@dataclass(frozen=True)
class Polygon:
    """Simple polygon given by ordered vertices in element-local coordinates."""

    vertices: tuple

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ConfigurationError("polygon needs at least 3 two-dimensional vertices")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("polygon vertices must be finite")
        if abs(_shoelace(v)) < 1e-12:
            raise ConfigurationError("polygon has zero area")
        if not _is_simple(v):
            raise ConfigurationError("polygon is self-intersecting")
        object.__setattr__(self, "vertices", tuple(tuple(map(float, p)) for p in v))

    @property
    def circumradius(self) -> float:
        return float(np.max(np.linalg.norm(np.asarray(self.vertices), axis=1)))

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        flat = p.reshape(-1, 2)
        v = np.asarray(self.vertices)
        a = v
        b = np.roll(v, -1, axis=0)
        ab = b - a
        # point-to-segment distance for every (point, edge) pair
        ap = flat[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("pek,ek->pe", ap, ab) / np.einsum("ek,ek->e", ab, ab), 0.0, 1.0)
        closest = a[None] + t[..., None] * ab[None]
        dist = np.min(np.linalg.norm(flat[:, None, :] - closest, axis=-1), axis=1)
        # even-odd crossing test
        px, py = flat[:, 0:1], flat[:, 1:2]
        ay, by = a[:, 1][None], b[:, 1][None]
        straddles = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = a[:, 0][None] + (py - ay) * (b[:, 0] - a[:, 0])[None] / (by - ay)
        inside = np.sum(straddles & (px < x_cross), axis=1) % 2 == 1
        out = np.where(inside, -dist, dist)
        return out.reshape(p.shape[:-1])

    def to_dict(self) -> dict:
        return {"type": "polygon", "vertices": [list(p) for p in self.vertices]}


Shape = Rectangle | Polygon


def outline(shape: Shape, per_edge: int = 100) -> np.ndarray:
    """Points spaced evenly along each edge of the shape's boundary."""
    if isinstance(shape, Rectangle):
        w, h = 0.5 * shape.width, 0.5 * shape.height
        v = np.array([[-w, -h], [w, -h], [w, h], [-w, h]])
    else:
        v = np.asarray(shape.vertices)
    t = np.linspace(0.0, 1.0, per_edge, endpoint=False)[None, :, None]
    a, b = v[:, None, :], np.roll(v, -1, axis=0)[:, None, :]
    return (a + t * (b - a)).reshape(-1, 2)


def shape_from_dict(d: dict) -> Shape:
    kind = d.get("type")
    if kind == "rectangle":
        return Rectangle(float(d["width"]), float(d["height"]))
    if kind == "polygon":
        return Polygon(tuple(tuple(p) for p in d["vertices"]))
    raise ConfigurationError(f"unknown shape type {kind!r}")


def _shoelace(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_segment(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 < 0 and d3 * d4 < 0:
        return True
    for d, a, b, c in ((d1, p3, p4, p1), (d2, p3, p4, p2), (d3, p1, p2, p3), (d4, p1, p2, p4)):
        if d == 0 and on_segment(a, b, c):
            return True
    return False


def _is_simple(v: np.ndarray) -> bool:
    n = len(v)
    for i in range(n):
        for j in range(i + 1, n):
            # adjacent edges share a vertex by construction
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                return False
    return True


def random_polygon(rng: np.random.Generator, n_vertices: int = 7, r_min: float = 1.0, r_max: float = 2.5) -> Polygon:
    """Star-shaped random polygon around the origin.

    Angles are jittered around evenly spaced slots so no angular gap exceeds
    pi, which keeps the polygon simple and the origin inside it.
    """
    if n_vertices < 3:
        raise ConfigurationError("a polygon needs at least 3 vertices")
    slots = np.arange(n_vertices) + rng.uniform(-0.25, 0.25, n_vertices)
    angles = 2 * np.pi * slots / n_vertices + rng.uniform(0.0, 2 * np.pi)
    radii = rng.uniform(r_min, r_max, n_vertices)
    pts = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
    return Polygon(tuple(map(tuple, pts)))


@dataclass(frozen=True)
class MotionProfile:
    velocity: tuple = (0.0, 0.0)

    def __post_init__(self):
        v = tuple(float(c) for c in self.velocity)
        if len(v) != 2 or not all(math.isfinite(c) for c in v):
            raise ConfigurationError(f"velocity must be a finite 2-vector, got {self.velocity}")
        object.__setattr__(self, "velocity", v)

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.velocity)


@dataclass(frozen=True)
class TrainingRange:
    radius: float

    def validate_for(self, shape: Shape) -> None:
        if not self.radius > shape.circumradius:
            raise ConfigurationError(
                f"training radius {self.radius} must exceed the shape circumradius {shape.circumradius:.4f}"
            )


@dataclass
class Sample:
    x: np.ndarray
    xdot: np.ndarray
    u: np.ndarray
    event: Event = Event.NONE


@dataclass
class ElementConfig:
    """Everything needed to simulate one element in isolation."""

    shape: Shape
    motion: MotionProfile = field(default_factory=MotionProfile)
    range: TrainingRange = field(default_factory=lambda: TrainingRange(8.0))
    dt: float = DEFAULT_DT

    def __post_init__(self):
        self.range.validate_for(self.shape)
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")


def step(x, u, motion: MotionProfile, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """One explicit Euler step of the relative dynamics.

    Returns the next state and the exact continuous-time derivative ``u - v``.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite state {x}")
    if not dt > 0:
        raise ValueError("dt must be positive")
    xdot = np.asarray(u, dtype=float) - motion.vector
    return x + dt * xdot, xdot


def finite_difference_xdot(x_prev: np.ndarray, x_next: np.ndarray, dt: float) -> np.ndarray:
    """Forward-difference velocity estimate, for data that only records states."""
    return (np.asarray(x_next) - np.asarray(x_prev)) / dt


def signed_distance(x, shape: Shape):
    """Distance to the shape boundary, negative inside. Vectorised over leading axes."""
    d = shape.signed_distance(np.asarray(x, dtype=float))
    return float(d) if np.ndim(d) == 0 else d


def classify(x, shape: Shape, training_range: TrainingRange) -> Event:
    x = np.asarray(x, dtype=float)
    if shape.signed_distance(x) <= 0.0:
        return Event.CONTACT
    if np.linalg.norm(x) > training_range.radius:
        return Event.OUT_OF_BOUND
    return Event.NONE


def sample_initial(shape: Shape, training_range: TrainingRange, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the training disc with the shape removed."""
    training_range.validate_for(shape)
    for _ in range(MAX_REJECTION_DRAWS):
        r = training_range.radius * math.sqrt(rng.uniform())
        theta = rng.uniform(0.0, 2 * math.pi)
        p = np.array([r * math.cos(theta), r * math.sin(theta)])
        if shape.signed_distance(p) > 0.0:
            return p
    raise ConfigurationError("rejection sampling failed: shape nearly fills the training range")


def clip_to_ball(u: np.ndarray, u_max: float) -> np.ndarray:
    n = float(np.linalg.norm(u))
    if n > u_max:
        return u * (u_max / n)
    return u


def rollout(
    policy: Callable[[np.ndarray], np.ndarray],
    element: ElementConfig,
    max_steps: int,
    rng: np.random.Generator,
    x0: np.ndarray | None = None,
    estimate_xdot: bool = False,
) -> list[Sample]:
    """Simulate one episode and return its samples.

    Each sample records the state, the applied action and the resulting
    derivative. The episode stops at the first sample whose state is in
    contact or out of bound; that sample is the last one emitted. With
    ``estimate_xdot`` the derivative is replaced by the forward difference of
    consecutive states.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    x = sample_initial(element.shape, element.range, rng) if x0 is None else np.asarray(x0, dtype=float)
    samples: list[Sample] = []
    for k in range(max_steps):
        event = classify(x, element.shape, element.range)
        u = np.asarray(policy(x), dtype=float)
        if not np.all(np.isfinite(u)):
            raise EpisodeAborted(f"policy returned non-finite action {u} at step {k}, state {x}")
        x_next, xdot = step(x, u, element.motion, element.dt)
        if estimate_xdot:
            xdot = finite_difference_xdot(x, x_next, element.dt)
        samples.append(Sample(x=x, xdot=xdot, u=u, event=event))
        if event is not Event.NONE:
            break
        x = x_next
    return samples
