"""Multi-element scenarios run in closed loop under the composed controller."""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .env import DEFAULT_DT, ConfigurationError, MotionProfile, Rectangle, Shape, shape_from_dict
from .models import ElementModel, load_model, mirror_model
from .safety import ComposeResult, QcqpStatus, SafetyParams, compose_step

MIRROR_SUFFIX = "#mirror-x"


class Role(enum.Enum):
    GOAL = "goal"
    OBSTACLE = "obstacle"


class Outcome(enum.Enum):
    GOAL_REACHED = "goal_reached"
    COLLISION = "collision"
    TIMEOUT = "timeout"
    ABORTED = "aborted"  # the solver produced a non-finite action


@dataclass(frozen=True)
class SceneElement:
    name: str
    shape: Shape
    position: tuple  # world centre at t = 0
    motion: MotionProfile
    role: Role
    model: str  # model reference, resolved by load_models

    def center(self, t: float) -> np.ndarray:
        return np.asarray(self.position, dtype=float) + t * self.motion.vector


@dataclass
class Scenario:
    elements: list[SceneElement]
    agent_start: tuple
    dt: float = DEFAULT_DT
    max_steps: int = 1000
    goal_radius: float = 0.0
    agent_jitter: float = 0.0  # per-seed uniform offset of the start, per axis
    phase_jitter: float = 0.0  # per-seed shift of each moving obstacle along its motion

    def __post_init__(self):
        goals = [e for e in self.elements if e.role is Role.GOAL]
        if len(goals) != 1:
            raise ConfigurationError(f"a scenario needs exactly one goal, found {len(goals)}")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.max_steps < 1:
            raise ConfigurationError("max_steps must be >= 1")
        if self.goal_radius < 0 or self.agent_jitter < 0 or self.phase_jitter < 0:
            raise ConfigurationError("goal_radius and jitters must be non-negative")
        names = [e.name for e in self.elements]
        if len(set(names)) != len(names):
            raise ConfigurationError("element names must be unique")

    @property
    def goal(self) -> SceneElement:
        return next(e for e in self.elements if e.role is Role.GOAL)

    @property
    def obstacles(self) -> list[SceneElement]:
        return [e for e in self.elements if e.role is Role.OBSTACLE]


def relative_state(agent_pos, element: SceneElement, t: float = 0.0) -> np.ndarray:
    return np.asarray(agent_pos, dtype=float) - element.center(t)


# -- scenario files ---------------------------------------------------------

def scenario_to_dict(s: Scenario) -> dict:
    return {
        "dt": s.dt,
        "max_steps": s.max_steps,
        "goal_radius": s.goal_radius,
        "agent_start": list(s.agent_start),
        "agent_jitter": s.agent_jitter,
        "phase_jitter": s.phase_jitter,
        "elements": [
            {
                "name": e.name,
                "role": e.role.value,
                "shape": e.shape.to_dict(),
                "position": list(e.position),
                "motion": list(e.motion.velocity),
                "model": e.model,
            }
            for e in s.elements
        ],
    }


def scenario_from_dict(d: dict) -> Scenario:
    try:
        elements = [
            SceneElement(
                name=str(e["name"]),
                shape=shape_from_dict(e["shape"]),
                position=tuple(float(c) for c in e["position"]),
                motion=MotionProfile(tuple(e.get("motion", (0.0, 0.0)))),
                role=Role(e["role"]),
                model=str(e["model"]),
            )
            for e in d["elements"]
        ]
        return Scenario(
            elements=elements,
            agent_start=tuple(float(c) for c in d["agent_start"]),
            dt=float(d.get("dt", DEFAULT_DT)),
            max_steps=int(d.get("max_steps", 1000)),
            goal_radius=float(d.get("goal_radius", 0.0)),
            agent_jitter=float(d.get("agent_jitter", 0.0)),
            phase_jitter=float(d.get("phase_jitter", 0.0)),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"malformed scenario: {exc}") from exc


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=1))


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def load_models(scenario: Scenario, base_dir=".") -> dict[str, ElementModel]:
    """Resolve every model reference and check it matches its element.

    A reference ending in ``#mirror-x`` loads the file and reflects it across
    the y axis.
    """
    cache: dict[str, ElementModel] = {}
    out: dict[str, ElementModel] = {}
    for e in scenario.elements:
        ref = e.model
        path, mirrored = (ref[: -len(MIRROR_SUFFIX)], True) if ref.endswith(MIRROR_SUFFIX) else (ref, False)
        full = str(Path(base_dir) / path)
        if full not in cache:
            try:
                cache[full] = load_model(full)
            except FileNotFoundError as exc:
                raise ConfigurationError(f"model file for element {e.name!r} not found: {full}") from exc
        model = mirror_model(cache[full]) if mirrored else cache[full]
        check_model(e, model)
        out[ref] = model
    return out


def check_model(e: SceneElement, model: ElementModel) -> None:
    if not np.allclose(model.motion.vector, e.motion.vector, atol=1e-9):
        raise ConfigurationError(
            f"element {e.name!r} moves at {e.motion.velocity} but its model was trained at {model.motion.velocity}"
        )
    if model.shape != e.shape:
        raise ConfigurationError(f"element {e.name!r} shape differs from its model's training shape")
    if model.gp.state_dim != 2 or model.gp.control_dim != 2:
        raise ConfigurationError(f"model for element {e.name!r} is not planar")


# -- closed loop ------------------------------------------------------------

@dataclass
class StepRecord:
    t: float
    position: np.ndarray
    u: np.ndarray
    status: QcqpStatus
    values: list[float]
    slacks: list[float]
    active: list[bool]


@dataclass
class RunTrace:
    seed: int
    steps: list[StepRecord] = field(default_factory=list)
    outcome: Outcome = Outcome.TIMEOUT
    min_signed_distance: float = math.inf
    final_position: np.ndarray | None = None
    diagnostic: str = ""
    obstacle_names: list[str] = field(default_factory=list)


def realize(scenario: Scenario, seed: int) -> tuple[Scenario, np.ndarray]:
    """Apply the seed-driven start and phase jitter; returns the shifted scenario and the agent start."""
    rng = np.random.default_rng(seed)
    start = np.asarray(scenario.agent_start, dtype=float)
    if scenario.agent_jitter > 0:
        start = start + rng.uniform(-scenario.agent_jitter, scenario.agent_jitter, size=2)
    elements = []
    for e in scenario.elements:
        speed = float(np.linalg.norm(e.motion.vector))
        if scenario.phase_jitter > 0 and e.role is Role.OBSTACLE and speed > 0:
            shift = rng.uniform(-scenario.phase_jitter, scenario.phase_jitter) * e.motion.vector / speed
            e = replace(e, position=tuple(np.asarray(e.position) + shift))
        elements.append(e)
    return replace(scenario, elements=elements), start


def _min_obstacle_distance(x: np.ndarray, obstacles: list[SceneElement], t: float) -> float:
    if not obstacles:
        return math.inf
    return min(float(o.shape.signed_distance(x - o.center(t))) for o in obstacles)


def run(scenario: Scenario, models: Mapping[str, ElementModel], params: SafetyParams, seed: int = 0) -> RunTrace:
    scenario, x = realize(scenario, seed)
    goal = scenario.goal
    obstacles = scenario.obstacles
    g_model = models.get(goal.model)
    o_models = [models.get(o.model) for o in obstacles]
    trace = RunTrace(seed=seed, obstacle_names=[o.name for o in obstacles])

    for k in range(scenario.max_steps + 1):
        t = k * scenario.dt
        d = _min_obstacle_distance(x, obstacles, t)
        trace.min_signed_distance = min(trace.min_signed_distance, d)
        if d <= 0:
            trace.outcome = Outcome.COLLISION
            break
        if float(goal.shape.signed_distance(relative_state(x, goal, t))) <= scenario.goal_radius:
            trace.outcome = Outcome.GOAL_REACHED
            break
        if k == scenario.max_steps:
            break
        res: ComposeResult = compose_step(
            (g_model, relative_state(x, goal, t)),
            [(m, relative_state(x, o, t)) for m, o in zip(o_models, obstacles)],
            params,
        )
        if not np.all(np.isfinite(res.u)):
            trace.outcome = Outcome.ABORTED
            trace.diagnostic = f"non-finite action at step {k}, t={t:.4f}, position {x.tolist()}"
            break
        trace.steps.append(
            StepRecord(
                t,
                x.copy(),
                res.u.copy(),
                res.status,
                [r.V for r in res.obstacles],
                [r.slack for r in res.obstacles],
                [r.active for r in res.obstacles],
            )
        )
        x = x + scenario.dt * res.u
    trace.final_position = x
    return trace


def run_many(scenario: Scenario, models: Mapping[str, ElementModel], params: SafetyParams, seeds, jobs: int = 1):
    seeds = list(seeds)
    if jobs <= 1 or len(seeds) <= 1:
        return [run(scenario, models, params, s) for s in seeds]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run, [scenario] * len(seeds), [models] * len(seeds), [params] * len(seeds), seeds))


def barrier_margin(trace: RunTrace, params: SafetyParams) -> float:
    """Smallest ``V_j^q - V_min`` over in-range obstacles at Optimal-status steps."""
    worst = math.inf
    for s in trace.steps:
        if s.status is not QcqpStatus.OPTIMAL:
            continue
        for v in s.values:
            if math.isfinite(v):
                worst = min(worst, (max(v, 0.0) ** params.q) - params.v_min)
    return worst


# -- exports ----------------------------------------------------------------

def write_trace_csv(trace: RunTrace, path) -> None:
    names = trace.obstacle_names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["t", "x", "y", "u_x", "u_y", "status"]
            + [f"V_{n}" for n in names]
            + [f"slack_{n}" for n in names]
            + [f"active_{n}" for n in names]
        )
        for s in trace.steps:
            w.writerow(
                [repr(s.t), repr(float(s.position[0])), repr(float(s.position[1])), repr(float(s.u[0])), repr(float(s.u[1])), s.status.value]
                + [repr(v) for v in s.values]
                + [repr(v) for v in s.slacks]
                + [int(a) for a in s.active]
            )


def write_summary_csv(traces: list[RunTrace], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "outcome", "steps", "min_signed_distance"])
        for tr in traces:
            w.writerow([tr.seed, tr.outcome.value, len(tr.steps), repr(tr.min_signed_distance)])


# -- street crossing --------------------------------------------------------

@dataclass(frozen=True)
class Lane:
    y: float
    speed: float  # signed, along +x
    n_cars: int = 2
    lead_x: float = 4.0  # distance ahead of the crossing line at which the first car starts
    gap: float = 12.0  # centre-to-centre spacing of successive cars


@dataclass(frozen=True)
class StreetConfig:
    lanes: tuple = (Lane(-1.5, -0.8, lead_x=4.0), Lane(1.5, 0.8, lead_x=9.0))
    car_size: tuple = (4.0, 2.0)
    goal_size: float = 2.0
    goal_y: float = 4.0
    agent_start: tuple = (0.0, -3.5)
    dt: float = DEFAULT_DT
    max_steps: int = 1000
    goal_radius: float = 0.0
    agent_jitter: float = 0.5
    phase_jitter: float = 1.0
    car_model: str = "car.json"  # trained at +speed along x; -x lanes use its mirror image
    goal_model: str = "goal.json"
    mirror: bool = False  # reflect the whole layout across the y axis


def build_street_crossing(config: StreetConfig = StreetConfig()) -> Scenario:
    if not config.lanes:
        raise ConfigurationError("street crossing needs at least one lane")
    car = Rectangle(*config.car_size)
    sign = -1.0 if config.mirror else 1.0
    elements: list[SceneElement] = []
    boxes = []
    for li, lane in enumerate(config.lanes):
        if lane.n_cars < 1 or lane.speed == 0:
            raise ConfigurationError(f"lane {li} needs at least one moving car")
        direction = math.copysign(1.0, lane.speed)
        for ci in range(lane.n_cars):
            # cars approach the crossing line x = 0 from upstream
            x0 = -direction * (lane.lead_x + ci * lane.gap)
            pos = (sign * x0, lane.y)
            vel = (sign * lane.speed, 0.0)
            boxes.append((pos, car))
            ref = config.car_model if vel[0] > 0 else config.car_model + MIRROR_SUFFIX
            elements.append(SceneElement(f"car{li}_{ci}", car, pos, MotionProfile(vel), Role.OBSTACLE, ref))
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            (p, a), (q, b) = boxes[i], boxes[j]
            margin = 2 * config.phase_jitter
            if (abs(p[0] - q[0]) < 0.5 * (a.width + b.width) + margin
                    and abs(p[1] - q[1]) < 0.5 * (a.height + b.height)):
                raise ConfigurationError(f"cars {elements[i].name} and {elements[j].name} overlap")
    goal = SceneElement(
        "goal", Rectangle(config.goal_size, config.goal_size), (0.0, config.goal_y), MotionProfile(), Role.GOAL, config.goal_model
    )
    start = (sign * config.agent_start[0], config.agent_start[1])
    return Scenario(
        elements=[goal] + elements,
        agent_start=start,
        dt=config.dt,
        max_steps=config.max_steps,
        goal_radius=config.goal_radius,
        agent_jitter=config.agent_jitter,
        phase_jitter=config.phase_jitter,
    )
