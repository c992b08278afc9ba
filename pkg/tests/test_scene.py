import math

import numpy as np
import pytest

from hjbnav import scene
from hjbnav.env import ConfigurationError, MotionProfile, Rectangle
from hjbnav.safety import SafetyParams
from hjbnav.scene import Lane, Outcome, Role, Scenario, SceneElement, StreetConfig
from hjbnav.trainer import CostParams

SQ = Rectangle(2.0, 2.0)


class ExactBarrier:
    """Exact value of the stationary reach problem with ``lam = 0``: ``V = sqrt(2) d``."""

    cost = CostParams(0.0, 1.0)
    radius = math.inf

    def __init__(self, shape):
        self.shape = shape

    def in_range(self, x):
        return True

    def value_and_policy(self, x):
        d = float(self.shape.signed_distance(x))
        h = 1e-7
        grad = np.array([float(self.shape.signed_distance(x + h * e) - self.shape.signed_distance(x - h * e)) for e in np.eye(2)]) / (2 * h)
        return math.sqrt(2.0) * max(d, 0.0), -math.sqrt(2.0) * grad


class Beeline(ExactBarrier):
    """Goal model heading straight for the goal centre at unit speed."""

    def value_and_policy(self, x):
        x = np.asarray(x, dtype=float)
        n = float(np.linalg.norm(x))
        return n, -x / n if n > 0 else np.zeros(2)


def element(name, pos, role, shape=SQ, motion=(0.0, 0.0), model=None):
    return SceneElement(name, shape, pos, MotionProfile(motion), role, model or name)


def test_relative_state_examples():
    e = element("car", (1.0, 2.0), Role.OBSTACLE, motion=(0.8, 0.0))
    assert np.allclose(scene.relative_state((1.0, 2.0), e), (0, 0))
    assert np.allclose(scene.relative_state((1.0, 2.0), e, t=2.5), (-2.0, 0.0))
    a, b = scene.relative_state((3.0, 5.0), e), scene.relative_state((-1.0, -1.0), e)
    assert np.allclose(a, -b)


def test_element_motion_is_exact():
    e = element("car", (0.5, -1.5), Role.OBSTACLE, motion=(0.8, -0.1))
    for k in range(1000):
        t = k * 0.05
        assert np.array_equal(e.center(t), np.array([0.5, -1.5]) + t * np.array([0.8, -0.1]))


def test_scenario_validation():
    g = element("goal", (0, 5), Role.GOAL)
    with pytest.raises(ConfigurationError):
        Scenario([element("o", (0, 0), Role.OBSTACLE)], (0, 0))
    with pytest.raises(ConfigurationError):
        Scenario([g, element("goal2", (0, 9), Role.GOAL)], (0, 0))
    with pytest.raises(ConfigurationError):
        Scenario([g, element("goal", (0, 0), Role.OBSTACLE)], (0, 0))
    with pytest.raises(ConfigurationError):
        Scenario([g], (0, 0), dt=0.0)


def test_no_obstacles_goes_straight_to_the_goal():
    s = Scenario([element("goal", (3.0, 4.0), Role.GOAL)], (0.0, 0.0), max_steps=200)
    tr = scene.run(s, {"goal": Beeline(SQ)}, SafetyParams(), seed=0)
    assert tr.outcome is Outcome.GOAL_REACHED
    pts = np.array([st.position for st in tr.steps])
    assert np.allclose(pts[:, 0] * 4.0, pts[:, 1] * 3.0, atol=1e-9)
    # 5 units at unit speed, stopping at the goal square's boundary
    assert len(tr.steps) == pytest.approx((5.0 - 1.25) / 0.05, abs=2)


def test_parked_obstacle_forces_a_detour():
    s = Scenario(
        [element("goal", (1.5, 5.0), Role.GOAL), element("block", (0.0, 0.0), Role.OBSTACLE)],
        (0.0, -5.0),
        max_steps=1000,
    )
    p = SafetyParams(c=1.0, q=0.5, v_min=0.1)
    tr = scene.run(s, {"goal": Beeline(SQ), "block": ExactBarrier(SQ)}, p, seed=0)
    assert tr.outcome is Outcome.GOAL_REACHED
    assert tr.min_signed_distance > 0
    xs = np.array([st.position[0] for st in tr.steps])
    ys = np.array([st.position[1] for st in tr.steps])
    # the straight line would cross the block; the trace must pass beside it
    assert np.all(np.abs(xs[np.abs(ys) <= 1.0]) > 1.0)
    assert scene.barrier_margin(tr, p) >= -1e-2


def test_collision_outcome_matches_distance():
    # no barrier model for the block: composing with zero constraint lets the agent drive into it
    class Blind(ExactBarrier):
        def in_range(self, x):
            return False

    s = Scenario([element("goal", (0.0, 5.0), Role.GOAL), element("block", (0.0, 0.0), Role.OBSTACLE)], (0.0, -5.0))
    tr = scene.run(s, {"goal": Beeline(SQ), "block": Blind(SQ)}, SafetyParams(), seed=0)
    assert tr.outcome is Outcome.COLLISION and tr.min_signed_distance <= 0


def test_runs_are_deterministic():
    s = Scenario(
        [element("goal", (1.5, 5.0), Role.GOAL), element("block", (0.0, 0.0), Role.OBSTACLE)],
        (0.0, -5.0),
        agent_jitter=0.4,
    )
    ms = {"goal": Beeline(SQ), "block": ExactBarrier(SQ)}
    a, b = scene.run(s, ms, SafetyParams(), seed=3), scene.run(s, ms, SafetyParams(), seed=3)
    assert len(a.steps) == len(b.steps)
    assert all(np.array_equal(p.position, q.position) for p, q in zip(a.steps, b.steps))


def test_street_crossing_counts():
    s = scene.build_street_crossing()
    assert len(s.obstacles) == 4 and s.goal.role is Role.GOAL and len(s.elements) == 5
    speeds = sorted(e.motion.vector[0] for e in s.obstacles)
    assert speeds == [-0.8, -0.8, 0.8, 0.8]
    assert sum(e.model.endswith(scene.MIRROR_SUFFIX) for e in s.obstacles) == 2


def test_street_crossing_rejects_bad_layouts():
    with pytest.raises(ConfigurationError):
        scene.build_street_crossing(StreetConfig(lanes=()))
    with pytest.raises(ConfigurationError):
        scene.build_street_crossing(StreetConfig(lanes=(Lane(0.0, 0.8, n_cars=2, gap=3.0),)))


def test_speed_mismatch_is_rejected(street_models):
    cfg = StreetConfig(lanes=(Lane(-1.5, 0.5),))
    with pytest.raises(ConfigurationError, match="trained at"):
        scene.load_models(scene.build_street_crossing(cfg), street_models)


def test_missing_model_file_is_rejected(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        scene.load_models(scene.build_street_crossing(), tmp_path)


def test_scenario_file_round_trip(tmp_path):
    s = scene.build_street_crossing()
    scene.save_scenario(s, tmp_path / "s.json")
    back = scene.load_scenario(tmp_path / "s.json")
    assert scene.scenario_to_dict(back) == scene.scenario_to_dict(s)


def test_mirrored_layout_gives_mirrored_trace(street_models):
    p = SafetyParams(v_min=0.2)
    traces = []
    for mirror in (False, True):
        s = scene.build_street_crossing(StreetConfig(mirror=mirror, agent_jitter=0.0, max_steps=300))
        traces.append(scene.run(s, scene.load_models(s, street_models), p, seed=4))
    a, b = traces
    assert a.outcome is b.outcome and len(a.steps) == len(b.steps)
    for sa, sb in zip(a.steps, b.steps):
        assert np.allclose(sa.position * (-1, 1), sb.position, atol=1e-6)


def test_trace_csv_columns(tmp_path, street_models):
    s = scene.build_street_crossing(StreetConfig(max_steps=20))
    tr = scene.run(s, scene.load_models(s, street_models), SafetyParams(v_min=0.2), seed=0)
    scene.write_trace_csv(tr, tmp_path / "t.csv")
    scene.write_summary_csv([tr], tmp_path / "s.csv")
    header = (tmp_path / "t.csv").read_text().splitlines()[0].split(",")
    assert header[:6] == ["t", "x", "y", "u_x", "u_y", "status"]
    assert len(header) == 6 + 3 * 4
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "seed,outcome,steps,min_signed_distance"
