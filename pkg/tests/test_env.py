import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjbnav.env import (
    ConfigurationError,
    ElementConfig,
    EpisodeAborted,
    Event,
    MotionProfile,
    Polygon,
    Rectangle,
    TrainingRange,
    classify,
    outline,
    random_polygon,
    rollout,
    sample_initial,
    signed_distance,
    step,
)

RECT = Rectangle(4.0, 2.0)
coord = st.floats(-10, 10, allow_nan=False)


def test_step_examples():
    x, xd = step((3, 0), (0, 0), MotionProfile(), 0.1)
    assert np.allclose(x, (3, 0)) and np.allclose(xd, (0, 0))
    x, xd = step((3, 0), (0, 0), MotionProfile((0.8, 0)), 0.1)
    assert np.allclose(xd, (-0.8, 0)) and np.allclose(x, (2.92, 0))
    x, xd = step((0, 5), (0, -1), MotionProfile(), 0.5)
    assert np.allclose(x, (0, 4.5)) and np.allclose(xd, (0, -1))


def test_step_rejects_non_finite_state():
    with pytest.raises(ValueError):
        step((np.nan, 0), (0, 0), MotionProfile(), 0.1)


@given(coord, coord, coord, coord, st.floats(0.001, 1.0))
def test_step_is_exact_euler(x0, x1, u0, u1, dt):
    v = MotionProfile((0.3, -0.2))
    x, xd = step((x0, x1), (u0, u1), v, dt)
    assert np.allclose(x - np.array([x0, x1]), dt * (np.array([u0, u1]) - v.vector), atol=1e-12)


def test_classify_examples():
    r = TrainingRange(8.0)
    assert classify((0, 0), RECT, r) is Event.CONTACT
    assert classify((10, 0), RECT, r) is Event.OUT_OF_BOUND
    assert classify((2.0, 1.0), RECT, r) is Event.CONTACT
    assert classify((3, 0), RECT, r) is Event.NONE


def test_signed_distance_examples():
    assert signed_distance((3, 0), RECT) == pytest.approx(1.0)
    assert signed_distance((0, 0), RECT) == pytest.approx(-1.0)
    assert signed_distance((5, 4), RECT) == pytest.approx(math.sqrt(18))


def _boundary_samples(shape, n=4000):
    if isinstance(shape, Rectangle):
        v = np.array([[-2, -1], [2, -1], [2, 1], [-2, 1]], dtype=float)
    else:
        v = np.asarray(shape.vertices)
    pts = []
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        t = np.linspace(0, 1, n)[:, None]
        pts.append(a + t * (b - a))
    return np.vstack(pts)


@settings(max_examples=50)
@given(coord, coord)
def test_rectangle_distance_matches_dense_boundary(x, y):
    p = np.array([x, y])
    dense = np.min(np.linalg.norm(_boundary_samples(RECT) - p, axis=1))
    assert abs(abs(signed_distance(p, RECT)) - dense) < 2e-3


def test_rectangle_and_equivalent_polygon_agree():
    poly = Polygon(((-2, -1), (2, -1), (2, 1), (-2, 1)))
    pts = np.random.default_rng(0).uniform(-6, 6, size=(2000, 2))
    assert np.allclose(RECT.signed_distance(pts), poly.signed_distance(pts), atol=1e-12)


@pytest.mark.parametrize("shape", [RECT, random_polygon(np.random.default_rng(3))])
def test_contact_iff_nonpositive_distance(shape):
    pts = np.random.default_rng(1).uniform(-4, 4, size=(10_000, 2))
    r = TrainingRange(9.0)
    for p, d in zip(pts, shape.signed_distance(pts)):
        assert (classify(p, shape, r) is Event.CONTACT) == (d <= 0)


def test_polygon_validation():
    with pytest.raises(ConfigurationError):
        Polygon(((0, 0), (1, 0)))
    with pytest.raises(ConfigurationError):
        Polygon(((0, 0), (1, 0), (2, 0)))
    with pytest.raises(ConfigurationError):
        Polygon(((0, 0), (1, 1), (1, 0), (0, 1)))  # bow tie
    with pytest.raises(ConfigurationError):
        Rectangle(0, 1)


@pytest.mark.parametrize("shape", [RECT, Polygon(((0, -1), (2, 0), (1, 2), (-1, 1)))])
def test_outline_lies_on_the_boundary(shape):
    pts = outline(shape, per_edge=25)
    assert pts.shape == (25 * (4 if shape is RECT else len(shape.vertices)), 2)
    assert np.allclose(shape.signed_distance(pts), 0.0, atol=1e-12)


@given(st.integers(0, 10_000))
def test_random_polygon_is_simple(seed):
    p = random_polygon(np.random.default_rng(seed))
    assert len(p.vertices) == 7


def test_training_range_must_exceed_circumradius():
    with pytest.raises(ConfigurationError):
        ElementConfig(RECT, range=TrainingRange(2.0))
    with pytest.raises(ConfigurationError):
        sample_initial(RECT, TrainingRange(math.hypot(2, 1)), np.random.default_rng(0))


@given(st.integers(0, 2**32 - 1))
def test_sample_initial_contract(seed):
    p = sample_initial(RECT, TrainingRange(8.0), np.random.default_rng(seed))
    assert np.linalg.norm(p) <= 8.0
    assert classify(p, RECT, TrainingRange(8.0)) is Event.NONE


def test_sample_initial_reproducible():
    a = [sample_initial(RECT, TrainingRange(8.0), np.random.default_rng(7)) for _ in range(3)]
    assert all(np.array_equal(a[0], b) for b in a)


def test_rollout_zero_policy_never_terminates():
    el = ElementConfig(RECT)
    s = rollout(lambda x: np.zeros(2), el, 100, np.random.default_rng(0))
    assert len(s) == 100 and all(x.event is Event.NONE for x in s)


def test_rollout_reaches_contact_within_31_steps():
    el = ElementConfig(RECT, dt=0.05)

    def toward(x):
        return -2.0 * x / np.linalg.norm(x)  # u_max dt = 0.1

    s = rollout(toward, el, 100, np.random.default_rng(0), x0=np.array([5.0, 0.0]))
    # the terminal sample records the state reached after the last Euler step
    assert len(s) - 1 <= 31
    assert s[-1].event is Event.CONTACT


def test_rollout_drift_only():
    el = ElementConfig(RECT, MotionProfile((0.8, 0.0)))
    s = rollout(lambda x: np.zeros(2), el, 200, np.random.default_rng(0), x0=np.array([5.0, 0.0]))
    assert s[-1].event is Event.CONTACT
    assert all(np.allclose(x.xdot, (-0.8, 0)) for x in s)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_terminal_event_appears_once_and_last(seed):
    rng = np.random.default_rng(seed)
    el = ElementConfig(RECT, MotionProfile((0.5, 0.0)))
    s = rollout(lambda x: rng.uniform(-1, 1, 2), el, 100, np.random.default_rng(seed))
    events = [x.event for x in s]
    assert all(e is Event.NONE for e in events[:-1])


def test_rollout_bit_reproducible():
    el = ElementConfig(RECT)

    def run():
        rng = np.random.default_rng(5)
        return rollout(lambda x: rng.normal(size=2), el, 50, rng)

    a, b = run(), run()
    assert all(np.array_equal(p.x, q.x) and np.array_equal(p.u, q.u) for p, q in zip(a, b))


def test_rollout_aborts_on_non_finite_policy():
    with pytest.raises(EpisodeAborted):
        rollout(lambda x: np.array([np.nan, 0.0]), ElementConfig(RECT), 10, np.random.default_rng(0))


def test_finite_difference_mode_matches_exact_xdot():
    el = ElementConfig(RECT, MotionProfile((0.3, 0.1)))
    rng = np.random.default_rng(2)
    s = rollout(lambda x: np.array([0.2, -0.4]), el, 20, rng, x0=np.array([6.0, 0.0]), estimate_xdot=True)
    assert all(np.allclose(x.xdot, (-0.1, -0.5), atol=1e-9) for x in s)
