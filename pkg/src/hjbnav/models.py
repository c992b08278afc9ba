"""Trained element models and their JSON file format."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import gp
from .env import ElementConfig, MotionProfile, Polygon, Rectangle, Shape, TrainingRange, shape_from_dict
from .gp import GpModel, KernelParams
from .trainer import CostParams, TrainConfig

FORMAT_VERSION = 1

_UMASK = os.umask(0)
os.umask(_UMASK)


@dataclass
class ElementModel:
    """A GP actor-critic pair plus the element it was trained on."""

    gp: GpModel
    shape: Shape
    motion: MotionProfile
    radius: float
    cost: CostParams
    training: dict = field(default_factory=dict)

    @property
    def element(self) -> ElementConfig:
        return ElementConfig(self.shape, self.motion, TrainingRange(self.radius), self.training.get("dt", 0.05))

    def in_range(self, x) -> bool:
        return float(np.linalg.norm(x)) <= self.radius

    def value(self, x) -> float:
        return gp.predict_value(self.gp, x)

    def policy(self, x) -> np.ndarray:
        return gp.predict_policy(self.gp, x)

    def value_and_policy(self, x) -> tuple[float, np.ndarray]:
        a_v, a_u = self._coeffs
        k = self.gp.kvec(x)
        return float(k @ a_v), k @ a_u

    @cached_property
    def _coeffs(self) -> tuple[np.ndarray, np.ndarray]:
        # element models are read-only once trained; K^-1 mu is computed once
        return self.gp.value_coeffs(), self.gp.policy_coeffs()


def make_training_meta(config: TrainConfig, element: ElementConfig, cost: CostParams) -> dict:
    return {
        "epochs": config.epochs,
        "max_steps": config.max_steps,
        "lambda": cost.lam,
        "qc": cost.qc,
        "dt": element.dt,
        "seed": config.seed,
        "eta": config.eta,
        "sigma_explore": config.sigma_explore,
        "u_max": config.u_max,
        "w_term": config.w_term,
        "eta_final": config.eta_final,
        "lengthscale": config.kernel.lengthscale,
        "spacing": config.spacing if config.spacing is not None else config.kernel.lengthscale,
    }


def to_dict(model: ElementModel) -> dict:
    g = model.gp
    return {
        "format_version": FORMAT_VERSION,
        "state_dim": g.state_dim,
        "control_dim": g.control_dim,
        "kernel": {
            "type": "rbf",
            "lengthscale": g.kernel.lengthscale,
            "variance": g.kernel.variance,
            "jitter": g.kernel.jitter,
        },
        "base_points": g.X.tolist(),
        "mu_v": g.mu_v.tolist(),
        "mu_u": g.mu_u.tolist(),
        "element": {
            "shape": model.shape.to_dict(),
            "motion": list(model.motion.velocity),
            "radius": model.radius,
        },
        "training": dict(model.training, **{"lambda": model.cost.lam, "qc": model.cost.qc}),
    }


def from_dict(d: dict) -> ElementModel:
    k = d["kernel"]
    if k.get("type") != "rbf":
        raise ValueError(f"unsupported kernel type {k.get('type')!r}")
    kernel = KernelParams(float(k["lengthscale"]), float(k["variance"]), float(k["jitter"]))
    X = np.asarray(d["base_points"], dtype=float)
    if X.ndim != 2 or X.shape[1] != d["state_dim"]:
        raise ValueError("base_points do not match state_dim")
    model = gp.build(X, kernel, control_dim=int(d["control_dim"]))
    mu_v = np.asarray(d["mu_v"], dtype=float)
    mu_u = np.asarray(d["mu_u"], dtype=float)
    if mu_v.shape != model.mu_v.shape or mu_u.shape != model.mu_u.shape:
        raise ValueError("stored means do not match the base points")
    model.mu_v[:] = mu_v
    model.mu_u[:] = mu_u
    el = d["element"]
    tr = dict(d.get("training", {}))
    cost = CostParams(lam=float(tr.get("lambda", 0.1)), qc=float(tr.get("qc", 0.0)))
    return ElementModel(model, shape_from_dict(el["shape"]), MotionProfile(tuple(el["motion"])), float(el["radius"]), cost, tr)


def dumps(model: ElementModel) -> str:
    return json.dumps(to_dict(model), indent=1)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.chmod(tmp, 0o666 & ~_UMASK)  # mkstemp creates owner-only files
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: ElementModel, path) -> None:
    atomic_write_text(path, dumps(model))


def load_model(path) -> ElementModel:
    with open(path) as fh:
        return from_dict(json.load(fh))


def mirror_model(model: ElementModel, axis: int = 0) -> ElementModel:
    """Reflect a model across the plane ``x[axis] = 0``.

    The relative dynamics are reflection-symmetric, so the mirror image of a
    model trained on an element moving at ``v`` is the model for the mirrored
    element moving at the reflected velocity.
    """
    flip = np.ones(model.gp.state_dim)
    flip[axis] = -1.0
    mirrored = gp.build(model.gp.X * flip, model.gp.kernel, control_dim=model.gp.control_dim)
    mirrored.mu_v[:] = model.gp.mu_v
    mirrored.mu_u[:] = model.gp.mu_u * flip
    shape = model.shape
    if isinstance(shape, Polygon):
        verts = (np.asarray(shape.vertices) * flip)[::-1]
        shape = Polygon(tuple(map(tuple, verts)))
    elif not isinstance(shape, Rectangle):
        raise TypeError(f"cannot mirror {type(shape).__name__}")
    motion = MotionProfile(tuple(model.motion.vector * flip))
    return ElementModel(mirrored, shape, motion, model.radius, model.cost, dict(model.training))
