"""Model-free continuous-time actor-critic.

For input-affine dynamics and the cost ``C = 0.5 |u|^2 + q_c`` the
differential advantage is exactly ``0.5 |u - u*(x)|^2``. The critic side
computes the same advantage from the value model and an observed ``xdot``;
training drives the two estimates together by gradient descent on the GP
means.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import gp
from .env import ElementConfig, EpisodeAborted, Event, Sample, clip_to_ball, rollout
from .gp import GpModel, KernelParams, Weights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CostParams:
    lam: float = 0.1
    qc: float = 0.0

    def __post_init__(self):
        if self.lam < 0 or self.qc < 0:
            raise ValueError(f"discount and state cost must be non-negative: {self}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20_000
    max_steps: int = 100
    eta: float = 1e-2
    eta_final: float | None = None  # geometric decay from eta to eta_final over the run
    sigma_explore: float = 0.5
    u_max: float = 1.0
    w_term: float = 10.0
    seed: int = 0
    spacing: float | None = None  # base-point lattice spacing, defaults to the lengthscale
    kernel: KernelParams = field(default_factory=KernelParams)

    def learning_rate(self, epoch: int) -> float:
        if self.eta_final is None or self.epochs == 1:
            return self.eta
        return self.eta * (self.eta_final / self.eta) ** (epoch / (self.epochs - 1))

    def __post_init__(self):
        if self.epochs < 1 or self.max_steps < 1:
            raise ValueError("epochs and max_steps must be >= 1")
        if self.eta_final is not None and not self.eta_final > 0:
            raise ValueError("eta_final must be positive")
        if not (self.eta > 0 and self.sigma_explore > 0 and self.w_term > 0 and self.u_max > 0):
            raise ValueError("eta, sigma_explore, w_term and u_max must be positive")


# -- advantage models -------------------------------------------------------

def _critic(w: Weights, model: GpModel, cost: CostParams, s: Sample) -> float:
    v = w.J @ model.mu_v
    grad_v = w.Jprime @ model.mu_v
    return 0.5 * float(s.u @ s.u) + cost.qc + float(grad_v @ s.xdot) - cost.lam * float(v)


def _actor(w: Weights, model: GpModel, s: Sample) -> float:
    r = s.u - w.J @ model.mu_u
    return 0.5 * float(r @ r)


def advantage_critic(model: GpModel, cost: CostParams, s: Sample) -> float:
    return _critic(gp.weights(model, s.x), model, cost, s)


def advantage_actor(model: GpModel, s: Sample) -> float:
    return _actor(gp.weights(model, s.x), model, s)


def loss(model: GpModel, cost: CostParams, s: Sample) -> float:
    return 0.5 * (advantage_actor(model, s) - advantage_critic(model, cost, s)) ** 2


def residual(model: GpModel, cost: CostParams, s: Sample) -> float:
    """Actor minus critic advantage; zero wherever the learned pair satisfies the HJB equation."""
    w = gp.weights(model, s.x)
    return _actor(w, model, s) - _critic(w, model, cost, s)


def _gradients(w: Weights, model: GpModel, cost: CostParams, s: Sample) -> tuple[float, np.ndarray, np.ndarray]:
    delta = _actor(w, model, s) - _critic(w, model, cost, s)
    dV = delta * (cost.lam * w.J - s.xdot @ w.Jprime)
    dU = -delta * np.outer(w.J, s.u - w.J @ model.mu_u)
    return delta, dV, dU


def gradients(model: GpModel, cost: CostParams, s: Sample) -> tuple[np.ndarray, np.ndarray]:
    """Exact partial derivatives of ``loss`` with respect to ``mu_v`` and ``mu_u``."""
    _, dV, dU = _gradients(gp.weights(model, s.x), model, cost, s)
    return dV, dU


def terminal_anchor_gradient(model: GpModel, x_term, w_term: float = 10.0) -> np.ndarray:
    """Gradient of ``0.5 * w_term * V(x_term)^2`` with respect to ``mu_v``."""
    J = gp.weights(model, x_term).J
    return w_term * float(J @ model.mu_v) * J


def exploration_policy(model: GpModel, x, sigma_explore: float, u_max: float, rng: np.random.Generator) -> np.ndarray:
    u = gp.predict_policy(model, x) + rng.normal(0.0, sigma_explore, size=model.control_dim)
    return clip_to_ball(u, u_max)


# -- full-batch helpers (used for the descent property) ----------------------

def batch_loss(model: GpModel, cost: CostParams, samples: list[Sample]) -> float:
    return float(sum(loss(model, cost, s) for s in samples))


def full_batch_step(model: GpModel, cost: CostParams, samples: list[Sample], eta: float) -> float:
    """One gradient step on the summed loss; returns the loss before the step."""
    J, Jp = model.batch_weights(np.array([s.x for s in samples]))
    dV = np.zeros_like(model.mu_v)
    dU = np.zeros_like(model.mu_u)
    total = 0.0
    for i, s in enumerate(samples):
        delta, gv, gu = _gradients(Weights(J[i], Jp[i]), model, cost, s)
        total += 0.5 * delta**2
        dV += gv
        dU += gu
    gp.apply_gradients(model, dV, dU, eta)
    return total


# -- training loop ----------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    mean_abs_residual: float
    episodes_terminated_contact: int


@dataclass
class TrainResult:
    model: GpModel
    history: list[EpochStats]
    aborted: bool = False
    diagnostic: str = ""


def initial_model(element: ElementConfig, config: TrainConfig) -> GpModel:
    spacing = config.spacing or config.kernel.lengthscale
    X = gp.lattice_in_disc(element.range.radius, spacing)
    return gp.build(X, config.kernel)


def train(
    element: ElementConfig,
    cost: CostParams,
    config: TrainConfig,
    model: GpModel | None = None,
    progress_every: int = 0,
) -> TrainResult:
    """Per-sample stochastic training from on-policy exploratory rollouts.

    Each epoch runs one episode with the current actor plus Gaussian noise,
    then takes one gradient step per sample: the HJB-residual step on
    interior samples and the terminal anchor step on the contact sample.
    Out-of-bound samples carry no cost and no anchor.
    """
    rng = np.random.default_rng(config.seed)
    model = model if model is not None else initial_model(element, config)
    history: list[EpochStats] = []
    sigma = config.sigma_explore

    for epoch in range(config.epochs):
        snapshot = (model.mu_v.copy(), model.mu_u.copy())
        eta = config.learning_rate(epoch)
        coeffs = model.policy_coeffs()

        def policy(x):
            u = model.kvec(x) @ coeffs + rng.normal(0.0, sigma, size=model.control_dim)
            return clip_to_ball(u, config.u_max)

        try:
            samples = rollout(policy, element, config.max_steps, rng)
        except EpisodeAborted as exc:
            model.mu_v, model.mu_u = snapshot
            return TrainResult(model, history, aborted=True, diagnostic=f"epoch {epoch}: {exc}")

        J, Jp = model.batch_weights(np.array([s.x for s in samples]))
        abs_res = []
        contact = 0
        for i, s in enumerate(samples):
            w = Weights(J[i], Jp[i])
            if s.event is Event.NONE:
                delta, dV, dU = _gradients(w, model, cost, s)
                abs_res.append(abs(delta))
                ok = np.isfinite(delta) and gp.apply_gradients(model, dV, dU, eta)
            elif s.event is Event.CONTACT:
                contact += 1
                dV = config.w_term * float(w.J @ model.mu_v) * w.J
                ok = gp.apply_gradients(model, dV, np.zeros_like(model.mu_u), eta)
            else:
                continue
            if not ok:
                model.mu_v, model.mu_u = snapshot
                msg = f"non-finite loss at epoch {epoch}, sample {i}; restored the epoch-start model"
                log.warning(msg)
                return TrainResult(model, history, aborted=True, diagnostic=msg)

        mean_res = float(np.mean(abs_res)) if abs_res else 0.0
        history.append(EpochStats(epoch, mean_res, contact))
        if progress_every and (epoch + 1) % progress_every == 0:
            recent = history[-progress_every:]
            log.info(
                "epoch %d  mean|res| %.4f  contact rate %.2f",
                epoch + 1,
                np.mean([h.mean_abs_residual for h in recent]),
                np.mean([h.episodes_terminated_contact for h in recent]),
            )
    return TrainResult(model, history)


def write_history_csv(history: list[EpochStats], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_abs_residual", "episodes_terminated_contact"])
        for h in history:
            writer.writerow([h.epoch, repr(h.mean_abs_residual), h.episodes_terminated_contact])
