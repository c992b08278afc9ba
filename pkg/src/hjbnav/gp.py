"""GP interpolation over fixed base points.

Values, value gradients and policies are all read off the same kernel
weights ``J(x) = k(x, X) K^-1``; learning only ever moves the stored means at
the base points, so ``K^-1`` is computed once per model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg


@dataclass(frozen=True)
class KernelParams:
    lengthscale: float = 1.0
    variance: float = 1.0
    jitter: float = 1e-6

    def __post_init__(self):
        if not (self.lengthscale > 0 and self.variance > 0 and self.jitter > 0):
            raise ValueError(f"kernel parameters must be positive: {self}")


@dataclass
class Weights:
    J: np.ndarray  # (N,)
    Jprime: np.ndarray  # (m, N)


def kernel_eval(a, b, p: KernelParams) -> float:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(p.variance * np.exp(-0.5 * np.dot(d, d) / p.lengthscale**2))


def kernel_grad(a, b, p: KernelParams) -> np.ndarray:
    """Gradient of ``k(a, b)`` with respect to ``a``."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return -d / p.lengthscale**2 * kernel_eval(a, b, p)


def kernel_matrix(A: np.ndarray, B: np.ndarray, p: KernelParams) -> np.ndarray:
    sq = np.sum(A**2, axis=1)[:, None] + np.sum(B**2, axis=1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return p.variance * np.exp(-0.5 * sq / p.lengthscale**2)


def lattice_in_disc(radius: float, spacing: float) -> np.ndarray:
    """Square lattice through the origin, clipped to the closed disc."""
    n = int(np.floor(radius / spacing + 1e-9))
    ticks = spacing * np.arange(-n, n + 1)
    gx, gy = np.meshgrid(ticks, ticks, indexing="xy")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    keep = np.linalg.norm(pts, axis=1) <= radius + 1e-9
    return pts[keep]


class GpModel:
    """Base points, stored means and the inverted Gram matrix."""

    def __init__(self, base_points, kernel: KernelParams, control_dim: int | None = None):
        X = np.atleast_2d(np.asarray(base_points, dtype=float))
        if X.shape[0] < 1:
            raise ValueError("need at least one base point")
        if not np.all(np.isfinite(X)):
            raise ValueError("base points must be finite")
        if len(np.unique(X, axis=0)) != len(X):
            raise ValueError("duplicated base points")
        self.X = X
        self.kernel = kernel
        n = X.shape[1] if control_dim is None else control_dim
        self.mu_v = np.zeros(len(X))
        self.mu_u = np.zeros((len(X), n))

        gram = kernel_matrix(X, X, kernel)
        gram[np.diag_indices_from(gram)] += kernel.jitter
        self.gram = gram
        try:
            self.gram_factor = linalg.cho_factor(gram, lower=True)
        except linalg.LinAlgError as exc:
            cond = np.linalg.cond(gram)
            raise linalg.LinAlgError(
                f"Gram matrix not positive definite (condition number {cond:.3e}); increase the jitter"
            ) from exc
        self._K_inv = linalg.cho_solve(self.gram_factor, np.eye(len(X)))
        self._K_inv = 0.5 * (self._K_inv + self._K_inv.T)

    @property
    def n_points(self) -> int:
        return self.X.shape[0]

    @property
    def state_dim(self) -> int:
        return self.X.shape[1]

    @property
    def control_dim(self) -> int:
        return self.mu_u.shape[1]

    def kvec(self, x) -> np.ndarray:
        d = self.X - np.asarray(x, dtype=float)
        return self.kernel.variance * np.exp(-0.5 * np.einsum("ij,ij->i", d, d) / self.kernel.lengthscale**2)

    def batch_weights(self, xs) -> tuple[np.ndarray, np.ndarray]:
        """Weights for many states at once: J (T, N) and Jprime (T, m, N)."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        k = kernel_matrix(xs, self.X, self.kernel)  # (T, N)
        diff = xs[:, None, :] - self.X[None, :, :]  # (T, N, m)
        kp = -np.transpose(diff, (0, 2, 1)) / self.kernel.lengthscale**2 * k[:, None, :]  # (T, m, N)
        J = k @ self._K_inv
        Jp = kp @ self._K_inv
        return J, Jp

    def policy_coeffs(self) -> np.ndarray:
        """``K^-1 mu_u``, so that ``u(x) = k(x) @ coeffs`` without the O(N^2) solve."""
        return self._K_inv @ self.mu_u

    def value_coeffs(self) -> np.ndarray:
        return self._K_inv @ self.mu_v


def build(base_points, kernel: KernelParams | None = None, control_dim: int | None = None) -> GpModel:
    return GpModel(base_points, kernel or KernelParams(), control_dim)


def weights(model: GpModel, x) -> Weights:
    J, Jp = model.batch_weights(np.asarray(x, dtype=float)[None])
    return Weights(J=J[0], Jprime=Jp[0])


def predict_value(model: GpModel, x) -> float:
    return float(weights(model, x).J @ model.mu_v)


def predict_policy(model: GpModel, x) -> np.ndarray:
    return weights(model, x).J @ model.mu_u


def predict_value_grad(model: GpModel, x) -> np.ndarray:
    return weights(model, x).Jprime @ model.mu_v


def predict_batch(model: GpModel, xs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values (T,), value gradients (T, m) and policies (T, n) on a batch of states."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    k = kernel_matrix(xs, model.X, model.kernel)
    a_v = model.value_coeffs()
    a_u = model.policy_coeffs()
    values = k @ a_v
    diff = xs[:, None, :] - model.X[None, :, :]
    grads = -np.einsum("tnm,tn,n->tm", diff, k, a_v) / model.kernel.lengthscale**2
    return values, grads, k @ a_u


def apply_gradients(model: GpModel, dV, dU, eta: float) -> bool:
    """Gradient step on the means. Returns False (and leaves the model untouched) on non-finite input."""
    dV = np.asarray(dV, dtype=float)
    dU = np.asarray(dU, dtype=float)
    if dV.shape != model.mu_v.shape or dU.shape != model.mu_u.shape:
        raise ValueError(f"gradient shapes {dV.shape}, {dU.shape} do not match the model")
    if not (np.all(np.isfinite(dV)) and np.all(np.isfinite(dU)) and np.isfinite(eta)):
        return False
    model.mu_v -= eta * dV
    model.mu_u -= eta * dU
    return True
