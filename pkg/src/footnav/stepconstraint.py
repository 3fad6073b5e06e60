"""Inter-foot distance bound as a smooth penalty.

The feet cannot be farther apart than a body-geometry bound d. The surplus
delta = ||p1 - p2|| - d is pushed through a softplus-style smooth maximum

    softmax_penalty(delta, alpha) = log(1 + exp(alpha * delta)) / alpha

which upper-bounds max(0, delta), is everywhere differentiable, and
approaches the hard hinge as alpha grows. Scaled by a weight lambda it joins
the smoothing cost directly; for least-squares solvers the scalar cost is
carried as the square-root residual sqrt(lambda * softmax + eps_cost).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .states import ERROR_DIM, JOINT_ERROR_DIM, POS, JointState

EPS_COST = 1e-12  # keeps d/dx sqrt(cost) finite when the penalty vanishes


@dataclass(frozen=True)
class DistanceConstraint:
    d: float = 0.8  # maximum inter-foot distance, m
    alpha: float = 50.0  # sharpness of the smooth hinge
    lam: float = 100.0  # penalty weight
    eps_norm: float = 1e-9  # guard for the gradient at coincident feet

    def __post_init__(self):
        if self.d <= 0 or self.alpha <= 0 or self.eps_norm <= 0:
            raise ValueError("d, alpha, eps_norm must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")


def delta_d(p1: np.ndarray, p2: np.ndarray, d: float) -> float:
    """Signed surplus of the inter-foot distance over the bound."""
    return float(np.linalg.norm(np.asarray(p1, dtype=float) - np.asarray(p2, dtype=float)) - d)


def softmax_penalty(delta: float, alpha: float) -> float:
    """log(1 + exp(alpha*delta))/alpha in the overflow-free form."""
    z = alpha * delta
    return max(delta, 0.0) + np.log1p(np.exp(-abs(z))) / alpha


def softmax_slope(delta: float, alpha: float) -> float:
    """d softmax_penalty / d delta = logistic(alpha * delta)."""
    z = alpha * delta
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


def penalty_factor(x: JointState, c: DistanceConstraint):
    """Scalar penalty cost with its 30-dim gradient and Gauss-Newton Hessian.

    cost = lam * softmax_penalty(||p1 - p2|| - d). Only the two position
    blocks of the joint error state receive gradient; the Hessian is the
    rank-one surrogate J^T J of the square-root residual
    r = sqrt(cost + EPS_COST), which is what the least-squares solver sees.
    """
    diff = x.s1.p - x.s2.p
    dist = np.linalg.norm(diff)
    delta = dist - c.d
    cost = c.lam * softmax_penalty(delta, c.alpha)

    grad = np.zeros(JOINT_ERROR_DIM)
    hess = np.zeros((JOINT_ERROR_DIM, JOINT_ERROR_DIM))
    if c.lam == 0.0:
        return 0.0, grad, hess

    u = diff / max(dist, c.eps_norm)  # d delta / d p1 (= -d delta / d p2)
    dcost_ddelta = c.lam * softmax_slope(delta, c.alpha)
    grad[POS] = dcost_ddelta * u
    grad[ERROR_DIM + POS.start : ERROR_DIM + POS.stop] = -dcost_ddelta * u

    r = np.sqrt(cost + EPS_COST)
    J = grad / (2.0 * r)  # d r / d x, so that d(r^2)/dx = 2 r J = grad
    hess = np.outer(J, J)
    return float(cost), grad, hess


def penalty_sqrt_residual(x: JointState, c: DistanceConstraint):
    """(r, J) form for least-squares engines: r^2 = cost + EPS_COST."""
    cost, grad, _ = penalty_factor(x, c)
    r = np.sqrt(cost + EPS_COST)
    J = grad / (2.0 * r)
    return np.array([r]), J.reshape(1, JOINT_ERROR_DIM)
