"""Gradients of the weighted-Kabsch pose with respect to weights and points.

The composite map is centroids -> cross-covariance ``H`` -> SVD -> ``(R, T)``.
Backpropagation through the SVD uses the usual skew-symmetric perturbation of
the singular vectors, ``dU = U Omega_U`` and ``dV = V Omega_V``, whose
entries carry the ``1 / (s_j^2 - s_i^2)`` factors. For ``R = V D U^T`` those
factors partially cancel:

* pairs with equal reflection signs ``D_i == D_j`` only divide by
  ``s_i + s_j``, which is bounded away from zero once ``rank(H) >= 2``;
* pairs split by the reflection term divide by ``s_i - s_j``, so nearly equal
  singular values there make ``R`` non-differentiable and raise
  :class:`DegenerateGradientError`.

The sign ``d = det(V U^T)`` is treated as locally constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import DegenerateGradientError
from .geometry import (
    CorrespondenceSet,
    KabschSolution,
    Pose,
    axis_angle,
    random_rotation,
    solve_kabsch,
)
from .objectives import l_pose, l_pose_grad

SVD_SEPARATION = 1e-8


class KabschGradients(NamedTuple):
    weights: np.ndarray  # (N,)
    camera_points: np.ndarray  # (N, 3)
    scene_points: np.ndarray  # (N, 3)


@dataclass(frozen=True)
class PoseJacobians:
    d_rotation_d_weight: np.ndarray  # (N, 9), row-major R entries
    d_translation_d_weight: np.ndarray  # (N, 3)


@dataclass(frozen=True)
class GradCheckReport:
    max_relative_error: float
    worst_parameter_index: int
    analytic: float
    numeric: float
    n_points: int
    n_checked: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_relative_error <= tol


def _rotation_jacobian(sol: KabschSolution) -> np.ndarray:
    """``J[k, l, m, n] = dR[m, n] / dH[k, l]``."""
    u, s, v = sol.u, sol.s, sol.v
    diag = np.array([1.0, 1.0, sol.d])
    same = diag[:, None] == diag[None, :]
    scale = s[0] + 1e-300
    denom = np.where(same, s[:, None] + s[None, :], s[:, None] - s[None, :])
    off = ~np.eye(3, dtype=bool)
    if np.any(off & ~same & (np.abs(denom) <= SVD_SEPARATION * scale)):
        raise DegenerateGradientError(
            f"singular values {s.tolist()} too close for a reflected rotation derivative"
        )
    inv = np.zeros((3, 3))
    inv[off] = 1.0 / denom[off]

    # P[k, l] = U^T E_kl V  ->  P[k, l, i, j] = U[k, i] V[l, j]
    p = np.einsum("ki,lj->klij", u, v)
    pt = p.transpose(0, 1, 3, 2)
    q = np.where(same, pt - p, p + pt) * (diag[:, None] * inv)
    return np.einsum("mi,klij,nj->klmn", v, q, u)


def kabsch_vjp(
    c: CorrespondenceSet,
    grad_rotation,
    grad_translation,
    solution: KabschSolution | None = None,
) -> KabschGradients:
    """Pull a gradient on ``(R, T)`` back to weights and both point sets."""
    sol = solve_kabsch(c) if solution is None else solution
    g_r = np.asarray(grad_rotation, dtype=np.float64).reshape(3, 3)
    g_t = np.asarray(grad_translation, dtype=np.float64).reshape(3)

    # T = mu_b - R mu_a
    g_r = g_r - np.outer(g_t, sol.mu_a)
    g_mu_a = -sol.rotation.T @ g_t
    g_mu_b = g_t

    g_h = np.einsum("klmn,mn->kl", _rotation_jacobian(sol), g_r)

    w = c.weights
    a_bar = c.camera_points - sol.mu_a
    b_bar = c.scene_points - sol.mu_b
    # centroid shifts drop out of H because sum_i w_i a_bar_i = 0
    g_w = (
        np.einsum("ik,kl,il->i", a_bar, g_h, b_bar)
        + (a_bar @ g_mu_a + b_bar @ g_mu_b) / sol.weight_sum
    )
    g_a = w[:, None] * (b_bar @ g_h.T) + np.outer(w / sol.weight_sum, g_mu_a)
    g_b = w[:, None] * (a_bar @ g_h) + np.outer(w / sol.weight_sum, g_mu_b)
    return KabschGradients(g_w, g_a, g_b)


def pose_jacobians(c: CorrespondenceSet) -> PoseJacobians:
    sol = solve_kabsch(c)
    d_rot = np.empty((len(c), 9))
    d_trans = np.empty((len(c), 3))
    zeros9, zeros3 = np.zeros(9), np.zeros(3)
    for k in range(9):
        e = zeros9.copy()
        e[k] = 1.0
        d_rot[:, k] = kabsch_vjp(c, e, zeros3, sol).weights
    for k in range(3):
        e = zeros3.copy()
        e[k] = 1.0
        d_trans[:, k] = kabsch_vjp(c, zeros9, e, sol).weights
    return PoseJacobians(d_rot, d_trans)


def l_pose_value_and_grad(c: CorrespondenceSet, gt: Pose) -> tuple[float, KabschGradients]:
    """``L_pose`` of the weighted-Kabsch estimate and its gradient."""
    sol = solve_kabsch(c)
    est = Pose(sol.rotation, sol.translation)
    g_r, g_t = l_pose_grad(est, gt)
    return l_pose(est, gt), kabsch_vjp(c, g_r, g_t, sol)


def finite_diff_gradient(
    f: Callable[[np.ndarray], float],
    x,
    h: float = 1e-5,
    indices=None,
    lower_bounds=None,
) -> np.ndarray:
    """Central-difference gradient of ``f`` at ``x``.

    Only ``indices`` are evaluated (others are left at 0). Coordinates closer
    than ``h`` to their entry in ``lower_bounds`` use the second-order
    one-sided stencil ``(-3 f(x) + 4 f(x + h) - f(x + 2h)) / 2h`` instead.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    idx = range(x.size) if indices is None else indices
    f0 = None
    for i in idx:
        xi = x[i]
        one_sided = lower_bounds is not None and xi - h < lower_bounds[i]
        x[i] = xi + h
        fp = _finite(f(x))
        if one_sided:
            if f0 is None:
                x[i] = xi
                f0 = _finite(f(x))
            x[i] = xi + 2 * h
            fpp = _finite(f(x))
            grad[i] = (-3.0 * f0 + 4.0 * fp - fpp) / (2.0 * h)
        else:
            x[i] = xi - h
            grad[i] = (fp - _finite(f(x))) / (2.0 * h)
        x[i] = xi
    return grad


def _finite(value) -> float:
    value = float(value)
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite function value {value}")
    return value


def random_target(pose: Pose, rng: np.random.Generator) -> Pose:
    """A target pose roughly 10-30 degrees and 0.1-0.5 m away from ``pose``."""
    axis = rng.standard_normal(3)
    rot = axis_angle(axis, np.radians(rng.uniform(10.0, 30.0))) @ pose.rotation
    step = rng.standard_normal(3)
    step *= rng.uniform(0.1, 0.5) / np.linalg.norm(step)
    return Pose(rot, pose.translation + step)


def grad_check(
    c: CorrespondenceSet,
    seed: int,
    h: float = 1e-5,
    max_params: int | None = 256,
) -> GradCheckReport:
    """Compare :func:`kabsch_vjp` with finite differences of ``L_pose``.

    The loss is ``L_pose`` against a random target pose. At most
    ``max_params`` parameters (weights and point coordinates together) are
    differenced, chosen at random; the error is measured relative to the
    largest gradient entry among them.
    """
    rng = np.random.default_rng(seed)
    n = len(c)
    sol = solve_kabsch(c)
    target = random_target(Pose(sol.rotation, sol.translation), rng)
    _, grads = l_pose_value_and_grad(c, target)
    analytic = np.concatenate([grads.weights, grads.camera_points.ravel(), grads.scene_points.ravel()])
    x0 = np.concatenate([c.weights, c.camera_points.ravel(), c.scene_points.ravel()])

    def loss(x):
        cs = CorrespondenceSet(x[n : 4 * n].reshape(n, 3), x[4 * n :].reshape(n, 3), x[:n])
        s = solve_kabsch(cs)
        return l_pose(Pose(s.rotation, s.translation), target)

    if max_params is None or x0.size <= max_params:
        idx = np.arange(x0.size)
    else:
        # always cover some weights, including any sitting at the boundary
        n_w = min(n, max_params // 2)
        boundary = np.flatnonzero(c.weights < h)
        others = rng.permutation(np.setdiff1d(np.arange(n), boundary))
        w_idx = np.concatenate([boundary, others])[:n_w]
        p_idx = n + rng.choice(6 * n, size=max_params - n_w, replace=False)
        idx = np.sort(np.concatenate([w_idx, p_idx]))
    lower = np.full(x0.size, -np.inf)
    lower[:n] = 0.0
    numeric = finite_diff_gradient(loss, x0, h, indices=idx, lower_bounds=lower)

    a, nm = analytic[idx], numeric[idx]
    scale = max(np.max(np.abs(a)), np.max(np.abs(nm)))
    diff = np.abs(a - nm)
    worst = int(np.argmax(diff))
    rel = float(diff[worst] / scale) if scale > 0 else 0.0
    return GradCheckReport(rel, int(idx[worst]), float(a[worst]), float(nm[worst]), n, len(idx))


def random_instance(
    rng: np.random.Generator,
    n: int,
    noise: float = 0.0,
    zero_weights: int = 0,
) -> CorrespondenceSet:
    """Random correspondences under a random rigid motion.

    Camera points are Gaussian with 1 m spread about a point 2-4 m in front of
    the camera; weights are uniform in (0, 1] apart from ``zero_weights``
    entries set exactly to 0.
    """
    a = rng.standard_normal((n, 3)) + np.array([0.0, 0.0, rng.uniform(2.0, 4.0)])
    pose = Pose(random_rotation(rng), rng.uniform(-2.0, 2.0, size=3))
    b = a @ pose.rotation.T + pose.translation + noise * rng.standard_normal((n, 3))
    w = 1.0 - rng.random(n)
    if zero_weights:
        w[rng.choice(n, size=zero_weights, replace=False)] = 0.0
    return CorrespondenceSet(a, b, w)
