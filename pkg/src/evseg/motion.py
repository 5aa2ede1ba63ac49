"""Parametric 2D image-plane motion models and their estimators.

The four-parameter model assigns every pixel a constant velocity built
from translation, a scale rate and an in-plane rotation rate. A point at
x with offset r = x - center from the rotation origin moves with

    v(x) = (m_u, m_v) + (1 + m_s) * R(m_theta) * r - r        [px/s]

and its position after dt seconds is x + v(x) * dt, a straight-line
trajectory. Displacement is therefore exactly linear in dt, which keeps
the two-correspondence minimal solver linear and lets events be
transported proportionally to their temporal offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateSample(Exception):
    """Minimal sample admits no unique model (coincident points / rank loss)."""


class NonConvergence(Exception):
    """Iterative refinement stalled; `.best` carries the best model found."""

    def __init__(self, best: "FourParamMotion", cost: float):
        super().__init__(f"refinement stalled at cost {cost:.6g}")
        self.best = best
        self.cost = cost


@dataclass(frozen=True)
class FourParamMotion:
    """Translation velocity (px/s), scale rate (1/s) and rotation rate (rad/s)."""

    m_u: float = 0.0
    m_v: float = 0.0
    m_s: float = 0.0
    m_theta: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.m_u, self.m_v, self.m_s, self.m_theta])

    @classmethod
    def from_array(cls, a) -> "FourParamMotion":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class FlowMotion:
    """Pure 2D translation velocity (px/s); the m_s = m_theta = 0 restriction."""

    m_u: float = 0.0
    m_v: float = 0.0

    def to_four_param(self) -> FourParamMotion:
        return FourParamMotion(self.m_u, self.m_v, 0.0, 0.0)


@dataclass(frozen=True)
class Correspondence:
    """A feature position pair x_prev -> x_curr tracked over dt seconds."""

    x_prev: tuple[float, float]
    x_curr: tuple[float, float]
    dt: float

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("correspondence time span must be positive")


def _linear_coeffs(m: FourParamMotion) -> tuple[float, float]:
    """The (a, b) matrix entries of (1 + m_s) * R(m_theta)."""
    k = 1.0 + m.m_s
    return k * np.cos(m.m_theta), k * np.sin(m.m_theta)


def warp_points(points: np.ndarray, m: FourParamMotion | FlowMotion,
                dt, center=(0.0, 0.0)) -> np.ndarray:
    """Move (N, 2) points along the model's straight-line trajectories.

    dt may be a scalar or a per-point array of seconds; negative values
    transport backwards in time. `center` is the rotation/scale origin.
    """
    if isinstance(m, FlowMotion):
        m = m.to_four_param()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dt = np.asarray(dt, dtype=float)
    a, b = _linear_coeffs(m)
    rx = pts[:, 0] - center[0]
    ry = pts[:, 1] - center[1]
    vx = m.m_u + (a * rx - b * ry) - rx
    vy = m.m_v + (b * rx + a * ry) - ry
    out = pts.copy()
    out[:, 0] += vx * dt
    out[:, 1] += vy * dt
    return out


def warp_point(x, m: FourParamMotion | FlowMotion, dt: float,
               center=(0.0, 0.0)) -> np.ndarray:
    """Single-point convenience wrapper around warp_points."""
    return warp_points(np.asarray(x, dtype=float).reshape(1, 2), m, dt, center)[0]


def inverse_warp_points(points: np.ndarray, m: FourParamMotion | FlowMotion,
                        dt, center=(0.0, 0.0)) -> np.ndarray:
    """Material points that the warp maps onto `points` after dt seconds.

    The warp is affine in the offset from `center`; this solves the 2x2
    system per point (dt may be a per-point array).
    """
    if isinstance(m, FlowMotion):
        m = m.to_four_param()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dt = np.broadcast_to(np.asarray(dt, dtype=float), len(pts))
    a, b = _linear_coeffs(m)
    # offset' = M(dt) offset + dt * (m_u, m_v), M(dt) = I + dt*([a,-b;b,a] - I)
    m00 = 1.0 + dt * (a - 1.0)
    m01 = -dt * b
    m10 = dt * b
    m11 = 1.0 + dt * (a - 1.0)
    det = m00 * m11 - m01 * m10
    if np.any(np.abs(det) < 1e-12):
        raise ValueError("warp is singular at the requested time offset")
    qx = pts[:, 0] - center[0] - dt * m.m_u
    qy = pts[:, 1] - center[1] - dt * m.m_v
    rx = (m11 * qx - m01 * qy) / det
    ry = (-m10 * qx + m00 * qy) / det
    return np.stack([rx + center[0], ry + center[1]], axis=1)


DLT_CONDITION_LIMIT = 1e8
MIN_POINT_SEPARATION = 1e-6


def fit_minimal_dlt(pair, center=(0.0, 0.0)) -> FourParamMotion:
    """Exact four-parameter model through two correspondences.

    The warp is linear in (m_u, m_v, a, b) with a + ib the complex gain of
    the rotation/scale part, so two correspondences give a 4x4 system;
    m_s and m_theta come back out of (a, b) by polar decomposition.

    Raises DegenerateSample for coincident source points or an
    ill-conditioned system.
    """
    c0, c1 = pair
    if abs(c0.dt - c1.dt) > 1e-12 * max(c0.dt, c1.dt):
        raise ValueError("minimal pair must share the same time span")
    dt = c0.dt
    p = np.array([c0.x_prev, c1.x_prev], dtype=float)
    q = np.array([c0.x_curr, c1.x_curr], dtype=float)
    if np.hypot(*(p[0] - p[1])) < MIN_POINT_SEPARATION:
        raise DegenerateSample("source points coincide")

    rx = p[:, 0] - center[0]
    ry = p[:, 1] - center[1]
    A = np.zeros((4, 4))
    rhs = np.zeros(4)
    for i in range(2):
        A[2 * i] = (dt, 0.0, dt * rx[i], -dt * ry[i])
        A[2 * i + 1] = (0.0, dt, dt * ry[i], dt * rx[i])
        rhs[2 * i] = q[i, 0] - p[i, 0] + dt * rx[i]
        rhs[2 * i + 1] = q[i, 1] - p[i, 1] + dt * ry[i]
    if np.linalg.cond(A) > DLT_CONDITION_LIMIT:
        raise DegenerateSample("minimal system is rank-deficient")
    m_u, m_v, a, b = np.linalg.solve(A, rhs)
    return FourParamMotion(m_u, m_v, float(np.hypot(a, b)) - 1.0,
                           float(np.arctan2(b, a)))


def geometric_errors(x_prev: np.ndarray, x_curr: np.ndarray, dt,
                     m: FourParamMotion, center=(0.0, 0.0)) -> np.ndarray:
    """Reprojection residual norms for arrays of correspondences."""
    pred = warp_points(x_prev, m, dt, center)
    d = np.atleast_2d(np.asarray(x_curr, dtype=float)) - pred
    return np.hypot(d[:, 0], d[:, 1])


def geometric_error(f: Correspondence, m: FourParamMotion,
                    center=(0.0, 0.0)) -> float:
    """Euclidean distance between x_curr and the warped x_prev."""
    return float(geometric_errors(np.array([f.x_prev]), np.array([f.x_curr]),
                                  f.dt, m, center)[0])


def _residuals_jacobian(params: np.ndarray, p: np.ndarray, q: np.ndarray,
                        dt: np.ndarray, center) -> tuple[np.ndarray, np.ndarray]:
    """Stacked (2N,) residuals q - W(p) and their (2N, 4) Jacobian."""
    m_u, m_v, m_s, m_th = params
    k = 1.0 + m_s
    ct, st = np.cos(m_th), np.sin(m_th)
    a, b = k * ct, k * st
    rx = p[:, 0] - center[0]
    ry = p[:, 1] - center[1]
    wx = p[:, 0] + dt * (m_u + a * rx - b * ry - rx)
    wy = p[:, 1] + dt * (m_v + b * rx + a * ry - ry)
    res = np.empty(2 * len(p))
    res[0::2] = q[:, 0] - wx
    res[1::2] = q[:, 1] - wy
    J = np.zeros((2 * len(p), 4))
    J[0::2, 0] = -dt
    J[1::2, 1] = -dt
    J[0::2, 2] = -dt * (ct * rx - st * ry)
    J[1::2, 2] = -dt * (st * rx + ct * ry)
    J[0::2, 3] = -dt * (-b * rx - a * ry)
    J[1::2, 3] = -dt * (a * rx - b * ry)
    return res, J


def refine_model_geometric(m0: FourParamMotion, inliers,
                           center=(0.0, 0.0)) -> FourParamMotion:
    """Levenberg-damped least squares over the summed squared residuals.

    Starts at m0 and never returns a model with larger cost. Raises
    NonConvergence (carrying the best model) only if the cost stops
    improving while the step size is still significant.
    """
    inliers = list(inliers)
    if len(inliers) < 2:
        raise ValueError("refinement needs at least two correspondences")
    p = np.array([c.x_prev for c in inliers], dtype=float)
    q = np.array([c.x_curr for c in inliers], dtype=float)
    dt = np.array([c.dt for c in inliers], dtype=float)

    params = m0.as_array()
    res, J = _residuals_jacobian(params, p, q, dt, center)
    cost = float(res @ res)
    lam = 1e-3
    rejects = 0
    for _ in range(200):
        g = J.T @ res
        H = J.T @ J
        try:
            step = np.linalg.solve(H + lam * np.diag(np.maximum(np.diag(H), 1e-12)),
                                   -g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        if np.linalg.norm(step) < 1e-12:
            break
        trial = params + step
        t_res, t_J = _residuals_jacobian(trial, p, q, dt, center)
        t_cost = float(t_res @ t_res)
        if t_cost < cost:
            improved = cost - t_cost
            params, res, J, cost = trial, t_res, t_J, t_cost
            lam = max(lam / 3.0, 1e-12)
            rejects = 0
            if improved < 1e-14 * (1.0 + cost):
                break
        else:
            lam *= 4.0
            rejects += 1
            if rejects >= 20:
                raise NonConvergence(FourParamMotion.from_array(params), cost)
    return FourParamMotion.from_array(params)


def endpoint_displacement_error(m_a: FourParamMotion, m_b: FourParamMotion,
                                points: np.ndarray, dt: float,
                                center=(0.0, 0.0)) -> float:
    """Mean distance between the two models' warps of the given points."""
    pa = warp_points(points, m_a, dt, center)
    pb = warp_points(points, m_b, dt, center)
    d = pa - pb
    return float(np.mean(np.hypot(d[:, 0], d[:, 1])))
