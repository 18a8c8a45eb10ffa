"""Artificial potential field and the field-based action value.

Attraction is quadratic in the distance to the nearest goal point; repulsion
is the classic inverse-distance barrier, summed over every obstacle inside
the influence distance ``d0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pfac.errors import ConfigurationError

DEFAULT_EPSILON_DIST = 1e-6


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 2))
    arr = arr.reshape(-1, 2)
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError("field points must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class PotentialFieldSpec:
    """Goals, obstacles and gains of one potential field."""

    xi: float = 1.0
    eta: float = 0.01
    d0: float = 0.3
    goal_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    obstacle_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    epsilon_dist: float = DEFAULT_EPSILON_DIST

    def __post_init__(self):
        for name in ("xi", "eta", "d0", "epsilon_dist"):
            value = float(getattr(self, name))
            if not (np.isfinite(value) and value > 0):
                raise ConfigurationError(f"{name} must be positive, got {value!r}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "goal_points", _as_points(self.goal_points))
        object.__setattr__(self, "obstacle_points", _as_points(self.obstacle_points))

    def scaled(self, c: float) -> "PotentialFieldSpec":
        """Same geometry with both gains multiplied by ``c``."""
        return PotentialFieldSpec(
            xi=self.xi * c,
            eta=self.eta * c,
            d0=self.d0,
            goal_points=self.goal_points,
            obstacle_points=self.obstacle_points,
            epsilon_dist=self.epsilon_dist,
        )

    def to_dict(self) -> dict:
        return {
            "xi": self.xi,
            "eta": self.eta,
            "d0": self.d0,
            "epsilon_dist": self.epsilon_dist,
            "goal_points": self.goal_points.tolist(),
            "obstacle_points": self.obstacle_points.tolist(),
        }


@dataclass(frozen=True)
class FieldEvaluation:
    u_att: float
    u_rep: float
    u_total: float
    force: np.ndarray


def _position(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64).reshape(2)
    if not np.all(np.isfinite(s)):
        raise ValueError("position must be finite")
    return s


def _nearest_goal(spec: PotentialFieldSpec, s: np.ndarray) -> np.ndarray:
    if len(spec.goal_points) == 0:
        raise ConfigurationError("attractive potential needs at least one goal point")
    d2 = np.sum((spec.goal_points - s) ** 2, axis=1)
    return spec.goal_points[int(np.argmin(d2))]


def attractive_potential(spec: PotentialFieldSpec, s) -> float:
    s = _position(s)
    diff = s - _nearest_goal(spec, s)
    return 0.5 * spec.xi * float(diff @ diff)


def _repulsion(spec: PotentialFieldSpec, s: np.ndarray) -> tuple[float, np.ndarray]:
    if len(spec.obstacle_points) == 0:
        return 0.0, np.zeros(2)
    rel = s - spec.obstacle_points
    raw = np.sqrt(np.sum(rel**2, axis=1))
    d = np.maximum(raw, spec.epsilon_dist)
    inside = d <= spec.d0
    gap = np.where(inside, 1.0 / d - 1.0 / spec.d0, 0.0)
    u = 0.5 * spec.eta * float(np.sum(gap**2))
    # the clamped region has a flat potential, so it contributes no force
    active = inside & (raw >= spec.epsilon_dist)
    safe_raw = np.where(active, raw, 1.0)
    mag = np.where(active, spec.eta * gap / (d**2 * safe_raw), 0.0)
    return u, np.sum(mag[:, None] * rel, axis=0)


def repulsive_potential(spec: PotentialFieldSpec, s) -> float:
    return _repulsion(spec, _position(s))[0]


def evaluate_field(spec: PotentialFieldSpec, s) -> FieldEvaluation:
    """Potentials at ``s`` and the overall force ``-grad U``."""
    s = _position(s)
    if len(spec.goal_points):
        diff = _nearest_goal(spec, s) - s
        u_att = 0.5 * spec.xi * float(diff @ diff)
        force = spec.xi * diff
    else:
        u_att = 0.0
        force = np.zeros(2)
    u_rep, f_rep = _repulsion(spec, s)
    return FieldEvaluation(u_att=u_att, u_rep=u_rep, u_total=u_att + u_rep, force=force + f_rep)


def action_value_from_field(u_total, force, a, epsilon_dist=DEFAULT_EPSILON_DIST):
    """Field action value ``-U (1 - cos chi)`` for one or many (U, f, a) rows."""
    u = np.asarray(u_total, dtype=np.float64)
    f = np.asarray(force, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    fn = np.linalg.norm(f, axis=-1)
    an = np.linalg.norm(a, axis=-1)
    ok = (fn > epsilon_dist) & (an > epsilon_dist)
    denom = np.where(ok, fn * an, 1.0)
    cos = np.where(ok, np.sum(f * a, axis=-1) / denom, 1.0)
    cos = np.clip(cos, -1.0, 1.0)
    return -u * (1.0 - cos)


def action_gradient_from_field(u_total, force, a, epsilon_dist=DEFAULT_EPSILON_DIST):
    """Gradient in ``a`` of :func:`action_value_from_field`, row-wise.

    Degenerate rows (near-zero action or force) get a zero gradient.
    """
    u = np.asarray(u_total, dtype=np.float64)
    f = np.asarray(force, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    eps = np.expand_dims(np.asarray(epsilon_dist, dtype=np.float64), -1)
    fn = np.linalg.norm(f, axis=-1, keepdims=True)
    an = np.linalg.norm(a, axis=-1, keepdims=True)
    ok = (fn > eps) & (an > eps)
    fn = np.where(ok, fn, 1.0)
    an = np.where(ok, an, 1.0)
    fa = np.sum(f * a, axis=-1, keepdims=True)
    grad = np.expand_dims(u, -1) * (f / (fn * an) - fa * a / (fn * an**3))
    return np.where(ok, grad, 0.0)


def pf_action_value(spec: PotentialFieldSpec, s, a) -> float:
    ev = evaluate_field(spec, s)
    return float(action_value_from_field(ev.u_total, ev.force, a, spec.epsilon_dist))


def pf_action_gradient(spec: PotentialFieldSpec, s, a) -> np.ndarray:
    ev = evaluate_field(spec, s)
    a = np.asarray(a, dtype=np.float64).reshape(2)
    return action_gradient_from_field(ev.u_total, ev.force, a, spec.epsilon_dist)
