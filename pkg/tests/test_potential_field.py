import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pfac.errors import ConfigurationError
from pfac.potential_field import (
    PotentialFieldSpec,
    attractive_potential,
    evaluate_field,
    pf_action_gradient,
    pf_action_value,
    repulsive_potential,
)

H = 1e-5


def total_potential(spec, s):
    return attractive_potential(spec, s) + repulsive_potential(spec, s)


def fd_force(spec, s, h=H):
    g = np.zeros(2)
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        g[k] = (total_potential(spec, s + e) - total_potential(spec, s - e)) / (2 * h)
    return -g


def fd_action_grad(spec, s, a, h=H):
    g = np.zeros(2)
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        g[k] = (pf_action_value(spec, s, a + e) - pf_action_value(spec, s, a - e)) / (2 * h)
    return g


def random_case(rng):
    """A field and a point kept clear of kinks: obstacle cores, the d0 shell, goal ties."""
    while True:
        spec = PotentialFieldSpec(
            xi=rng.uniform(0.1, 3.0),
            eta=rng.uniform(0.001, 0.5),
            d0=rng.uniform(0.2, 1.0),
            goal_points=rng.uniform(-1, 1, size=(rng.integers(1, 3), 2)),
            obstacle_points=rng.uniform(-1, 1, size=(rng.integers(0, 4), 2)),
        )
        s = rng.uniform(-1, 1, size=2)
        d_obs = np.linalg.norm(spec.obstacle_points - s, axis=1)
        d_goal = np.sort(np.linalg.norm(spec.goal_points - s, axis=1))
        if np.any(d_obs < 0.1) or np.any(np.abs(d_obs - spec.d0) < 1e-3):
            continue
        if len(d_goal) > 1 and d_goal[1] - d_goal[0] < 1e-3:
            continue
        if np.linalg.norm(evaluate_field(spec, s).force) < 1e-3:
            continue
        return spec, s


class TestAttractive:
    def test_half_xi_d_squared(self):
        spec = PotentialFieldSpec(xi=1.0, goal_points=[(0, 0)])
        assert attractive_potential(spec, (2, 0)) == 2.0

    def test_zero_at_goal(self):
        spec = PotentialFieldSpec(xi=3.0, goal_points=[(0.3, -0.2)])
        assert attractive_potential(spec, (0.3, -0.2)) == 0.0

    def test_nearest_goal_wins(self):
        spec = PotentialFieldSpec(xi=0.5, goal_points=[(1, 0), (5, 0)])
        assert attractive_potential(spec, (0, 0)) == pytest.approx(0.25)

    def test_nearest_goal_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            goals = rng.uniform(-2, 2, size=(4, 2))
            s = rng.uniform(-2, 2, size=2)
            spec = PotentialFieldSpec(xi=1.7, goal_points=goals)
            expected = min(0.5 * 1.7 * ((s[0] - g[0]) ** 2 + (s[1] - g[1]) ** 2) for g in goals)
            assert attractive_potential(spec, s) == pytest.approx(expected, rel=1e-12)

    def test_no_goals_is_a_configuration_error(self):
        with pytest.raises(ConfigurationError):
            attractive_potential(PotentialFieldSpec(), (0, 0))


class TestRepulsive:
    def test_zero_outside_influence(self):
        spec = PotentialFieldSpec(eta=2.0, d0=1.0, obstacle_points=[(3, 0), (0, -2)])
        assert repulsive_potential(spec, (0, 0)) == 0.0

    def test_inside_influence(self):
        spec = PotentialFieldSpec(eta=2.0, d0=1.0, obstacle_points=[(0.5, 0)])
        assert repulsive_potential(spec, (0, 0)) == pytest.approx(1.0)

    def test_clamped_at_obstacle(self):
        spec = PotentialFieldSpec(eta=2.0, d0=1.0, obstacle_points=[(0.2, 0.2)], epsilon_dist=1e-6)
        assert repulsive_potential(spec, (0.2, 0.2)) == pytest.approx(0.5 * 2.0 * (1e6 - 1.0) ** 2)

    def test_sums_over_obstacles(self):
        one = PotentialFieldSpec(eta=2.0, d0=1.0, obstacle_points=[(0.5, 0)])
        two = PotentialFieldSpec(eta=2.0, d0=1.0, obstacle_points=[(0.5, 0), (0, 0.5)])
        assert repulsive_potential(two, (0, 0)) == pytest.approx(2 * repulsive_potential(one, (0, 0)))

    @pytest.mark.parametrize("eta", [0.01, 1.0, 50.0])
    def test_continuous_at_influence_distance(self, eta):
        spec = PotentialFieldSpec(eta=eta, d0=0.4, obstacle_points=[(0, 0)])
        inside = repulsive_potential(spec, (0.4 - 1e-9, 0))
        outside = repulsive_potential(spec, (0.4 + 1e-9, 0))
        assert abs(inside - outside) <= 1e-6 * eta

    @pytest.mark.parametrize("bad", [dict(xi=0.0), dict(eta=-1.0), dict(d0=0.0), dict(epsilon_dist=0.0)])
    def test_invalid_gains_rejected(self, bad):
        with pytest.raises(ConfigurationError):
            PotentialFieldSpec(**bad)


class TestEvaluateField:
    def test_zero_at_goal(self):
        spec = PotentialFieldSpec(goal_points=[(0.1, 0.1)], obstacle_points=[(0.9, 0.9)], d0=0.3)
        ev = evaluate_field(spec, (0.1, 0.1))
        assert ev.u_total == 0.0
        assert np.array_equal(ev.force, [0.0, 0.0])

    def test_force_points_to_goal(self):
        spec = PotentialFieldSpec(xi=1.0, goal_points=[(1, 0)])
        assert np.allclose(evaluate_field(spec, (0, 0)).force, [1.0, 0.0])

    def test_total_is_sum(self):
        spec = PotentialFieldSpec(xi=0.7, eta=0.3, d0=0.8, goal_points=[(1, 1)], obstacle_points=[(0.2, 0)])
        ev = evaluate_field(spec, (0, 0))
        assert ev.u_total == ev.u_att + ev.u_rep
        assert ev.u_att == attractive_potential(spec, (0, 0))
        assert ev.u_rep == repulsive_potential(spec, (0, 0))

    def test_force_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            spec, s = random_case(rng)
            f = evaluate_field(spec, s).force
            fd = fd_force(spec, s)
            assert np.linalg.norm(f - fd) <= 1e-5 * np.linalg.norm(fd)

    def test_repulsion_pushes_away(self):
        spec = PotentialFieldSpec(xi=1e-9, eta=1.0, d0=1.0, goal_points=[(0, 0)], obstacle_points=[(0.5, 0)])
        assert evaluate_field(spec, (0.2, 0)).force[0] < 0


class TestActionValue:
    spec = PotentialFieldSpec(xi=2.0, goal_points=[(1, 2)])  # U(0,0) = 5, force = (2, 4)

    def test_parallel_is_zero(self):
        assert pf_action_value(self.spec, (0, 0), (1, 2)) == pytest.approx(0.0, abs=1e-12)

    def test_antiparallel_is_minus_two_u(self):
        assert pf_action_value(self.spec, (0, 0), (-1, -2)) == pytest.approx(-10.0)

    def test_perpendicular_is_minus_u(self):
        spec = PotentialFieldSpec(xi=1.5, goal_points=[(2, 0)])  # U = 3
        assert pf_action_value(spec, (0, 0), (0, 0.3)) == pytest.approx(-3.0)

    def test_zero_action_is_neutral(self):
        assert pf_action_value(self.spec, (0, 0), (0, 0)) == 0.0

    def test_zero_force_is_neutral(self):
        assert pf_action_value(self.spec, (1, 2), (1, 0)) == 0.0


class TestActionGradient:
    spec = PotentialFieldSpec(xi=2.0, goal_points=[(1, 2)])

    def test_parallel_is_stationary(self):
        assert np.allclose(pf_action_gradient(self.spec, (0, 0), (0.5, 1.0)), 0.0, atol=1e-12)

    def test_antiparallel_is_stationary(self):
        g = pf_action_gradient(self.spec, (0, 0), (-0.5, -1.0))
        assert np.allclose(g, 0.0, atol=1e-12)
        assert np.allclose(fd_action_grad(self.spec, np.zeros(2), np.array([-0.5, -1.0])), 0.0, atol=1e-6)

    def test_degenerate_is_zero(self):
        assert np.array_equal(pf_action_gradient(self.spec, (0, 0), (0, 0)), [0.0, 0.0])
        assert np.array_equal(pf_action_gradient(self.spec, (1, 2), (1, 0)), [0.0, 0.0])

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            spec, s = random_case(rng)
            a = rng.uniform(-1, 1, size=2)
            if np.linalg.norm(a) < 0.1:
                continue
            g = pf_action_gradient(spec, s, a)
            fd = fd_action_grad(spec, s, a)
            assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-8)


coords = st.floats(-1.0, 1.0, allow_nan=False)
point = st.tuples(coords, coords)


@settings(max_examples=200, deadline=None)
@given(goal=point, obstacle=point, s=point, a=point, eta=st.floats(0.001, 1.0), c=st.floats(1e-3, 1e3))
def test_action_value_properties(goal, obstacle, s, a, eta, c):
    spec = PotentialFieldSpec(xi=1.0, eta=eta, d0=0.5, goal_points=[goal], obstacle_points=[obstacle])
    q = pf_action_value(spec, s, a)
    assert q <= 0.0
    u = evaluate_field(spec, s).u_total
    assert q >= -2 * u - 1e-9 * max(1.0, u)
    scaled = pf_action_value(spec, s, (c * a[0], c * a[1]))
    if math.hypot(*a) > 1e-5 and c * math.hypot(*a) > 1e-5:
        assert scaled == pytest.approx(q, abs=1e-12 * max(1.0, u))


def test_best_unit_action_is_force_direction():
    rng = np.random.default_rng(2)
    angles = np.linspace(0, 2 * np.pi, 360, endpoint=False)
    for _ in range(20):
        spec, s = random_case(rng)
        f = evaluate_field(spec, s).force
        values = [pf_action_value(spec, s, (np.cos(t), np.sin(t))) for t in angles]
        best = angles[int(np.argmax(values))]
        diff = abs((best - math.atan2(f[1], f[0]) + np.pi) % (2 * np.pi) - np.pi)
        assert diff <= np.pi / 360 + 1e-12
