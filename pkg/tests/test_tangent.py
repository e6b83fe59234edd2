"""
Tests for the linearized billiard flow
"""

import unittest

import numpy as np

from hardball.core.dynamics import StopCondition, simulate
from hardball.core.errors import GrazingJacobian, PreconditionError, SingularityError
from hardball.core.model import PhasePoint, sample_liouville
from hardball.core.neutral import neutral_space
from hardball.core.tangent import (
    TangentVector,
    ball_jacobian,
    free_flight_matrix,
    propagate_tangent,
    push_tangent_free,
    push_tangent_wall,
    reflection_blocks,
    wall_jacobian,
)
from tests.helpers import S, box_params, corridor


def offset_head_on() -> PhasePoint:
    """Oblique contact near t = 0.146, well before any wall"""
    return PhasePoint(q1=[0.3, 0.5], q2=[0.7, 0.55], v1=[S, 0.0], v2=[-S, 0.0])


def perturbed(x: PhasePoint, w: np.ndarray, eps: float) -> PhasePoint:
    v = x.as_vector() + eps * w
    nu = x.nu
    return PhasePoint.from_arrays(v[:nu], v[nu:2 * nu], v[2 * nu:3 * nu], v[3 * nu:])


class TestTangentVector(unittest.TestCase):
    """Test tangent vector construction"""

    def test_from_vector(self):
        """Test splitting a flat vector into its four parts"""
        w = TangentVector.from_vector(np.arange(8.0))
        np.testing.assert_array_equal(w.dq2, [2.0, 3.0])
        np.testing.assert_array_equal(w.as_vector(), np.arange(8.0))

    def test_rejects_non_finite(self):
        """Test that NaN components are refused"""
        with self.assertRaises(ValueError):
            TangentVector(dq1=[np.nan, 0.0], dq2=[0.0, 0.0], dv1=[0.0, 0.0], dv2=[0.0, 0.0])

    def test_free_and_wall(self):
        """Test the free-flight shear and the wall sign flip"""
        w = TangentVector(dq1=[1.0, 0.0], dq2=[0.0, 0.0], dv1=[1.0, 2.0], dv2=[0.0, -1.0])
        moved = push_tangent_free(w, 0.5)
        np.testing.assert_allclose(moved.dq1, [1.5, 1.0])
        np.testing.assert_allclose(moved.dq2, [0.0, -0.5])
        flipped = push_tangent_wall(w, 1, 2)
        np.testing.assert_allclose(flipped.dv1, [1.0, -2.0])
        np.testing.assert_allclose(flipped.dv2, w.dv2)

    def test_matrices(self):
        """Test that wall Jacobians are involutions and shears compose"""
        J = wall_jacobian(3, 2, 1)
        np.testing.assert_array_equal(J @ J, np.eye(12))
        np.testing.assert_allclose(free_flight_matrix(2, 0.3) @ free_flight_matrix(2, 0.2), free_flight_matrix(2, 0.5))


class TestReflectionBlocks(unittest.TestCase):
    """Test the (R, K) pair of a curved reflection"""

    def test_velocity_in_kernel(self):
        """Test that K annihilates the incoming velocity"""
        n = np.array([-1.0, 0.0])
        V = np.array([0.8, 0.6])
        R, K = reflection_blocks(n, V, 0.2)
        np.testing.assert_allclose(K @ V, 0.0, atol=1e-12)
        np.testing.assert_allclose(R @ R, np.eye(2), atol=1e-15)

    def test_grazing(self):
        """Test refusal at a tangential contact"""
        with self.assertRaises(GrazingJacobian):
            reflection_blocks(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.2)


class TestPropagation(unittest.TestCase):
    """Test tangent propagation along recorded segments"""

    def setUp(self):
        """Set up test fixtures"""
        self.params = box_params()

    def test_flow_direction_maps_to_flow_direction(self):
        """Test that the ball Jacobian carries (v, 0) to (v', 0)"""
        seg = simulate(offset_head_on(), StopCondition(n_ball_collisions=1), self.params)
        event = seg.events[-1]
        w = np.concatenate([event.v1_pre, event.v2_pre, np.zeros(4)])
        np.testing.assert_allclose(ball_jacobian(event, self.params) @ w,
                                   np.concatenate([event.v1_post, event.v2_post, np.zeros(4)]), atol=1e-12)

    def test_ball_jacobian_needs_ball_event(self):
        """Test refusal on a wall event"""
        seg = simulate(corridor(), StopCondition(n_ball_collisions=2), self.params)
        with self.assertRaises(PreconditionError):
            ball_jacobian(seg.events[1], self.params)

    def test_finite_difference(self):
        """Test the propagated frame against central differences across a ball collision"""
        x0 = offset_head_on()
        seg = simulate(x0, StopCondition(t_max=0.4), self.params)
        self.assertEqual([e.kind for e in seg.events], ["ball"])
        eps = 1e-6
        directions = np.array([
            [0.3, 1.0, -0.2, 0.5, 0.1, 0.2, 0.3, -0.1],
            [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ]).T
        J = propagate_tangent(seg, directions)
        for m in range(directions.shape[1]):
            w = directions[:, m]
            plus = simulate(perturbed(x0, w, eps), StopCondition(t_max=0.4), self.params, validate_initial=False)
            minus = simulate(perturbed(x0, w, -eps), StopCondition(t_max=0.4), self.params, validate_initial=False)
            estimate = (plus.final.as_vector() - minus.final.as_vector()) / (2 * eps)
            np.testing.assert_allclose(J[:, m], estimate, atol=1e-5)

    def test_free_flight_only(self):
        """Test that a window without events is a pure shear"""
        seg = simulate(offset_head_on(), StopCondition(t_max=0.4), self.params)
        w = np.array([0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
        out = propagate_tangent(seg, w, 0.0, 0.1)
        np.testing.assert_allclose(out, [0.1, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
        with self.assertRaises(PreconditionError):
            propagate_tangent(seg, w, 0.3, 0.2)

    def test_wall_crossing_matches_finite_difference(self):
        """Test propagation through wall events of the corridor orbit"""
        x0 = corridor()
        seg = simulate(x0, StopCondition(t_max=1.0), self.params)
        w = np.array([0.0, 1.0, 0.0, -1.0, 0.0, 0.1, 0.0, -0.1])
        eps = 1e-7
        plus_seg = simulate(perturbed(x0, w, eps), StopCondition(t_max=1.0), self.params, validate_initial=False)
        minus_seg = simulate(perturbed(x0, w, -eps), StopCondition(t_max=1.0), self.params, validate_initial=False)
        estimate = (plus_seg.final.as_vector() - minus_seg.final.as_vector()) / (2 * eps)
        np.testing.assert_allclose(propagate_tangent(seg, w), estimate, atol=1e-5)

    def test_first_order_convergence(self):
        """Test that forward differences approach J w at first order in eps"""
        x0 = offset_head_on()
        seg = simulate(x0, StopCondition(t_max=0.4), self.params)
        w = np.array([0.3, 1.0, -0.2, 0.5, 0.1, 0.2, 0.3, -0.1])
        Jw = propagate_tangent(seg, w)
        base = seg.final.as_vector()
        errors = []
        for eps in (1e-4, 1e-5, 1e-6):
            moved = simulate(perturbed(x0, w, eps), StopCondition(t_max=0.4), self.params, validate_initial=False)
            errors.append(np.linalg.norm((moved.final.as_vector() - base) / eps - Jw))
        self.assertLess(errors[1], errors[0])
        self.assertLess(errors[2], errors[1])
        order = np.log10(errors[0] / errors[2]) / 2
        self.assertGreater(order, 0.8)
        self.assertLess(order, 1.2)

    def test_linearity(self):
        """Test that propagation is linear in the tangent vector"""
        seg = simulate(corridor(), StopCondition(t_max=1.4), self.params)
        self.assertEqual(seg.n_ball_collisions, 2)
        rng = np.random.default_rng(3)
        u, w = rng.standard_normal(8), rng.standard_normal(8)
        a, b = 1.7, -0.4
        combined = propagate_tangent(seg, a * u + b * w)
        separate = a * propagate_tangent(seg, u) + b * propagate_tangent(seg, w)
        np.testing.assert_allclose(combined, separate, rtol=1e-12, atol=1e-12 * np.linalg.norm(separate))


class TestSampledPropagation(unittest.TestCase):
    """Test propagation against finite differences on sampled orbits"""

    def setUp(self):
        """Set up test fixtures"""
        self.params = box_params()
        self.t_max = 1.5

    def test_random_segments(self):
        """Test random (segment, direction) pairs crossing wall and ball events"""
        rng = np.random.default_rng(17)
        eps = 1e-6
        checked = 0
        kinds = {"wall": 0, "ball": 0}
        for seed in range(100):
            w = rng.standard_normal(8)
            w /= np.linalg.norm(w)
            x0 = sample_liouville(self.params, seed)
            try:
                seg = simulate(x0, StopCondition(t_max=self.t_max), self.params)
            except SingularityError:
                continue
            times = [seg.t_start] + seg.event_times + [seg.t_end]
            if not seg.events or np.min(np.diff(times)) < 1e-3:
                continue
            if any(e.is_ball and abs((e.v1_pre - e.v2_pre) @ e.normal) < 0.05 for e in seg.events):
                continue
            try:
                plus = simulate(perturbed(x0, w, eps), StopCondition(t_max=self.t_max), self.params,
                                validate_initial=False)
                minus = simulate(perturbed(x0, w, -eps), StopCondition(t_max=self.t_max), self.params,
                                 validate_initial=False)
            except SingularityError:
                continue
            order = [e.kind for e in seg.events]
            if [e.kind for e in plus.events] != order or [e.kind for e in minus.events] != order:
                continue
            Jw = propagate_tangent(seg, w)
            estimate = (plus.final.as_vector() - minus.final.as_vector()) / (2 * eps)
            np.testing.assert_allclose(estimate, Jw, atol=1e-4 * max(1.0, np.linalg.norm(Jw)))
            checked += 1
            for kind in order:
                kinds[kind] += 1
        self.assertGreaterEqual(checked, 50)
        self.assertGreater(kinds["wall"], 0)
        self.assertGreater(kinds["ball"], 0)


class TestNeutralDirections(unittest.TestCase):
    """Test that neutral vectors leave the final velocities unchanged to first order"""

    def setUp(self):
        """Set up test fixtures"""
        self.params = box_params()

    def velocity_change(self, seg, x0, w, eps):
        moved = simulate(perturbed(x0, w, eps), StopCondition(t_max=seg.t_end), self.params, validate_initial=False)
        nu = self.params.nu
        return np.linalg.norm(moved.final.as_vector()[2 * nu:] - seg.final.as_vector()[2 * nu:])

    def test_second_order_velocity_change(self):
        """Test that dv shrinks quadratically along N and linearly off it"""
        x0 = offset_head_on()
        seg = simulate(x0, StopCondition(t_max=0.4), self.params)
        report = neutral_space(seg)
        self.assertEqual(report.dimension, 3)
        for b in report.basis:
            w = np.array(b)
            np.testing.assert_allclose(propagate_tangent(seg, w)[4:], 0.0, atol=1e-9)
            coarse = self.velocity_change(seg, x0, w, 1e-4)
            fine = self.velocity_change(seg, x0, w, 1e-5)
            self.assertLess(fine, 0.03 * coarse + 1e-11)
        generic = np.array([0.3, 1.0, -0.2, 0.5, 0.0, 0.0, 0.0, 0.0])
        coarse = self.velocity_change(seg, x0, generic, 1e-4)
        fine = self.velocity_change(seg, x0, generic, 1e-5)
        self.assertGreater(fine, 0.05 * coarse)


if __name__ == "__main__":
    unittest.main()
