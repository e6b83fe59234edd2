"""
Tests for the pair dynamics on the torus and its Sinai product decomposition
"""

import unittest

import numpy as np

from hardball.core.dynamics import StopCondition
from hardball.core.errors import PreconditionError, SingularityError, StreamMismatch
from hardball.core.model import sample_liouville
from hardball.core.product import (
    SinaiBilliard,
    XYState,
    check_product_decomposition,
    from_xy,
    lift_to_pair,
    pair_to_xy,
    simulate_pair,
    simulate_product,
    to_xy,
)
from tests.helpers import SLOW, S, box_params, head_on


class TestCoordinates(unittest.TestCase):
    """Test the covering coordinates"""

    def test_to_xy(self):
        """Test x = (p1 + p2)/2 and y = (p1 - p2)/2"""
        z = to_xy([0.5, 0.5], [0.1, 0.3], [0.2, 0.0], [0.0, 0.4])
        np.testing.assert_allclose(z.x, [0.3, 0.4])
        np.testing.assert_allclose(z.y, [0.2, 0.1])
        np.testing.assert_allclose(z.xdot, [0.1, 0.2])
        np.testing.assert_allclose(z.ydot, [0.1, -0.2])

    def test_inverse(self):
        """Test that from_xy recovers the pair"""
        pair = from_xy(to_xy([0.5, 0.5], [0.1, 0.3], [0.2, 0.0], [0.0, 0.4]))
        np.testing.assert_allclose(pair.q1, [0.5, 0.5])
        np.testing.assert_allclose(pair.q2, [0.1, 0.3])
        np.testing.assert_allclose(pair.v1, [0.2, 0.0])

    def test_lift_to_pair(self):
        """Test halving and the k = nu requirement"""
        pair, rho = lift_to_pair(head_on(), box_params())
        np.testing.assert_allclose(pair.q1, [0.15, 0.25])
        np.testing.assert_allclose(pair.v2, [-S / 2, 0.0])
        self.assertAlmostEqual(rho, 0.05)
        with self.assertRaises(PreconditionError):
            lift_to_pair(head_on(), box_params(k=1))


class TestSinaiBilliard(unittest.TestCase):
    """Test a single Sinai subsystem"""

    def test_radius_range(self):
        """Test that the scatterer radius must lie in (0, 1/4)"""
        with self.assertRaises(PreconditionError):
            SinaiBilliard(2, 0.3)

    def test_head_on_scatterer(self):
        """Test the first reflection of y for the head-on pair"""
        system = SinaiBilliard(2, 0.05)
        events, position, velocity = system.run([0.9, 0.0], [S / 2, 0.0], 2.0)
        self.assertAlmostEqual(events[0].time, 0.2 / np.sqrt(2.0), places=10)
        np.testing.assert_allclose(events[0].velocity_post, [-S / 2, 0.0], atol=1e-12)
        self.assertAlmostEqual(events[1].time - events[0].time, 0.4 / (S / 2), places=9)
        self.assertEqual(len(events), 2)

    def test_at_rest(self):
        """Test that a particle at rest has no events"""
        self.assertEqual(list(SinaiBilliard(2, 0.05).events([0.25, 0.25], [0.0, 0.0])), [])


class TestProductRuns(unittest.TestCase):
    """Test independent product runs"""

    def setUp(self):
        """Set up test fixtures"""
        self.params = box_params()

    def test_overlap_refused(self):
        """Test refusal of a covering point inside a scatterer"""
        z = XYState(x=[0.0, 0.01], y=[0.3, 0.3], xdot=[0.1, 0.0], ydot=[0.0, 0.1])
        with self.assertRaises(PreconditionError):
            simulate_product(z, StopCondition(t_max=1.0), 0.05)

    def test_energies_conserved(self):
        """Test that E1 and E2 are separately conserved"""
        pair, rho = lift_to_pair(sample_liouville(self.params, 2), self.params)
        z0 = pair_to_xy(pair)
        run = simulate_product(z0, StopCondition(t_max=200.0), rho)
        self.assertLess(max(run.energy_drift), 1e-12)
        self.assertEqual(run.t_end, 200.0)
        serial = simulate_product(z0, StopCondition(t_max=200.0), rho, threads=False)
        self.assertEqual([e.time for e in serial.y_events], [e.time for e in run.y_events])

    def test_event_limit_counts_merged_stream(self):
        """Test that n_events bounds the merged x and y streams"""
        pair, rho = lift_to_pair(sample_liouville(self.params, 4), self.params)
        run = simulate_product(pair_to_xy(pair), StopCondition(n_events=25), rho)
        self.assertEqual(len(run.x_events) + len(run.y_events), 25)


class TestPairDynamics(unittest.TestCase):
    """Test the coupled pair and its agreement with the product"""

    def setUp(self):
        """Set up test fixtures"""
        self.params = box_params()

    def test_head_on_pair_is_genuine_only(self):
        """Test that v1 = -v2 freezes x so every event is genuine"""
        pair, rho = lift_to_pair(head_on(), self.params)
        run = simulate_pair(pair, StopCondition(n_events=5), rho)
        self.assertEqual([e.kind for e in run.events], ["genuine"] * 5)
        self.assertAlmostEqual(run.events[0].time, 0.2 / np.sqrt(2.0), places=10)
        verdict = check_product_decomposition(head_on(), self.params, n_events=5, window=2)
        self.assertTrue(verdict.passed)
        self.assertEqual((verdict.n_genuine, verdict.n_antipodal), (5, 0))
        self.assertEqual(verdict.n_windows, 3)
        self.assertEqual(verdict.agreement_events, 5)
        self.assertGreater(verdict.agreement_time, 0.0)

    def test_sampled_orbits(self):
        """Test the decomposition on sampled orbits"""
        n_events = 1000 if SLOW else 100
        checked = 0
        for seed in range(5):
            try:
                verdict = check_product_decomposition(sample_liouville(self.params, seed), self.params, n_events)
            except SingularityError:
                continue
            checked += 1
            self.assertEqual(verdict.n_events, n_events)
            self.assertLess(verdict.max_time_error, 1e-9)
            self.assertEqual(verdict.n_genuine + verdict.n_antipodal, n_events)
            self.assertGreaterEqual(verdict.agreement_events, min(verdict.window, n_events))
            self.assertLessEqual(verdict.agreement_events, n_events)
        self.assertGreater(checked, 0)

    def test_perturbed_mapping_is_caught(self):
        """Test that a wrong covering map breaks the stream comparison"""

        def shifted(pair):
            return to_xy(pair.q1 + 0.01, pair.q2, pair.v1, pair.v2)

        with self.assertRaises(StreamMismatch):
            check_product_decomposition(head_on(), self.params, n_events=3, mapping=shifted)

    def test_window_must_be_positive(self):
        """Test refusal of an empty window"""
        with self.assertRaises(PreconditionError):
            check_product_decomposition(head_on(), self.params, n_events=3, window=0)


if __name__ == "__main__":
    unittest.main()
