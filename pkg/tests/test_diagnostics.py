"""
Tests for the census, ergodic averages, ball-avoiding scans, Lyapunov spectra and the worker pool
"""

import unittest
from unittest.mock import patch

import numpy as np

from hardball.core.errors import Eq33Mismatch, PreconditionError, RankIndeterminate, SingularOrbit
from hardball.core.model import PhasePoint, derive_seed, sample_liouville
from hardball.core.product import lift_to_pair, pair_to_xy
from hardball.diagnostics.census import census_sample, richness_census, tally
from hardball.diagnostics.ergodic import ensemble_average, ergodic_average, orbit_time_average
from hardball.diagnostics.lyapunov import (
    Benettin,
    LyapunovReport,
    invariant_frame,
    lyapunov_spectrum,
    product_lyapunov_spectrum,
)
from hardball.diagnostics.pool import EnsembleRunner
from hardball.diagnostics.scan import ball_avoiding_scan, scan_orbit
from tests.helpers import SLOW, box_params, head_on, lanes


def _square(i):
    return i * i


class TestEnsembleRunner(unittest.TestCase):
    """Test the worker pool"""

    def test_inline(self):
        """Test that one worker runs tasks in order without an executor"""
        with EnsembleRunner() as runner:
            self.assertEqual(runner.map(_square, range(5)), [0, 1, 4, 9, 16])
            self.assertIsNone(runner._executor)

    def test_threads_keep_order(self):
        """Test index order with a thread pool"""
        with EnsembleRunner(max_workers=3, backend="thread") as runner:
            self.assertEqual(runner.map(_square, range(20)), [i * i for i in range(20)])

    def test_rejects_zero_workers(self):
        """Test that at least one worker is required"""
        with self.assertRaises(ValueError):
            EnsembleRunner(max_workers=0)


class TestCensus(unittest.TestCase):
    """Test the richness census"""

    def setUp(self):
        """Set up test fixtures"""
        self.params = box_params()
        self.n_samples = 40 if SLOW else 6

    def test_counts_partition(self):
        """Test that accepted and discarded samples add up"""
        report = richness_census(self.params, self.n_samples, n_ball_collisions=20, seed=1)
        self.assertEqual(report.n_samples, self.n_samples)
        self.assertEqual(report.n_accepted + report.n_discarded, self.n_samples)
        self.assertLessEqual(report.n_rich_unflagged_sufficient, report.n_rich_unflagged)
        self.assertLessEqual(report.n_rich_unflagged, report.n_rich)
        self.assertEqual(len(report.discards), report.n_discarded)

    def test_rich_unflagged_are_sufficient(self):
        """Test that every rich unflagged sample is sufficient"""
        report = richness_census(self.params, self.n_samples, n_ball_collisions=50, seed=2)
        self.assertEqual(report.n_rich_unflagged_sufficient, report.n_rich_unflagged)
        self.assertGreater(report.n_accepted, 0)
        self.assertGreaterEqual(report.rich_fraction, 0.99)
        self.assertGreater(report.n_rich_unflagged, 0)
        self.assertGreaterEqual(report.sufficient_fraction, 0.99)

    def test_deterministic_across_workers(self):
        """Test that the worker count does not change the report"""
        serial = richness_census(self.params, 4, n_ball_collisions=10, seed=3)
        parallel = richness_census(self.params, 4, n_ball_collisions=10, seed=3, workers=2)
        self.assertEqual(serial.model_dump(), parallel.model_dump())

    def test_empty(self):
        """Test a census without samples"""
        report = richness_census(self.params, 0)
        self.assertEqual(report.n_accepted, 0)
        self.assertEqual(report.rich_fraction, 0.0)
        self.assertEqual(report.sufficient_fraction, 0.0)

    def test_needs_walls(self):
        """Test refusal for k = 0"""
        with self.assertRaises(PreconditionError):
            richness_census(box_params(k=0), 1)

    def test_no_collision_is_discarded(self):
        """Test that a sample without a ball collision before the guard is a discard"""
        outcome = census_sample(self.params, 5, 1e-9, 0, 0)
        self.assertFalse(outcome.accepted)
        self.assertIn("no ball collision", outcome.reason)
        report = tally(self.params, 0, 5, [outcome])
        self.assertEqual(report.discards, {0: outcome.reason})

    def test_singular_sample_is_discarded(self):
        """Test that a singular sample becomes a discard with its reason"""
        with patch("hardball.diagnostics.census.check_key_lemma_3_5", side_effect=RankIndeterminate("gap 1.2")):
            report = richness_census(self.params, 2, n_ball_collisions=3, seed=4)
        self.assertEqual(report.n_discarded, 2)
        self.assertTrue(all(reason.startswith("RankIndeterminate") for reason in report.discards.values()))

    def test_numerical_failure_surfaces(self):
        """Test that a failed consistency check stops the census"""
        with patch("hardball.diagnostics.census.check_key_lemma_3_5", side_effect=Eq33Mismatch("off by 1e-3")):
            with self.assertRaises(Eq33Mismatch):
                richness_census(self.params, 2, n_ball_collisions=3, seed=4)


class TestErgodic(unittest.TestCase):
    """Test time and ensemble averages"""

    def setUp(self):
        """Set up test fixtures"""
        self.params = box_params()

    def test_energy_is_constant(self):
        """Test that the energy observable averages to 1 everywhere"""
        report = ergodic_average(self.params, "energy", 3, 2.0, 100, seed=0)
        np.testing.assert_allclose(report.time_averages, 1.0, atol=1e-12)
        self.assertAlmostEqual(report.ensemble_average, 1.0, places=12)
        self.assertAlmostEqual(report.dispersion, 0.0, places=12)

    def test_zero_time_is_instantaneous(self):
        """Test that t_orbit = 0 gives the value at the initial point"""
        x0 = sample_liouville(self.params, 17)
        self.assertEqual(orbit_time_average(self.params, "box_coordinate", 0.0, 17), float(x0.q1[0]))

    def test_orbit_seeds(self):
        """Test that orbit i starts from the sample seeded by (seed, i)"""
        report = ergodic_average(self.params, "box_coordinate", 2, 0.0, 10, seed=5)
        expected = [float(sample_liouville(self.params, derive_seed(5, i)).q1[0]) for i in range(2)]
        self.assertEqual(report.time_averages, expected)

    def test_single_sample_error(self):
        """Test that one ensemble sample has no standard error"""
        _, error = ensemble_average(self.params, "speed_share", 1, 0)
        self.assertEqual(error, float("inf"))

    def test_box_coordinate_converges(self):
        """Test that long orbits approach the ensemble mean of a box coordinate"""
        t_orbit = 2000.0 if SLOW else 200.0
        report = ergodic_average(self.params, "box_coordinate", 2, t_orbit, 20000, seed=1, dt=0.05)
        self.assertLess(report.max_deviation, 0.03 if SLOW else 0.15)

    def test_unknown_observable(self):
        """Test refusal of an unknown observable"""
        with self.assertRaises(PreconditionError):
            ergodic_average(self.params, "temperature", 1, 1.0, 10, seed=0)


class TestScan(unittest.TestCase):
    """Test the ball-avoiding scan"""

    def test_lanes_are_free(self):
        """Test that a lane orbit is flagged with its periodic relative speed"""
        self.assertAlmostEqual(scan_orbit(lanes(), box_params(k=1), 5.0), np.sqrt(2.0))
        self.assertIsNone(scan_orbit(head_on(), box_params(), 1.0))

    def test_zero_horizon_flags_everything(self):
        """Test that every orbit is vacuously free for t_free = 0"""
        report = ball_avoiding_scan(box_params(), 5, 0.0, seed=2)
        self.assertEqual(report.n_flagged, 5)
        self.assertEqual(report.n_zero_annotation, 5)

    def test_long_horizon(self):
        """Test that few orbits stay free for a long time"""
        params = box_params(nu=3, k=1)
        report = ball_avoiding_scan(params, 20 if SLOW else 5, 50.0, seed=0)
        self.assertLessEqual(report.n_flagged + len(report.discards), report.n_samples)
        for orbit in report.flagged:
            self.assertGreaterEqual(orbit.annotation, 0.0)

    def test_failures(self):
        """Test that per-orbit errors become discards and consistency failures stop the scan"""
        with patch("hardball.diagnostics.scan.simulate", side_effect=RankIndeterminate("gap 1.2")):
            report = ball_avoiding_scan(box_params(), 3, 1.0, seed=1)
        self.assertEqual(sorted(report.discards), [0, 1, 2])
        self.assertEqual(report.n_flagged, 0)
        with patch("hardball.diagnostics.scan.simulate", side_effect=Eq33Mismatch("off by 1e-3")):
            with self.assertRaises(Eq33Mismatch):
                ball_avoiding_scan(box_params(), 3, 1.0, seed=1)


class TestLyapunov(unittest.TestCase):
    """Test Lyapunov spectra"""

    def setUp(self):
        """Set up test fixtures"""
        self.params = box_params()

    def test_invariant_frame(self):
        """Test the frame dimension and its constraints"""
        params = box_params(nu=3, k=1)
        x = sample_liouville(params, 0)
        frame = invariant_frame(x, params)
        self.assertEqual(frame.shape, (12, 7))
        np.testing.assert_allclose(frame.T @ frame, np.eye(7), atol=1e-12)
        v = np.concatenate([x.v1, x.v2])
        np.testing.assert_allclose(v @ frame[6:], 0.0, atol=1e-12)
        np.testing.assert_allclose(frame[1:3] + frame[4:6], 0.0, atol=1e-12)

    def test_no_events(self):
        """Test the degenerate report of an empty run"""
        report = lyapunov_spectrum(sample_liouville(self.params, 0), self.params, 0)
        self.assertEqual(report.exponents, [0.0] * 7)
        self.assertTrue(all(np.isinf(report.confidence)))

    def test_report_helpers(self):
        """Test zero bands and the pairing defect"""
        report = LyapunovReport(exponents=[1.0, 0.01, -1.0], confidence=[0.1, 0.01, 0.1], n_events=10,
                                t_total=10.0, reorthonormalization_period=1.0)
        self.assertEqual(report.zero_count(), 1)
        self.assertEqual(report.zero_count(width=0.5), 0)
        self.assertEqual(report.zero_count(width=0.5, floor=0.05), 1)
        self.assertAlmostEqual(report.pairing_defect(), 0.02)
        self.assertAlmostEqual(report.total, 0.01)

    def test_period_must_be_positive(self):
        """Test refusal of a non-positive re-orthonormalization period"""
        with self.assertRaises(ValueError):
            Benettin(np.eye(4), 0.0)

    def test_box_spectrum(self):
        """Test ordering, a positive top exponent, a vanishing sum and paired signs"""
        n_events = 20000 if SLOW else 2000
        for seed in range(5):
            try:
                report = lyapunov_spectrum(sample_liouville(self.params, seed), self.params, n_events)
            except SingularOrbit:
                continue
            self.assertEqual(len(report.exponents), 7)
            self.assertEqual(report.exponents, sorted(report.exponents, reverse=True))
            top = report.exponents[0]
            self.assertGreater(top, 0.0)
            self.assertLessEqual(abs(report.total), 3 * report.total_confidence)
            self.assertLess(abs(report.total), 0.05 * top)
            hw = np.array(report.confidence)
            self.assertLess(report.pairing_defect(), max(0.1 * top, 3 * float(np.max(hw + hw[::-1]))))
            return
        self.skipTest("no regular sample found")

    def test_box_spectrum_period_independent(self):
        """Test that two re-orthonormalization periods give the same spectrum"""
        n_events = 20000 if SLOW else 2000
        for seed in range(5):
            x0 = sample_liouville(self.params, seed)
            try:
                coarse = lyapunov_spectrum(x0, self.params, n_events, reortho_period=1.0)
                fine = lyapunov_spectrum(x0, self.params, n_events, reortho_period=0.25)
            except SingularOrbit:
                continue
            self.assertEqual(fine.reorthonormalization_period, 0.25)
            top = coarse.exponents[0]
            np.testing.assert_allclose(fine.exponents, coarse.exponents, atol=0.05 * top)
            return
        self.skipTest("no regular sample found")

    def test_product_spectrum(self):
        """Test two zero exponents and paired signs for the Sinai product"""
        v2y = np.sqrt(1.0 - 0.36 - 0.09 - 0.04)
        x0 = PhasePoint(q1=[0.3, 0.4], q2=[0.7, 0.65], v1=[0.6, 0.3], v2=[-0.2, v2y])
        pair, rho = lift_to_pair(x0, self.params)
        t_total = 20000.0 if SLOW else 2000.0
        report = product_lyapunov_spectrum(pair_to_xy(pair), rho, t_total)
        self.assertEqual(len(report.exponents), 6)
        top = report.exponents[0]
        self.assertGreater(top, 0.0)
        self.assertLess(abs(report.total), 1e-8)
        self.assertEqual(report.zero_count(floor=0.05 * top), 2)
        self.assertLess(report.pairing_defect(), 0.1 * top)

    def test_product_at_rest(self):
        """Test that a subsystem at rest is a singular orbit"""
        pair, rho = lift_to_pair(head_on(), self.params)
        with self.assertRaises(SingularOrbit):
            product_lyapunov_spectrum(pair_to_xy(pair), rho, 10.0)


if __name__ == "__main__":
    unittest.main()
