# test_verify.py
import json
import math
import os
import shutil
import sys
import tempfile
import unittest

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from diamond_heat.exceptions import InvalidArgumentError
from diamond_heat.geometry import make_point
from diamond_heat.kernels import diamond_kernel_level
from diamond_heat.params import ParameterSequences
from diamond_heat.verify import (
    CHECKS,
    CableDiscretization,
    CheckStatus,
    VerifyConfig,
    _run_check,
    check_regular_log,
    local_poincare_probe,
    oracle_compare,
    oracle_kernel_spectral,
    oracle_walk,
    regular_log_margin,
    run_suite,
    smooth_function,
    summarize,
    total_variation,
    write_report,
)


class TestCableDiscretization(unittest.TestCase):
    def setUp(self):
        self.seq = ParameterSequences.regular(2, 2)

    def test_circle_spectrum(self):
        """F_0 is the circle: eigenvalues 0, 1, 1, 4, 4"""
        values, _ = CableDiscretization(self.seq, 0, 101).eigenpairs()
        self.assertLess(abs(values[0]), 1e-10)
        np.testing.assert_allclose(values[1:5], [1.0, 1.0, 4.0, 4.0], rtol=1e-3)

    def test_mass_and_generator(self):
        disc = CableDiscretization(self.seq, 1, 9)
        self.assertAlmostEqual(float(disc.mass.sum()), 2 * math.pi, places=12)
        row_sums = np.asarray(disc.generator().sum(axis=1)).ravel()
        self.assertLess(float(np.max(np.abs(row_sums))), 1e-9)

    def test_spectral_gap(self):
        """The gap on F_1 stays at 1"""
        self.assertAlmostEqual(CableDiscretization(self.seq, 1, 51).spectral_gap(), 1.0, delta=1e-3)

    def test_spectral_kernel_matches_closed_form(self):
        disc = CableDiscretization(self.seq, 1, 101)
        for node in (0, 17, 250, disc.num_nodes - 1):
            x = disc.layout.node_point(node)
            y = make_point(self.seq, 2.0, [2])
            y = disc.layout.node_point(disc.layout.node_of(y))
            spectral = oracle_kernel_spectral(disc, 1.0, x, y)
            self.assertAlmostEqual(spectral, diamond_kernel_level(self.seq, 1, 1.0, x, y).value, delta=5e-3)
        with self.assertRaises(InvalidArgumentError):
            oracle_kernel_spectral(disc, 0.0, x, y)

    def test_second_order_convergence(self):
        rows = oracle_compare(self.seq, 1, 1.0, [51, 101], 8, np.random.default_rng(0))
        self.assertEqual([row["m"] for row in rows], [51, 101])
        self.assertTrue(math.isnan(rows[0]["order"]))
        self.assertLess(rows[1]["sup_error"], rows[0]["sup_error"])
        self.assertGreater(rows[1]["order"], 1.5)
        with self.assertRaises(InvalidArgumentError):
            oracle_compare(self.seq, 1, 1.0, [51, 90], 8, np.random.default_rng(0))


    def test_convergence_at_working_resolution(self):
        """F_2 at m = 200 and 399: small error, close to second order"""
        rows = oracle_compare(self.seq, 2, 1.0, [200, 399], 12, np.random.default_rng(42))
        fine = rows[-1]
        self.assertLess(fine["sup_error"], 1e-4)
        self.assertGreater(fine["order"], 1.7)
        self.assertLess(fine["order"], 2.5)

    def test_circle_oracle(self):
        """F_0 runs through the same pipeline"""
        rows = oracle_compare(self.seq, 0, 1.0, [21, 41], 6, np.random.default_rng(1))
        self.assertEqual([row["level"] for row in rows], [0, 0])
        self.assertLess(rows[1]["sup_error"], rows[0]["sup_error"])

class TestWalk(unittest.TestCase):
    def test_walk_law(self):
        """Empirical walk law against the spectral law and the stationary measure"""
        seq = ParameterSequences.regular(2, 2)
        disc = CableDiscretization(seq, 1, 5)
        rng = np.random.default_rng(11)
        start = make_point(seq, math.pi / 4 + 0.01, [1])
        empirical = oracle_walk(disc, 1.0, start, 20000, rng)
        self.assertAlmostEqual(float(empirical.sum()), 1.0, places=12)
        self.assertLess(total_variation(empirical, disc.distribution(1.0, disc.layout.node_of(start))), 0.04)
        stationary = oracle_walk(disc, 50.0, start, 20000, rng)
        self.assertLess(total_variation(stationary, disc.mass / disc.mass.sum()), 0.04)
        with self.assertRaises(InvalidArgumentError):
            oracle_walk(disc, 1.0, start, 0, rng)


class TestLocalPoincare(unittest.TestCase):
    def test_probe(self):
        """Lowest mixed mode on the junction ball of F_1 has eigenvalue J_1^2/4"""
        probe = local_poincare_probe(ParameterSequences.regular(2, 2), 1, 101)
        self.assertAlmostEqual(probe["expected_eigenvalue"], 1.0, places=12)
        self.assertAlmostEqual(probe["optimal_constant"], 1.0, delta=0.02)
        self.assertLess(abs(probe["mean"]), 1e-6 * probe["norm"])
        self.assertLess(probe["residual"], 1e-2)
        self.assertGreaterEqual(probe["rayleigh"], probe["eigenvalue"] - 1e-9)


class TestSuite(unittest.TestCase):
    def setUp(self):
        self.seq = ParameterSequences.regular(2, 2)
        self.output = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.output, ignore_errors=True)

    def test_selected_checks(self):
        """A subset runs in registry order and nothing fails"""
        results = run_suite(self.seq, 1, [0.1, 1.0], only=["series_bounds", "representations", "assumption"])
        self.assertEqual([r.name for r in results], [
            "circle_representation_agreement",
            "dirichlet_identity",
            "series_bound_printed",
            "series_bound_corrected",
            "assumption_sweep",
        ])
        self.assertEqual(summarize(results), {"passed": 4, "failed": 0, "informational": 1})

    def test_report_is_deterministic(self):
        """Same seed, same bytes"""
        cfg = VerifyConfig(seed=5, jobs=2)
        paths = []
        for name in ("first.json", "second.json"):
            results = run_suite(self.seq, 1, [1.0], cfg, only=["representations", "closed_vs_recursive"])
            paths.append(write_report(results, os.path.join(self.output, name), self.seq, cfg.seed))
        with open(paths[0], "rb") as a, open(paths[1], "rb") as b:
            self.assertEqual(a.read(), b.read())
        with open(paths[0]) as handle:
            report = json.load(handle)
        self.assertEqual(report["seed"], 5)
        self.assertEqual(report["sequences"], self.seq.to_mapping())
        self.assertEqual(report["summary"]["failed"], 0)

    def test_aborted_check_is_a_failure(self):
        def broken(seq, levels, t_grid, cfg, rng):
            raise InvalidArgumentError("no such thing")

        results = _run_check(0, "broken", broken, self.seq, 1, [1.0], VerifyConfig())
        self.assertEqual(len(results), 1)
        self.assertEqual(results[0].status, CheckStatus.FAIL)
        self.assertIn("no such thing", results[0].notes)

    def test_invalid_arguments(self):
        with self.assertRaises(InvalidArgumentError):
            run_suite(self.seq, 0, [1.0])
        with self.assertRaises(InvalidArgumentError):
            run_suite(self.seq, 1, [])

    def test_registry(self):
        names = [name for name, _ in CHECKS]
        self.assertEqual(len(names), len(set(names)))
        self.assertIn("walk", names)

    def test_log_bound_dominates_wbe(self):
        """The log-form bound sits above wbe_constant(t) d in its regime"""
        self.assertGreaterEqual(regular_log_margin(self.seq), 1.0)
        results = check_regular_log(self.seq, 1, [1.0], VerifyConfig(), np.random.default_rng(0))
        by_name = {r.name: r for r in results}
        self.assertEqual(by_name["regular_log_dominates_wbe"].status, CheckStatus.PASS)
        with self.assertRaises(InvalidArgumentError):
            regular_log_margin(ParameterSequences(j=(2, 3), n=(2, 2)))
        with self.assertRaises(InvalidArgumentError):
            regular_log_margin(self.seq, t_values=[1.0], d_values=[1.0])

    def test_smooth_function_positive(self):
        f = smooth_function(self.seq, 2, 9, np.random.default_rng(2))
        self.assertGreater(float(f.values.min()), 0.0)


if __name__ == "__main__":
    unittest.main()
