# test_params.py
import math
import os
import sys
import unittest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from diamond_heat.exceptions import (
    ArithmeticOverflowError,
    AssumptionViolationError,
    InsufficientDepthError,
    InvalidArgumentError,
)
from diamond_heat.params import (
    ParameterSequences,
    Verdict,
    check_assumption,
    cumulative_products,
    level_pairs,
    log_admissibility_terms,
    log_products,
    require_admissible,
)


class TestParameterSequences(unittest.TestCase):
    def setUp(self):
        """Regular and mixed sequences used across tests"""
        self.regular = ParameterSequences.regular(2, 2)
        self.mixed = ParameterSequences(j=(3, 2), n=(2, 3))

    def test_regular_factors(self):
        """The tail covers every level"""
        self.assertEqual(self.regular.factors(0), (1, 1))
        self.assertEqual(self.regular.factors(7), (2, 2))
        self.assertEqual(self.regular.regular_pair, (2, 2))
        self.assertIsNone(self.regular.max_level)
        self.assertTrue(self.regular.has_regular_tail)
        self.assertEqual(self.regular.explicit_depth, 0)

    def test_cumulative_products(self):
        """J_i and N_i are exact products"""
        self.assertEqual(cumulative_products(self.regular, 3), (8, 8))
        self.assertEqual(cumulative_products(self.mixed, 2), (6, 6))
        self.assertEqual(level_pairs(self.mixed, 1), (3, 2))
        log_J, log_N = log_products(self.mixed, 2)
        self.assertAlmostEqual(log_J, math.log(6.0), places=12)
        self.assertAlmostEqual(log_N, math.log(6.0), places=12)

    def test_finite_sequences_stop(self):
        """Levels past a finite prefix are refused"""
        self.assertEqual(self.mixed.max_level, 2)
        self.assertFalse(self.mixed.has_regular_tail)
        self.assertEqual(self.mixed.explicit_depth, 2)
        self.assertFalse(self.mixed.supports(3))
        with self.assertRaises(InsufficientDepthError):
            self.mixed.factors(3)

    def test_invalid_sequences(self):
        """Mismatched prefixes and factors below 2 are rejected"""
        with self.assertRaises(ValueError):
            ParameterSequences(j=(2, 2), n=(2,))
        with self.assertRaises(ValueError):
            ParameterSequences(j=(1,), n=(2,))
        with self.assertRaises(ValueError):
            ParameterSequences.regular(2, 1)
        with self.assertRaises(InvalidArgumentError):
            self.regular.factors(-1)

    def test_overflow(self):
        """Products beyond double range raise instead of losing precision"""
        huge = ParameterSequences(j=(10 ** 200, 10 ** 200), n=(2, 2))
        self.assertEqual(cumulative_products(huge, 1)[0], 10 ** 200)
        with self.assertRaises(ArithmeticOverflowError):
            cumulative_products(huge, 2)

    def test_mapping(self):
        """Configuration keys map onto the model"""
        seq = ParameterSequences.from_mapping({"j": [3, 2], "n": [2, 3], "tail_j": 2, "tail_n": 2})
        self.assertEqual(seq.j, (3, 2))
        self.assertEqual(seq.tail, (2, 2))
        self.assertIsNone(seq.regular_pair)
        self.assertEqual(ParameterSequences.from_mapping(seq.to_mapping()), seq)
        self.assertEqual(ParameterSequences.from_mapping({"regular": [3, 2]}).regular_pair, (3, 2))
        with self.assertRaises(InvalidArgumentError):
            ParameterSequences.from_mapping({"tail_j": 2})

    def test_constant_n(self):
        """Replacing n keeps the j-sequence"""
        other = self.mixed.with_constant_n(5)
        self.assertEqual(other.j, self.mixed.j)
        self.assertEqual(other.n, (5, 5))


class TestAssumption(unittest.TestCase):
    def setUp(self):
        self.regular = ParameterSequences.regular(2, 3)
        # n grows like 10^(4^l): log N_i outruns J_i^2 t for small t
        self.explosive = ParameterSequences(j=(2,) * 8, n=tuple(10 ** (4 ** l) for l in range(1, 9)))

    def test_log_terms(self):
        """Level 0 contributes log 1 - t"""
        terms = log_admissibility_terms(self.regular, 0.5, 4)
        self.assertEqual(len(terms), 5)
        self.assertAlmostEqual(terms[0], -0.5, places=12)
        self.assertAlmostEqual(terms[1], math.log(3.0) - 4.0 * 0.5, places=12)
        with self.assertRaises(InvalidArgumentError):
            log_admissibility_terms(self.regular, 0.0, 4)

    def test_regular_passes(self):
        """Regular diamonds satisfy the assumption for every t"""
        report = check_assumption(self.regular, [0.01, 0.1, 1.0])
        self.assertEqual(report.overall, Verdict.PASS)
        self.assertEqual(report.verdict_at(0.1), Verdict.PASS)
        require_admissible(self.regular, 0.01)

    def test_explosive_fails(self):
        """Superexponential copies violate the assumption at small t"""
        report = check_assumption(self.explosive, [0.1])
        self.assertEqual(report.overall, Verdict.FAIL)
        self.assertEqual(report.entries[0].probed_depth, 8)
        with self.assertRaises(AssumptionViolationError) as ctx:
            require_admissible(self.explosive, 0.1)
        self.assertEqual(ctx.exception.t, 0.1)

    def test_power_of_two_copies(self):
        """n_l = 2^(4^l) reaches thousands of bits and still gets a verdict"""
        towers = ParameterSequences(j=(2,) * 8, n=tuple(2 ** (4 ** l) for l in range(1, 9)))
        self.assertIn("n=[16, 65536, <65 bits>", towers.describe())
        self.assertIn("<65537 bits>", towers.describe())
        report = check_assumption(towers, [0.5], 8)
        self.assertEqual(report.overall, Verdict.FAIL)
        with self.assertRaises(AssumptionViolationError):
            require_admissible(towers, 0.5, 8)

    def test_empty_grid(self):
        with self.assertRaises(InvalidArgumentError):
            check_assumption(self.regular, [])


if __name__ == "__main__":
    unittest.main()
