# test_semigroup.py
import math
import os
import shutil
import sys
import tempfile
import unittest

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from diamond_heat.exceptions import InvalidArgumentError
from diamond_heat.params import ParameterSequences
from diamond_heat.semigroup import (
    GridFunction,
    apply_semigroup,
    constant,
    dirichlet_decomposition,
    dirichlet_energy,
    entropy,
    grid_function,
    inner_product,
    integrate_fibers,
    lift,
    load_csv,
    project_antisym,
    project_sym,
    project_to_level,
    quadrature_weights,
    save_csv,
    strong_convergence_residuals,
    sup_norm,
    total_integral,
)


def bumpy(seq, level, m):
    """Smooth positive function whose level-l part depends on the label w_l."""
    def fn(theta, labels):
        values = 1.0 + 0.3 * np.cos(theta) + 0.1 * np.sin(2 * theta)
        J = 1
        for l in range(1, level + 1):
            J *= seq.factors(l)[0]
            values = values + 0.05 * l * (labels[..., l - 1] - 1.5) * np.sin(J * theta)
        return values
    return grid_function(seq, level, m, fn)


class TestGridFunctions(unittest.TestCase):
    def setUp(self):
        self.seq = ParameterSequences.regular(2, 2)

    def test_shape_checked(self):
        with self.assertRaises(ValueError):
            GridFunction(seq=self.seq, level=1, m=5, values=np.zeros((3, 5)))

    def test_read_only(self):
        f = constant(self.seq, 1, 5)
        with self.assertRaises(ValueError):
            f.values[0, 0] = 2.0

    def test_measure(self):
        """mu_i has total mass 2pi on every level"""
        for level in (0, 1, 2):
            self.assertAlmostEqual(total_integral(constant(self.seq, level, 9)), 2 * math.pi, places=12)
        with self.assertRaises(InvalidArgumentError):
            quadrature_weights(constant(self.seq, 1, 6).layout, "simpson")
        self.assertAlmostEqual(total_integral(constant(self.seq, 1, 7), "simpson"), 2 * math.pi, places=12)

    def test_inner_product(self):
        f = bumpy(self.seq, 1, 21)
        g = grid_function(self.seq, 1, 21, lambda theta, labels: np.sin(theta) ** 2)
        self.assertAlmostEqual(inner_product(f, g), inner_product(g, f), places=14)
        with self.assertRaises(InvalidArgumentError):
            inner_product(f, constant(self.seq, 1, 11))


class TestFiberOperators(unittest.TestCase):
    def setUp(self):
        self.seq = ParameterSequences(j=(2, 3), n=(3, 2))

    def test_lift_then_integrate(self):
        """Averaging a lifted function over the copies gives it back"""
        f = bumpy(self.seq, 1, 13)
        lifted = lift(f, 2)
        self.assertEqual(lifted.m, 5)
        back = integrate_fibers(lifted)
        self.assertEqual(back.m, 13)
        np.testing.assert_allclose(back.values, f.values, atol=1e-14)
        np.testing.assert_allclose(project_to_level(lift(f, 2), 1).values, f.values, atol=1e-14)

    def test_symmetric_split(self):
        """P_i f + P_i^perp f = f and the antisymmetric part vanishes at junctions"""
        f = bumpy(self.seq, 2, 7)
        antisym = project_antisym(f)
        np.testing.assert_allclose((project_sym(f) + antisym).values, f.values, atol=1e-14)
        np.testing.assert_allclose(antisym.values[:, [0, -1]], 0.0, atol=1e-14)
        self.assertAlmostEqual(total_integral(antisym), 0.0, places=12)

    def test_lift_needs_divisible_grid(self):
        with self.assertRaises(InvalidArgumentError):
            lift(bumpy(self.seq, 1, 8), 2)

    def test_energy(self):
        """E(cos) = pi on the circle and lifts keep the energy"""
        cosine = grid_function(self.seq, 0, 601, lambda theta, labels: np.cos(theta))
        self.assertAlmostEqual(dirichlet_energy(cosine), math.pi, delta=1e-4)
        f = bumpy(self.seq, 0, 121)
        self.assertAlmostEqual(dirichlet_energy(lift(f, 2)), dirichlet_energy(f), delta=1e-10)

    def test_energy_of_piecewise_linear(self):
        """Forward differences give the exact energy of a tent already at m = 3"""
        tent = grid_function(self.seq, 0, 3, lambda theta, labels: np.minimum(theta, 2 * math.pi - theta))
        self.assertAlmostEqual(dirichlet_energy(tent), 2 * math.pi, places=12)

    def test_average_down_to_circle(self):
        """Averaging F_1 over its copies lands on F_0 and drops the label-dependent part"""
        seq = ParameterSequences.regular(2, 2)
        coarse = integrate_fibers(bumpy(seq, 1, 5))
        self.assertEqual((coarse.level, coarse.m), (0, 9))
        expected = grid_function(seq, 0, 9, lambda theta, labels: 1.0 + 0.3 * np.cos(theta) + 0.1 * np.sin(2 * theta))
        np.testing.assert_allclose(coarse.values, expected.values, atol=1e-12)

    def test_entropy(self):
        one = constant(self.seq, 1, 9)
        self.assertAlmostEqual(entropy(one), 0.0, places=12)
        self.assertAlmostEqual(entropy(one, normalized=False), -2 * math.pi * math.log(2 * math.pi), places=10)
        self.assertGreater(entropy(bumpy(self.seq, 1, 25)), 0.0)
        with self.assertRaises(InvalidArgumentError):
            entropy(constant(self.seq, 1, 9, -1.0))


class TestSemigroup(unittest.TestCase):
    def setUp(self):
        self.seq = ParameterSequences.regular(2, 2)

    def test_stochastic_completeness(self):
        """P_t 1 = 1"""
        one = constant(self.seq, 1, 101)
        for t in (0.1, 1.0):
            self.assertLess(sup_norm(apply_semigroup(one, t) - one), 1e-5)

    def test_chapman_kolmogorov(self):
        f = bumpy(self.seq, 1, 101)
        once = apply_semigroup(f, 1.0)
        twice = apply_semigroup(apply_semigroup(f, 0.5), 0.5, jobs=2)
        self.assertLess(sup_norm(once - twice), 5e-4)

    def test_intertwining(self):
        """Lifting commutes with the semigroup"""
        coarse = bumpy(self.seq, 0, 121)
        left = apply_semigroup(lift(coarse, 1), 0.5)
        right = lift(apply_semigroup(coarse, 0.5), 1)
        self.assertLess(sup_norm(left - right), 1e-4)

    def test_decomposition(self):
        """P_t f splits into the lifted coarse part and the branchwise Dirichlet part"""
        f = bumpy(self.seq, 1, 101)
        symmetric, antisymmetric = dirichlet_decomposition(f, 0.5)
        self.assertLess(sup_norm(apply_semigroup(f, 0.5) - symmetric - antisymmetric), 5e-4)
        with self.assertRaises(InvalidArgumentError):
            dirichlet_decomposition(bumpy(self.seq, 0, 11), 0.5)

    def test_strong_convergence(self):
        f = bumpy(self.seq, 2, 21)
        residuals = strong_convergence_residuals(f, 0.5)
        self.assertEqual(len(residuals), 3)
        self.assertLess(residuals[-1], 1e-12)
        self.assertGreaterEqual(residuals[0] + 1e-6, residuals[1])


class TestGridCsv(unittest.TestCase):
    def setUp(self):
        self.seq = ParameterSequences.regular(3, 2)
        self.output = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.output, ignore_errors=True)

    def test_save_and_load(self):
        f = bumpy(self.seq, 1, 6)
        path = save_csv(f, os.path.join(self.output, "f.csv"))
        loaded = load_csv(self.seq, 1, path)
        self.assertEqual(loaded.m, 6)
        np.testing.assert_array_equal(loaded.values, f.values)
        with self.assertRaises(InvalidArgumentError):
            load_csv(self.seq, 2, path)


if __name__ == "__main__":
    unittest.main()
