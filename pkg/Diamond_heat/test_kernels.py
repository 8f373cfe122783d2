# test_kernels.py
import csv
import math
import os
import shutil
import sys
import tempfile
import unittest

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from diamond_heat.exceptions import InvalidArgumentError
from diamond_heat.geometry import make_point, random_point
from diamond_heat.kernels import (
    KERNEL_CSV_HEADER,
    KernelEvalConfig,
    circle_kernel,
    circle_kernel_fourier,
    circle_kernel_gaussian,
    diamond_kernel_level,
    diamond_kernel_limit,
    diamond_kernel_recursive,
    evaluate_batch,
    interval_kernel_dirichlet,
    kernel_matrix,
    on_diagonal_series,
    parse_point,
    point_arrays,
    write_kernel_csv,
)
from diamond_heat.params import ParameterSequences


class TestCircleKernels(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)

    def test_representations_agree(self):
        """Gaussian and Fourier sums give the same circle kernel"""
        a = self.rng.uniform(0.0, 2 * math.pi, 500)
        b = self.rng.uniform(0.0, 2 * math.pi, 500)
        for t in (0.05, 0.3, 1.0, 5.0, 10.0):
            gauss = circle_kernel_gaussian(t, a, b).value
            fourier = circle_kernel_fourier(t, a, b).value
            self.assertLess(float(np.max(np.abs(gauss - fourier))), 1e-10, f"t={t}")

    def test_mass_and_large_time(self):
        """The circle kernel integrates to one and flattens to 1/(2pi)"""
        grid = np.arange(400) * 2 * math.pi / 400
        values = circle_kernel(0.5, 0.3, grid).value
        self.assertAlmostEqual(float(np.sum(values) * 2 * math.pi / 400), 1.0, delta=1e-10)
        self.assertAlmostEqual(float(circle_kernel(50.0, 0.0, math.pi).value), 1.0 / (2 * math.pi), delta=1e-12)

    def test_certified_error(self):
        result = circle_kernel(0.2, 0.1, 0.4, KernelEvalConfig(tol=1e-8))
        self.assertLessEqual(result.error, 1e-8)
        self.assertGreater(result.terms, 0)

    def test_invalid_time(self):
        with self.assertRaises(InvalidArgumentError):
            circle_kernel(0.0, 0.1, 0.2)
        with self.assertRaises(ValueError):
            KernelEvalConfig(tol=-1.0)


class TestIntervalKernel(unittest.TestCase):
    def test_dirichlet_boundary(self):
        """The interval kernel vanishes at both ends"""
        L = math.pi / 2
        self.assertEqual(float(interval_kernel_dirichlet(0.3, L, 0.0, 0.7).value), 0.0)
        self.assertEqual(float(interval_kernel_dirichlet(0.3, L, 0.7, L).value), 0.0)
        self.assertGreater(float(interval_kernel_dirichlet(0.3, L, 0.5, 0.7).value), 0.0)

    def test_representation_switch(self):
        """Sine series and circle difference give the same interval kernel"""
        fourier = KernelEvalConfig(rep_switch=1e-300)
        gaussian = KernelEvalConfig(rep_switch=math.inf)
        for t, L, x, y in ((0.01, 1.0, 0.2, 0.25), (0.5, 2.0, 0.3, 1.9), (2.0, math.pi, 1.0, 2.5)):
            self.assertAlmostEqual(float(interval_kernel_dirichlet(t, L, x, y, fourier).value),
                                   float(interval_kernel_dirichlet(t, L, x, y, gaussian).value), delta=1e-9)

    def test_outside_interval(self):
        with self.assertRaises(InvalidArgumentError):
            interval_kernel_dirichlet(0.3, 1.0, 1.5, 0.2)


class TestDiamondKernel(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(3)
        self.sequences = [ParameterSequences.regular(j, n) for j in (2, 3) for n in (2, 3)]

    def test_level_zero_is_circle(self):
        seq = self.sequences[0]
        x = make_point(seq, 0.4)
        y = make_point(seq, 2.9)
        self.assertAlmostEqual(diamond_kernel_level(seq, 0, 0.7, x, y).value,
                               float(circle_kernel(0.7, 0.4, 2.9).value), delta=1e-13)

    def test_closed_matches_recursive(self):
        """Closed formula and level recursion agree on F_1 and F_2"""
        for seq in self.sequences:
            for level in (1, 2):
                for _ in range(15):
                    x = random_point(seq, level, self.rng)
                    y = make_point(seq, x.theta + self.rng.uniform(-0.3, 0.3), [1] * (level - 1) + [2])
                    for t in (0.1, 1.0):
                        closed = diamond_kernel_level(seq, level, t, x, y).value
                        recursive = diamond_kernel_recursive(seq, level, t, x, y).value
                        self.assertAlmostEqual(closed, recursive, delta=1e-9)
                        self.assertAlmostEqual(closed, diamond_kernel_level(seq, level, t, y, x).value, delta=1e-9)

    def test_parallel_copies_share_mass(self):
        """Only the copy structure separates the kernel from the circle"""
        seq = self.sequences[0]
        x = make_point(seq, 0.2, [1])
        same = diamond_kernel_level(seq, 1, 0.5, x, make_point(seq, 0.4, [1])).value
        other = diamond_kernel_level(seq, 1, 0.5, x, make_point(seq, 0.4, [2])).value
        circle = float(circle_kernel(0.5, 0.2, 0.4).value)
        self.assertAlmostEqual((same + other) / 2.0, circle, delta=1e-12)
        self.assertGreater(same, other)

    def test_kernel_matrix(self):
        """The separable evaluation reproduces the pointwise kernel"""
        seq = ParameterSequences(j=(3, 2), n=(2, 3))
        points = [random_point(seq, 2, self.rng) for _ in range(12)]
        points.append(make_point(seq, math.pi / 3, [2, 1]))
        matrix = kernel_matrix(seq, 2, 0.4, point_arrays(points), point_arrays(points)).value
        for a in (0, 5, 12):
            for b in (1, 7, 12):
                expected = diamond_kernel_level(seq, 2, 0.4, points[a], points[b]).value
                self.assertAlmostEqual(float(matrix[a, b]), expected, delta=1e-10)

    def test_limit_kernel(self):
        """Off the diagonal the limit is a finite-level value; on it the series converges"""
        seq = self.sequences[0]
        x = make_point(seq, 0.3, [1])
        y = make_point(seq, 1.2, [2])
        limit = diamond_kernel_limit(seq, 1.0, x, y).value
        self.assertAlmostEqual(limit, diamond_kernel_level(seq, 1, 1.0, x, y).value, delta=1e-12)
        diagonal = on_diagonal_series(seq, 1.0, x)
        deep = make_point(seq, 0.3, [1] * 8)
        self.assertAlmostEqual(diagonal.value, diamond_kernel_level(seq, 8, 1.0, deep, deep).value,
                               delta=1e-9)
        self.assertLess(diagonal.error, 1e-9)


class TestBatch(unittest.TestCase):
    def setUp(self):
        self.seq = ParameterSequences.regular(2, 2)
        self.output = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.output, ignore_errors=True)

    def test_parse_point(self):
        p = parse_point(self.seq, [0.5, [2, 1]])
        self.assertEqual(p.labels, (2, 1))
        with self.assertRaises(InvalidArgumentError):
            parse_point(self.seq, [0.5])

    def test_batch_csv(self):
        """Rows come out t-major and are written with labels joined by '-'"""
        pairs = [(parse_point(self.seq, [0.5, [2, 1]]), parse_point(self.seq, [1.5, [1, 2]])),
                 (parse_point(self.seq, [0.1, [1, 1]]), parse_point(self.seq, [0.2, [1, 1]]))]
        rows = evaluate_batch(self.seq, 2, [0.5, 1.0], pairs, jobs=2)
        self.assertEqual([row["t"] for row in rows], [0.5, 0.5, 1.0, 1.0])
        self.assertEqual(rows[0]["labels_x"], "2-1")
        path = write_kernel_csv(rows, os.path.join(self.output, "kernel_values.csv"))
        with open(path) as handle:
            records = list(csv.DictReader(handle))
        self.assertEqual(list(records[0].keys()), KERNEL_CSV_HEADER)
        self.assertEqual(len(records), 4)
        self.assertAlmostEqual(float(records[1]["value"]), rows[1]["value"], places=15)

    def test_empty_batch(self):
        with self.assertRaises(InvalidArgumentError):
            evaluate_batch(self.seq, 1, [1.0], [])


if __name__ == "__main__":
    unittest.main()
