# test_cli.py
import csv
import json
import os
import shutil
import sys
import tempfile
import unittest

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from diamond_heat.cli import (
    EXIT_CHECK_FAILED,
    EXIT_OK,
    EXIT_USAGE,
    build_parser,
    main,
    parse_grid,
    resolve_config,
)
from diamond_heat.exceptions import InvalidArgumentError
from diamond_heat.kernels import diamond_kernel_level, parse_point
from diamond_heat.params import ParameterSequences
from diamond_heat.semigroup import apply_semigroup, grid_function, save_csv


class TestCommands(unittest.TestCase):
    def setUp(self):
        """Temporary output directory per test"""
        self.output = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.output, ignore_errors=True)

    def _run(self, *argv, output=None):
        return main(list(argv) + ["--output", output or self.output, "--quiet"])

    def _rows(self, name, output=None):
        with open(os.path.join(output or self.output, name)) as handle:
            return list(csv.DictReader(handle))

    def _write_json(self, name, payload):
        path = os.path.join(self.output, name)
        with open(path, "w") as handle:
            json.dump(payload, handle)
        return path

    def test_bounds(self):
        code = self._run("bounds", "--regular", "2", "2", "--t-grid", "0.1,1.0")
        self.assertEqual(code, EXIT_OK)
        rows = self._rows("bounds.csv")
        self.assertEqual(len(rows), 2)
        self.assertAlmostEqual(float(rows[1]["lipschitz"]), 0.45624, delta=1e-5)

    def test_kernel_with_pairs_file(self):
        """Listed pairs are evaluated on F_level"""
        pairs = self._write_json("pairs.json", [[[0.5, [2]], [1.5, [1]]]])
        code = self._run("kernel", "--regular", "2", "2", "--level", "1", "--t", "1.0", "--pairs", pairs)
        self.assertEqual(code, EXIT_OK)
        rows = self._rows("kernel_values.csv")
        self.assertEqual(len(rows), 1)
        self.assertEqual(rows[0]["labels_x"], "2")
        seq = ParameterSequences.regular(2, 2)
        expected = diamond_kernel_level(seq, 1, 1.0, parse_point(seq, [0.5, [2]]), parse_point(seq, [1.5, [1]])).value
        self.assertAlmostEqual(float(rows[0]["value"]), expected, delta=1e-12)

    def test_reruns_are_identical(self):
        """Random pairs come from the seed, so artifacts repeat byte for byte"""
        second = tempfile.mkdtemp()
        try:
            for output in (self.output, second):
                code = self._run("kernel", "--regular", "3", "2", "--level", "2", "--t-grid", "0.1,1.0",
                                 "--samples", "5", "--seed", "9", output=output)
                self.assertEqual(code, EXIT_OK)
            with open(os.path.join(self.output, "kernel_values.csv"), "rb") as a, \
                    open(os.path.join(second, "kernel_values.csv"), "rb") as b:
                self.assertEqual(a.read(), b.read())
        finally:
            shutil.rmtree(second, ignore_errors=True)

    def test_distance_with_limit(self):
        code = self._run("distance", "--regular", "2", "2", "--level", "2", "--samples", "5", "--limit", "--tol", "1e-6")
        self.assertEqual(code, EXIT_OK)
        rows = self._rows("distances.csv")
        self.assertEqual(len(rows), 5)
        for row in rows:
            self.assertLessEqual(float(row["lower"]), float(row["distance"]) + 1e-12)
            self.assertLessEqual(float(row["distance"]), float(row["upper"]) + 1e-12)
            self.assertIn("distance_limit", row)

    def test_oracle_compare(self):
        code = self._run("oracle-compare", "--regular", "2", "2", "--level", "0", "--m", "21", "--t", "1.0",
                         "--samples", "5")
        self.assertEqual(code, EXIT_OK)
        rows = self._rows("oracle_compare.csv")
        self.assertEqual([int(row["m"]) for row in rows], [21, 41])

    def test_assumption(self):
        """Admissible sequences exit 0; superexponential copies exit 1"""
        self.assertEqual(self._run("assumption", "--regular", "2", "3", "--t-grid", "0.1,1.0"), EXIT_OK)
        with open(os.path.join(self.output, "assumption.json")) as handle:
            report = json.load(handle)
        self.assertEqual(len(report["entries"]), 2)
        self.assertEqual(report["entries"][0]["verdict"], "pass")

        config = self._write_json("explosive.json", {
            "params": {"j": [2] * 6, "n": [10 ** (3 ** l) for l in range(1, 7)]},
            "t_grid": [0.1],
        })
        self.assertEqual(self._run("assumption", "--config", config), EXIT_CHECK_FAILED)

    def test_verify_subset(self):
        code = self._run("verify", "--regular", "2", "2", "--levels", "1", "--checks", "series_bounds", "representations")
        self.assertEqual(code, EXIT_OK)
        with open(os.path.join(self.output, "verify_report.json")) as handle:
            report = json.load(handle)
        self.assertEqual(report["summary"]["failed"], 0)
        self.assertEqual(len(report["checks"]), 4)

    def test_semigroup_on_loaded_grid(self):
        """P_t applied to a grid function read from CSV, one block of rows per t"""
        seq = ParameterSequences.regular(2, 2)
        f = grid_function(seq, 1, 9, lambda theta, labels: 1.0 + 0.5 * np.cos(theta)
                          + 0.1 * (labels[..., 0] - 1.5) * np.sin(2 * theta))
        path = save_csv(f, os.path.join(self.output, "f.csv"))
        code = self._run("semigroup", "--regular", "2", "2", "--level", "1", "--t-grid", "0.5,1.0", "--input", path)
        self.assertEqual(code, EXIT_OK)
        rows = self._rows("semigroup_values.csv")
        self.assertEqual(len(rows), 2 * 8 * 9)
        self.assertEqual({float(row["t"]) for row in rows[:72]}, {0.5})
        values = np.array([float(row["value"]) for row in rows[:72]]).reshape(8, 9)
        np.testing.assert_allclose(values, apply_semigroup(f, 0.5).values, atol=1e-12)
        self.assertEqual(self._run("semigroup", "--regular", "2", "2", "--level", "1"), EXIT_USAGE)
        self.assertEqual(self._run("semigroup", "--regular", "2", "2", "--level", "2", "--input", path), EXIT_USAGE)

    def test_usage_errors(self):
        """Unknown flags, unknown config keys and invalid values exit 2"""
        self.assertEqual(self._run("bounds", "--bogus"), EXIT_USAGE)
        self.assertEqual(self._run("bounds", "--config", self._write_json("bad.json", {"colour": "blue"})), EXIT_USAGE)
        self.assertEqual(self._run("bounds", "--t", "-1"), EXIT_USAGE)
        self.assertEqual(self._run("verify", "--checks", "nothing"), EXIT_USAGE)
        self.assertEqual(self._run("kernel", "--j", "2", "--n", "2", "3"), EXIT_USAGE)
        self.assertEqual(main([]), EXIT_USAGE)


class TestConfigResolution(unittest.TestCase):
    def setUp(self):
        self.output = tempfile.mkdtemp()
        self.config = os.path.join(self.output, "run.json")
        with open(self.config, "w") as handle:
            json.dump({"params": {"regular": [3, 2]}, "m": 101, "level": 3, "t_grid": "0.5,2.0"}, handle)

    def tearDown(self):
        shutil.rmtree(self.output, ignore_errors=True)

    def _resolve(self, *argv):
        return resolve_config(build_parser().parse_args(list(argv)))

    def test_defaults(self):
        config = self._resolve("bounds")
        self.assertEqual(config.m, 200)
        self.assertEqual(config.sequences.regular_pair, (2, 2))

    def test_flags_override_file(self):
        """defaults < config file < flags"""
        config = self._resolve("bounds", "--config", self.config, "--m", "51")
        self.assertEqual(config.m, 51)
        self.assertEqual(config.level, 3)
        self.assertEqual(config.levels, 2)
        self.assertEqual(config.t_grid, [0.5, 2.0])
        self.assertEqual(config.sequences.regular_pair, (3, 2))
        config = self._resolve("bounds", "--config", self.config, "--regular", "2", "3", "--t", "0.7")
        self.assertEqual(config.sequences.regular_pair, (2, 3))
        self.assertEqual(config.t_grid, [0.7])

    def test_explicit_sequences_replace_regular(self):
        config = self._resolve("bounds", "--config", self.config, "--j", "3", "2", "--n", "2", "3",
                               "--tail-j", "2", "--tail-n", "2")
        seq = config.sequences
        self.assertEqual((seq.j, seq.n, seq.tail), ((3, 2), (2, 3), (2, 2)))


class TestGrids(unittest.TestCase):
    def test_grid_forms(self):
        log_grid = parse_grid("0.1:10:log3")
        self.assertEqual(len(log_grid), 3)
        for value, expected in zip(log_grid, (0.1, 1.0, 10.0)):
            self.assertAlmostEqual(value, expected, places=12)
        self.assertEqual(parse_grid("0:1:lin3"), [0.0, 0.5, 1.0])
        self.assertEqual(parse_grid("1, 2,3"), [1.0, 2.0, 3.0])

    def test_bad_grids(self):
        for text in ("1:2:foo3", "0:1:log3", "a,b", "1:2"):
            with self.assertRaises(InvalidArgumentError):
                parse_grid(text)


if __name__ == "__main__":
    unittest.main()
