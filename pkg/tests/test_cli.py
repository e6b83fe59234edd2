"""
Tests for the hardball command line
"""

import io
import json
import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from hardball.cli.main import build_parser, main
from hardball.core.errors import StreamMismatch


class TestCommandLine(unittest.TestCase):
    """Test commands, layered settings and exit codes"""

    def setUp(self):
        """Set up test fixtures"""
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        """Clean up test fixtures"""
        self.tmp.cleanup()

    def _run(self, *argv):
        """Run a command writing to a file; returns (exit code, output lines)"""
        out = self.dir / "out.jsonl"
        code = main(list(argv) + ["--out", str(out), "--log-level", "ERROR"])
        lines = out.read_text().splitlines() if out.exists() else []
        return code, lines

    def test_simulate(self):
        """Test a header, 100 event lines and an end record"""
        code, lines = self._run("simulate", "--events", "100")
        self.assertEqual(code, 0)
        self.assertEqual(len(lines), 102)
        self.assertEqual(json.loads(lines[0])["record"], "header")
        self.assertEqual(json.loads(lines[-1])["n_events"], 100)

    def test_simulate_to_stdout(self):
        """Test that output goes to standard output without --out"""
        with patch("sys.stdout", new_callable=io.StringIO) as stdout:
            code = main(["simulate", "--events", "3", "--log-level", "ERROR"])
        self.assertEqual(code, 0)
        self.assertEqual(len(stdout.getvalue().splitlines()), 5)

    def test_pair_system(self):
        """Test the torus pair log"""
        code, lines = self._run("simulate", "--events", "4", "--system", "pair")
        self.assertEqual(code, 0)
        self.assertEqual(json.loads(lines[0])["subsystem"], "pair")
        self.assertEqual(len(lines), 6)

    def test_census(self):
        """Test a small census document"""
        code, lines = self._run("census", "--samples", "2", "--collisions", "5")
        self.assertEqual(code, 0)
        report = json.loads("\n".join(lines))
        self.assertEqual(report["n_samples"], 2)

    def test_symbolic(self):
        """Test the symbolic sequence document"""
        code, lines = self._run("symbolic", "--collisions", "5")
        self.assertIn(code, (0, 2))
        if code == 0:
            self.assertEqual(len(json.loads("\n".join(lines))["t_sigma"]), 5)

    def test_precedence(self):
        """Test flag over environment over config file over defaults"""
        conf = self.dir / "hardball.conf"
        conf.write_text("r = 0.12\nseed = 3\n")
        with patch.dict(os.environ, {"HARDBALL_SEED": "5"}):
            _, lines = self._run("simulate", "--events", "1", "--config", str(conf))
            header = json.loads(lines[0])
            self.assertEqual(header["seed"], 5)
            self.assertEqual(header["params"]["r"], 0.12)
            _, lines = self._run("simulate", "--events", "1", "--config", str(conf), "--seed", "9", "--r", "0.15")
            header = json.loads(lines[0])
            self.assertEqual(header["seed"], 9)
            self.assertEqual(header["params"]["r"], 0.15)

    def test_usage_errors(self):
        """Test exit code 1 for bad flags, bad values and a missing config file"""
        with patch("sys.stderr", new_callable=io.StringIO):
            self.assertEqual(main(["simulate", "--bogus"]), 1)
            self.assertEqual(main(["simulate", "--r", "0.3", "--events", "1"]), 1)
            self.assertEqual(main(["simulate", "--config", str(self.dir / "absent.conf")]), 1)
            self.assertEqual(main([]), 1)

    def test_precondition_exit(self):
        """Test exit code 2 for a census without wall axes"""
        code, _ = self._run("census", "--k", "0", "--samples", "1")
        self.assertEqual(code, 2)

    def test_numerical_failure_exit(self):
        """Test exit code 3 when the product streams disagree"""
        with patch("hardball.cli.main.check_product_decomposition", side_effect=StreamMismatch("diverged")):
            code, _ = self._run("product-check", "--events", "3")
        self.assertEqual(code, 3)

    def test_version_and_help(self):
        """Test that --version and --help exit cleanly"""
        with patch("sys.stdout", new_callable=io.StringIO) as stdout:
            self.assertEqual(main(["--version"]), 0)
            self.assertIn("hardball version", stdout.getvalue())
            self.assertEqual(main(["--help"]), 0)

    def test_parser_defaults_are_unset(self):
        """Test that flags default to None so settings can be layered"""
        args = build_parser().parse_args(["lyapunov"])
        self.assertIsNone(args.events)
        self.assertIsNone(args.period)
        self.assertIsNone(args.system)


if __name__ == "__main__":
    unittest.main()
