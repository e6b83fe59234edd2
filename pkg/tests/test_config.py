"""
Tests for configuration and logging utilities
"""

import logging
import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from hardball.utils.config import DEFAULTS, Config, parse_value
from hardball.utils.logging import setup_logging


class TestParseValue(unittest.TestCase):
    """Test config value parsing"""

    def test_types(self):
        """Test ints, floats, booleans, quoted and bare strings"""
        self.assertEqual(parse_value("3"), 3)
        self.assertEqual(parse_value(" 0.12 "), 0.12)
        self.assertIs(parse_value("yes"), True)
        self.assertIs(parse_value("Off"), False)
        self.assertEqual(parse_value("'42'"), "42")
        self.assertEqual(parse_value("proximity"), "proximity")


class TestConfig(unittest.TestCase):
    """Test the layered configuration"""

    def setUp(self):
        """Set up test fixtures"""
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "hardball.conf"
        self.path.write_text("# run settings\nr = 0.12\nlog-level = DEBUG  # inline comment\n\nobservable = energy\n")

    def tearDown(self):
        """Clean up test fixtures"""
        self.tmp.cleanup()

    def test_defaults(self):
        """Test that unset keys fall back to built-in defaults"""
        config = Config()
        self.assertEqual(config.get("nu"), DEFAULTS["nu"])
        self.assertEqual(config.get("missing", "fallback"), "fallback")
        self.assertIsNone(config.get("missing"))

    def test_file(self):
        """Test values read from a config file"""
        config = Config(str(self.path))
        self.assertEqual(config.get("r"), 0.12)
        self.assertEqual(config.get("log_level"), "DEBUG")
        self.assertEqual(config.get("observable"), "energy")

    def test_precedence(self):
        """Test overrides over environment over file over defaults"""
        config = Config(str(self.path))
        with patch.dict(os.environ, {"HARDBALL_R": "0.15"}):
            self.assertEqual(config.get("r"), 0.15)
            config.set("r", 0.2)
            self.assertEqual(config.get("r"), 0.2)

    def test_as_dict(self):
        """Test the merged view"""
        config = Config(str(self.path))
        merged = config.as_dict()
        self.assertEqual(merged["r"], 0.12)
        self.assertEqual(merged["k"], DEFAULTS["k"])

    def test_missing_file(self):
        """Test that a missing config file is an error"""
        with self.assertRaises(FileNotFoundError):
            Config(str(Path(self.tmp.name) / "absent.conf"))

    def test_malformed_line(self):
        """Test that a line without '=' is an error"""
        self.path.write_text("r 0.12\n")
        with self.assertRaises(ValueError):
            Config(str(self.path))


class TestLogging(unittest.TestCase):
    """Test logger setup"""

    def test_single_console_handler(self):
        """Test that repeated setup does not stack handlers"""
        logger = setup_logging()
        count = len(logger.handlers)
        again = setup_logging(logging.WARNING)
        self.assertIs(logger, again)
        self.assertEqual(len(again.handlers), count)
        self.assertEqual(again.level, logging.WARNING)
        setup_logging(logging.INFO)

    def test_file_handler(self):
        """Test that a log file gets one handler and receives records"""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "logs" / "run.log"
            logger = setup_logging(log_file=str(path))
            setup_logging(log_file=str(path))
            handlers = [h for h in logger.handlers if isinstance(h, logging.FileHandler)]
            self.assertEqual(len(handlers), 1)
            logger.error("file handler check")
            handlers[0].flush()
            self.assertIn("file handler check", path.read_text())
            logger.removeHandler(handlers[0])
            handlers[0].close()


if __name__ == "__main__":
    unittest.main()
