"""Configuration utilities for hardball"""

import os
import logging
from pathlib import Path
from typing import Dict, Any, Optional
from dotenv import load_dotenv

# Load environment variables from .env file if present
load_dotenv()

logger = logging.getLogger(__name__)

ENV_PREFIX = "HARDBALL_"

# Built-in defaults, overridden by config file, environment and CLI flags
DEFAULTS: Dict[str, Any] = {
    "nu": 2,
    "k": 2,
    "r": 0.1,
    "seed": 0,
    "tol_event": 1e-12,
    "tol_graze": 1e-10,
    "tol_rank": 1e-8,
    "tol_fold": 1e-9,
    "tol_contact": 1e-9,
    "tol_drift": 1e-9,
    "events": 100,
    "collisions": 50,
    "time": 10.0,
    "samples": 100,
    "orbits": 4,
    "ensemble": 10000,
    "observable": "proximity",
    "axis": 1,
    "period": 1.0,
    "window": 3,
    "at": "start",
    "workers": 1,
    "log_level": "INFO",
}


def parse_value(raw: str) -> Any:
    """Parse a config value into int, float, bool or str"""
    text = raw.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


class Config:
    """Configuration manager for hardball"""

    def __init__(self, config_path: Optional[str] = None):
        """Initialize the configuration manager

        Args:
            config_path: Path to a flat ``key = value`` configuration file
        """
        self.config_path = config_path
        self.config: Dict[str, Any] = {}
        self._overrides: Dict[str, Any] = {}
        if config_path:
            self._load()

    def _load(self):
        """Load the configuration file

        Raises:
            FileNotFoundError: if the file does not exist
            ValueError: on a line that is not ``key = value``
        """
        config_file = Path(self.config_path)
        if not config_file.exists():
            raise FileNotFoundError(f"Config file not found: {self.config_path}")

        with open(config_file, 'r') as f:
            for lineno, line in enumerate(f, start=1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise ValueError(f"{self.config_path}:{lineno}: expected 'key = value', got {line.strip()!r}")
                key, value = stripped.split("=", 1)
                key = key.strip().replace("-", "_")
                self.config[key] = parse_value(value)
        logger.debug(f"Loaded {len(self.config)} keys from {self.config_path}")

    def get(self, key, default=None):
        """Get a configuration value

        Args:
            key: The configuration key (dots and dashes map to underscores)
            default: Default value if the key doesn't exist anywhere

        Returns:
            The configuration value
        """
        key = key.replace("-", "_").replace(".", "_")
        if key in self._overrides:
            return self._overrides[key]

        # Check environment variable first (with HARDBALL_ prefix)
        env_value = os.environ.get(ENV_PREFIX + key.upper())
        if env_value is not None:
            return parse_value(env_value)

        if key in self.config:
            return self.config[key]
        if default is not None:
            return default
        return DEFAULTS.get(key)

    def set(self, key, value):
        """Set a configuration value in memory (wins over env and file)

        Args:
            key: The configuration key
            value: The value to set
        """
        self._overrides[key.replace("-", "_").replace(".", "_")] = value

    def as_dict(self) -> Dict[str, Any]:
        """Merged view of defaults, file, environment and overrides"""
        keys = set(DEFAULTS) | set(self.config) | set(self._overrides)
        return {key: self.get(key) for key in sorted(keys)}
