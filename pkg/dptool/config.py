"""Runtime configuration for dptool

Settings are read from the environment (prefix DPTOOL_) and can be
overridden per command by CLI flags.
"""

import logging
import sys
from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Tunable defaults shared by the library and the CLI."""

    model_config = SettingsConfigDict(env_prefix="DPTOOL_", extra="ignore")

    no_color: bool = False
    log_level: str = "WARNING"
    seed: int = 0
    workers: int = 1

    # belief grids: 101 points for two states, lattice with denominator 20 otherwise
    binary_grid_denominator: int = 100
    simplex_grid_denominator: int = 20

    laplace_alpha: float = 0.5
    bootstrap_resamples: int = 1000
    bootstrap_level: float = 0.95
    learning_pseudo_count: float = 1.0


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Return the process-wide settings instance."""
    return Settings()


def configure_logging(level: str = "WARNING"):
    """Send log records to stderr; stdout is reserved for reports."""
    root = logging.getLogger()
    for handler in [h for h in root.handlers if getattr(h, "_dptool", False)]:
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler._dptool = True
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(level.upper())
