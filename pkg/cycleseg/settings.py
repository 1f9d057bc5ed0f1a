"""
Process-level settings for the cycleseg package.

Values come from the environment, optionally seeded from project-level dotenv
files. Run-level hyperparameters live in `runconfig.RunConfig` instead.
"""

import logging
import os
from pathlib import Path

from dotenv import load_dotenv
from pythonjsonlogger.json import JsonFormatter

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# `.env.local` can override `.env` for machine-specific configuration.
load_dotenv(BASE_DIR / '.env')
load_dotenv(BASE_DIR / '.env.local', override=True)


# Helper functions for environment variable parsing
def _env_bool(name: str, default: bool) -> bool:
    """Parse environment variable as boolean."""
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in {'1', 'true', 'yes', 'on'}


def _env_int(name: str, default: int, minimum: int) -> int:
    """Parse environment variable as integer with minimum."""
    value = os.getenv(name)
    if value is None:
        return default
    try:
        parsed = int(value)
    except (TypeError, ValueError):
        return default
    return max(parsed, minimum)


def _env_float(name: str, default: float, minimum: float) -> float:
    """Parse environment variable as float with minimum."""
    value = os.getenv(name)
    if value is None:
        return default
    try:
        parsed = float(value)
    except (TypeError, ValueError):
        return default
    return max(parsed, minimum)


# ============================================================================
# Numerics
# ============================================================================

# Assert finite values after every recorded tensor operation.
DEBUG = _env_bool('CYCLESEG_DEBUG', False)

# Central-difference steps and tolerances of the gradient oracle.
GRADCHECK_STEP_PRIMITIVE = _env_float('CYCLESEG_GRADCHECK_STEP_PRIMITIVE', 1e-5, 1e-9)
GRADCHECK_STEP_COMPOSED = _env_float('CYCLESEG_GRADCHECK_STEP_COMPOSED', 1e-6, 1e-9)
GRADCHECK_TOL_PRIMITIVE = 1e-5
GRADCHECK_TOL_COMPOSED = 1e-4


# ============================================================================
# Workers & Outputs
# ============================================================================

THREADS = _env_int('CYCLESEG_THREADS', os.cpu_count() or 1, 1)

OUTPUT_DIR = Path(os.getenv('CYCLESEG_OUTPUT_DIR', str(BASE_DIR / 'runs')))

# Strategy a) refuses to enumerate more tuples than this.
STRATEGY_CAP = _env_int('CYCLESEG_STRATEGY_CAP', 10_000, 1)


# ============================================================================
# Logging
# ============================================================================

LOG_LEVEL = os.getenv('CYCLESEG_LOG_LEVEL', 'INFO').upper()
LOG_JSON = _env_bool('CYCLESEG_LOG_JSON', False)


def configure_logging(level: str = LOG_LEVEL, json_records: bool = LOG_JSON) -> logging.Logger:
    """Attach a single stream handler to the package logger.

    Args:
        level: Logging level name
        json_records: Emit JSON records instead of plain text

    Returns:
        The configured `cycleseg` logger
    """
    package_logger = logging.getLogger('cycleseg')
    package_logger.setLevel(level)
    for handler in list(package_logger.handlers):
        package_logger.removeHandler(handler)

    handler = logging.StreamHandler()
    if json_records:
        handler.setFormatter(JsonFormatter('%(asctime)s %(levelname)s %(name)s %(message)s'))
    else:
        handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(name)s: %(message)s'))
    package_logger.addHandler(handler)
    package_logger.propagate = False
    return package_logger
