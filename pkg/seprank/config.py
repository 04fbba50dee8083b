"""Package-wide constants and environment overrides."""
import logging
import os

from seprank.errors import InputError

DEFAULT_RANK_TOL = 1e-8
GRID_RANK_TOL = 1e-7
DEFAULT_GRID_CAP = 1_000_000
EXACT_BITS_LIMIT = 4096
GRID_CHUNK = 2048
MAX_EXPLICIT_TERMS_C = 4
EQUILIBRATION_SWEEPS = 8
COLUMN_NORM_BAND = (1.0, 1.25)

GRID_CAP_ENV = 'SEPRANK_GRID_CAP'
LOG_LEVEL_ENV = 'SEPRANK_LOG_LEVEL'


def grid_cap():
    """Z^N cap, overridable with SEPRANK_GRID_CAP"""
    raw = os.environ.get(GRID_CAP_ENV, str(DEFAULT_GRID_CAP))
    try:
        cap = int(raw)
    except ValueError:
        raise InputError(f"{GRID_CAP_ENV} must be a positive integer, got: {raw!r}")
    if cap <= 0:
        raise InputError(f"{GRID_CAP_ENV} must be a positive integer, got: {cap}")
    return cap


def configure_logging():
    level = os.environ.get(LOG_LEVEL_ENV, 'WARNING').upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format='%(levelname)s %(name)s: %(message)s',
    )
