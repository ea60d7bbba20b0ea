"""
Configuration module for the LSFA flooding-defense simulator
Process-level settings only; experiment parameters live in model.ScenarioConfig
"""

import os
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _env_bool(name: str, default: str) -> bool:
    return os.environ.get(name, default).strip().lower() in ('1', 'true', 'yes', 'on')


# LSFA_* variables whose value could not be used
_invalid: List[str] = []


def _env_int(name: str, default: Optional[int], minimum: int = 1) -> Optional[int]:
    """Integer setting; malformed or out-of-range values fall back to the default"""
    raw = os.environ.get(name, '').strip()
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        _invalid.append(name)
        return default
    if value < minimum:
        _invalid.append(name)
        return default
    return value


class Config:
    """Configuration management with environment variables"""

    # ========================================================================
    # LOGGING CONFIGURATION
    # ========================================================================
    LOG_LEVEL = os.environ.get('LSFA_LOG_LEVEL', 'INFO').upper()
    LOG_FILE = os.environ.get('LSFA_LOG_FILE') or None

    # ========================================================================
    # SWEEP CONFIGURATION
    # ========================================================================
    _BASE_DIR = Path(__file__).parent.absolute()

    OUTPUT_DIR = os.environ.get('LSFA_OUTPUT_DIR', str(_BASE_DIR / 'results'))

    # Parallel independent runs
    DEFAULT_JOBS = _env_int('LSFA_JOBS', 1)

    # Seeds per (ratio, defense mode) cell; unset means the scenario's experiments
    DEFAULT_SEEDS = _env_int('LSFA_SEEDS', None)

    # Misbehaving-node ratios swept by default
    DEFAULT_RATIOS = (0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30)

    SHOW_PROGRESS = _env_bool('LSFA_PROGRESS', 'true')

    INVALID_ENV = tuple(_invalid)

    # ========================================================================
    # HELPER METHODS
    # ========================================================================

    @classmethod
    def validate(cls) -> bool:
        """Validate process configuration"""
        if cls.INVALID_ENV:
            return False
        if cls.LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            return False
        return cls.DEFAULT_JOBS >= 1 and (cls.DEFAULT_SEEDS is None or cls.DEFAULT_SEEDS >= 1)
