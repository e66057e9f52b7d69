"""
TinySpeech Engine Settings

Run-time constants and environment handling.

Numeric defaults (training hyperparameters, deployment constraints, reference
budgets) are plain module constants. The environment only controls
presentation (log level) so every run is reproducible from its arguments and
input files.

Environment variables (optional, loaded from .env.local / .env):
    TINYSPEECH_LOG_LEVEL=INFO
"""

import os
import logging
from dataclasses import dataclass
from typing import Dict

from dotenv import load_dotenv

# Load environment variables (first file found wins)
for env_path in ['.env.local', '.env', '../.env.local', '../.env']:
    if os.path.exists(env_path):
        load_dotenv(dotenv_path=env_path)
        break


LOG_FORMAT = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'


def get_log_level() -> int:
    """Resolve TINYSPEECH_LOG_LEVEL to a logging level (default INFO)."""
    name = os.getenv('TINYSPEECH_LOG_LEVEL', 'INFO').upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO


def configure_logging(level: int = None) -> None:
    """Configure the root logger for entry points."""
    logging.basicConfig(
        level=level if level is not None else get_log_level(),
        format=LOG_FORMAT,
        datefmt=LOG_DATEFMT,
    )


# =============================================================================
# TRAINING DEFAULTS
# =============================================================================

@dataclass(frozen=True)
class Hyperparameters:
    """SGD hyperparameters used to train the published networks."""
    learning_rate: float
    momentum: float
    epochs: int
    batch_size: int


DEFAULT_HYPERPARAMS = Hyperparameters(
    learning_rate=0.01,
    momentum=0.9,
    epochs=50,
    batch_size=64,
)


# =============================================================================
# DEPLOYMENT CONSTRAINTS
# =============================================================================

MIN_VAL_ACCURACY = 0.90
MAX_PARAMS = 15000          # exclusive bound
REQUIRED_WEIGHT_BITS = 8


# =============================================================================
# REFERENCE BUDGETS
# =============================================================================

@dataclass(frozen=True)
class ReferenceBudget:
    """Published complexity figures for one TinySpeech network."""
    name: str
    config_file: str
    params: int
    mult_adds: int
    test_accuracy: float


REFERENCE_BUDGETS: Dict[str, ReferenceBudget] = {
    'x': ReferenceBudget('TinySpeech-X', 'tinyspeech-x.cfg', 10800, 10_900_000, 0.946),
    'y': ReferenceBudget('TinySpeech-Y', 'tinyspeech-y.cfg', 6100, 6_500_000, 0.936),
    'z': ReferenceBudget('TinySpeech-Z', 'tinyspeech-z.cfg', 2700, 2_600_000, 0.924),
    'm': ReferenceBudget('TinySpeech-M', 'tinyspeech-m.cfg', 4700, 4_400_000, 0.919),
}

# Shipped templates must land within this fraction of the published params
TEMPLATE_BUDGET_TOLERANCE = 0.05


# =============================================================================
# MODEL FILE FORMAT
# =============================================================================

MODEL_MAGIC = b'TSPN'
MODEL_FORMAT_VERSION = 1
