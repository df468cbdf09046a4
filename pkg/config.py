import logging
import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

PROBE_LOG = os.getenv("PROBE_LOG", "warn")
PROBE_SEED = int(os.getenv("PROBE_SEED", "0"))
PROBE_THREADS = int(os.getenv("PROBE_THREADS", "1"))

# RMSGD defaults
RMSGD_ALPHA = float(os.getenv("RMSGD_ALPHA", "0.9"))
RMSGD_BETA = float(os.getenv("RMSGD_BETA", "0.98"))
RMSGD_ZETA = float(os.getenv("RMSGD_ZETA", "1.0"))
RMSGD_ETA0 = float(os.getenv("RMSGD_ETA0", "0.03"))

LR_FLOOR = 1e-8
LR_BOUND_FACTOR = 10.0
GRADCHECK_STEP = 1e-5
NOISE_SEARCH_XTOL = 1e-12

LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def configure_logging(level=None):
    name = (level or PROBE_LOG).strip().lower()
    if name not in LOG_LEVELS:
        raise ValueError(f"PROBE_LOG must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(
        level=LOG_LEVELS[name],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    return LOG_LEVELS[name]
