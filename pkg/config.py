"""
Environment configuration for failspec.

Values are read once at import time from the process environment, after
loading a local .env file if one exists. Command-line flags override these.
"""
import os

from dotenv import load_dotenv

load_dotenv()

# --- Execution ---
WORKERS = int(os.environ.get("FAILSPEC_WORKERS", "1"))
BATCH_SIZE = int(os.environ.get("FAILSPEC_BATCH_SIZE", "2000"))

# --- Logging ---
LOG_LEVEL = os.environ.get("FAILSPEC_LOG_LEVEL", "INFO").upper()
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

# --- Splitting ---
DECODER_CACHE_SIZE = int(os.environ.get("FAILSPEC_DECODER_CACHE", "65536"))

# --- Artifacts ---
OUTPUT_DIR = os.environ.get("FAILSPEC_OUTPUT_DIR", "runs")


def worker_count(flag_value=None):
    """Worker count with flag > environment > default precedence."""
    if flag_value is not None:
        return max(1, int(flag_value))
    return max(1, WORKERS)
