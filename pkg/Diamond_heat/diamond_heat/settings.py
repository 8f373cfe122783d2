"""Runtime settings: environment variables and packaged defaults."""
import json
import logging
import os
import pkgutil
from typing import Any, Dict

from dotenv import load_dotenv

load_dotenv()

OUTPUT_DIR = os.getenv("DIAMOND_HEAT_OUTPUT_DIR", "output")
DEFAULT_SEED = int(os.getenv("DIAMOND_HEAT_SEED", "42"))
LOG_LEVEL = os.getenv("DIAMOND_HEAT_LOG_LEVEL", "INFO")

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Load run defaults from the packaged data file
_defaults_json = pkgutil.get_data(__package__, "data/defaults.json")
RUN_DEFAULTS: Dict[str, Any] = json.loads(_defaults_json) if _defaults_json else {}


def configure_logging(level: str = LOG_LEVEL) -> None:
    """Configure the root logger once for command-line runs."""
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT)
    logging.getLogger().setLevel(getattr(logging, level.upper(), logging.INFO))


def run_defaults() -> Dict[str, Any]:
    """Return a fresh copy of the packaged run defaults."""
    return json.loads(json.dumps(RUN_DEFAULTS))
