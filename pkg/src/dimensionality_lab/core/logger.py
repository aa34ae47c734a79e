import logging
import logging.config
import os
from pathlib import Path

import yaml

LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()


def configure(config_file: str | Path):
    """
    Load the dictConfig YAML file, falling back to a plain stderr setup when it is missing
    """
    config_file = Path(config_file)
    if not config_file.is_file():
        logging.basicConfig(level=logging.INFO, format="[%(asctime)s] %(levelname)s %(message)s")
        return

    with open(config_file, "r") as f:
        logging.config.dictConfig(yaml.safe_load(f))


def channel(name: str):
    """
    Helper to obtain a logger for the specified channel
    """
    # get the base logger with channel name and set level
    base = logging.getLogger(f"dimlab.{name.lower()}")
    base.setLevel(logging.getLevelName(LOG_LEVEL))

    return logging.LoggerAdapter(base, {"channel": name.upper()})
