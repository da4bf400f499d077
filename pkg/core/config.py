# core/config.py

import os
from typing import Literal

from pydantic import BaseModel

# Try to load .env file if python-dotenv is available
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass  # python-dotenv is optional


class Settings(BaseModel):
    """Process-wide defaults read from the environment."""

    seed: int = 12345
    scale: Literal["desk", "full"] = "desk"
    output_dir: str = "results"
    log_level: str = "INFO"
    block_size: int = 1000
    oracle_limit: int = 10_000_000


def get_settings() -> Settings:
    """
    Build Settings from BELLTAG_* environment variables.

    Unset variables fall back to the model defaults. Values are read on every
    call so tests can patch the environment.
    """
    defaults = Settings()
    return Settings(
        seed=int(os.getenv("BELLTAG_SEED", defaults.seed)),
        scale=os.getenv("BELLTAG_SCALE", defaults.scale),
        output_dir=os.getenv("BELLTAG_OUTPUT_DIR", defaults.output_dir),
        log_level=os.getenv("BELLTAG_LOG_LEVEL", defaults.log_level).upper(),
        block_size=int(os.getenv("BELLTAG_BLOCK_SIZE", defaults.block_size)),
        oracle_limit=int(os.getenv("BELLTAG_ORACLE_LIMIT", defaults.oracle_limit)),
    )
