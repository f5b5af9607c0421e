"""Application configuration from a TOML or JSON file.

Resolution order: built-in defaults, then the file named by --config, with
the MLEGO_CONFIG environment variable overriding the file path.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .lda import LdaConfig
from .planner import CostModel

ENV_VAR = "MLEGO_CONFIG"


@dataclass
class AppConfig:
    data_dir: Path = Path("./mlego-data")
    host: str = "127.0.0.1"
    port: int = 8080
    max_parallel_jobs: int = 2
    seed: int = 0
    decay: float = 1.0
    lda: LdaConfig = field(default_factory=LdaConfig)
    cost: CostModel = field(default_factory=CostModel)

    @staticmethod
    def from_dict(obj: dict) -> "AppConfig":
        cfg = AppConfig()
        cfg.data_dir = Path(obj.get("data_dir", cfg.data_dir))
        cfg.host = obj.get("host", cfg.host)
        cfg.port = int(obj.get("port", cfg.port))
        cfg.max_parallel_jobs = int(obj.get("max_parallel_jobs", cfg.max_parallel_jobs))
        cfg.seed = int(obj.get("seed", cfg.seed))
        cfg.decay = float(obj.get("decay", cfg.decay))
        if "lda" in obj:
            cfg.lda = LdaConfig.from_json(obj["lda"])
        if "cost" in obj:
            cfg.cost = CostModel.from_json(obj["cost"])
        return cfg


def load_config(path: str | Path | None = None) -> AppConfig:
    """Load configuration; MLEGO_CONFIG overrides the supplied path."""
    env_path = os.environ.get(ENV_VAR)
    chosen = Path(env_path) if env_path else (Path(path) if path else None)
    if chosen is None:
        return AppConfig()
    raw = chosen.read_bytes()
    if chosen.suffix in (".toml", ".tml"):
        return AppConfig.from_dict(tomllib.loads(raw.decode("utf-8")))
    return AppConfig.from_dict(json.loads(raw.decode("utf-8")))
