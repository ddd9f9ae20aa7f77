"""backend.utils.config_loader
+------------------------------------------------
Resolve a :class:`NetConfig` from its layered sources.

Precedence, lowest first: dataclass defaults, the ``key=value`` config
file, ``SACCN_SEED`` (seed only, when neither file nor flag sets it), then
flags the user passed explicitly.

Example
-------
>>> loader = ConfigLoader(environ={"SACCN_SEED": "11"})
>>> loader.resolve(overrides={"base_width": 4}).seed
11
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any, Mapping

from backend.errors import ConfigError
from backend.models.net_config import NetConfig

logger = logging.getLogger(__name__)

SEED_ENV: str = "SACCN_SEED"


class ConfigLoader:
    """Merge defaults, a config file, the environment and explicit flags."""

    def __init__(self, defaults: NetConfig | None = None, environ: Mapping[str, str] | None = None) -> None:
        self.__defaults: NetConfig = defaults or NetConfig()
        self.__environ: Mapping[str, str] = os.environ if environ is None else environ
        self.__sources: dict[str, str] = {}

    @property
    def sources(self) -> dict[str, str]:
        """Where each non-default key came from after the last :meth:`resolve`."""
        return dict(self.__sources)

    def read_file(self, path: str | Path) -> dict[str, Any]:
        """Parse a config file into typed values; unknown keys are fatal."""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"config file {path}: {exc.strerror or exc}") from exc
        values: dict[str, Any] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = (part.strip() for part in body.split("=", 1))
            if key not in NetConfig.keys():
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = NetConfig.coerce(key, raw)
            except ConfigError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
        return values

    def env_seed(self) -> int | None:
        raw = self.__environ.get(SEED_ENV)
        if raw is None or not raw.strip():
            return None
        try:
            seed = int(raw)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from exc
        if seed < 0:
            raise ConfigError(f"{SEED_ENV}={raw!r} must be non-negative")
        return seed

    def resolve(
        self,
        config_path: str | Path | None = None,
        overrides: Mapping[str, Any] | None = None,
    ) -> NetConfig:
        merged: dict[str, Any] = {}
        self.__sources = {}
        if config_path is not None:
            for key, value in self.read_file(config_path).items():
                merged[key] = value
                self.__sources[key] = str(config_path)
        overrides = dict(overrides or {})
        if "seed" not in merged and "seed" not in overrides:
            seed = self.env_seed()
            if seed is not None:
                merged["seed"] = seed
                self.__sources["seed"] = SEED_ENV
        for key, value in overrides.items():
            if key not in NetConfig.keys():
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = value
            self.__sources[key] = "flag"
        config = self.__defaults.updated(**merged).validate()
        logger.debug("Resolved config from %s", self.__sources or "defaults")
        return config
