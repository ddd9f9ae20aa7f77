"""Architecture and training hyperparameters in one frozen record.

The flat ``key=value`` text form is shared by config files and the
checkpoint header so a checkpoint always carries the config it was built
from.

Example
-------
>>> cfg = NetConfig(base_width=64)
>>> cfg.stage_widths
(64, 128, 256, 512, 512)
>>> NetConfig.from_text(cfg.to_text()) == cfg
True
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Any

from backend.errors import ConfigError

STAGE_MULTIPLIERS: tuple[int, ...] = (1, 2, 4, 8, 8)
DOWNSAMPLE_FACTOR: int = 16
FULL_BASE_WIDTH: int = 64
FULL_CROP: int = 400
RAM_MODES: tuple[str, ...] = ("full", "channel", "spatial")
SAM_MODES: tuple[str, ...] = ("both", "spatial", "channel")


def parse_bool(raw: str) -> bool:
    """``true``/``false`` style flag values; raises ValueError otherwise."""
    lowered = str(raw).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


@dataclass(frozen=True)
class NetConfig:
    base_width: int = 8
    input_channels: int = 3
    ram_reduction: int = 4
    ssa_reduction: int = 8
    seed: int = 0
    sigma: float = 4.0
    crop: int = 64
    flip_p: float = 0.5
    batch_size: int = 4
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 300
    log_every: int = 10
    precision: str = "f32"
    # component toggles for ablation variants
    use_ram: bool = True
    ram_mode: str = "full"
    use_sam: bool = True
    sam_mode: str = "both"
    use_amm: bool = True
    amm_square: bool = False
    dense: bool = True
    skip: bool = True

    @property
    def stage_widths(self) -> tuple[int, ...]:
        return tuple(self.base_width * m for m in STAGE_MULTIPLIERS)

    def validate(self) -> "NetConfig":
        """Return self or raise :class:`ConfigError` naming the bad key."""
        positive = ("base_width", "input_channels", "ram_reduction", "ssa_reduction",
                    "crop", "batch_size", "steps", "log_every")
        for key in positive:
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if self.crop % DOWNSAMPLE_FACTOR:
            raise ConfigError(f"crop must be divisible by {DOWNSAMPLE_FACTOR}, got {self.crop}")
        if not 0.0 <= self.flip_p <= 1.0:
            raise ConfigError(f"flip_p must lie in [0, 1], got {self.flip_p}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"beta1/beta2 must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.ram_mode not in RAM_MODES:
            raise ConfigError(f"ram_mode must be one of {RAM_MODES}, got {self.ram_mode!r}")
        if self.sam_mode not in SAM_MODES:
            raise ConfigError(f"sam_mode must be one of {SAM_MODES}, got {self.sam_mode!r}")
        return self

    def updated(self, **changes: Any) -> "NetConfig":
        return replace(self, **changes)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def coerce(cls, key: str, raw: str) -> Any:
        """Parse ``raw`` into the declared type of field ``key``."""
        types: dict[str, Any] = {f.name: f.type for f in fields(cls)}
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        kind = types[key]
        try:
            if kind in (int, "int"):
                return int(raw)
            if kind in (float, "float"):
                return float(raw)
            if kind in (bool, "bool"):
                return parse_bool(raw)
            return str(raw)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: cannot parse {raw!r} ({exc})") from exc

    def to_text(self) -> str:
        """Sorted ``key=value`` lines; floats via repr so parsing is exact."""
        values = asdict(self)
        return "".join(f"{key}={values[key]!r}\n" if isinstance(values[key], float)
                       else f"{key}={values[key]}\n" for key in sorted(values))

    @classmethod
    def from_text(cls, text: str, strict: bool = True) -> "NetConfig":
        values: dict[str, Any] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in cls.keys():
                if strict:
                    raise ConfigError(f"line {lineno}: unknown config key {key!r}")
                continue
            values[key] = cls.coerce(key, raw)
        return cls(**values)
