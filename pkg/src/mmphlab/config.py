"""Run configuration shared by the builders, the labs and the CLI."""
import os
from dataclasses import dataclass, fields, replace

DEFAULT_SEED = 0x6D6D706866
SEED_ENV = "MMPHLAB_SEED"
REGIMES = ("plain", "bucketed", "big")


@dataclass(frozen=True)
class Config:
    plain_cutoff: int = 4
    regime: str = None
    inner_bucket_size: int = None
    max_outcomes: int = 2_000_000
    max_columns: int = 1 << 20
    max_sequences: int = 10_000
    output_format: str = "json"
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.plain_cutoff < 1:
            raise ValueError("plain_cutoff must be positive")
        if self.regime is not None and self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        if self.inner_bucket_size is not None and self.inner_bucket_size < 1:
            raise ValueError("inner_bucket_size must be positive")
        for name in ("max_outcomes", "max_columns", "max_sequences"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.output_format not in ("json", "csv"):
            raise ValueError("output_format must be json or csv")

    def with_(self, **changes):
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


def _coerce(name, raw):
    if name in ("regime", "output_format"):
        return raw or None
    if raw.lower() in ("", "none"):
        return None
    return int(raw, 0)


def load_config(path=None, **overrides):
    """Config from defaults, ``$MMPHLAB_SEED``, a ``key=value`` file, then overrides."""
    values = {}
    if os.environ.get(SEED_ENV):
        values["seed"] = int(os.environ[SEED_ENV], 0)
    if path is not None:
        known = {f.name for f in fields(Config)}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value")
                key, raw = (s.strip() for s in line.split("=", 1))
                if key not in known:
                    raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = _coerce(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return Config(**values)
