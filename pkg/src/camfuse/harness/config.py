"""Run configuration and the flat ``key = value`` config file format."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

TASKS = ("ad_cn", "cn_mci", "ad_mci")


@dataclass
class RunConfig:
    task: str = "ad_cn"
    epochs: int = 40
    pretrain_epochs: int = 20
    batch_size: int = 4
    lr: float = 1e-4
    lam: float = 0.5
    seed: int = 0
    volume_size: int = 32
    folds: int = 10
    freeze_specific: bool = True
    mse_paper_exact: bool = False
    n_prototypes: int = 64
    use_tca: bool = True
    use_ccfe: bool = True
    use_ssff: bool = True

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        for name in ("epochs", "batch_size", "volume_size", "folds", "n_prototypes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.pretrain_epochs < 0:
            raise ValueError("pretrain_epochs must be non-negative")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in fields(RunConfig)}
    if name not in types:
        raise KeyError(f"unknown config key {name!r}")
    kind = types[name]
    if kind in ("bool", bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: cannot read {raw!r} as a boolean")
    if kind in ("int", int):
        return int(raw)
    if kind in ("float", float):
        return float(raw)
    return raw.strip()


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "lambda":
            key = "lam"
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if path is not None:
        with open(path) as fh:
            values.update(parse_config_text(fh.read()))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg = RunConfig.from_dict(values)
    cfg.validate()
    return cfg
