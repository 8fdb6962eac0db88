"""Flat ``key = value`` experiment configuration files.

Lines are ``key = value``; ``#`` starts a comment. List-valued keys take
comma-separated items. Every key must be known for the config's kind, and the
value is converted to the type of the key's default.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from .sampling import build_grid

RESOLVED_NAME = "resolved_config.txt"


class ConfigError(ValueError):
    pass


GRID_KEYS: dict[str, Any] = {
    "method": "icosa",
    "div": 3,
    "k": 0,
    "e": 15,
    "erp_h": 25,
    "erp_w": 50,
    "patch_h": 5,
    "patch_w": 5,
}

DATA_KEYS: dict[str, Any] = {
    "source": "mnist",
    "rotate": "so3",
    "data_root": "",
    "cache_dir": "",
    "train_limit": 0,
    "test_limit": 0,
}

MODEL_KEYS: dict[str, Any] = {
    "dim": 24,
    "layers": 8,
    "heads": 8,
    "ffn_hidden": 96,
    "dropout": 0.1,
    "use_pos_embedding": True,
    "use_cls_token": False,
    "activation": "gelu",
    "ln_variant": "pre",
    "clf_order": "ln_mean",
}

TRAIN_KEYS: dict[str, Any] = {
    "epochs": 20,
    "batch_size": 128,
    "lr": 1e-3,
    "precision": "f32",
    "save_checkpoint": True,
}

COMMON_KEYS: dict[str, Any] = {"seed": 0, "output": "runs/out"}

SCHEMAS: dict[str, dict[str, Any]] = {
    "train": {**COMMON_KEYS, **GRID_KEYS, **DATA_KEYS, **MODEL_KEYS, **TRAIN_KEYS},
    "equivariance": {
        **COMMON_KEYS,
        "method": "icosa",
        "divs": [1, 2, 3, 4],
        "k": 0,
        "layers_list": [1, 2, 4, 8],
        "n": 100,
        "modes": ["patch_perm"],
        "precision": "f64",
        "dim": 16,
        "heads": 8,
        "use_pos_embedding": False,
        "data_root": "",
    },
    "ablate": {
        **COMMON_KEYS, **GRID_KEYS, **DATA_KEYS, **MODEL_KEYS, **TRAIN_KEYS,
        "which": "patch_scale",
        "ks": [0, 1, 2, 3],
        "seeds": [],
    },
}


def _convert(key: str, raw: str, default: Any) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else int
            return [kind(s) for s in items]
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class ExperimentConfig:
    kind: str
    values: dict

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    def to_text(self) -> str:
        lines = [f"# kind = {self.kind}"]
        lines += [f"{k} = {_format(self.values[k])}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def write_resolved(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / RESOLVED_NAME
        path.write_text(self.to_text())
        return path

    def grid_params(self) -> dict:
        return grid_params_from(self.values)


def grid_params_from(values: dict) -> dict:
    method = values["method"]
    if method == "icosa":
        return {"method": method, "div": values["div"], "k": values.get("k", 0)}
    if method == "cube":
        return {"method": method, "e": values["e"]}
    if method == "erp":
        return {"method": method, "H": values["erp_h"], "W": values["erp_w"],
                "P_h": values["patch_h"], "P_w": values["patch_w"]}
    raise ConfigError(f"unknown sampling method {method!r}")


def grid_from(values: dict):
    params = grid_params_from(values)
    return build_grid(params.pop("method"), **params)


def parse_lines(kind: str, lines: Iterable[str], origin: str = "<config>") -> dict:
    if kind not in SCHEMAS:
        raise ConfigError(f"unknown config kind {kind!r}")
    schema = SCHEMAS[kind]
    out = {}
    for no, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{no}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in schema:
            raise ConfigError(f"{origin}:{no}: unknown key {key!r} for {kind}")
        out[key] = _convert(key, raw, schema[key])
    return out


def load_config(kind: str, path=None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    """Defaults, then the file at ``path``, then ``key=value`` overrides."""
    if kind not in SCHEMAS:
        raise ConfigError(f"unknown config kind {kind!r}")
    values = {k: (list(v) if isinstance(v, list) else v) for k, v in SCHEMAS[kind].items()}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from exc
        values.update(parse_lines(kind, text.splitlines(), str(path)))
    values.update(parse_lines(kind, overrides, "--set"))
    return ExperimentConfig(kind, values)
