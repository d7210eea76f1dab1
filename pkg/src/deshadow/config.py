"""TOML config files for training runs.

Layout: a `[data]` section (root, split) plus a `[trainer]` section holding
TrainConfig fields, with the five loss weights under `[losses]`. Unknown
keys are rejected by name.
"""
import hashlib
import json
from dataclasses import fields

import tomli

from .losses import LossWeights
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


_TRAINER_KEYS = {f.name for f in fields(TrainConfig)} - {"weights"}
_LOSS_KEYS = {f.name for f in fields(LossWeights)}
_DATA_KEYS = {"root", "split"}


def _check_keys(section, keys, allowed):
    unknown = set(keys) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} in [{section}]; "
            f"accepted: {sorted(allowed)}"
        )


def parse_config(text, overrides=None):
    """Parse config text into (TrainConfig, data dict)."""
    doc = tomli.loads(text)
    _check_keys("<top>", doc.keys(), {"data", "trainer", "losses"})
    data = doc.get("data", {})
    trainer = dict(doc.get("trainer", {}))
    loss = doc.get("losses", {})
    _check_keys("data", data.keys(), _DATA_KEYS)
    _check_keys("trainer", trainer.keys(), _TRAINER_KEYS)
    _check_keys("losses", loss.keys(), _LOSS_KEYS)
    for key, value in (overrides or {}).items():
        if key in _LOSS_KEYS:
            loss = {**loss, key: value}
        elif key in _TRAINER_KEYS:
            trainer[key] = value
        elif key in _DATA_KEYS:
            data = {**data, key: value}
        else:
            raise ConfigError(
                f"unknown override {key!r}; accepted: "
                f"{sorted(_TRAINER_KEYS | _LOSS_KEYS | _DATA_KEYS)}"
            )
    try:
        cfg = TrainConfig(weights=LossWeights(**loss), **trainer)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, data


def load_config(path, overrides=None):
    with open(path, "rb") as fh:
        text = fh.read().decode()
    return parse_config(text, overrides)


def config_hash(cfg: TrainConfig):
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:8]


def dump_config(cfg: TrainConfig, data=None):
    """Render a TrainConfig back to round-trippable TOML text."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return f'"{v}"'
        return repr(v)

    lines = []
    if data:
        lines.append("[data]")
        lines += [f"{k} = {fmt(v)}" for k, v in data.items()]
        lines.append("")
    lines.append("[trainer]")
    for f in fields(TrainConfig):
        if f.name == "weights":
            continue
        v = getattr(cfg, f.name)
        if v is None:
            continue
        lines.append(f"{f.name} = {fmt(v)}")
    lines.append("")
    lines.append("[losses]")
    for f in fields(LossWeights):
        lines.append(f"{f.name} = {fmt(getattr(cfg.weights, f.name))}")
    return "\n".join(lines) + "\n"
