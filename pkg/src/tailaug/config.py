"""Run configuration: defaults, config-file parsing, overrides, hashing.

Config files are either JSON (flat or nested by section) or plain
``key=value`` lines; keys are dot-namespaced (``corpus.k_core``).  CLI
flags override file keys.  Every pipeline artifact embeds a lineage id
derived from the producing step's config hash and its parents' ids, so
downstream commands can refuse mismatched inputs.
"""

from __future__ import annotations

import hashlib
import json

from .errors import ConfigError

DEFAULTS: dict[str, object] = {
    "seed": 0,
    "corpus.k_core": 5,
    "corpus.max_len": 50,
    "corpus.delimiter": ",",
    "corpus.header": False,
    "corpus.beta": 0.5,
    "corpus.sample_users": 0,          # 0 = keep all users
    "simcand.ridge_penalty": 10.0,
    "simcand.diag_cap": 0.2,
    "simcand.k": 10,
    "simcand.read": "column",
    "simcand.warn_items": 20000,
    "augment.a": 0.2,
    "augment.b": 0.8,
    "augment.alpha": 0.3,
    "model.dim": 64,
    "model.encoder": "gru",
    "train.batch_size": 256,
    "train.stage1_epochs": 50,
    "train.stage2_epochs": 150,
    "train.learning_rate": 0.001,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.eps": 1e-8,
    "train.operator_loss": True,
    "train.cross_loss": True,
    "train.patience": 10,              # early stopping on validation NDCG@10; <0 disables
    "eval.ks": [5, 10, 20],
    "eval.filter_seen": False,
}


def _flatten(obj: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in obj.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def _coerce(key: str, raw: object) -> object:
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                return raw
            if str(raw).lower() in ("1", "true", "yes", "on"):
                return True
            if str(raw).lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            if isinstance(raw, (list, tuple)):
                return [int(v) for v in raw]
            return [int(v) for v in str(raw).split(",") if v.strip()]
        return str(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key}: {exc}") from exc


def load_config(path: str | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then config file, then overrides; unknown keys are errors."""
    cfg = dict(DEFAULTS)
    raw: dict[str, object] = {}
    if path is not None:
        try:
            text = open(path, "r", encoding="utf-8").read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        stripped = text.lstrip()
        if stripped.startswith("{"):
            try:
                raw = _flatten(json.loads(text))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        else:
            for lineno, line in enumerate(text.splitlines(), start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, value = line.partition("=")
                raw[key.strip()] = value.strip()
    for key, value in {**raw, **(overrides or {})}.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = _coerce(key, value)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    """Cross-field checks the module constructors cannot see."""
    errors = []
    if cfg["corpus.k_core"] < 1:
        errors.append("corpus.k_core must be >= 1")
    if cfg["corpus.max_len"] < 3:
        errors.append("corpus.max_len must be >= 3")
    if not 0.0 < cfg["corpus.beta"] < 1.0:
        errors.append("corpus.beta must be in (0, 1)")
    if not 0.0 < cfg["augment.a"] < cfg["augment.b"] < 1.0:
        errors.append("augment rates need 0 < a < b < 1")
    if cfg["augment.alpha"] <= 0:
        errors.append("augment.alpha must be > 0")
    if cfg["simcand.ridge_penalty"] <= 0:
        errors.append("simcand.ridge_penalty must be > 0")
    if not 0.0 <= cfg["simcand.diag_cap"] < 1.0:
        errors.append("simcand.diag_cap must be in [0, 1)")
    if cfg["simcand.k"] < 1:
        errors.append("simcand.k must be >= 1")
    if cfg["simcand.read"] not in ("column", "row"):
        errors.append("simcand.read must be 'column' or 'row'")
    if cfg["model.dim"] < 1:
        errors.append("model.dim must be >= 1")
    if cfg["train.batch_size"] < 1:
        errors.append("train.batch_size must be >= 1")
    if cfg["train.learning_rate"] <= 0:
        errors.append("train.learning_rate must be > 0")
    if any(k < 1 for k in cfg["eval.ks"]) or not cfg["eval.ks"]:
        errors.append("eval.ks must be a non-empty list of cutoffs >= 1")
    if errors:
        raise ConfigError("; ".join(errors))


def config_hash(cfg: dict, keys: list[str] | None = None) -> str:
    subset = {k: cfg[k] for k in (keys if keys is not None else sorted(cfg))}
    blob = json.dumps(subset, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def lineage_id(step: str, config_hash_: str, parents: dict[str, str] | None = None) -> str:
    blob = json.dumps({"step": step, "config": config_hash_,
                       "parents": parents or {}},
                      sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]
