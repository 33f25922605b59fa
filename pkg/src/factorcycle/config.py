"""Experiment configuration: key = value files plus override strings.

Every knob of a run lives in one flat namespace so a config file, a --set
flag, and the manifest snapshot all speak the same schema. Unknown keys and
out-of-range values are rejected with the offending field named.
"""

from __future__ import annotations

from dataclasses import dataclass

from .data import Dataset, DomainSpec, generate
from .losses import LossWeights
from .training import MODES, TrainConfig


class ConfigError(ValueError):
    """Bad configuration input; message names the field at fault."""


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_opt_int(raw: str):
    low = raw.strip().lower()
    if low in ("none", ""):
        return None
    return int(raw)


# key -> (converter, default). Defaults reproduce the synthetic experiment.
SCHEMA = {
    "mode": (str, "uncooperative"),
    "total_steps": (int, 60000),
    "batch": (int, 128),
    "lr0": (float, 2e-4),
    "decay_start": (_parse_opt_int, None),
    "eval_every": (int, 500),
    "seed": (int, 0),
    "buffer_enabled": (_parse_bool, True),
    "hidden": (int, 32),
    "shared_disentangler": (_parse_bool, False),
    "sn_critics": (_parse_bool, False),
    "plateau_decay": (_parse_bool, False),
    "checkpoint_every": (int, 0),
    "lambda_v": (float, 10.0),
    "lambda_c": (float, 10.0),
    "lambda_r": (float, 0.1),
    "dim_c": (int, 1),
    "dim_r": (int, 1),
    "mu_c": (float, 2.0),
    "sigma_c": (float, 1.0),
    "mu_r": (float, -2.0),
    "sigma_r": (float, 1.0),
    "pool_n": (int, 10000),
    "pool_m": (int, 10000),
    "holdout": (int, 2048),
    "streaming": (_parse_bool, False),
    "data_seed": (_parse_opt_int, None),  # None -> follow seed
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one run: model, data, schedule."""

    train: TrainConfig
    spec: DomainSpec
    pool_n: int
    pool_m: int
    holdout: int
    streaming: bool
    data_seed: int | None

    def dataset_seed(self) -> int:
        return self.train.seed if self.data_seed is None else self.data_seed

    def make_dataset(self) -> Dataset:
        return generate(
            self.spec,
            n=self.pool_n,
            m=self.pool_m,
            e=self.holdout,
            seed=self.dataset_seed(),
            streaming=self.streaming,
        )

    def as_dict(self) -> dict:
        """Flat schema-keyed snapshot; parsing it back reproduces self."""
        t, s = self.train, self.spec
        return {
            "mode": t.mode,
            "total_steps": t.total_steps,
            "batch": t.batch,
            "lr0": t.lr0,
            "decay_start": t.decay_start,
            "eval_every": t.eval_every,
            "seed": t.seed,
            "buffer_enabled": t.buffer_enabled,
            "hidden": t.hidden,
            "shared_disentangler": t.shared_disentangler,
            "sn_critics": t.sn_critics,
            "plateau_decay": t.plateau_decay,
            "checkpoint_every": t.checkpoint_every,
            "lambda_v": t.weights.recon_v,
            "lambda_c": t.weights.recon_c,
            "lambda_r": t.weights.recon_r,
            "dim_c": s.dim_c,
            "dim_r": s.dim_r,
            "mu_c": s.mu_c,
            "sigma_c": s.sigma_c,
            "mu_r": s.mu_r,
            "sigma_r": s.sigma_r,
            "pool_n": self.pool_n,
            "pool_m": self.pool_m,
            "holdout": self.holdout,
            "streaming": self.streaming,
            "data_seed": self.data_seed,
        }


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw key = value pairs; '#' starts a comment, blank lines skipped."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = raw.strip()
    return values


def coerce_values(raw: dict[str, str]) -> dict:
    out = {}
    for key, val in raw.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        conv, _ = SCHEMA[key]
        try:
            out[key] = conv(val)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"bad value for {key!r}: {e}") from None
    return out


def build_config(values: dict) -> ExperimentConfig:
    """Typed values (already coerced) + defaults -> ExperimentConfig."""
    cfg = {k: default for k, (_, default) in SCHEMA.items()}
    cfg.update(values)
    if cfg["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {cfg['mode']!r}")
    try:
        weights = LossWeights(
            recon_v=cfg["lambda_v"], recon_c=cfg["lambda_c"], recon_r=cfg["lambda_r"]
        )
        train = TrainConfig(
            mode=cfg["mode"],
            total_steps=cfg["total_steps"],
            batch=cfg["batch"],
            lr0=cfg["lr0"],
            decay_start=cfg["decay_start"],
            eval_every=cfg["eval_every"],
            seed=cfg["seed"],
            buffer_enabled=cfg["buffer_enabled"],
            weights=weights,
            hidden=cfg["hidden"],
            shared_disentangler=cfg["shared_disentangler"],
            sn_critics=cfg["sn_critics"],
            plateau_decay=cfg["plateau_decay"],
            checkpoint_every=cfg["checkpoint_every"],
        )
        spec = DomainSpec(
            dim_c=cfg["dim_c"],
            dim_r=cfg["dim_r"],
            mu_c=cfg["mu_c"],
            sigma_c=cfg["sigma_c"],
            mu_r=cfg["mu_r"],
            sigma_r=cfg["sigma_r"],
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None
    for key in ("pool_n", "pool_m", "holdout"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be >= 1, got {cfg[key]}")
    if cfg["batch"] > min(cfg["pool_n"], cfg["pool_m"]) and not cfg["streaming"]:
        raise ConfigError(
            f"batch ({cfg['batch']}) exceeds a training pool "
            f"(pool_n={cfg['pool_n']}, pool_m={cfg['pool_m']})"
        )
    return ExperimentConfig(
        train=train,
        spec=spec,
        pool_n=cfg["pool_n"],
        pool_m=cfg["pool_m"],
        holdout=cfg["holdout"],
        streaming=cfg["streaming"],
        data_seed=cfg["data_seed"],
    )


def parse_config(path=None, overrides=()) -> ExperimentConfig:
    """Config file (optional) + 'key=value' override strings -> config.

    Overrides win over the file; unspecified fields take the documented
    defaults (the synthetic experiment setup).
    """
    raw: dict[str, str] = {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from None
        raw.update(parse_kv_text(text, source=str(path)))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, val = item.partition("=")
        raw[key.strip()] = val.strip()
    return build_config(coerce_values(raw))
