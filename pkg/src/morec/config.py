"""Run configuration: one flat document covering the whole pipeline.

Configs load from a single JSON file; CLI flags override file values and the
fully resolved config is echoed and written next to the outputs so any run
can be reproduced byte for byte. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .env import FAIRNESS_VARIANTS

KL_MODES = ("per_user", "pooled")
POPULARITY_SCOPES = ("train", "full")


class ConfigError(ValueError):
    """A config document or flag value is outside its documented range."""


@dataclass(frozen=True)
class RunConfig:
    # data ingestion
    data_path: str = ""
    delimiter: str = "\t"
    split_ratio: float = 0.8
    min_interactions: int = 3
    popular_fraction: float = 0.2
    popularity_scope: str = "train"
    # dimensions
    embed_dim: int = 16
    history_len: int = 5
    slate_size: int = 10
    gru_hidden: int = 16
    gru_layers: int = 2
    actor_hidden: tuple[int, ...] = (128, 64)
    critic_hidden: tuple[int, ...] = (128, 64)
    omega_scale: float = 8.0
    # embedding pretraining
    mf_epochs: int = 5
    mf_lr: float = 0.05
    mf_reg: float = 1e-4
    mf_negatives: int = 4
    normalize_items: bool = False
    # reinforcement learning
    episodes: int = 2000
    max_steps: int = 20
    gamma: float = 0.9
    tau: float = 0.001
    pref_samples: int = 4
    batch_size: int = 64
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    buffer_capacity: int = 100_000
    warmup_transitions: int = 1000
    update_every: int = 1
    exploration_scale: float = 1.0
    exploration_decay_to: float = 1.0
    proposal_reg: float = 1e-3
    fairness_variant: str = "floor"
    # evaluation
    eval_ks: tuple[int, ...] = (5, 10, 20)
    kl_log_base: float = 2.0
    kl_mode: str = "per_user"
    # run identity
    seed: int = 0
    out_dir: str = "runs/default"

    def validate(self) -> "RunConfig":
        checks = [
            (0.0 < self.split_ratio < 1.0, "split_ratio must be in (0, 1)"),
            (self.min_interactions >= 2, "min_interactions must be >= 2"),
            (0.0 < self.popular_fraction < 1.0,
             "popular_fraction must be in (0, 1)"),
            (self.popularity_scope in POPULARITY_SCOPES,
             f"popularity_scope must be one of {POPULARITY_SCOPES}"),
            (self.embed_dim >= 1, "embed_dim must be positive"),
            (self.history_len >= 1, "history_len must be positive"),
            (self.slate_size >= 1, "slate_size must be positive"),
            (self.gru_hidden >= 1 and self.gru_layers >= 1,
             "gru dimensions must be positive"),
            (len(self.actor_hidden) >= 1 and all(w > 0 for w in self.actor_hidden),
             "actor_hidden needs positive widths"),
            (len(self.critic_hidden) >= 1 and all(w > 0 for w in self.critic_hidden),
             "critic_hidden needs positive widths"),
            (self.omega_scale > 0.0, "omega_scale must be positive"),
            (self.mf_epochs >= 0 and self.mf_lr > 0 and self.mf_reg >= 0
             and self.mf_negatives >= 0, "mf settings out of range"),
            (self.episodes >= 1, "episodes must be positive"),
            (self.max_steps >= 1, "max_steps must be positive"),
            (0.0 <= self.gamma < 1.0, "gamma must be in [0, 1)"),
            (0.0 <= self.tau <= 1.0, "tau must be in [0, 1]"),
            (self.pref_samples >= 0, "pref_samples must be >= 0"),
            (self.batch_size >= 1, "batch_size must be positive"),
            (self.actor_lr > 0 and self.critic_lr > 0,
             "learning rates must be positive"),
            (self.buffer_capacity >= self.batch_size,
             "buffer_capacity must hold at least one batch"),
            (self.warmup_transitions >= 0, "warmup_transitions must be >= 0"),
            (self.update_every >= 1, "update_every must be positive"),
            (self.exploration_scale > 0, "exploration_scale must be positive"),
            (self.exploration_decay_to > 0,
             "exploration_decay_to must be positive"),
            (self.proposal_reg >= 0, "proposal_reg must be >= 0"),
            (self.fairness_variant in FAIRNESS_VARIANTS,
             f"fairness_variant must be one of {FAIRNESS_VARIANTS}"),
            (len(self.eval_ks) >= 1 and all(k >= 1 for k in self.eval_ks),
             "eval_ks needs positive cutoffs"),
            (self.kl_log_base > 0 and self.kl_log_base != 1.0,
             "kl_log_base must be a valid logarithm base"),
            (self.kl_mode in KL_MODES, f"kl_mode must be one of {KL_MODES}"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        return self

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["actor_hidden"] = list(self.actor_hidden)
        doc["critic_hidden"] = list(self.critic_hidden)
        doc["eval_ks"] = list(self.eval_ks)
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def merged(self, **overrides) -> "RunConfig":
        return replace_config(self, overrides)


_TUPLE_FIELDS = ("actor_hidden", "critic_hidden", "eval_ks")


def replace_config(base: RunConfig, overrides: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cleaned = {}
    for key, value in overrides.items():
        if key in _TUPLE_FIELDS:
            value = tuple(int(v) for v in value)
        cleaned[key] = value
    return dataclasses.replace(base, **cleaned).validate()


def config_from_dict(doc: dict) -> RunConfig:
    return replace_config(RunConfig(), doc)


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config document must be a JSON object")
    return config_from_dict(doc)


def write_resolved(config: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "resolved_config.json"
    path.write_text(config.to_json(), encoding="utf-8")
    return path
