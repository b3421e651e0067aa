"""Flat key-value experiment configuration.

Config files are plain text, one ``namespaced.key = value`` per line with
JSON-typed values and ``#`` comments. Every key has a default below; unknown
keys are rejected so typos fail loudly. A short hash of the fully merged
config is stamped into every output file, which is what makes runs
reproducible and outputs attributable.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "seed": 0,
    # synthetic pouring corpus
    "dataset.kind": "pouring",
    "dataset.train_sequences": 133,
    "dataset.val_sequences": 17,
    "dataset.test_sequences": 30,
    "dataset.duration_s": 5.0,
    "dataset.frame_rate": 10.0,
    "dataset.views": 2,
    "dataset.view_spacing_deg": 120.0,
    "dataset.obs_dim": 64,
    "dataset.view_noise": 0.25,
    "dataset.texture_gain": 5.0,
    "dataset.texture_frequency": 12.0,
    "dataset.nuisance_dim": 4,
    "dataset.nuisance_amplitude": 0.5,
    "dataset.nuisance_smooth_scale": 0.5,
    "dataset.nuisance_cutoff_hz": 0.8,
    "dataset.boolean_latent_scale": 0.6,
    "dataset.renderer_seed": 7,
    # two-agent pose corpus
    "pose_data.tc_human_sequences": 10,
    "pose_data.tc_robot_sequences": 16,
    "pose_data.human_label_sequences": 6,
    "pose_data.test_sequences": 6,
    "pose_data.duration_s": 20.0,
    "pose_data.frame_rate": 10.0,
    "pose_data.human_obs_dim": 56,
    "pose_data.robot_obs_dim": 64,
    "pose_data.agent_gap": 0.5,
    "pose_data.view_noise": 0.25,
    "pose_data.texture_gain": 2.0,
    "pose_data.texture_frequency": 6.0,
    "pose_data.view_thetas": [0.0, 60.0, 120.0],
    "pose_data.renderer_seed": 11,
    # embedding net and its training loop
    "net.hidden": [128, 64],
    "net.embed_dim": 32,
    "net.normalize": True,
    "train.loss": "mvtcn-triplet",
    "train.steps": 8000,
    "train.batch_size": 64,
    "train.learning_rate": 1e-3,
    "train.lr_schedule": "cosine",
    "train.checkpoint_every": 500,
    "train.triplet_margin": 0.2,
    "train.lifted_margin": 1.0,
    "train.positive_range_s": 0.2,
    "train.negative_multiplier": 2.0,
    "train.mv_negative_margin_s": 0.2,
    "train.negative_from_anchor_view": True,
    "train.order_tmax": 60,
    "train.order_tmin": 15,
    "train.order_negative_ratio": 0.75,
    "train.order_head_hidden": 64,
    "train.val_batches": 8,
    # evaluation protocol
    "eval.view": 0,
    "eval.reference_split": "val",
    "eval.query_split": "test",
    # pouring-surrogate arm and the policy learner
    "rl.horizon": 40,
    "rl.dt": 0.1,
    "rl.process_noise": 0.01,
    "rl.fill_rate": 2.0,
    "rl.distance_threshold": 0.7,
    "rl.distance_width": 0.35,
    "rl.tilt_width_deg": 8.0,
    "rl.arm_obs_dim": 48,
    "rl.arm_view_noise": 0.08,
    "rl.arm_texture_gain": 2.0,
    "rl.arm_texture_frequency": 6.0,
    "rl.arm_renderer_seed": 23,
    "rl.tc_train_clips": 36,
    "rl.tc_pour_fraction": 0.5,
    "rl.tc_train_steps": 700,
    "rl.iterations": 10,
    "rl.rollouts": 10,
    "rl.kl_epsilon": 4.0,
    "rl.ess_fraction": 0.5,
    "rl.base_exploration_variance": 0.25,
    "rl.wrist_exploration_factor": 4.0,
    "rl.reward_alpha": 0.5,
    "rl.reward_beta": 1.0,
    "rl.reward_gamma": 1e-4,
    "rl.action_penalty": 1e-3,
    "rl.dynamics_ridge": 1e-6,
    "rl.dynamics_time_window": 2,
    "rl.random_reward_control": False,
    # joints decoder training
    "pose.supervision": "tc+self",
    "pose.combinations": ["self", "human", "human+self", "tc+self", "tc+human", "tc+human+self"],
    "pose.seeds": 5,
    "pose.tc_steps": 700,
    "pose.decoder_steps": 350,
    "pose.batch_size": 64,
    "pose.learning_rate": 1e-3,
    "pose.human_label_noise": 0.10,
    "pose.fine_tune_embedding": False,
    "pose.eval_theta": None,
}


class Config:
    def __init__(self, values: dict | None = None):
        merged = dict(DEFAULTS)
        if values:
            for key, value in values.items():
                if key not in DEFAULTS:
                    raise ConfigError(f"unknown config key '{key}'")
                merged[key] = value
        self._values = merged

    def __getitem__(self, key: str):
        if key not in self._values:
            raise ConfigError(f"unknown config key '{key}'")
        return self._values[key]

    def get(self, key: str, default=None):
        return self._values.get(key, default)

    def with_overrides(self, overrides: dict) -> "Config":
        updated = dict(self._values)
        for key, value in overrides.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key '{key}'")
            updated[key] = value
        cfg = Config()
        cfg._values = updated
        return cfg

    def as_dict(self) -> dict:
        return dict(self._values)

    def canonical_text(self) -> str:
        lines = [f"{key} = {json.dumps(self._values[key], sort_keys=True)}" for key in sorted(self._values)]
        return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> Config:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value_text = line.partition("=")
        key = key.strip()
        value_text = value_text.strip()
        try:
            value = json.loads(value_text)
        except json.JSONDecodeError:
            value = value_text  # bare strings allowed
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        values[key] = value
    return Config(values)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    text = Path(path).read_text(encoding="utf-8")
    return parse_config_text(text)


def save_config(cfg: Config, path: str | Path) -> None:
    Path(path).write_text(cfg.canonical_text(), encoding="utf-8")


def config_hash(cfg: Config) -> str:
    return hashlib.sha256(cfg.canonical_text().encode("utf-8")).hexdigest()[:12]
