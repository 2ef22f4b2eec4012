"""Layered flat configuration for the CLI.

Resolution order for every key, strongest first: dedicated CLI flag,
generic --set override, config file entry, preset adjustment, built-in
default. Config files are flat JSON objects (no nesting); unknown keys
are schema violations so typos fail loudly. Every run writes a fully
materialized effective-config JSON next to its outputs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import replace
from pathlib import Path

from .data import MazeGenConfig, WallGenConfig
from .errors import ConfigError, DataError
from .models import (
    EncoderConfig,
    ModelConfig,
    PredictorConfig,
    ValueHeadConfig,
)
from .planning import PlanConfig
from .training import get_mode

OUTPUT_ROOT_ENV = "JEPAPLAN_OUT"
PRESETS = ("paper", "desk")

# Desk preset: wall geometry, action scales, and tolerances are half the
# full-scale values; maze keeps its geometry but renders at 32 pixels; the
# model shrinks to ~0.26M encoder / 0.13M predictor parameters, and planner
# budgets are sized for a desktop CPU.
DESK_SCALE = 0.5


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


# ---------------------------------------------------------------------------
# Flat key plumbing
# ---------------------------------------------------------------------------


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a flat JSON object")
    for k, v in data.items():
        if isinstance(v, dict):
            raise ConfigError(f"config key {k!r} is nested; files must be flat")
    return data


def parse_set_overrides(pairs: list[str] | None) -> dict:
    """--set key=value items; values parsed as JSON, bare words as strings."""
    out: dict = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def resolve_keys(schema: dict, flags: dict, overrides: dict, file_cfg: dict) -> dict:
    """Merge flag > --set > file onto schema defaults; reject unknown keys."""
    for src_name, src in (("--set", overrides), ("config file", file_cfg)):
        unknown = set(src) - set(schema)
        if unknown:
            raise ConfigError(
                f"unknown {src_name} keys: {', '.join(sorted(unknown))}")
    resolved = dict(schema)
    for key in schema:
        if key in file_cfg:
            resolved[key] = file_cfg[key]
        if key in overrides:
            resolved[key] = overrides[key]
        if flags.get(key) is not None:
            resolved[key] = flags[key]
    return resolved


def apply_overrides(cfg, over: dict):
    """Replace dataclass fields from a flat dict with light type coercion."""
    if not over:
        return cfg
    fields = {f.name: f for f in dataclasses.fields(cfg)}
    updates = {}
    for key, value in over.items():
        if key not in fields:
            raise ConfigError(
                f"{type(cfg).__name__} has no field {key!r}")
        current = getattr(cfg, key)
        if isinstance(current, tuple) and isinstance(value, (list, tuple)):
            value = tuple(value)
        updates[key] = value
    return replace(cfg, **updates)


def canonical_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def payload_hash(payload: dict) -> str:
    return hashlib.sha256(canonical_json(payload).encode()).hexdigest()


def write_effective_config(out_dir: str | Path, payload: dict) -> Path:
    """Materialized config + its hash, written next to the run outputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    body = dict(payload)
    body["config_hash"] = payload_hash(payload)
    path = out / "effective_config.json"
    path.write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# Preset-aware builders
# ---------------------------------------------------------------------------


def _check_preset(preset: str) -> None:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r} (expected paper or desk)")


def wall_gen_config(regime: str, preset: str = "paper", over: dict | None = None) -> WallGenConfig:
    _check_preset(preset)
    cfg = WallGenConfig.for_regime(regime)
    if preset == "desk":
        s = DESK_SCALE
        cfg = replace(
            cfg,
            n_trajectories=300,
            side=cfg.side * s,
            agent_radius=cfg.agent_radius * s,
            wall_half_thickness=cfg.wall_half_thickness * s,
            door_half_width_range=tuple(v * s for v in cfg.door_half_width_range),
            success_threshold=cfg.success_threshold * s,
            norm_mean=cfg.norm_mean * s,
            norm_sd=cfg.norm_sd * s,
            norm_clip=tuple(v * s for v in cfg.norm_clip),
        )
    return apply_overrides(cfg, over or {})


def maze_gen_config(preset: str = "paper", over: dict | None = None) -> MazeGenConfig:
    _check_preset(preset)
    cfg = MazeGenConfig()
    if preset == "desk":
        cfg = replace(cfg, n_trajectories=200, resolution=32)
    return apply_overrides(cfg, over or {})


def plan_config(kind: str, regime: str | None = None, preset: str = "paper",
                over: dict | None = None) -> PlanConfig:
    _check_preset(preset)
    cfg = PlanConfig.for_env(kind, regime)
    if preset == "desk":
        if kind == "wall":
            s = DESK_SCALE
            cfg = replace(
                cfg,
                horizon=32,
                total_steps=32 if regime == "wb" else 100,
                num_samples=256,
                sigma=cfg.sigma * s,
                action_bound=cfg.action_bound * s,
                success_threshold=cfg.success_threshold * s,
            )
        else:
            cfg = replace(cfg, horizon=50, total_steps=120, num_samples=128)
    return apply_overrides(cfg, over or {})


def desk_model_config(ds, head_kind: str, over: dict | None = None) -> ModelConfig:
    """~0.26M-parameter encoder and 0.13M predictor for 32px observations."""
    c, h, _ = ds.image_shape
    over = dict(over or {})
    latent = int(over.pop("latent_dim", 128))
    widths = tuple(over.pop("widths", (16, 32, 64, 64)))
    hidden = tuple(over.pop("predictor_hidden", (256, 256)))
    groups = int(over.pop("group_norm_groups", 8))
    components = int(over.pop("components", 8))
    component_dim = int(over.pop("component_dim", latent // components))
    if over:
        raise ConfigError(f"unknown model keys: {', '.join(sorted(over))}")
    if head_kind == "iqe":
        head = ValueHeadConfig(kind="iqe", latent_dim=latent,
                               components=components,
                               component_dim=component_dim)
    else:
        head = ValueHeadConfig(kind="euclidean", latent_dim=latent)
    return ModelConfig(
        encoder=EncoderConfig(
            in_channels=c, image_size=h, widths=widths, latent_dim=latent,
            proprio_dim=2 if ds.has_proprio else 0,
            group_norm_groups=groups),
        predictor=PredictorConfig(latent_dim=latent, action_dim=2,
                                  hidden=hidden),
        head=head,
    )


def model_config_for(ds, mode_name: str, preset: str = "paper",
                     over: dict | None = None) -> ModelConfig | None:
    """None keeps the full-scale default built by the trainer."""
    _check_preset(preset)
    head_kind = get_mode(mode_name).head
    if preset == "desk":
        return desk_model_config(ds, head_kind, over)
    if over:
        raise ConfigError("model overrides require --preset desk; the paper "
                          "preset derives the model from the dataset")
    return None


def desk_train_defaults() -> dict:
    return {"steps": 600, "batch_size": 16, "warmup_steps": 60}
