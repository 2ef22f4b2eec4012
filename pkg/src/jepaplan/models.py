"""Networks: the state encoder, latent predictor, and value heads over latents.

The encoder is a conv-residual trunk whose output stays spatial until a
flatten+linear projection (pooling would discard the agent position that the
latent must carry). Actions are embedded by the identity and concatenated to
the latent; the predictor is a residual MLP on that concatenation. A value
head turns a latent pair into a scalar V(s, g) = -distance, with either the
(symmetric) Euclidean distance or an interval quasimetric supporting
asymmetry.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import torch
from torch import nn

from .errors import ConfigError
from .nncore import load_checkpoint, save_checkpoint


# ---------------------------------------------------------------------------
# Configs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 2
    image_size: int = 64
    widths: tuple[int, ...] = (32, 64, 128, 144)
    latent_dim: int = 512
    proprio_dim: int = 0
    proprio_embed: int = 64
    group_norm_groups: int = 8

    def __post_init__(self) -> None:
        if self.image_size % (2 ** len(self.widths)) != 0:
            raise ConfigError("image_size must be divisible by 2^stages")
        for w in self.widths:
            if w % self.group_norm_groups != 0:
                raise ConfigError("stage widths must be divisible by the group count")


@dataclass(frozen=True)
class PredictorConfig:
    latent_dim: int = 512
    action_dim: int = 2
    hidden: tuple[int, ...] = (768, 768)


@dataclass(frozen=True)
class ValueHeadConfig:
    kind: str = "euclidean"  # "euclidean" | "iqe"
    latent_dim: int = 512
    components: int = 16  # k, iqe only
    component_dim: int = 32  # m, iqe only
    alpha_raw_init: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("euclidean", "iqe"):
            raise ConfigError(f"unknown value head kind {self.kind!r}")
        if self.kind == "iqe" and self.components * self.component_dim != self.latent_dim:
            raise ConfigError("iqe head needs components * component_dim == latent_dim")


@dataclass(frozen=True)
class LatentEncoderConfig:
    """MLP re-embedding of a (frozen) latent; the second level of dual training."""

    in_dim: int = 512
    hidden: tuple[int, ...] = (512,)
    out_dim: int = 512


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    head: ValueHeadConfig = field(default_factory=ValueHeadConfig)

    def __post_init__(self) -> None:
        if self.encoder.latent_dim != self.predictor.latent_dim:
            raise ConfigError("encoder and predictor latent dims differ")
        if self.encoder.latent_dim != self.head.latent_dim:
            raise ConfigError("encoder and value head latent dims differ")

    @classmethod
    def from_json(cls, data: dict) -> "ModelConfig":
        enc = dict(data["encoder"])
        enc["widths"] = tuple(enc["widths"])
        pred = dict(data["predictor"])
        pred["hidden"] = tuple(pred["hidden"])
        return cls(
            encoder=EncoderConfig(**enc),
            predictor=PredictorConfig(**pred),
            head=ValueHeadConfig(**data["head"]),
        )

    def to_json(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------


class ResidualBlock(nn.Module):
    def __init__(self, ch: int, groups: int):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(groups, ch)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, ch)

    def forward(self, x):
        h = torch.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return torch.relu(x + h)


class StateEncoder(nn.Module):
    """Conv-residual trunk, flatten, optional proprio fusion, linear projection."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        stages = []
        in_ch = cfg.in_channels
        for w in cfg.widths:
            stages.append(nn.Conv2d(in_ch, w, 3, stride=2, padding=1))
            stages.append(nn.ReLU())
            stages.append(ResidualBlock(w, cfg.group_norm_groups))
            in_ch = w
        self.trunk = nn.Sequential(*stages)
        spatial = cfg.image_size // (2 ** len(cfg.widths))
        flat_dim = cfg.widths[-1] * spatial * spatial
        if cfg.proprio_dim > 0:
            self.proprio_proj = nn.Linear(cfg.proprio_dim, cfg.proprio_embed)
            flat_dim += cfg.proprio_embed
        else:
            self.proprio_proj = None
        self.project = nn.Linear(flat_dim, cfg.latent_dim)

    def forward(self, image: torch.Tensor, proprio: torch.Tensor | None = None):
        if image.shape[-3] != self.cfg.in_channels:
            raise ConfigError(
                f"expected {self.cfg.in_channels} channels, got {image.shape[-3]}"
            )
        h = self.trunk(image)
        h = h.flatten(1)
        if self.proprio_proj is not None:
            if proprio is None:
                raise ConfigError("encoder configured with proprio but none given")
            h = torch.cat([h, self.proprio_proj(proprio)], dim=-1)
        return self.project(h)


# ---------------------------------------------------------------------------
# Predictor
# ---------------------------------------------------------------------------


class Predictor(nn.Module):
    """z_{t+1} = z_t + MLP(concat(z_t, a_t)); the action encoder is the identity."""

    def __init__(self, cfg: PredictorConfig):
        super().__init__()
        self.cfg = cfg
        layers = []
        in_dim = cfg.latent_dim + cfg.action_dim
        for h in cfg.hidden:
            layers.append(nn.Linear(in_dim, h))
            layers.append(nn.ReLU())
            in_dim = h
        layers.append(nn.Linear(in_dim, cfg.latent_dim))
        self.mlp = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor, action: torch.Tensor):
        if z.shape[-1] != self.cfg.latent_dim:
            raise ConfigError(
                f"expected latent dim {self.cfg.latent_dim}, got {z.shape[-1]}"
            )
        if action.shape[-1] != self.cfg.action_dim:
            raise ConfigError(
                f"expected action dim {self.cfg.action_dim}, got {action.shape[-1]}"
            )
        return z + self.mlp(torch.cat([z, action], dim=-1))

    def rollout(self, z0: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        """Chain H single-step predictions: (B, D), (B, H, 2) -> (B, H+1, D)."""
        zs = [z0]
        for t in range(actions.shape[1]):
            zs.append(self(zs[-1], actions[:, t]))
        return torch.stack(zs, dim=1)


class LatentEncoder(nn.Module):
    """Small MLP mapping one latent space into another."""

    def __init__(self, cfg: LatentEncoderConfig):
        super().__init__()
        layers = []
        in_dim = cfg.in_dim
        for h in cfg.hidden:
            layers.append(nn.Linear(in_dim, h))
            layers.append(nn.ReLU())
            in_dim = h
        layers.append(nn.Linear(in_dim, cfg.out_dim))
        self.mlp = nn.Sequential(*layers)
        self.cfg = cfg

    def forward(self, z: torch.Tensor):
        return self.mlp(z)


# ---------------------------------------------------------------------------
# Value heads
# ---------------------------------------------------------------------------


def safe_norm(diff: torch.Tensor) -> torch.Tensor:
    """Euclidean norm over the last dim with subgradient 0 at the origin."""
    sq = (diff * diff).sum(-1)
    positive = sq > 0
    guarded = torch.where(positive, sq, torch.ones_like(sq))
    return torch.where(positive, torch.sqrt(guarded), torch.zeros_like(sq))


def iqe_distance(
    u: torch.Tensor, v: torch.Tensor, components: int, component_dim: int,
    alpha_raw: torch.Tensor,
) -> torch.Tensor:
    """Interval quasimetric: per component, the measure of U_i [u_i, max(u_i, v_i)].

    Component distances are mixed as sigmoid(alpha_raw) * max + (1 - s) * mean.
    Asymmetric by construction: only v_i > u_i extends an interval.
    """
    u, v = torch.broadcast_tensors(u, v)
    shape = u.shape[:-1]
    u = u.reshape(*shape, components, component_dim)
    v = v.reshape(*shape, components, component_dim)
    end = torch.maximum(u, v)
    order = u.argsort(dim=-1)
    u_sorted = u.gather(-1, order)
    end_sorted = end.gather(-1, order)
    running_end = torch.cat(
        [u_sorted[..., :1], torch.cummax(end_sorted[..., :-1], dim=-1).values], dim=-1
    )
    lengths = (end_sorted - torch.maximum(u_sorted, running_end)).clamp(min=0)
    comp = lengths.sum(-1)
    mix = torch.sigmoid(alpha_raw)
    return mix * comp.max(-1).values + (1.0 - mix) * comp.mean(-1)


class EuclideanHead(nn.Module):
    """V(s, g) = -||z_s - z_g||_2. Symmetric; zero exactly at coincidence."""

    def __init__(self, cfg: ValueHeadConfig):
        super().__init__()
        self.cfg = cfg

    def distance(self, z_s: torch.Tensor, z_g: torch.Tensor) -> torch.Tensor:
        return safe_norm(z_s - z_g)

    def forward(self, z_s: torch.Tensor, z_g: torch.Tensor) -> torch.Tensor:
        return -self.distance(z_s, z_g)


class IQEHead(nn.Module):
    """V(s, g) = -d(z_s, z_g) under a learned max/mean-mixed interval quasimetric."""

    def __init__(self, cfg: ValueHeadConfig):
        super().__init__()
        self.cfg = cfg
        self.alpha_raw = nn.Parameter(torch.tensor(float(cfg.alpha_raw_init)))

    def distance(self, z_s: torch.Tensor, z_g: torch.Tensor) -> torch.Tensor:
        return iqe_distance(
            z_s, z_g, self.cfg.components, self.cfg.component_dim, self.alpha_raw
        )

    def forward(self, z_s: torch.Tensor, z_g: torch.Tensor) -> torch.Tensor:
        return -self.distance(z_s, z_g)


def make_value_head(cfg: ValueHeadConfig) -> nn.Module:
    return EuclideanHead(cfg) if cfg.kind == "euclidean" else IQEHead(cfg)


# ---------------------------------------------------------------------------
# Bundle, EMA, persistence
# ---------------------------------------------------------------------------


class WorldModel(nn.Module):
    """Encoder + predictor + value head, the unit that checkpoints move around."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = StateEncoder(cfg.encoder)
        self.predictor = Predictor(cfg.predictor)
        self.head = make_value_head(cfg.head)

    def encode(self, image: torch.Tensor, proprio: torch.Tensor | None = None):
        return self.encoder(image, proprio)

    def predict(self, z: torch.Tensor, action: torch.Tensor):
        return self.predictor(z, action)

    def rollout(self, z0: torch.Tensor, actions: torch.Tensor):
        return self.predictor.rollout(z0, actions)

    def value(self, z_s: torch.Tensor, z_g: torch.Tensor):
        return self.head(z_s, z_g)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def ema_update(
    target: nn.Module | Mapping[str, torch.Tensor],
    source: nn.Module | Mapping[str, torch.Tensor],
    rho: float,
) -> None:
    """theta_bar <- rho * theta_bar + (1 - rho) * theta, elementwise in place."""
    if not 0.0 < rho < 1.0:
        raise ConfigError(f"EMA decay must lie in (0, 1), got {rho}")
    t_params = dict(target.named_parameters()) if isinstance(target, nn.Module) else target
    s_params = dict(source.named_parameters()) if isinstance(source, nn.Module) else source
    if set(t_params) != set(s_params):
        raise ConfigError("EMA target/source parameter names differ")
    with torch.no_grad():
        for name, t in t_params.items():
            s = s_params[name]
            if t.shape != s.shape:
                raise ConfigError(f"EMA shape mismatch for {name!r}")
            t.mul_(rho).add_(s, alpha=1.0 - rho)


class DualWorldModel(nn.Module):
    """Two-level model: level-1 world model predicts, level-2 MLP costs.

    The latent encoder re-embeds (frozen) level-1 latents; planning costs are
    Euclidean distances in that second space while rollouts stay in the first.
    """

    def __init__(self, cfg: ModelConfig, latent_cfg: LatentEncoderConfig):
        super().__init__()
        if latent_cfg.in_dim != cfg.encoder.latent_dim:
            raise ConfigError("latent encoder input dim must match level-1 latents")
        self.cfg = cfg
        self.latent_cfg = latent_cfg
        self.level1 = WorldModel(cfg)
        self.latent_encoder = LatentEncoder(latent_cfg)
        self.head = EuclideanHead(
            ValueHeadConfig(kind="euclidean", latent_dim=latent_cfg.out_dim)
        )

    def encode(self, image: torch.Tensor, proprio: torch.Tensor | None = None):
        return self.level1.encode(image, proprio)

    def predict(self, z: torch.Tensor, action: torch.Tensor):
        return self.level1.predict(z, action)

    def rollout(self, z0: torch.Tensor, actions: torch.Tensor):
        return self.level1.rollout(z0, actions)

    def value(self, z_s: torch.Tensor, z_g: torch.Tensor):
        return self.head(self.latent_encoder(z_s), self.latent_encoder(z_g))


def save_model(
    path: str | Path, model: WorldModel, step: int = 0, extra_meta: dict | None = None
) -> None:
    meta = {"kind": "world", "model_config": model.cfg.to_json()}
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, dict(model.state_dict()), step=step, meta=meta)


def load_model(path: str | Path) -> tuple[WorldModel, int, dict]:
    tensors, step, meta = load_checkpoint(path)
    cfg = ModelConfig.from_json(meta["model_config"])
    model = WorldModel(cfg)
    model.load_state_dict(tensors, strict=True)
    return model, step, meta


def save_dual_model(
    path: str | Path, model: DualWorldModel, step: int = 0,
    extra_meta: dict | None = None,
) -> None:
    meta = {
        "kind": "dual",
        "model_config": model.cfg.to_json(),
        "latent_encoder_config": asdict(model.latent_cfg),
    }
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, dict(model.state_dict()), step=step, meta=meta)


def load_dual_model(path: str | Path) -> tuple[DualWorldModel, int, dict]:
    tensors, step, meta = load_checkpoint(path)
    cfg = ModelConfig.from_json(meta["model_config"])
    lj = dict(meta["latent_encoder_config"])
    lj["hidden"] = tuple(lj["hidden"])
    model = DualWorldModel(cfg, LatentEncoderConfig(**lj))
    model.load_state_dict(tensors, strict=True)
    return model, step, meta


def load_any_model(path: str | Path) -> tuple[WorldModel | DualWorldModel, int, dict]:
    """Load either a plain world model or a dual-level one by checkpoint kind."""
    _, _, meta = load_checkpoint(path)
    if meta.get("kind") == "dual":
        return load_dual_model(path)
    return load_model(path)
