"""Training objectives: expectile value loss, prediction, VCReg, contrastive,
regressive.

The value loss follows the IQL expectile form on the reaching reward
r(s, g) = -1[s != g]: for each dataset transition (s_t, s_{t+1}) and goal g,

    residual = -1[s_t != g] + gamma * V_bar(s_{t+1}, g) - V(s_t, g)

with V_bar evaluated under stop-gradient on the current parameters. The
indicator is index identity: a state equals the goal only when the goal is
that exact dataset state, which is how goals are sampled.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .data import Batch
from .errors import ConfigError


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.80
    gamma: float = 0.98
    var_weight: float = 25.0
    cov_weight: float = 1.0
    vcreg_eps: float = 0.0
    margin_pos: float = 0.0
    margin_neg: float = 1.0
    vf_weight: float = 1.0
    pred_weight: float = 1.0
    vcreg_axes: str = "batch"  # "batch" | "batch_time"

    def __post_init__(self) -> None:
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.vcreg_axes not in ("batch", "batch_time"):
            raise ConfigError(f"unknown vcreg_axes {self.vcreg_axes!r}")


def expectile_penalty(x: torch.Tensor, tau: float) -> torch.Tensor:
    """Asymmetric squared penalty |tau - 1[x < 0]| * x^2, elementwise."""
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"tau must lie in (0, 1), got {tau}")
    weight = torch.abs(tau - (x < 0).to(x.dtype))
    return weight * x * x


# ---------------------------------------------------------------------------
# Latent bundles: encode a batch once, reuse across losses
# ---------------------------------------------------------------------------


@dataclass
class LatentBundle:
    """Latents for one batch: segment states plus the two goal sets.

    `goal_random` rows are gathered from `states` via the batch's
    (row, position) references, so random goals share the states' graph.
    """

    states: torch.Tensor  # (B, L, D)
    goal_final: torch.Tensor  # (B, D)
    goal_random: torch.Tensor  # (B, D)


def encode_batch(encoder, batch: Batch) -> LatentBundle:
    b, l = batch.batch_size, batch.segment_len
    flat_images = batch.images.reshape(b * l, *batch.images.shape[2:])
    flat_proprio = None
    if batch.proprio is not None:
        flat_proprio = batch.proprio.reshape(b * l, batch.proprio.shape[-1])
    states = encoder(flat_images, flat_proprio).reshape(b, l, -1)
    goal_final = encoder(batch.goal_final_images, batch.goal_final_proprio)
    rows = torch.as_tensor(batch.goal_random_src[:, 0])
    cols = torch.as_tensor(batch.goal_random_src[:, 1])
    goal_random = states[rows, cols]
    return LatentBundle(states=states, goal_final=goal_final, goal_random=goal_random)


# ---------------------------------------------------------------------------
# Value loss (Eq. IQL expectile form)
# ---------------------------------------------------------------------------


def _vf_residuals(
    head, states: torch.Tensor, goal: torch.Tensor, not_goal: torch.Tensor, gamma: float
) -> torch.Tensor:
    """Residuals for one goal set; goal row-aligned with segments.

    states: (B, L, D); goal: (B, D); not_goal: (B, L) float 1 where s != g.
    """
    l = states.shape[1]
    goal_rep = goal.unsqueeze(1)  # (B, 1, D)
    v_cur = head(states[:, : l - 1], goal_rep)  # (B, L-1)
    with torch.no_grad():
        v_next = head(states[:, 1:], goal_rep)  # (B, L-1), stop-gradient target
    return -not_goal[:, : l - 1] + gamma * v_next - v_cur


def vf_loss(bundle: LatentBundle, head, batch: Batch, cfg: LossConfig) -> torch.Tensor:
    """Mean expectile penalty over transitions and both goal sets."""
    if batch.batch_size == 0:
        raise ConfigError("empty goal set: batch has no rows")
    if batch.segment_len < 2:
        raise ConfigError("vf_loss needs segments of length >= 2")
    ids = torch.as_tensor(batch.state_ids)  # (B, L, 2)
    residuals = []
    for goal, goal_ids in (
        (bundle.goal_final, torch.as_tensor(batch.goal_final_ids)),
        (bundle.goal_random, torch.as_tensor(batch.goal_random_ids)),
    ):
        not_goal = (ids != goal_ids[:, None, :]).any(-1).to(bundle.states.dtype)
        residuals.append(_vf_residuals(head, bundle.states, goal, not_goal, cfg.gamma))
    return expectile_penalty(torch.cat(residuals, dim=0), cfg.tau).mean()


# ---------------------------------------------------------------------------
# Prediction loss
# ---------------------------------------------------------------------------


def pred_loss(predictor, z0: torch.Tensor, actions: torch.Tensor,
              targets: torch.Tensor) -> torch.Tensor:
    """Open-loop rollout MSE against per-step target latents.

    z0: (B, D) first latent (gradients flow to its encoder); actions
    (B, L-1, 2); targets (B, L, D), already detached or EMA-encoded by the
    caller. The t=0 term is excluded: the rollout starts at the target.
    """
    if actions.shape[1] < 1:
        raise ConfigError("pred_loss needs segments of length >= 2")
    predicted = [z0]
    cur = z0
    for t in range(actions.shape[1]):
        cur = predictor(cur, actions[:, t])
        predicted.append(cur)
    stacked = torch.stack(predicted[1:], dim=1)  # (B, L-1, D)
    return ((stacked - targets[:, 1:]) ** 2).mean()


# ---------------------------------------------------------------------------
# VCReg
# ---------------------------------------------------------------------------


def _vcreg_terms(x: torch.Tensor, eps: float) -> tuple[torch.Tensor, torch.Tensor]:
    """x: (N, D) samples. Returns (variance hinge, covariance penalty)."""
    n, d = x.shape
    if n < 2:
        raise ConfigError("vcreg needs at least 2 samples along the reduction axes")
    std = torch.sqrt(x.var(dim=0) + eps)
    var_term = torch.relu(1.0 - std).mean()
    centered = x - x.mean(dim=0)
    cov = (centered.T @ centered) / (n - 1)
    off_diag = cov - torch.diag(torch.diag(cov))
    cov_term = (off_diag * off_diag).sum() / d
    return var_term, cov_term


def vcreg_loss(latents: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Variance hinge + off-diagonal covariance penalty over configured axes.

    latents: (B, D) or (B, L, D). Axes "batch" computes the statistics across
    the batch for each time step and averages; "batch_time" pools batch and
    time into one sample axis.
    """
    if latents.dim() == 2:
        var_term, cov_term = _vcreg_terms(latents, cfg.vcreg_eps)
    elif cfg.vcreg_axes == "batch_time":
        flat = latents.reshape(-1, latents.shape[-1])
        var_term, cov_term = _vcreg_terms(flat, cfg.vcreg_eps)
    else:
        terms = [_vcreg_terms(latents[:, t], cfg.vcreg_eps) for t in range(latents.shape[1])]
        var_term = torch.stack([v for v, _ in terms]).mean()
        cov_term = torch.stack([c for _, c in terms]).mean()
    return cfg.var_weight * var_term + cfg.cov_weight * cov_term


# ---------------------------------------------------------------------------
# Contrastive and regressive representation losses
# ---------------------------------------------------------------------------


def _successive_distances(latents: torch.Tensor) -> torch.Tensor:
    from .models import safe_norm

    return safe_norm(latents[:, 1:] - latents[:, :-1])


def contrastive_loss(latents: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Squared hinges: pull successive states together, push random pairs apart.

    Negatives pair each segment with the next one in the batch (batch order is
    already random), elementwise in time.
    """
    if latents.shape[1] < 2:
        raise ConfigError("contrastive_loss needs segments of length >= 2")
    from .models import safe_norm

    d_pos = _successive_distances(latents)
    pos_term = (torch.relu(d_pos - cfg.margin_pos) ** 2).mean()
    d_neg = safe_norm(latents - torch.roll(latents, shifts=1, dims=0))
    neg_term = (torch.relu(cfg.margin_neg - d_neg) ** 2).mean()
    return pos_term + neg_term


def regressive_loss(latents: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Mean (||z_{t+1} - z_t|| - 1)^2 over successive pairs."""
    if latents.shape[1] < 2:
        raise ConfigError("regressive_loss needs segments of length >= 2")
    return ((_successive_distances(latents) - 1.0) ** 2).mean()
