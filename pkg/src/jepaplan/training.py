"""Training orchestration: mode registry, loss composition, staging, logging.

Modes come in two families. Separate ("sep") modes train the encoder alone
with its representation loss, freeze it, then train the predictor with the
prediction loss on precomputed latents. Joint modes optimize the summed
objective in one phase. pred_EMA is joint with prediction targets produced
by an exponential moving average of the encoder.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .data import Batch, TrajectoryDataset, sample_batch
from .errors import ConfigError, NumericError
from .losses import (
    LatentBundle,
    LossConfig,
    contrastive_loss,
    encode_batch,
    pred_loss,
    regressive_loss,
    vcreg_loss,
    vf_loss,
)
from .models import (
    DualWorldModel,
    EncoderConfig,
    LatentEncoderConfig,
    ModelConfig,
    PredictorConfig,
    ValueHeadConfig,
    WorldModel,
    ema_update,
    save_dual_model,
    save_model,
)
from .nncore import (
    LrSchedule,
    ParamSet,
    adam_step,
    cosine_rate,
    forward_backward,
    save_checkpoint,
    set_threads,
)

# ---------------------------------------------------------------------------
# Mode registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainMode:
    """One training approach: which losses, staged or joint, which head."""

    name: str
    sep: bool
    head: str  # value head kind for the model
    losses: tuple[str, ...]  # encoder losses; joint modes include "pred"
    ema: bool = False
    dual: bool = False


MODES: dict[str, TrainMode] = {
    m.name: m
    for m in (
        TrainMode("Contrastive", sep=True, head="euclidean", losses=("contrastive",)),
        TrainMode("Regressive", sep=True, head="euclidean", losses=("regressive", "vcreg")),
        TrainMode("pred_VCReg", sep=False, head="euclidean", losses=("pred", "vcreg")),
        TrainMode("pred_EMA", sep=False, head="euclidean", losses=("pred",), ema=True),
        TrainMode("VF", sep=True, head="euclidean", losses=("vf",)),
        TrainMode("VF_pred", sep=False, head="euclidean", losses=("vf", "pred")),
        TrainMode("VF_quasi", sep=True, head="iqe", losses=("vf",)),
        TrainMode("VF_quasi_pred", sep=False, head="iqe", losses=("vf", "pred")),
        TrainMode("VF_VCReg", sep=True, head="euclidean", losses=("vf", "vcreg")),
        TrainMode("VF_VCReg_pred", sep=False, head="euclidean",
                  losses=("vf", "vcreg", "pred")),
        TrainMode("Dual", sep=False, head="euclidean", losses=("pred", "vcreg", "vf"),
                  dual=True),
    )
}

TABLE_MODES = tuple(name for name, m in MODES.items() if not m.dual)


def get_mode(name: str) -> TrainMode:
    if name not in MODES:
        raise ConfigError(f"unknown training mode {name!r}; known: {sorted(MODES)}")
    return MODES[name]


def mode_defaults(name: str) -> tuple[float, float]:
    """(gamma, tau) defaults: quasimetric modes run 0.93/0.60, others 0.98/0.80."""
    if name.startswith("VF_quasi"):
        return 0.93, 0.60
    return 0.98, 0.80


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "VF"
    steps: int = 2000  # total optimizer steps; sep modes split them equally
    batch_size: int = 32
    segment_len: int = 16
    lr: float = 0.0028
    warmup_steps: int = 100
    seed: int = 0
    threads: int = 1
    gamma: float | None = None  # None: per-mode default
    tau: float | None = None
    var_weight: float = 25.0
    cov_weight: float = 1.0
    vcreg_eps: float = 1e-4
    margin_pos: float = 0.0
    margin_neg: float = 1.0
    vf_weight: float = 1.0
    pred_weight: float = 1.0
    vcreg_axes: str | None = None  # None: "batch" for wall, "batch_time" for maze
    ema_rho: float = 0.996
    model: ModelConfig | None = None  # None: paper-scale config built from dataset
    latent_hidden: tuple[int, ...] = (512,)  # dual level-2 MLP widths

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ConfigError("steps must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.segment_len < 2:
            raise ConfigError("segment_len must be at least 2")
        if not 0.0 < self.ema_rho < 1.0:
            raise ConfigError("ema_rho must lie in (0, 1)")


def resolve_loss_config(cfg: TrainConfig, ds: TrajectoryDataset) -> LossConfig:
    g_def, t_def = mode_defaults(cfg.mode)
    axes = cfg.vcreg_axes
    if axes is None:
        axes = "batch" if ds.env_kind == "wall" else "batch_time"
    return LossConfig(
        tau=cfg.tau if cfg.tau is not None else t_def,
        gamma=cfg.gamma if cfg.gamma is not None else g_def,
        var_weight=cfg.var_weight,
        cov_weight=cfg.cov_weight,
        vcreg_eps=cfg.vcreg_eps,
        margin_pos=cfg.margin_pos,
        margin_neg=cfg.margin_neg,
        vf_weight=cfg.vf_weight,
        pred_weight=cfg.pred_weight,
        vcreg_axes=axes,
    )


def default_model_config(ds: TrajectoryDataset, head_kind: str) -> ModelConfig:
    c, h, w = ds.image_shape
    if h != w:
        raise ConfigError(f"non-square images unsupported: {ds.image_shape}")
    latent = 512
    return ModelConfig(
        encoder=EncoderConfig(
            in_channels=c,
            image_size=h,
            widths=(32, 64, 128, 144),
            latent_dim=latent,
            proprio_dim=2 if ds.has_proprio else 0,
        ),
        predictor=PredictorConfig(latent_dim=latent, action_dim=2, hidden=(768, 768)),
        head=ValueHeadConfig(
            kind=head_kind, latent_dim=latent, components=16, component_dim=32
        ),
    )


def resolve_model_config(cfg: TrainConfig, ds: TrajectoryDataset,
                         mode: TrainMode) -> ModelConfig:
    if cfg.model is None:
        return default_model_config(ds, mode.head)
    mc = cfg.model
    if mc.head.kind != mode.head:
        raise ConfigError(
            f"mode {mode.name} needs a {mode.head!r} value head, config has "
            f"{mc.head.kind!r}"
        )
    c, h, _ = ds.image_shape
    if mc.encoder.in_channels != c or mc.encoder.image_size != h:
        raise ConfigError(
            f"encoder config ({mc.encoder.in_channels}ch, {mc.encoder.image_size}px) "
            f"does not match dataset images {ds.image_shape}"
        )
    if (mc.encoder.proprio_dim > 0) != ds.has_proprio:
        raise ConfigError("encoder proprio branch does not match dataset")
    return mc


def config_fingerprint(cfg: TrainConfig, model_cfg: ModelConfig,
                       loss_cfg: LossConfig) -> tuple[dict, str]:
    """Materialize every default into a dict and hash it canonically."""
    blob = {
        "train": asdict(replace(cfg, model=None)),
        "model": model_cfg.to_json(),
        "loss": asdict(loss_cfg),
    }
    blob["train"].pop("model", None)
    canon = json.dumps(blob, sort_keys=True, separators=(",", ":"))
    return blob, hashlib.sha256(canon.encode()).hexdigest()


def dataset_id(ds: TrajectoryDataset) -> str:
    canon = json.dumps(ds.manifest, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Run record
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    mode: str
    env_kind: str
    regime: str
    dataset_id: str
    seed: int
    config: dict
    config_hash: str
    loss_history: list[tuple[int, str, float, float]] = field(default_factory=list)
    checkpoints: dict[str, str] = field(default_factory=dict)
    final_losses: dict[str, float] = field(default_factory=dict)

    def log(self, step: int, name: str, value: float, lr: float) -> None:
        self.loss_history.append((step, name, value, lr))

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    def write_loss_csv(self, path: str | Path) -> None:
        lines = ["step,loss_name,value,lr"]
        lines += [f"{s},{n},{v:.10g},{r:.10g}" for s, n, v, r in self.loss_history]
        Path(path).write_text("\n".join(lines) + "\n")

    def smoothed(self, name: str, window: int = 20) -> np.ndarray:
        values = np.array([v for _, n, v, _ in self.loss_history if n == name])
        if len(values) < window:
            return values
        kernel = np.ones(window) / window
        return np.convolve(values, kernel, mode="valid")


# ---------------------------------------------------------------------------
# Latent-table sampling (sep phase 2 and dual level 2)
# ---------------------------------------------------------------------------


@dataclass
class LatentBatch:
    """Windows drawn from a precomputed latent table, mirroring Batch's ids."""

    latents: torch.Tensor  # (B, L, D)
    actions: torch.Tensor  # (B, L-1, 2)
    state_ids: np.ndarray  # (B, L, 2)
    goal_final_latents: torch.Tensor  # (B, D)
    goal_final_ids: np.ndarray  # (B, 2)
    goal_random_src: np.ndarray  # (B, 2)
    goal_random_ids: np.ndarray  # (B, 2)
    batch_size: int = 0
    segment_len: int = 0

    def __post_init__(self) -> None:
        self.batch_size = self.latents.shape[0]
        self.segment_len = self.latents.shape[1]


@torch.no_grad()
def encode_dataset(encoder, ds: TrajectoryDataset, chunk: int = 256) -> torch.Tensor:
    """Latents for every dataset state, (n_traj, n_states, D) float32."""
    outs = []
    for k in range(ds.n_trajectories):
        images = torch.from_numpy(ds.images(k).copy())
        prop = ds.proprio(k)
        prop_t = torch.from_numpy(prop.copy()) if prop is not None else None
        zs = []
        for i in range(0, images.shape[0], chunk):
            p = prop_t[i : i + chunk] if prop_t is not None else None
            zs.append(encoder(images[i : i + chunk], p))
        outs.append(torch.cat(zs, dim=0))
    return torch.stack(outs, dim=0)


def sample_latent_batch(
    table: torch.Tensor, ds: TrajectoryDataset, batch_size: int,
    rng: np.random.Generator, segment_len: int,
) -> LatentBatch:
    n, s = table.shape[0], table.shape[1]
    traj = rng.integers(0, n, size=batch_size)
    start = rng.integers(0, s - segment_len + 1, size=batch_size)
    lat = torch.stack([table[int(k), b : b + segment_len] for k, b in zip(traj, start)])
    actions = np.stack(
        [ds.actions(int(k))[b : b + segment_len - 1] for k, b in zip(traj, start)]
    )
    ids = np.stack(
        [np.stack([np.full(segment_len, k), np.arange(b, b + segment_len)], axis=1)
         for k, b in zip(traj, start)]
    ).astype(np.int64)
    rnd_row = rng.integers(0, batch_size, size=batch_size)
    rnd_pos = rng.integers(0, segment_len, size=batch_size)
    src = np.stack([rnd_row, rnd_pos], axis=1).astype(np.int64)
    return LatentBatch(
        latents=lat,
        actions=torch.from_numpy(np.ascontiguousarray(actions)),
        state_ids=ids,
        goal_final_latents=table[traj, -1],
        goal_final_ids=np.stack([traj, np.full(batch_size, s - 1)], axis=1).astype(np.int64),
        goal_random_src=src,
        goal_random_ids=ids[rnd_row, rnd_pos],
    )


# ---------------------------------------------------------------------------
# Phase runner
# ---------------------------------------------------------------------------


def _abort_snapshot(out_dir: Path | None, record: RunRecord, phase: str, step: int,
                    parts: dict, err: Exception) -> str:
    info = {
        "phase": phase,
        "step": step,
        "mode": record.mode,
        "seed": record.seed,
        "config_hash": record.config_hash,
        "last_losses": parts,
        "error": str(err),
    }
    if out_dir is not None:
        snap = out_dir / "nan_abort.json"
        snap.write_text(json.dumps(info, indent=1) + "\n")
        return str(snap)
    return json.dumps(info)


def _run_phase(
    *,
    phase: str,
    record: RunRecord,
    pset: ParamSet,
    steps: int,
    warmup: int,
    lr: float,
    step_fn,
    post_step=None,
    out_dir: Path | None,
    step_offset: int = 0,
) -> None:
    """Generic optimizer loop: sample, forward/backward, Adam, log."""
    sched = LrSchedule(base_rate=lr, total_steps=steps + 1,
                       warmup_steps=min(warmup, steps // 2))
    for step in range(steps):
        parts: dict[str, float] = {}

        def loss_fn():
            return step_fn(parts)

        try:
            total, grads = forward_backward(loss_fn, pset)
            rate = cosine_rate(sched, step + 1)
            adam_step(pset, grads, rate)
        except NumericError as err:
            where = _abort_snapshot(out_dir, record, phase, step, parts, err)
            raise NumericError(
                f"non-finite loss in phase {phase!r} at step {step}; "
                f"diagnostics: {where}"
            ) from err
        if post_step is not None:
            post_step()
        g = step_offset + step
        for name, value in parts.items():
            record.log(g, name, value, rate)
        record.log(g, f"{phase}_total", total, rate)
        record.final_losses = {**parts, f"{phase}_total": total}


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _encoder_losses(
    mode: TrainMode, model: WorldModel, batch: Batch, loss_cfg: LossConfig,
    parts: dict, ema_encoder=None,
) -> torch.Tensor:
    """Shared loss assembly for phase-1 and joint steps."""
    bundle = encode_batch(model.encoder, batch)
    terms = []
    if "vf" in mode.losses:
        lv = vf_loss(bundle, model.head, batch, loss_cfg)
        parts["vf"] = float(lv.detach())
        terms.append(loss_cfg.vf_weight * lv)
    if "contrastive" in mode.losses:
        lc = contrastive_loss(bundle.states, loss_cfg)
        parts["contrastive"] = float(lc.detach())
        terms.append(lc)
    if "regressive" in mode.losses:
        lr_ = regressive_loss(bundle.states, loss_cfg)
        parts["regressive"] = float(lr_.detach())
        terms.append(lr_)
    if "vcreg" in mode.losses:
        lg = vcreg_loss(bundle.states, loss_cfg)
        parts["vcreg"] = float(lg.detach())
        terms.append(lg)
    if "pred" in mode.losses:
        if ema_encoder is not None:
            with torch.no_grad():
                b, l = batch.batch_size, batch.segment_len
                flat = batch.images.reshape(b * l, *batch.images.shape[2:])
                prop = None
                if batch.proprio is not None:
                    prop = batch.proprio.reshape(b * l, batch.proprio.shape[-1])
                targets = ema_encoder(flat, prop).reshape(b, l, -1)
        else:
            targets = bundle.states.detach()
        lp = pred_loss(model.predictor, bundle.states[:, 0], batch.actions, targets)
        parts["pred"] = float(lp.detach())
        terms.append(loss_cfg.pred_weight * lp)
    return sum(terms)


def train(
    mode_name: str,
    ds: TrajectoryDataset,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
) -> tuple[WorldModel, RunRecord]:
    """Train one Table-style mode on a dataset; returns the model and record."""
    mode = get_mode(mode_name)
    if mode.dual:
        raise ConfigError("mode Dual trains two levels; use train_dual")
    if cfg.mode != mode_name:
        cfg = replace(cfg, mode=mode_name)
    set_threads(cfg.threads)
    torch.manual_seed(cfg.seed)

    loss_cfg = resolve_loss_config(cfg, ds)
    model_cfg = resolve_model_config(cfg, ds, mode)
    model = WorldModel(model_cfg)
    config_blob, config_hash = config_fingerprint(cfg, model_cfg, loss_cfg)
    record = RunRecord(
        mode=mode_name,
        env_kind=ds.env_kind,
        regime=ds.regime,
        dataset_id=dataset_id(ds),
        seed=cfg.seed,
        config=config_blob,
        config_hash=config_hash,
    )
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    ema_encoder = None
    post_step = None
    if mode.ema:
        ema_encoder = copy.deepcopy(model.encoder)
        for p in ema_encoder.parameters():
            p.requires_grad_(False)

        def post_step():
            ema_update(ema_encoder, model.encoder, cfg.ema_rho)

    if mode.sep:
        p1_steps = max(1, cfg.steps // 2)
        p2_steps = max(1, cfg.steps - p1_steps)
        rng1 = np.random.default_rng(np.random.SeedSequence((cfg.seed, 1)))
        pset1 = ParamSet.from_modules({"encoder": model.encoder, "head": model.head})

        def phase1_step(parts):
            batch = sample_batch(ds, cfg.batch_size, rng1, cfg.segment_len)
            return _encoder_losses(mode, model, batch, loss_cfg, parts)

        _run_phase(phase="encoder", record=record, pset=pset1, steps=p1_steps,
                   warmup=cfg.warmup_steps, lr=cfg.lr, step_fn=phase1_step,
                   out_dir=out_path)

        for p in model.encoder.parameters():
            p.requires_grad_(False)
        for p in model.head.parameters():
            p.requires_grad_(False)
        if out_path is not None:
            enc_tensors = {
                f"encoder.{n}": p for n, p in model.encoder.named_parameters()
            }
            enc_tensors.update(
                {f"head.{n}": p for n, p in model.head.named_parameters()}
            )
            enc_ckpt = out_path / "encoder_phase1.ckpt"
            save_checkpoint(enc_ckpt, enc_tensors, step=p1_steps,
                            meta={"kind": "encoder", "mode": mode_name})
            record.checkpoints["encoder_phase1"] = enc_ckpt.name

        table = encode_dataset(model.encoder, ds)
        rng2 = np.random.default_rng(np.random.SeedSequence((cfg.seed, 2)))
        pset2 = ParamSet.from_modules({"predictor": model.predictor})

        def phase2_step(parts):
            lb = sample_latent_batch(table, ds, cfg.batch_size, rng2, cfg.segment_len)
            lp = pred_loss(model.predictor, lb.latents[:, 0], lb.actions, lb.latents)
            parts["pred"] = float(lp.detach())
            return loss_cfg.pred_weight * lp

        _run_phase(phase="predictor", record=record, pset=pset2, steps=p2_steps,
                   warmup=cfg.warmup_steps, lr=cfg.lr, step_fn=phase2_step,
                   out_dir=out_path, step_offset=p1_steps)
    else:
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 1)))
        modules = {"encoder": model.encoder, "head": model.head}
        if "pred" in mode.losses:
            modules["predictor"] = model.predictor
        pset = ParamSet.from_modules(modules)

        def joint_step(parts):
            batch = sample_batch(ds, cfg.batch_size, rng, cfg.segment_len)
            return _encoder_losses(mode, model, batch, loss_cfg, parts,
                                   ema_encoder=ema_encoder)

        _run_phase(phase="joint", record=record, pset=pset, steps=cfg.steps,
                   warmup=cfg.warmup_steps, lr=cfg.lr, step_fn=joint_step,
                   post_step=post_step, out_dir=out_path)

    if out_path is not None:
        ckpt = out_path / "model.ckpt"
        save_model(ckpt, model, step=cfg.steps,
                   extra_meta={"mode": mode_name, "config_hash": config_hash})
        record.checkpoints["model"] = ckpt.name
        record.write_loss_csv(out_path / "losses.csv")
        record.save(out_path / "run.json")
    return model, record


# ---------------------------------------------------------------------------
# Dual-level training
# ---------------------------------------------------------------------------


def train_dual(
    ds: TrajectoryDataset,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
) -> tuple[DualWorldModel, RunRecord]:
    """Level 1: pred_VCReg world model. Level 2: value MLP over its latents.

    Rollouts use level 1; planning costs use the level-2 embedding.
    """
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    level1_cfg = replace(cfg, mode="pred_VCReg")
    level1_dir = out_path / "level1" if out_path is not None else None
    level1, rec1 = train("pred_VCReg", ds, level1_cfg, level1_dir)

    for p in level1.parameters():
        p.requires_grad_(False)
    latent_dim = level1.cfg.encoder.latent_dim
    lcfg = LatentEncoderConfig(in_dim=latent_dim, hidden=tuple(cfg.latent_hidden),
                               out_dim=latent_dim)
    dual = DualWorldModel(level1.cfg, lcfg)
    dual.level1.load_state_dict(level1.state_dict())
    for p in dual.level1.parameters():
        p.requires_grad_(False)

    # Level 2 is the VF approach: its gamma/tau defaults apply.
    loss_cfg = resolve_loss_config(replace(cfg, mode="VF"), ds)
    config_blob, config_hash = config_fingerprint(
        replace(cfg, mode="Dual"), level1.cfg, loss_cfg
    )
    config_blob["latent_encoder"] = asdict(lcfg)
    record = RunRecord(
        mode="Dual",
        env_kind=ds.env_kind,
        regime=ds.regime,
        dataset_id=dataset_id(ds),
        seed=cfg.seed,
        config=config_blob,
        config_hash=config_hash,
    )
    record.loss_history = list(rec1.loss_history)
    record.checkpoints.update({f"level1_{k}": v for k, v in rec1.checkpoints.items()})

    table = encode_dataset(dual.level1.encoder, ds)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 3)))
    pset = ParamSet.from_modules({"latent_encoder": dual.latent_encoder})

    def level2_step(parts):
        lb = sample_latent_batch(table, ds, cfg.batch_size, rng, cfg.segment_len)
        states = dual.latent_encoder(lb.latents)
        rows = torch.as_tensor(lb.goal_random_src[:, 0])
        cols = torch.as_tensor(lb.goal_random_src[:, 1])
        bundle = LatentBundle(
            states=states,
            goal_final=dual.latent_encoder(lb.goal_final_latents),
            goal_random=states[rows, cols],
        )
        lv = vf_loss(bundle, dual.head, lb, loss_cfg)
        parts["vf"] = float(lv.detach())
        return loss_cfg.vf_weight * lv

    _run_phase(phase="level2", record=record, pset=pset, steps=cfg.steps,
               warmup=cfg.warmup_steps, lr=cfg.lr, step_fn=level2_step,
               out_dir=out_path, step_offset=cfg.steps)

    if out_path is not None:
        ckpt = out_path / "model.ckpt"
        save_dual_model(ckpt, dual, step=cfg.steps,
                        extra_meta={"mode": "Dual", "config_hash": config_hash})
        record.checkpoints["model"] = ckpt.name
        record.write_loss_csv(out_path / "losses.csv")
        record.save(out_path / "run.json")
    return dual, record
