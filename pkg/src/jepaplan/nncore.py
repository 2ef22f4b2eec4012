"""Differentiable-computation substrate for the small fixed-topology networks used here.

Gradients come from torch's reverse mode on CPU tensors; everything around them
is owned by this module: named parameter sets with explicit Adam moments, the
bias-corrected Adam update, the warmup+cosine learning-rate schedule,
stop-gradient barriers, a finite-difference oracle that never touches autograd,
and the binary checkpoint format.

FP32 is the training dtype; verification (gradient checks) runs the same code
in FP64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np
import torch

from .errors import ConfigError, DataError, NumericError

_DTYPE_TAGS = {torch.float32: "<f4", torch.float64: "<f8"}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}

CHECKPOINT_MAGIC = b"JPLN"


def set_single_thread() -> None:
    """Pin torch to one thread; required for bit-reproducible runs."""
    torch.set_num_threads(1)


def set_threads(n: int) -> None:
    if n < 1:
        raise ConfigError(f"thread count must be >= 1, got {n}")
    torch.set_num_threads(n)


def check_finite(t: torch.Tensor, what: str) -> torch.Tensor:
    """NaN/Inf is an error state here, never a silent value."""
    if not torch.isfinite(t).all():
        raise NumericError(f"non-finite values in {what}")
    return t


# ---------------------------------------------------------------------------
# Parameter sets and Adam
# ---------------------------------------------------------------------------


@dataclass
class ParamSet:
    """Named parameter tensors plus per-parameter Adam moments and a step counter.

    The tensors are live references (typically into nn.Modules); adam_step
    mutates them in place. Moments always mirror parameter shapes.
    """

    params: dict[str, torch.Tensor]
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self) -> None:
        for name, p in self.params.items():
            if name not in self.m:
                self.m[name] = torch.zeros_like(p)
            if name not in self.v:
                self.v[name] = torch.zeros_like(p)
            if self.m[name].shape != p.shape or self.v[name].shape != p.shape:
                raise ConfigError(f"moment shape mismatch for parameter {name!r}")
        if self.step < 0:
            raise ConfigError("step counter must be nonnegative")

    @classmethod
    def from_modules(cls, modules: Mapping[str, torch.nn.Module]) -> "ParamSet":
        params: dict[str, torch.Tensor] = {}
        for prefix, module in modules.items():
            for name, p in module.named_parameters():
                params[f"{prefix}.{name}"] = p
        return cls(params=params)

    def gradients(self) -> dict[str, torch.Tensor]:
        """Snapshot current .grad tensors (zeros where a parameter has none)."""
        return {
            name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
            for name, p in self.params.items()
        }

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def numel(self) -> int:
        return sum(p.numel() for p in self.params.values())


def adam_step(
    paramset: ParamSet,
    grads: Mapping[str, torch.Tensor],
    rate: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> ParamSet:
    """Standard bias-corrected Adam update, applied in place.

    The step counter increments by exactly 1 per call.
    """
    if rate <= 0:
        raise ConfigError(f"learning rate must be positive, got {rate}")
    b1, b2 = betas
    paramset.step += 1
    t = paramset.step
    with torch.no_grad():
        for name, p in paramset.params.items():
            g = grads.get(name)
            if g is None:
                g = torch.zeros_like(p)
            if g.shape != p.shape:
                raise ConfigError(f"gradient shape mismatch for {name!r}")
            if not torch.isfinite(g).all():
                raise NumericError(f"NaN gradient for parameter {name!r}")
            m = paramset.m[name]
            v = paramset.v[name]
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            p.addcdiv_(m_hat, v_hat.sqrt().add_(eps), value=-rate)
    return paramset


# ---------------------------------------------------------------------------
# Learning-rate schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup followed by cosine decay to zero at total_steps."""

    base_rate: float = 0.0028
    total_steps: int = 1
    warmup_steps: int = 0

    def __post_init__(self) -> None:
        if self.base_rate <= 0:
            raise ConfigError("base_rate must be positive")
        if self.total_steps <= 0:
            raise ConfigError("total_steps must be positive")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ConfigError("warmup_steps must lie in [0, total_steps)")


def cosine_rate(schedule: LrSchedule, step: int) -> float:
    """Rate at `step`: base * 0.5 * (1 + cos(pi * s / S)) after linear warmup."""
    if not 0 <= step <= schedule.total_steps:
        raise ConfigError(
            f"step {step} outside schedule range [0, {schedule.total_steps}]"
        )
    if step < schedule.warmup_steps:
        return schedule.base_rate * step / schedule.warmup_steps
    span = schedule.total_steps - schedule.warmup_steps
    frac = (step - schedule.warmup_steps) / span
    return schedule.base_rate * 0.5 * (1.0 + float(np.cos(np.pi * frac)))


# ---------------------------------------------------------------------------
# Forward/backward and the stop-gradient barrier
# ---------------------------------------------------------------------------


def stop_gradient(x: torch.Tensor) -> torch.Tensor:
    """Identity on values; contributes zero to all upstream gradients."""
    return x.detach()


def forward_backward(
    loss_fn: Callable[..., torch.Tensor],
    paramset: ParamSet,
    *inputs: torch.Tensor,
) -> tuple[float, dict[str, torch.Tensor]]:
    """Evaluate a scalar loss and return (value, gradients for every parameter).

    Stop-gradient barriers inside loss_fn are respected (they are detach
    boundaries). Raises NumericError on a non-finite forward value and
    ConfigError if the loss is not scalar.
    """
    paramset.zero_grad()
    loss = loss_fn(*inputs)
    if loss.dim() != 0:
        raise ConfigError(f"loss output must be scalar, got shape {tuple(loss.shape)}")
    if not torch.isfinite(loss):
        raise NumericError("NaN/Inf in forward pass")
    loss.backward()
    return float(loss.detach()), paramset.gradients()


def finite_difference_grads(
    loss_fn: Callable[[], torch.Tensor],
    params: Iterable[torch.Tensor],
    eps: float = 1e-4,
) -> list[torch.Tensor]:
    """Central finite differences of a scalar loss, one entry per parameter element.

    Pure forward evaluations under no_grad; independent of reverse mode. Meant
    for FP64 parameters (FP32 would drown the differences in rounding noise).
    """
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat_p = p.view(-1)
            flat_g = g.view(-1)
            for i in range(flat_p.numel()):
                orig = flat_p[i].item()
                flat_p[i] = orig + eps
                up = float(loss_fn())
                flat_p[i] = orig - eps
                down = float(loss_fn())
                flat_p[i] = orig
                flat_g[i] = (up - down) / (2.0 * eps)
            grads.append(g)
    return grads


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    tensors: Mapping[str, torch.Tensor],
    step: int = 0,
    meta: dict | None = None,
) -> None:
    """Single binary file: JSON header + little-endian raw payloads in header order.

    Layout: 4-byte magic, u64-le header length, UTF-8 JSON header, then each
    tensor's bytes in the order listed under header["tensors"].
    """
    entries = []
    payloads = []
    for name, t in tensors.items():
        t = t.detach().contiguous()
        if t.dtype not in _DTYPE_TAGS:
            raise ConfigError(f"unsupported checkpoint dtype {t.dtype} for {name!r}")
        tag = _DTYPE_TAGS[t.dtype]
        entries.append({"name": name, "shape": list(t.shape), "dtype": tag})
        payloads.append(t.cpu().numpy().astype(tag).tobytes())
    header = {"format": "jepaplan-checkpoint", "version": 1, "step": int(step),
              "tensors": entries, "meta": meta or {}}
    blob = json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for payload in payloads:
            fh.write(payload)


def load_checkpoint(path: str | Path) -> tuple[dict[str, torch.Tensor], int, dict]:
    """Inverse of save_checkpoint: (tensors, step counter, meta)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"not a checkpoint file: {path}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        tensors: dict[str, torch.Tensor] = {}
        for entry in header["tensors"]:
            dtype = _TAG_DTYPES[entry["dtype"]]
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            raw = fh.read(count * np.dtype(entry["dtype"]).itemsize)
            arr = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"])
            tensors[entry["name"]] = torch.from_numpy(arr.copy()).to(dtype)
    return tensors, int(header["step"]), header.get("meta", {})
