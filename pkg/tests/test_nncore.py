import json
import struct

import numpy as np
import pytest
import torch

from jepaplan.errors import ConfigError, DataError, NumericError
from jepaplan.nncore import (
    CHECKPOINT_MAGIC,
    LrSchedule,
    ParamSet,
    adam_step,
    cosine_rate,
    finite_difference_grads,
    forward_backward,
    load_checkpoint,
    save_checkpoint,
    stop_gradient,
)

torch.set_num_threads(1)


def tiny_mlp(seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    net = torch.nn.Sequential(
        torch.nn.Linear(3, 8), torch.nn.Tanh(), torch.nn.Linear(8, 2)
    ).to(dtype)
    return net


# ---------------------------------------------------------------------------
# ParamSet
# ---------------------------------------------------------------------------


def test_paramset_from_modules_names_and_numel():
    net = tiny_mlp()
    ps = ParamSet.from_modules({"enc": net})
    assert set(ps.params) == {"enc.0.weight", "enc.0.bias", "enc.2.weight", "enc.2.bias"}
    assert ps.numel() == 3 * 8 + 8 + 8 * 2 + 2
    assert ps.step == 0


def test_paramset_gradients_default_to_zeros():
    net = tiny_mlp()
    ps = ParamSet.from_modules({"enc": net})
    grads = ps.gradients()
    for name, g in grads.items():
        assert torch.all(g == 0), name


def test_paramset_moment_shape_mismatch_rejected():
    p = torch.zeros(3)
    with pytest.raises(ConfigError):
        ParamSet(params={"w": p}, m={"w": torch.zeros(4)})


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_first_step_matches_closed_form():
    # with zero moments, one step gives p - rate * g / (|g| + eps) exactly
    p = torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64)
    g = torch.tensor([0.3, -0.1, 0.0], dtype=torch.float64)
    ps = ParamSet(params={"w": p})
    adam_step(ps, {"w": g}, rate=0.01, eps=1e-8)
    expected = torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64) - 0.01 * g / (
        g.abs() + 1e-8
    )
    assert torch.allclose(p, expected, atol=0, rtol=1e-12)
    assert ps.step == 1


def test_adam_trajectory_matches_torch_optim():
    # oracle: torch.optim.Adam run on an identical copy with identical grads
    torch.manual_seed(1)
    p_mine = torch.randn(5, 4, dtype=torch.float64)
    p_ref = p_mine.clone().requires_grad_(True)
    ps = ParamSet(params={"w": p_mine})
    opt = torch.optim.Adam([p_ref], lr=3e-3, betas=(0.9, 0.999), eps=1e-8)
    gen = torch.Generator().manual_seed(2)
    for _ in range(25):
        g = torch.randn(5, 4, dtype=torch.float64, generator=gen)
        adam_step(ps, {"w": g}, rate=3e-3)
        opt.zero_grad()
        p_ref.grad = g.clone()
        opt.step()
    assert torch.allclose(p_mine, p_ref.detach(), atol=1e-12, rtol=1e-10)


def test_adam_step_counter_and_missing_grad():
    p = torch.ones(2, dtype=torch.float64)
    ps = ParamSet(params={"w": p})
    before = p.clone()
    adam_step(ps, {}, rate=0.1)  # missing grad treated as zero
    assert ps.step == 1
    assert torch.equal(p, before)


def test_adam_rejects_bad_rate_and_nan_grads():
    ps = ParamSet(params={"w": torch.ones(2)})
    with pytest.raises(ConfigError):
        adam_step(ps, {"w": torch.zeros(2)}, rate=0.0)
    with pytest.raises(NumericError):
        adam_step(ps, {"w": torch.tensor([float("nan"), 0.0])}, rate=0.1)
    with pytest.raises(ConfigError):
        adam_step(ps, {"w": torch.zeros(3)}, rate=0.1)


# ---------------------------------------------------------------------------
# Learning-rate schedule
# ---------------------------------------------------------------------------


def test_cosine_rate_envelope():
    sched = LrSchedule(base_rate=0.0028, total_steps=1000, warmup_steps=100)
    assert cosine_rate(sched, 0) == 0.0
    assert cosine_rate(sched, 50) == pytest.approx(0.0028 * 0.5)
    assert cosine_rate(sched, 100) == pytest.approx(0.0028)
    assert cosine_rate(sched, 550) == pytest.approx(0.0028 * 0.5)
    assert cosine_rate(sched, 1000) == pytest.approx(0.0, abs=1e-12)


def test_cosine_rate_monotone_after_warmup():
    sched = LrSchedule(base_rate=1.0, total_steps=200, warmup_steps=20)
    rates = [cosine_rate(sched, s) for s in range(20, 201)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))


def test_cosine_rate_domain_and_schedule_validation():
    sched = LrSchedule(base_rate=1.0, total_steps=10)
    with pytest.raises(ConfigError):
        cosine_rate(sched, 11)
    with pytest.raises(ConfigError):
        cosine_rate(sched, -1)
    with pytest.raises(ConfigError):
        LrSchedule(base_rate=0.0, total_steps=10)
    with pytest.raises(ConfigError):
        LrSchedule(base_rate=1.0, total_steps=10, warmup_steps=10)


# ---------------------------------------------------------------------------
# forward/backward, stop-gradient, finite differences
# ---------------------------------------------------------------------------


def test_forward_backward_matches_finite_differences():
    net = tiny_mlp(seed=3)
    ps = ParamSet.from_modules({"net": net})
    x = torch.randn(6, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(4))

    def loss_fn(inp):
        return (net(inp) ** 2).mean()

    loss, grads = forward_backward(loss_fn, ps, x)
    fd = finite_difference_grads(
        lambda: (net(x) ** 2).mean(), list(ps.params.values()), eps=1e-5
    )
    for g_ad, g_fd in zip(grads.values(), fd):
        assert torch.allclose(g_ad, g_fd, atol=1e-7, rtol=1e-6)


def test_stop_gradient_blocks_and_preserves_value():
    w = torch.tensor([2.0], dtype=torch.float64, requires_grad=True)
    y = stop_gradient(w * 3.0) * w
    assert y.item() == pytest.approx(12.0)
    y.backward()
    # d/dw [sg(3w) * w] = sg(3w) = 6, not 12
    assert w.grad.item() == pytest.approx(6.0)


def test_stop_gradient_respected_by_finite_difference_closure():
    # the FD closure must freeze the barred branch explicitly; when it does,
    # FD and autograd agree on the half-gradient
    w = torch.tensor([1.5], dtype=torch.float64, requires_grad=True)
    y = stop_gradient(w) * w
    y.backward()
    w_frozen = w.detach().clone()
    (fd,) = finite_difference_grads(lambda: w_frozen * w, [w], eps=1e-6)
    assert torch.allclose(fd, w.grad, atol=1e-8)


def test_forward_backward_rejects_nonscalar_and_nan():
    net = tiny_mlp(seed=5)
    ps = ParamSet.from_modules({"net": net})
    x = torch.ones(2, 3, dtype=torch.float64)
    with pytest.raises(ConfigError):
        forward_backward(lambda inp: net(inp), ps, x)
    with pytest.raises(NumericError):
        forward_backward(lambda inp: net(inp).sum() * float("nan"), ps, x)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def test_checkpoint_roundtrip_bitwise(tmp_path):
    tensors = {
        "enc.w": torch.randn(4, 3, generator=torch.Generator().manual_seed(6)),
        "enc.b": torch.randn(4, dtype=torch.float64, generator=torch.Generator().manual_seed(7)),
        "scalar": torch.tensor(0.25),
    }
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, tensors, step=42, meta={"mode": "vf"})
    loaded, step, meta = load_checkpoint(path)
    assert step == 42
    assert meta == {"mode": "vf"}
    assert set(loaded) == set(tensors)
    for name in tensors:
        assert loaded[name].dtype == tensors[name].dtype
        assert torch.equal(loaded[name], tensors[name]), name


def test_checkpoint_header_layout(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"w": torch.zeros(2, 2)}, step=7)
    raw = path.read_bytes()
    assert raw[:4] == CHECKPOINT_MAGIC
    (hlen,) = struct.unpack("<Q", raw[4:12])
    header = json.loads(raw[12 : 12 + hlen])
    assert header["format"] == "jepaplan-checkpoint"
    assert header["step"] == 7
    assert header["tensors"] == [{"dtype": "<f4", "name": "w", "shape": [2, 2]}]
    payload = raw[12 + hlen :]
    assert payload == b"\x00" * 16  # 4 little-endian f32 zeros


def test_checkpoint_deterministic_bytes(tmp_path):
    t = {"a": torch.full((3,), 1.5), "b": torch.arange(4, dtype=torch.float64)}
    p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
    save_checkpoint(p1, t, step=1, meta={"x": 1})
    save_checkpoint(p2, t, step=1, meta={"x": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_bad_files_rejected(tmp_path):
    missing = tmp_path / "nope.ckpt"
    with pytest.raises(DataError):
        load_checkpoint(missing)
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(DataError):
        load_checkpoint(bad)
