import numpy as np
import pytest
import torch

from jepaplan.errors import ConfigError
from jepaplan.models import (
    EncoderConfig,
    EuclideanHead,
    IQEHead,
    LatentEncoder,
    LatentEncoderConfig,
    ModelConfig,
    Predictor,
    PredictorConfig,
    StateEncoder,
    ValueHeadConfig,
    WorldModel,
    count_parameters,
    ema_update,
    iqe_distance,
    load_model,
    make_value_head,
    safe_norm,
    save_model,
)
from jepaplan.nncore import finite_difference_grads

torch.set_num_threads(1)

TINY_ENC = EncoderConfig(
    in_channels=2, image_size=16, widths=(4, 8), latent_dim=8, group_norm_groups=4
)


# ---------------------------------------------------------------------------
# Parameter budgets
# ---------------------------------------------------------------------------


def test_full_scale_parameter_counts():
    wall_enc = StateEncoder(EncoderConfig())
    maze_enc = StateEncoder(EncoderConfig(in_channels=3, proprio_dim=2))
    pred = Predictor(PredictorConfig())
    assert 0.9 * 2.2e6 <= count_parameters(wall_enc) <= 1.1 * 2.2e6
    assert 0.9 * 2.2e6 <= count_parameters(maze_enc) <= 1.1 * 2.2e6
    assert 0.9 * 1.3e6 <= count_parameters(pred) <= 1.1 * 1.3e6


def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(image_size=30)
    with pytest.raises(ConfigError):
        ValueHeadConfig(kind="iqe", latent_dim=512, components=7, component_dim=32)
    with pytest.raises(ConfigError):
        ValueHeadConfig(kind="cosine")
    with pytest.raises(ConfigError):
        ModelConfig(
            encoder=EncoderConfig(latent_dim=512),
            predictor=PredictorConfig(latent_dim=256),
        )


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------


def test_encode_shape_and_determinism():
    torch.manual_seed(0)
    enc = StateEncoder(TINY_ENC)
    img = torch.rand(3, 2, 16, 16)
    z1 = enc(img)
    z2 = enc(img)
    assert z1.shape == (3, 8)
    assert torch.equal(z1, z2)
    assert torch.isfinite(z1).all()


def test_encode_channel_mismatch():
    enc = StateEncoder(TINY_ENC)
    with pytest.raises(ConfigError):
        enc(torch.rand(1, 3, 16, 16))


def test_encode_proprio_branch():
    cfg = EncoderConfig(
        in_channels=3, image_size=16, widths=(4, 8), latent_dim=8,
        group_norm_groups=4, proprio_dim=2, proprio_embed=4,
    )
    torch.manual_seed(1)
    enc = StateEncoder(cfg)
    img = torch.rand(2, 3, 16, 16)
    vel = torch.tensor([[1.0, -2.0], [0.0, 0.0]])
    z = enc(img, vel)
    assert z.shape == (2, 8)
    # the velocity must reach the latent
    z_other = enc(img, vel + 1.0)
    assert not torch.allclose(z, z_other)
    with pytest.raises(ConfigError):
        enc(img)


def test_encoder_gradient_matches_finite_differences():
    torch.manual_seed(2)
    enc = StateEncoder(TINY_ENC).double()
    img = torch.rand(2, 2, 16, 16, dtype=torch.float64)

    def loss():
        return (enc(img) ** 2).sum()

    value = loss()
    value.backward()
    params = list(enc.parameters())
    fd = finite_difference_grads(loss, params, eps=1e-5)
    for p, g_fd in zip(params, fd):
        assert torch.allclose(p.grad, g_fd, atol=1e-6, rtol=1e-5)


# ---------------------------------------------------------------------------
# Predictor
# ---------------------------------------------------------------------------


def test_predictor_shapes_and_statelessness():
    torch.manual_seed(3)
    cfg = PredictorConfig(latent_dim=8, hidden=(16,))
    pred = Predictor(cfg)
    z = torch.randn(4, 8)
    actions = torch.randn(4, 6, 2)
    roll = pred.rollout(z, actions)
    assert roll.shape == (4, 7, 8)
    # chaining manually gives the same sequence: no hidden state
    cur = z
    for t in range(6):
        cur = pred(cur, actions[:, t])
        assert torch.equal(roll[:, t + 1], cur)


def test_predictor_dimension_errors():
    pred = Predictor(PredictorConfig(latent_dim=8, hidden=(16,)))
    with pytest.raises(ConfigError):
        pred(torch.randn(2, 9), torch.randn(2, 2))
    with pytest.raises(ConfigError):
        pred(torch.randn(2, 8), torch.randn(2, 3))


def test_latent_encoder():
    net = LatentEncoder(LatentEncoderConfig(in_dim=8, hidden=(16,), out_dim=4))
    out = net(torch.randn(5, 8))
    assert out.shape == (5, 4)


# ---------------------------------------------------------------------------
# Value heads
# ---------------------------------------------------------------------------


def test_euclidean_three_four_five():
    head = EuclideanHead(ValueHeadConfig(latent_dim=8))
    z_s = torch.zeros(1, 8)
    z_g = torch.zeros(1, 8)
    z_g[0, 0], z_g[0, 1] = 3.0, 4.0
    assert head(z_s, z_g).item() == pytest.approx(-5.0)
    assert head(z_g, z_s).item() == pytest.approx(-5.0)  # symmetric


def test_euclidean_zero_at_coincidence_with_zero_gradient():
    head = EuclideanHead(ValueHeadConfig(latent_dim=8))
    z = torch.randn(3, 8, requires_grad=True)
    v = head(z, z.detach().clone())
    # one row coincides exactly
    assert torch.all(v <= 0)
    v2 = head(z, z)
    assert torch.all(v2 == 0)
    v2.sum().backward()
    assert torch.all(z.grad == 0)
    assert torch.isfinite(z.grad).all()


def test_safe_norm_gradient_away_from_origin():
    x = torch.tensor([[3.0, 4.0]], requires_grad=True)
    n = safe_norm(x)
    n.backward()
    assert torch.allclose(x.grad, torch.tensor([[0.6, 0.8]]))


def test_iqe_hand_examples():
    # k=1, m=2: intervals [0,1] and [0,2] union has measure 2; reversed empty
    a0 = torch.tensor(0.0)
    assert iqe_distance(torch.tensor([0.0, 0.0]), torch.tensor([1.0, 2.0]), 1, 2, a0) == 2.0
    assert iqe_distance(torch.tensor([1.0, 2.0]), torch.tensor([0.0, 0.0]), 1, 2, a0) == 0.0
    # k=2, m=1: component distances 1 and 3
    u = torch.tensor([0.0, 0.0])
    v = torch.tensor([1.0, 3.0])
    assert iqe_distance(u, v, 2, 1, torch.tensor(-40.0)).item() == pytest.approx(2.0)
    assert iqe_distance(u, v, 2, 1, torch.tensor(40.0)).item() == pytest.approx(3.0)


def test_iqe_overlapping_intervals():
    # intervals [0,2] and [1,3] overlap: union measure 3, not 4
    u = torch.tensor([0.0, 1.0])
    v = torch.tensor([2.0, 3.0])
    assert iqe_distance(u, v, 1, 2, torch.tensor(0.0)).item() == pytest.approx(3.0)
    # nested: [0,3] and [1,2] -> 3
    u = torch.tensor([0.0, 1.0])
    v = torch.tensor([3.0, 2.0])
    assert iqe_distance(u, v, 1, 2, torch.tensor(0.0)).item() == pytest.approx(3.0)


def test_iqe_quasimetric_axioms_bulk():
    torch.manual_seed(4)
    head = IQEHead(ValueHeadConfig(kind="iqe", latent_dim=64, components=8, component_dim=8))
    with torch.no_grad():
        head.alpha_raw.fill_(0.7)
    u = torch.randn(10000, 64)
    v = torch.randn(10000, 64)
    w = torch.randn(10000, 64)
    with torch.no_grad():
        d_uu = head.distance(u, u)
        d_uv = head.distance(u, v)
        d_vw = head.distance(v, w)
        d_uw = head.distance(u, w)
    assert torch.all(d_uu == 0)
    assert torch.all(d_uv >= 0)
    assert torch.all(d_uw <= d_uv + d_vw + 1e-5)


def test_iqe_permutation_invariance_within_components():
    torch.manual_seed(5)
    k, m = 4, 8
    u = torch.randn(100, k * m)
    v = torch.randn(100, k * m)
    a0 = torch.tensor(0.3)
    base = iqe_distance(u, v, k, m, a0)
    perm = torch.cat([torch.randperm(m) + j * m for j in range(k)])
    assert torch.allclose(iqe_distance(u[:, perm], v[:, perm], k, m, a0), base, atol=1e-6)


def test_iqe_value_head_nonpositive():
    head = make_value_head(
        ValueHeadConfig(kind="iqe", latent_dim=32, components=4, component_dim=8)
    )
    z = torch.randn(50, 32)
    g = torch.randn(50, 32)
    assert torch.all(head(z, g) <= 0)
    assert torch.all(head(z, z) == 0)


# ---------------------------------------------------------------------------
# EMA
# ---------------------------------------------------------------------------


def test_ema_fixed_point_and_geometric_rate():
    src = torch.nn.Linear(3, 3)
    tgt = torch.nn.Linear(3, 3)
    tgt.load_state_dict(src.state_dict())
    ema_update(tgt, src, 0.5)
    for a, b in zip(tgt.parameters(), src.parameters()):
        assert torch.equal(a, b)  # theta_bar = theta is a fixed point
    with torch.no_grad():
        tgt.weight.add_(8.0)
    w0 = tgt.weight.detach().clone()
    for n in range(1, 6):
        ema_update(tgt, src, 0.75)
        expected = src.weight + 0.75**n * (w0 - src.weight)
        assert torch.allclose(tgt.weight, expected, atol=1e-6)


def test_ema_validation():
    a = torch.nn.Linear(2, 2)
    b = torch.nn.Linear(2, 2)
    with pytest.raises(ConfigError):
        ema_update(a, b, 1.0)
    with pytest.raises(ConfigError):
        ema_update(a, b, 0.0)
    with pytest.raises(ConfigError):
        ema_update({"w": torch.zeros(2)}, {"w": torch.zeros(3)}, 0.5)
    with pytest.raises(ConfigError):
        ema_update({"w": torch.zeros(2)}, {"x": torch.zeros(2)}, 0.5)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def test_model_checkpoint_roundtrip(tmp_path):
    torch.manual_seed(6)
    cfg = ModelConfig(
        encoder=TINY_ENC,
        predictor=PredictorConfig(latent_dim=8, hidden=(16,)),
        head=ValueHeadConfig(kind="iqe", latent_dim=8, components=2, component_dim=4,
                             alpha_raw_init=0.25),
    )
    model = WorldModel(cfg)
    path = tmp_path / "model.ckpt"
    save_model(path, model, step=17, extra_meta={"mode": "vf_quasi"})
    loaded, step, meta = load_model(path)
    assert step == 17
    assert meta["mode"] == "vf_quasi"
    assert loaded.cfg == cfg
    for (n1, p1), (n2, p2) in zip(
        model.state_dict().items(), loaded.state_dict().items()
    ):
        assert n1 == n2
        assert torch.equal(p1, p2), n1
    img = torch.rand(2, 2, 16, 16)
    assert torch.equal(model.encode(img), loaded.encode(img))
