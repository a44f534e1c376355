import math

import numpy as np
import pytest
import torch

from apeg.denoiser.attention import (attention_weights, cross_attention, multihead_attention, positional_encoding,
                                    self_attention)
from apeg.denoiser.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from apeg.denoiser.config import NetConfig, desk_preset, paper_preset, tiny_preset
from apeg.denoiser.flops import FlopModel, flop_estimate
from apeg.denoiser.gradcheck import grad_check
from apeg.denoiser.nets import TimeEmbedding, build_net, forward_cadm_net, forward_ccmdm_net
from apeg.denoiser.optim import Adam, adam_step
from apeg.denoiser.params import ParamStore, backward
from apeg.diffusion import loss_conditional, make_schedule
from apeg.fingerprint import NormStats


def _randomize(net, seed, scale=0.2):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in net.parameters():
            p.copy_(scale * torch.randn(p.shape, generator=g, dtype=p.dtype))
    return net


# --- config ----------------------------------------------------------------------

def test_presets():
    d, p = desk_preset(), paper_preset()
    assert d.base_channels == 16 and p.base_channels == 64
    assert p.channel_mults == (1, 2, 4, 4) and p.heads == 4 and p.dropout == 0.1
    assert NetConfig.from_dict(p.to_dict()) == p


def test_heads_must_divide_widths():
    with pytest.raises(ValueError):
        NetConfig(base_channels=6, heads=4)
    with pytest.raises(ValueError):
        NetConfig(channel_mults=())


# --- nets -------------------------------------------------------------------------

def test_paper_shapes_ccmdm():
    net = build_net("ccmdm", desk_preset(dropout=0.0), (16, 32), seed=0).eval()
    _randomize(net, 0)
    out = forward_ccmdm_net(net, np.zeros((2, 16, 32)), 5)
    assert out.shape == (2, 16, 32)


def test_cadm_shape():
    net = build_net("cadm", desk_preset(dropout=0.0), (8, 32), seed=0).eval()
    out = forward_cadm_net(net, np.zeros((3, 2, 8, 32)), [1, 2, 3], np.zeros((3, 2, 8, 32)))
    assert out.shape == (3, 2, 8, 32)


@pytest.mark.parametrize("cfg", [tiny_preset(), tiny_preset(channel_mults=(1, 2), self_attn=(True, True)),
                                 tiny_preset(resnet_blocks=2, cross_attn=(False, True))])
def test_shape_preservation_for_configs(cfg):
    for variant, shape in (("ccmdm", (8, 8)), ("cadm", (4, 8))):
        net = build_net(variant, cfg, shape, seed=0).eval()
        x = torch.zeros(2, 2, *shape)
        out = net(x, torch.tensor([1, 2]), x if variant == "cadm" else None)
        assert out.shape == x.shape


def test_shape_mismatch_rejected():
    net = build_net("cadm", tiny_preset(), (4, 8))
    with pytest.raises(ValueError):
        net(torch.zeros(1, 2, 4, 6), torch.tensor([1]), torch.zeros(1, 2, 4, 6))
    with pytest.raises(ValueError):
        net(torch.zeros(1, 2, 4, 8), torch.tensor([1]))
    with pytest.raises(ValueError):
        build_net("ccmdm", desk_preset(), (15, 32))


def test_determinism_without_dropout():
    net = _randomize(build_net("ccmdm", tiny_preset(), (8, 8)).eval(), 1)
    x = torch.randn(2, 2, 8, 8, generator=torch.Generator().manual_seed(0))
    assert torch.equal(net(x, torch.tensor([3, 4])), net(x, torch.tensor([3, 4])))


def test_time_reaches_output():
    net = _randomize(build_net("ccmdm", tiny_preset(), (8, 8), dtype=torch.float64).eval(), 2)
    x = torch.randn(1, 2, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    assert not torch.allclose(net(x, torch.tensor([1])), net(x, torch.tensor([50])))


def test_time_embedding_distinct():
    emb = TimeEmbedding(16, 64)
    _randomize(emb, 3)
    with torch.no_grad():
        e = emb(torch.arange(1, 201))
    assert torch.unique(e, dim=0).shape[0] == 200


def test_cadm_conditioning_live_and_severable():
    net = _randomize(build_net("cadm", tiny_preset(cond_concat=False), (4, 8), dtype=torch.float64).eval(), 4)
    g = torch.Generator().manual_seed(5)
    x = torch.randn(1, 2, 4, 8, dtype=torch.float64, generator=g)
    j = torch.randn(1, 2, 4, 8, dtype=torch.float64, generator=g)
    j2 = j.clone()
    j2[0, 1, 2, 3] += 0.5
    assert not torch.allclose(net(x, torch.tensor([3]), j), net(x, torch.tensor([3]), j2))
    with torch.no_grad():
        for name, p in net.named_parameters():
            if "_ca." in name and ".attn.to_out." in name:
                p.zero_()
    assert torch.equal(net(x, torch.tensor([3]), j), net(x, torch.tensor([3]), j2))


def test_input_concat_reaches_output_without_attention():
    net = _randomize(build_net("cadm", tiny_preset(), (4, 8), dtype=torch.float64).eval(), 4)
    assert net.conv_in.in_channels == 4
    with torch.no_grad():
        for name, p in net.named_parameters():
            if ".attn.to_out." in name:
                p.zero_()
    x = torch.zeros(1, 2, 4, 8, dtype=torch.float64)
    j = torch.zeros_like(x)
    j2 = j.clone()
    j2[0, 0, 1, 1] = 1.0
    assert not torch.allclose(net(x, torch.tensor([3]), j), net(x, torch.tensor([3]), j2))
    assert paper_preset().cond_concat is False


def test_positional_encoding():
    pe = positional_encoding(4, 8, 16)
    assert pe.shape == (32, 16)
    assert torch.unique(pe, dim=0).shape[0] == 32
    assert torch.all(pe.abs() <= 1)


def test_zero_init_output():
    net = build_net("cadm", tiny_preset(), (4, 8), seed=0)
    assert all(torch.count_nonzero(p) == 0 for n, p in net.named_parameters() if n.startswith("conv_out."))
    assert all(torch.count_nonzero(p) == 0 for n, p in net.named_parameters() if ".attn.to_out." in n)


def test_shared_condition_encoder_knob():
    sep = build_net("cadm", tiny_preset(), (4, 8))
    shared = build_net("cadm", tiny_preset(share_cond_encoder=True), (4, 8))
    assert sum(p.numel() for p in shared.parameters()) < sum(p.numel() for p in sep.parameters())
    x = torch.zeros(1, 2, 4, 8)
    assert shared(x, torch.tensor([1]), x).shape == x.shape


# --- attention ----------------------------------------------------------------------

def _dense(q, k, v, heads):
    d = q.shape[-1]
    dk = d // heads
    outs = []
    for h in range(heads):
        sl = slice(h * dk, (h + 1) * dk)
        s = q[:, sl] @ k[:, sl].T / math.sqrt(dk)
        w = np.exp(s - s.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        outs.append(w @ v[:, sl])
    return np.concatenate(outs, axis=1)


def test_attention_singleton_and_uniform():
    v = torch.randn(1, 8, dtype=torch.float64)
    w = torch.randn(8, 8, dtype=torch.float64)
    out = cross_attention(v, v, v, 2, out_weight=w)
    torch.testing.assert_close(out, v @ w.T)
    q = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    k = torch.tensor([[0.0, 1.0], [0.0, 2.0], [0.0, -3.0]], dtype=torch.float64)
    vals = torch.randn(3, 2, dtype=torch.float64)
    torch.testing.assert_close(multihead_attention(q, k, vals, 1), vals.mean(0, keepdim=True))


def test_attention_dense_small():
    rng = np.random.default_rng(0)
    q, k, v = (rng.standard_normal((4, 8)) for _ in range(3))
    out = cross_attention(*(torch.as_tensor(a) for a in (q, k, v)), 1).numpy()
    assert np.max(np.abs(out - _dense(q, k, v, 1))) <= 1e-12


def test_attention_divisibility():
    x = torch.zeros(3, 6)
    with pytest.raises(ValueError):
        cross_attention(x, x, x, 4)


def test_attention_rows_sum_to_one():
    g = torch.Generator().manual_seed(1)
    q, k = torch.randn(5, 8, dtype=torch.float64, generator=g), torch.randn(7, 8, dtype=torch.float64, generator=g)
    w = attention_weights(q, k, 2)
    assert torch.max(torch.abs(w.sum(-1) - 1)) <= 1e-12


def test_self_attention_properties():
    g = torch.Generator().manual_seed(2)
    x = torch.randn(6, 8, dtype=torch.float64, generator=g)
    w = torch.randn(8, 8, dtype=torch.float64, generator=g)
    torch.testing.assert_close(self_attention(x, 2, w) - x, cross_attention(x, x, x, 2, w))
    perm = torch.randperm(6, generator=g)
    torch.testing.assert_close(self_attention(x[perm], 2, w), self_attention(x, 2, w)[perm])
    one = x[:1]
    torch.testing.assert_close(self_attention(one, 2, w), one + one @ w.T)


# --- params, backward, optimiser ------------------------------------------------------------

def test_param_store_slots():
    net = build_net("cadm", tiny_preset(), (4, 8))
    store = ParamStore(net)
    assert store.num_params == sum(p.numel() for p in net.parameters())
    for name, p in store.items():
        assert store.grad(name).shape == p.shape
    assert store.names() == [n for n, _ in net.named_parameters()]
    vec = store.to_vector()
    store.load_vector(vec * 2)
    np.testing.assert_allclose(store.to_vector(), vec * 2, rtol=1e-6)
    with pytest.raises(ValueError):
        store.load_vector(vec[:-1])


def test_oracle_predictor_gives_zero_gradients():
    net = _randomize(build_net("cadm", tiny_preset(), (4, 8), dtype=torch.float64), 6)
    store = ParamStore(net)
    rng = np.random.default_rng(0)
    h0 = rng.uniform(-1, 1, (2, 2, 4, 8))
    eps = rng.standard_normal(h0.shape)
    stored = torch.as_tensor(eps)
    # predictor = net output * 0 + stored noise: graph reaches every parameter, residual is zero
    loss = loss_conditional(None, h0, h0, rng, make_schedule(10), t=[2, 5], noise=eps,
                            predictor=lambda x, t, c: net(x, t, c) * 0 + stored)
    backward(loss, store)
    assert loss.item() == 0.0
    assert np.all(store.grad_vector() == 0)


def test_severed_block_has_zero_gradient():
    net = _randomize(build_net("cadm", tiny_preset(cond_concat=False), (4, 8), dtype=torch.float64), 7)
    store = ParamStore(net)
    rng = np.random.default_rng(1)
    h0 = rng.uniform(-1, 1, (2, 2, 4, 8))

    def skip_body(x, t, cond):
        # bypasses the U-Net body and the condition encoder entirely
        return net.conv_out(torch.nn.functional.silu(net.norm_out(net.conv_in(x))))

    loss = loss_conditional(None, h0, h0, rng, make_schedule(10), predictor=skip_body)
    backward(loss, store)
    assert torch.count_nonzero(store.grad("cond_encoder.conv_in.weight")) == 0
    assert torch.count_nonzero(store.grad("conv_in.weight")) > 0


def test_adam_zero_gradient_no_change():
    p = [torch.tensor([1.0, -2.0])]
    adam_step(p, [torch.zeros(2)], [torch.zeros(2)], [torch.zeros(2)], lr=0.1)
    assert p[0].tolist() == [1.0, -2.0]


def test_adam_first_step_sign():
    p = [torch.tensor([1.0, 1.0, 1.0], dtype=torch.float64)]
    g = torch.tensor([3.0, -0.5, 1e-3], dtype=torch.float64)
    adam_step(p, [g], [torch.zeros(3, dtype=torch.float64)], [torch.zeros(3, dtype=torch.float64)], lr=0.01)
    np.testing.assert_allclose(p[0].numpy(), 1.0 - 0.01 * np.sign(g.numpy()), atol=1e-7)
    with pytest.raises(ValueError):
        adam_step(p, [g], [g], [g], lr=0.01, step=0)


def test_adam_quadratic_bowl():
    w = torch.nn.Parameter(torch.tensor([3.0, -4.0, 1.5], dtype=torch.float64))
    mod = torch.nn.Module()
    mod.w = w
    store = ParamStore(mod)
    opt = Adam(store, lr=1e-2)
    norms = []
    for _ in range(200):
        backward((w * w).sum(), store)
        opt.step()
        norms.append(w.norm().item())
    tail = norms[10:]
    assert all(b < a for a, b in zip(tail, tail[1:]))


# --- gradient check ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def grad_report():
    return grad_check()


def test_grad_check_passes(grad_report):
    assert all(c.num_params <= 5000 for c in grad_report.checks)
    assert {c.loss for c in grad_report.checks} == {"loss_masked", "loss_conditional"}
    assert grad_report.passed, grad_report.summary()
    assert grad_report.max_rel_err <= 1e-4


def test_grad_check_reports_block_worst(grad_report):
    for c in grad_report.checks:
        assert c.worst_block in c.per_block
        assert c.per_block[c.worst_block] == c.max_rel_err


def test_grad_check_sabotage_fails():
    report = grad_check(sabotage="mid_sa.attn")
    assert not report.passed
    assert "FAIL" in report.summary()


# --- flops ---------------------------------------------------------------------------------

def test_flop_limbs():
    assert flop_estimate(FlopModel(0, 4, 3, 2, 64, 512), "ccmdm") == 0
    T, B, L, n, c = 10, 2, 3, 2, 32
    assert flop_estimate(FlopModel(T, B, L, n, c, c), "ccmdm") == T * B * L * n * 2 * c ** 3
    with pytest.raises(ValueError):
        flop_estimate(FlopModel(1, 1, 1, 1, 1, 1), "gan")
    with pytest.raises(ValueError):
        FlopModel(-1, 1, 1, 1, 1, 1)


# --- checkpoint -------------------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    cfg = tiny_preset()
    net = _randomize(build_net("cadm", cfg, (4, 8)), 8)
    sched = make_schedule(20, 5e-4, 0.1)
    norm = NormStats(-1.25, 2.5)
    path = save_checkpoint(tmp_path / "m.ckpt", "cadm", net, cfg, (4, 8), sched, norm)
    assert path.read_bytes()[:8] == b"APEGCKPT"
    ck = load_checkpoint(path)
    assert ck.variant == "cadm" and ck.cfg == cfg and ck.norm == norm and ck.image_shape == (4, 8)
    assert (ck.schedule.T, ck.schedule.beta_start, ck.schedule.beta_end) == (20, 5e-4, 0.1)
    for (n1, p1), (n2, p2) in zip(net.named_parameters(), ck.net.named_parameters()):
        assert n1 == n2 and torch.equal(p1, p2)


def test_checkpoint_errors(tmp_path):
    cfg = tiny_preset()
    net = build_net("ccmdm", cfg, (8, 8))
    path = save_checkpoint(tmp_path / "m.ckpt", "ccmdm", net, cfg, (8, 8), make_schedule(5))
    raw = path.read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "short.ckpt").write_bytes(raw[:-10])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "short.ckpt")
