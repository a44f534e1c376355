import numpy as np
import pytest
import torch

from apeg.denoiser.config import tiny_preset
from apeg.denoiser.nets import build_net
from apeg.diffusion import (forward_sample, forward_sample_masked, forward_step, loss_conditional, loss_masked,
                            make_schedule, posterior_params, reverse_step_conditional, reverse_step_masked,
                            sample_cadm, sample_ccmdm)
from apeg.fingerprint import build_mask, concat_pair

MASK = build_mask((4, 8))


# --- schedule -------------------------------------------------------------------

def test_default_schedule_length():
    assert make_schedule().T == 1000


def test_single_step_schedule():
    s = make_schedule(1, 1e-4, 0.02)
    assert s.alpha_bar[0] == 1 - 1e-4
    assert s.beta_tilde[0] == 0.0


@pytest.mark.parametrize("T,b0,b1", [(10, 1e-4, 0.02), (200, 5e-4, 0.1), (1000, 1e-4, 0.02)])
def test_schedule_recurrences(T, b0, b1):
    s = make_schedule(T, b0, b1)
    assert np.all(np.diff(s.beta) >= 0) and 0 < s.beta[0] and s.beta[-1] < 1
    assert np.all(np.diff(s.alpha_bar) < 0)
    ab_prev = np.concatenate([[1.0], s.alpha_bar[:-1]])
    np.testing.assert_allclose(s.alpha_bar, ab_prev * s.alpha, rtol=1e-15)
    np.testing.assert_allclose(s.beta_tilde * (1 - s.alpha_bar), (1 - ab_prev) * s.beta, rtol=1e-12, atol=1e-18)
    assert s.beta_tilde[0] == 0.0
    assert np.all(s.beta_tilde <= s.beta)


@pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)])
def test_invalid_schedule(args):
    with pytest.raises(ValueError):
        make_schedule(*args)


def test_step_out_of_range():
    s = make_schedule(5)
    with pytest.raises(ValueError):
        s.at("beta", 0)
    with pytest.raises(ValueError):
        posterior_params(0.0, 0.0, 6, s)


# --- forward ---------------------------------------------------------------------

def test_forward_limbs():
    s = make_schedule(50, 1e-4, 0.02)
    rng = np.random.default_rng(0)
    h0 = rng.uniform(-1, 1, (2, 4, 8))
    eps = rng.standard_normal(h0.shape)
    np.testing.assert_allclose(forward_sample(h0, 30, np.zeros_like(h0), s), np.sqrt(s.alpha_bar[29]) * h0)
    np.testing.assert_allclose(forward_sample(np.zeros_like(h0), 30, eps, s), np.sqrt(1 - s.alpha_bar[29]) * eps)
    with pytest.raises(ValueError):
        forward_sample(h0, 3, eps[:1], s)


def test_forward_monte_carlo_moments():
    s = make_schedule(100, 1e-4, 0.02)
    rng = np.random.default_rng(1)
    h0, t, n = 0.6, 70, 10_000
    x = forward_sample(np.full(n, h0), t, rng.standard_normal(n), s)
    ab = s.alpha_bar[t - 1]
    assert abs(x.mean() - np.sqrt(ab) * h0) < 3 * np.sqrt((1 - ab) / n)
    assert abs(x.var() - (1 - ab)) < 3 * (1 - ab) * np.sqrt(2 / n)


def test_masked_forward_structure():
    s = make_schedule(20, 1e-4, 0.02)
    rng = np.random.default_rng(2)
    pair = rng.uniform(-1, 1, (2, 8, 8))
    eps = rng.standard_normal(pair.shape)
    assert np.array_equal(forward_sample_masked(pair, np.zeros_like(MASK), 7, eps, s), pair)
    out = forward_sample_masked(pair, MASK, 7, eps, s)
    assert np.array_equal(out[:, :4], pair[:, :4])
    np.testing.assert_array_equal(out[:, 4:], forward_sample(pair[:, 4:], 7, eps[:, 4:], s))


def test_forward_step_matches_closed_form_at_t1():
    s = make_schedule(10, 1e-3, 0.02)
    h0 = np.linspace(-1, 1, 5)
    eps = np.linspace(0.5, -0.5, 5)
    np.testing.assert_allclose(forward_step(h0, 1, eps, s), forward_sample(h0, 1, eps, s), rtol=1e-14)


# --- posterior ----------------------------------------------------------------------

def test_posterior_limbs():
    s = make_schedule(5, 1e-2, 0.2)
    mean, var = posterior_params(0.0, 0.0, 3, s)
    assert mean == 0.0 and var == s.beta_tilde[2]
    mean, _ = posterior_params(1.0, 1.0, 3, s)
    ab, abp, b, a = s.alpha_bar[2], s.alpha_bar[1], s.beta[2], s.alpha[2]
    assert mean == pytest.approx(np.sqrt(abp) * b / (1 - ab) + np.sqrt(a) * (1 - abp) / (1 - ab), abs=1e-15)


# --- reverse -------------------------------------------------------------------------

def test_reverse_rejects_noise_at_t1():
    s = make_schedule(3)
    with pytest.raises(ValueError):
        reverse_step_conditional(np.zeros(3), 1, np.zeros(3), np.ones(3), s)


def test_reverse_formula_limb():
    s = make_schedule(10, 1e-3, 0.05)
    h = np.random.default_rng(3).standard_normal((2, 4, 8))
    out = reverse_step_conditional(h, 6, np.zeros_like(h), None, s)
    np.testing.assert_allclose(out, h / np.sqrt(s.alpha[5]), rtol=1e-15)


def test_single_step_exact_inversion():
    s = make_schedule(1, 0.3, 0.3)
    rng = np.random.default_rng(4)
    pair = rng.uniform(-1, 1, (2, 8, 8))
    eps = rng.standard_normal(pair.shape)
    noisy = forward_sample_masked(pair, MASK, 1, eps, s)
    back = reverse_step_masked(noisy, MASK, 1, eps, None, s)
    assert np.max(np.abs(back - pair)) <= 1e-10
    assert np.array_equal(back[:, :4], pair[:, :4])
    single = reverse_step_conditional(forward_sample(pair[:, 4:], 1, eps[:, 4:], s), 1, eps[:, 4:], None, s)
    assert np.max(np.abs(single - pair[:, 4:])) <= 1e-10


def test_masked_and_conditional_steps_agree_on_alice_block():
    s = make_schedule(10, 1e-3, 0.05)
    rng = np.random.default_rng(5)
    pair, eps, z = (rng.standard_normal((2, 8, 8)) for _ in range(3))
    a = reverse_step_masked(pair, MASK, 4, eps, z, s)
    b = reverse_step_conditional(pair[:, 4:], 4, eps[:, 4:], z[:, 4:], s)
    np.testing.assert_array_equal(a[:, 4:], b)


def test_strict_paper_noise_scale():
    s = make_schedule(10, 1e-3, 0.05)
    h, z = np.zeros(3), np.ones(3)
    eps = np.zeros(3)
    np.testing.assert_allclose(reverse_step_conditional(h, 5, eps, z, s), np.sqrt(s.beta_tilde[4]))
    np.testing.assert_allclose(reverse_step_conditional(h, 5, eps, z, s, strict_paper=True), s.beta_tilde[4])


# --- losses ---------------------------------------------------------------------------

def _data(rng, n=3):
    return rng.uniform(-1, 1, (n, 2, 4, 8)), rng.uniform(-1, 1, (n, 2, 4, 8))


def test_oracle_predictor_zero_loss():
    s = make_schedule(10)
    rng = np.random.default_rng(6)
    alice, jack = _data(rng)
    pair = concat_pair(alice, jack)
    t = rng.integers(1, 11, 3)
    eps = rng.standard_normal(pair.shape)
    stored = torch.as_tensor(eps)
    assert loss_masked(None, pair, MASK, rng, s, t=t, noise=eps, predictor=lambda x, tt: stored).item() == 0.0
    eps_c = rng.standard_normal(alice.shape)
    stored_c = torch.as_tensor(eps_c)
    assert loss_conditional(None, alice, jack, rng, s, t=t, noise=eps_c,
                            predictor=lambda x, tt, c: stored_c).item() == 0.0


def test_masked_loss_ignores_jack_block_prediction():
    s = make_schedule(10)
    rng = np.random.default_rng(7)
    alice, jack = _data(rng)
    pair = concat_pair(alice, jack)
    t = rng.integers(1, 11, 3)
    eps = rng.standard_normal(pair.shape)
    guess = torch.as_tensor(rng.standard_normal(pair.shape))
    junk = guess.clone()
    junk[:, :, :4] += 100.0
    a = loss_masked(None, pair, MASK, rng, s, t=t, noise=eps, predictor=lambda x, tt: guess).item()
    b = loss_masked(None, pair, MASK, rng, s, t=t, noise=eps, predictor=lambda x, tt: junk).item()
    assert a == b


def test_conditional_loss_sees_every_entry():
    s = make_schedule(10)
    rng = np.random.default_rng(8)
    alice, jack = _data(rng)
    t = rng.integers(1, 11, 3)
    eps = rng.standard_normal(alice.shape)
    guess = torch.as_tensor(rng.standard_normal(alice.shape))
    base = loss_conditional(None, alice, jack, rng, s, t=t, noise=eps, predictor=lambda *a: guess).item()
    for idx in [(0, 0, 0, 0), (2, 1, 3, 7)]:
        bumped = guess.clone()
        bumped[idx] += 0.5
        assert loss_conditional(None, alice, jack, rng, s, t=t, noise=eps, predictor=lambda *a: bumped).item() != base


def test_losses_match_naive_loops():
    s = make_schedule(10)
    rng = np.random.default_rng(9)
    alice, jack = _data(rng)
    pair = concat_pair(alice, jack)
    t = rng.integers(1, 11, 3)
    eps = rng.standard_normal(pair.shape)
    guess = rng.standard_normal(pair.shape)
    got = loss_masked(None, pair, MASK, rng, s, t=t, noise=eps, predictor=lambda *a: torch.as_tensor(guess)).item()
    num = den = 0.0
    for b in range(3):
        for c in range(2):
            for i in range(8):
                for j in range(8):
                    w = MASK[c, i, j]
                    num += w * (eps[b, c, i, j] - guess[b, c, i, j]) ** 2
                    den += w
    assert got == pytest.approx(num / den, rel=1e-12)

    eps_c = eps[:, :, 4:]
    guess_c = guess[:, :, 4:]
    got_c = loss_conditional(None, alice, jack, rng, s, t=t, noise=eps_c,
                             predictor=lambda *a: torch.as_tensor(guess_c)).item()
    total = sum((eps_c[idx] - guess_c[idx]) ** 2 for idx in np.ndindex(eps_c.shape))
    assert got_c == pytest.approx(total / eps_c.size, rel=1e-12)


def test_loss_draws_t_per_element():
    s = make_schedule(1000)
    rng = np.random.default_rng(10)
    seen = []

    def spy(x, tt):
        seen.append(tt.numpy().copy())
        return torch.zeros_like(x)

    pair = np.zeros((64, 2, 8, 8))
    loss_masked(None, pair, MASK, rng, s, predictor=spy)
    assert len(np.unique(seen[0])) > 1


# --- samplers ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_nets():
    cfg = tiny_preset()
    return build_net("ccmdm", cfg, (8, 8), seed=1), build_net("cadm", cfg, (4, 8), seed=2)


def _randomize(net, seed):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in net.parameters():
            p.copy_(0.2 * torch.randn(p.shape, generator=g))


def test_sample_ccmdm_keeps_jack_and_is_deterministic(tiny_nets):
    net, _ = tiny_nets
    _randomize(net, 3)
    s = make_schedule(8, 1e-3, 0.2)
    jack = np.random.default_rng(11).uniform(-1, 1, (3, 2, 4, 8))
    alice, pair = sample_ccmdm(jack, s, net, np.random.default_rng(0), return_pair=True)
    assert alice.shape == (3, 2, 4, 8)
    assert np.array_equal(pair[:, :, :4], jack)
    again = sample_ccmdm(jack, s, net, np.random.default_rng(0))
    assert np.array_equal(alice, again)
    single = sample_ccmdm(jack[0], s, net, np.random.default_rng(0))
    assert single.shape == (2, 4, 8)


def test_sample_cadm_shape_and_determinism(tiny_nets):
    _, net = tiny_nets
    _randomize(net, 4)
    s = make_schedule(8, 1e-3, 0.2)
    jack = np.random.default_rng(12).uniform(-1, 1, (5, 2, 4, 8))
    a = sample_cadm(jack, s, net, np.random.default_rng(1), batch_size=2)
    b = sample_cadm(jack, s, net, np.random.default_rng(1))
    assert a.shape == jack.shape
    np.testing.assert_allclose(a, b, atol=1e-5)
