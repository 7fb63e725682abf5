import math

import numpy as np
import pytest

from vaelm.core import Tape, Tensor
from vaelm.core.layers import ModelDims
from vaelm.errors import ConfigError, ContractError
from vaelm.model import SeqVae
from vaelm.objectives import (ObjectiveConfig, ScheduleConfig, anneal_weight, compute_objective,
                              fbp_hinge, free_bits_hinge, iw_log_weights, iwae_bound,
                              iwae_objective)
from vaelm.trainer import sgd_step

from conftest import TINY, random_sentences

LINEAR = ScheduleConfig("linear")


def test_linear_schedule_examples():
    assert anneal_weight(LINEAR, 0, 100) == 0.0
    assert anneal_weight(LINEAR, 500, 100) == 0.5
    assert anneal_weight(LINEAR, 1000, 100) == 1.0
    assert anneal_weight(LINEAR, 5000, 100) == 1.0


def test_linear_schedule_monotone_in_unit_interval():
    b = [anneal_weight(LINEAR, s, 7) for s in range(200)]
    assert all(0 <= x <= 1 for x in b)
    assert all(x <= y for x, y in zip(b, b[1:]))


def test_constant_schedule():
    assert anneal_weight(ScheduleConfig(), 123, 10) == 1.0


def test_cyclic_schedule():
    s = ScheduleConfig("cyclic", cycles=4, total_steps=400)
    assert anneal_weight(s, 0, 1) == 0.0
    assert anneal_weight(s, 25, 1) == 0.5
    assert anneal_weight(s, 50, 1) == 1.0
    assert anneal_weight(s, 99, 1) == 1.0
    assert anneal_weight(s, 100, 1) == 0.0
    assert all(0 <= anneal_weight(s, t, 1) <= 1 for t in range(400))


def test_cyclic_needs_total():
    with pytest.raises(ConfigError):
        anneal_weight(ScheduleConfig("cyclic"), 3, 1)


def test_negative_step():
    with pytest.raises(ContractError):
        anneal_weight(LINEAR, -1, 10)


def test_bad_configs():
    with pytest.raises(ConfigError):
        ScheduleConfig("sawtooth")
    with pytest.raises(ConfigError):
        ObjectiveConfig("vae")
    with pytest.raises(ConfigError):
        ObjectiveConfig("fb", target_rate=-1)
    with pytest.raises(ConfigError):
        ObjectiveConfig("iwae", iwae_k=0)


def test_free_bits_examples():
    assert free_bits_hinge(np.array([0.5, 5.0]), 3.0).data == 8.0
    kl = np.array([0.1, 0.7, 2.0])
    assert free_bits_hinge(kl, 0.0).data == kl.sum()


def test_free_bits_full_clamp_has_zero_gradient():
    kl = Tensor(np.random.default_rng(0).uniform(0, 3.9, 32), requires_grad=True)
    with Tape() as tape:
        out = free_bits_hinge(kl, 4.0)
    tape.backward(out)
    assert out.data == 128.0
    np.testing.assert_array_equal(kl.grad, 0.0)


def test_free_bits_bounds():
    rng = np.random.default_rng(1)
    for _ in range(100):
        kl, lam = rng.exponential(1.0, 6), rng.uniform(0, 2)
        h = float(free_bits_hinge(kl, lam).data)
        assert h >= max(kl.sum(), 6 * lam) - 1e-12
    kl = np.array([3.0, 4.0])
    assert free_bits_hinge(kl, 2.0).data == kl.sum()


def test_fbp_examples():
    assert fbp_hinge(np.array(2.95), 3.0).data == 3.0
    assert fbp_hinge(np.array(7.05), 7.0).data == 7.05
    assert fbp_hinge(np.array(1.25), 0.0).data == 1.25


def test_negative_rate_rejected():
    with pytest.raises(ConfigError):
        free_bits_hinge(np.ones(2), -0.1)
    with pytest.raises(ConfigError):
        fbp_hinge(np.array(1.0), -0.1)


def _collapsed(latent=32):
    dims = ModelDims(12, 5, 6, latent)
    m = SeqVae.create(dims, seed=0)
    for k in ("enc.mu.w", "enc.mu.b", "enc.logvar.w", "enc.logvar.b"):
        m.params[k].data[...] = 0.0
    return m


SENTS = [[1, 4, 5, 2], [1, 6, 7, 8, 2], [1, 9, 2]]


def test_collapsed_elbo_is_recon():
    m = _collapsed()
    out = compute_objective(m, m.batch(SENTS), ObjectiveConfig("elbo"), 0,
                            np.random.default_rng(0))
    assert out.kl_total == 0.0
    assert out.objective == out.recon_nll


def test_collapsed_fb_full_clamp():
    m = _collapsed()
    out = compute_objective(m, m.batch(SENTS), ObjectiveConfig("fb", 4.0), 0,
                            np.random.default_rng(0))
    assert out.objective == out.recon_nll + 128.0


def test_fb_zero_rate_is_elbo(tiny_model):
    b = tiny_model.batch(SENTS)
    e = compute_objective(tiny_model, b, ObjectiveConfig("elbo"), 0, np.random.default_rng(3))
    f = compute_objective(tiny_model, b, ObjectiveConfig("fb", 0.0), 0, np.random.default_rng(3))
    p = compute_objective(tiny_model, b, ObjectiveConfig("fbp", 0.0), 0, np.random.default_rng(3))
    assert e.objective == f.objective == p.objective


def test_breakdown_identities(tiny_model):
    b = tiny_model.batch(SENTS)
    cfg = ObjectiveConfig("fb", 0.3, schedule=LINEAR)
    out = compute_objective(tiny_model, b, cfg, 4, np.random.default_rng(0), steps_per_epoch=1)
    assert out.beta == 0.4
    assert out.objective == pytest.approx(out.recon_nll + 0.4 * out.hinged_kl, abs=1e-12)
    assert out.hinged_kl >= out.kl_total
    assert out.kl_total == pytest.approx(out.kl_per_dim.sum(), abs=1e-12)


def test_ae_is_deterministic_recon(tiny_model):
    b = tiny_model.batch(SENTS)
    cfg = ObjectiveConfig("ae")
    a = compute_objective(tiny_model, b, cfg, 0, np.random.default_rng(0), train=False)
    c = compute_objective(tiny_model, b, cfg, 0, np.random.default_rng(1), train=False)
    assert a.objective == c.objective == a.recon_nll
    mu = tiny_model.encode_many(SENTS).mu
    assert a.recon_nll == pytest.approx(tiny_model.nll_many(SENTS, mu).mean(), abs=1e-12)


def test_iwae_k1_is_single_sample_elbo(tiny_model):
    b = tiny_model.batch(SENTS)
    eps = np.random.default_rng(4).standard_normal((3, 1, TINY.latent_dim))
    iw = iwae_bound(iw_log_weights(tiny_model, b, eps)).data
    post = tiny_model.encode_many(SENTS)
    z = post.mu + post.sigma * eps[:, 0]
    recon = tiny_model.nll_many(SENTS, z)
    # single-sample -ELBO with the Monte Carlo KL term log q - log p at the same z
    log_q = -0.5 * (post.log_var + eps[:, 0] ** 2 + math.log(2 * math.pi)).sum(axis=1)
    log_p = -0.5 * (z ** 2 + math.log(2 * math.pi)).sum(axis=1)
    np.testing.assert_allclose(iw, recon + log_q - log_p, atol=1e-10)


def test_iwae_exact_when_decoder_ignores_z_and_q_is_prior():
    m = _collapsed(latent=TINY.latent_dim)
    m.params["dec.init.w"].data[...] = 0.0
    m.params["dec.lstm.w_x"].data[m.dims.embed_dim:] = 0.0
    b = m.batch(SENTS)
    exact = m.nll_many(SENTS, np.zeros((3, TINY.latent_dim)))
    for k in (1, 5, 50):
        got = iwae_objective(m, b, k, np.random.default_rng(k)).data
        np.testing.assert_allclose(got, exact, atol=1e-10)


def test_iwae_bad_k(tiny_model):
    with pytest.raises(ConfigError):
        iwae_objective(tiny_model, tiny_model.batch(SENTS), 0, np.random.default_rng(0))


def test_iwae_objective_shares_draws(tiny_model):
    b = tiny_model.batch(SENTS)
    a = compute_objective(tiny_model, b, ObjectiveConfig("iwae", iwae_k=4), 0,
                          np.random.default_rng(2))
    ref = iwae_objective(tiny_model, b, 4, np.random.default_rng(2)).data.mean()
    assert a.objective == pytest.approx(ref, abs=1e-12)


def test_iwae_improves_with_k(tiny_model):
    # R groups of 64 draws; each group's k=1 estimates reuse the same draws
    R = 200
    b = tiny_model.batch(SENTS)
    eps = np.random.default_rng(5).standard_normal((3, R * 64, TINY.latent_dim))
    lw = iw_log_weights(tiny_model, b, eps).data.reshape(3, R, 64)
    k1 = -lw.mean(axis=2)
    k64 = -(np.logaddexp.reduce(lw, axis=2) - math.log(64))
    d = (k64 - k1).mean(axis=0)
    assert d.mean() <= 3 * d.std(ddof=1) / math.sqrt(R)
    assert (k64 <= k1 + 1e-12).all()  # Jensen holds for every group


@pytest.mark.parametrize("kind", ["elbo", "fb", "fbp", "ae", "iwae"])
def test_loss_decreases_on_small_corpus(kind):
    model = SeqVae.create(TINY, seed=2, dropout=0.0)
    sents = random_sentences(np.random.default_rng(0), 10)
    batch = model.batch(sents)
    cfg = ObjectiveConfig(kind, target_rate=0.5, iwae_k=3)

    def value():
        return compute_objective(model, batch, cfg, 0, np.random.default_rng(99),
                                 train=False).objective

    before = value()
    rng = np.random.default_rng(1)
    for step in range(50):
        with Tape() as tape:
            bd = compute_objective(model, batch, cfg, step, rng)
        sgd_step(model, tape, bd.loss, 0.5, 5.0)
    assert value() < before
