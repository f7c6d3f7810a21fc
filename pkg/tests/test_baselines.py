import numpy as np
import pytest

from dcevae.baselines import Cevae, Cvae, Mcevae, train_cevae, train_mcevae
from dcevae.config import TrainConfig
from dcevae.counterfactual import abduct, counterfactual_predict, predict
from dcevae.data import ScmSpec, generate_scm
from dcevae.nets import Batch, load_checkpoint, make_model, save_checkpoint
from dcevae.numerics import Rng, Tape, rbf_mmd

_DS = generate_scm(ScmSpec(seed=6), 400).dataset


def _model(variant, **kw):
    cfg = dict(variant=variant, latent_d=2, latent_r=3, hidden=[6], epochs=2, batch_size=64)
    cfg.update(kw)
    return make_model(_DS, TrainConfig(**cfg))


@pytest.mark.parametrize("variant,cls", [("cevae", Cevae), ("mcevae", Mcevae), ("cvae", Cvae)])
def test_capacity_parity(variant, cls):
    m = _model(variant)
    assert isinstance(m, cls)
    assert m.latent_dim == 5
    assert m.nets["enc"].mu.layer_dims[1:-1] == [6]


def test_mcevae_encoder_ignores_y():
    m = _model("mcevae")
    b = Batch.of(_DS, np.arange(10))
    flipped = Batch(b.a, b.xd, b.xr, 1 - b.y)
    np.testing.assert_array_equal(m.encode(b).mu, m.encode(flipped).mu)


def test_cevae_routes_each_record_to_its_own_decoder():
    m = _model("cevae")
    rows = np.flatnonzero(_DS.a == 0)[:8]
    b = Batch.of(_DS, rows)
    tape = Tape()
    total, _ = m.model_loss(tape, b, Rng(0))
    grads = tape.backward(total)
    for p in m.net_parameters("dec_x1") + m.net_parameters("dec_y1"):
        np.testing.assert_array_equal(grads.wrt([p])[0], 0.0)
    assert any(np.abs(g).sum() > 0 for g in grads.wrt(m.net_parameters("dec_x0")))


def test_cevae_balanced_a_splits_updates():
    m = _model("cevae")
    history = train_cevae(m, _DS)
    share = np.mean([h["dec1_share"] for h in history])
    assert share == pytest.approx(_DS.a.mean(), abs=1e-9)
    assert 0.4 < share < 0.6


def test_cevae_counterfactual_swaps_decoders():
    m = _model("cevae")
    m.trained = True
    u = abduct(m, _DS)[0]
    p1 = m.nets["dec_y1"](u)[:, 0]
    p0 = m.nets["dec_y0"](u)[:, 0]
    rec = counterfactual_predict(m, _DS)
    np.testing.assert_array_equal(rec.y_prob_cf, np.where(_DS.a == 1, p0, p1))
    back, _, _ = predict(m, rec.latents, rec.a)
    np.testing.assert_array_equal(back, rec.y_prob)


def test_cvae_flip_with_a_blind_decoder_unchanged():
    m = _model("cvae")
    m.trained = True
    m.nets["dec_y"].weights[0][:, 0] = 0.0
    m.nets["dec_x"].mu.weights[0][:, 0] = 0.0
    rec = counterfactual_predict(m, _DS)
    np.testing.assert_array_equal(rec.y_prob_cf, rec.y_prob)
    np.testing.assert_array_equal(rec.xr_cf, predict(m, rec.latents, rec.a)[2])


def test_mcevae_without_mmd_equals_cvae_objective():
    m = _model("mcevae", lambda_1=0.0, lambda_2=0.0)
    b = Batch.of(_DS, np.arange(32))
    eps = Rng(0).normal((32, 5))
    total_m, parts = m.model_loss(Tape(), b, Rng(1), eps)
    total_c, _ = Cvae.model_loss(m, Tape(), b, Rng(1), eps)
    assert float(total_m.value) == float(total_c.value)
    assert "mmd" not in parts and "mmd_a" not in parts


def test_mcevae_penalties_are_added():
    m = _model("mcevae", lambda_1=2.0, lambda_2=3.0)
    b = Batch.of(_DS, np.arange(32))
    eps, prior = Rng(0).normal((32, 5)), Rng(2).normal((32, 5))
    _, parts = m.model_loss(Tape(), b, Rng(1), eps, prior)
    base = -(parts["recon_x"] + parts["recon_y"]) + parts["kl"]
    assert parts["total"] == pytest.approx(base + 2.0 * parts["mmd"] + 3.0 * parts["mmd_a"], abs=1e-12)


def test_mcevae_large_lambda2_aligns_groups():
    ds = generate_scm(ScmSpec(seed=7), 3000).dataset
    m = make_model(ds, TrainConfig(variant="mcevae", lambda_2=50.0, hidden=[16], epochs=10,
                                   lr=3e-3, batch_size=256))
    train_mcevae(m, ds)
    u = abduct(m, ds)[0]
    rng = Rng(0)
    i0 = rng.permutation(np.flatnonzero(ds.a == 0))[:1000]
    i1 = rng.permutation(np.flatnonzero(ds.a == 1))[:1000]
    assert rbf_mmd(u[i0], u[i1], tuple(m.config.mmd_bandwidths)) < 0.05


@pytest.mark.parametrize("variant", ["cevae", "mcevae", "cvae"])
def test_deterministic_and_checkpointable(variant, tmp_path):
    m1, m2 = _model(variant), _model(variant)
    assert m1.fit(_DS) == m2.fit(_DS)
    p1 = save_checkpoint(m1, tmp_path / "1.json")
    p2 = save_checkpoint(m2, tmp_path / "2.json")
    assert p1.read_bytes() == p2.read_bytes()
    back = load_checkpoint(p1)
    assert back.variant == variant
    np.testing.assert_array_equal(abduct(back, _DS), abduct(m1, _DS))
