import copy
import math

import numpy as np
import pandas as pd
import pytest

from dcevae.config import TrainConfig
from dcevae.data import AttributePartition, ColumnEncoding, ScmSpec, TabularDataset, generate_scm
from dcevae.model import Dcevae, LatentPosterior
from dcevae.nets import (
    Batch,
    SIGMA_FLOOR,
    kl_std_normal_np,
    load_checkpoint,
    make_model,
    save_checkpoint,
)
from dcevae.numerics import AdamState, Mlp, NumericalError, Rng, ShapeError, Tape, adam_step

_DS = generate_scm(ScmSpec(seed=5), 400).dataset


def _model(**kw):
    cfg = dict(latent_d=3, latent_r=2, hidden=[6], disc_hidden=[6], epochs=2, batch_size=64)
    cfg.update(kw)
    return make_model(_DS, TrainConfig(**cfg))


def _zero(net):
    for w in net.weights:
        w[:] = 0.0
    for b in net.biases:
        b[:] = 0.0


# -- encode / decode factorization ---------------------------------------------


def test_perturbing_xr_leaves_ud_posterior_bit_identical():
    m = _model()
    b = Batch.of(_DS, np.arange(8))
    xr = b.xr.copy()
    xr[:, 2] += 3.7
    p0, p1 = m.encode(b), m.encode(Batch(b.a, b.xd, xr, b.y))
    np.testing.assert_array_equal(p0.mu_d, p1.mu_d)
    np.testing.assert_array_equal(p0.sigma_d, p1.sigma_d)
    assert not np.array_equal(p0.mu_r, p1.mu_r)


def test_perturbing_xd_leaves_ur_posterior_bit_identical():
    m = _model()
    b = Batch.of(_DS, np.arange(8))
    xd = b.xd.copy()
    xd[:, 0] -= 2.0
    p0, p1 = m.encode(b), m.encode(Batch(b.a, xd, b.xr, b.y))
    np.testing.assert_array_equal(p0.mu_r, p1.mu_r)
    np.testing.assert_array_equal(p0.sigma_r, p1.sigma_r)
    assert not np.array_equal(p0.mu_d, p1.mu_d)


def test_zero_weight_encoder_returns_bias():
    m = _model()
    head = m.nets["enc_d"]
    for w in head.mu.weights + head.log_sigma.weights:
        w[:] = 0.0
    head.mu.biases[-1][:] = [0.1, -0.2, 0.3]
    head.log_sigma.biases[-1][:] = [0.0, -1.0, 0.5]
    post = m.encode(Batch.of(_DS, np.arange(5)))
    np.testing.assert_array_equal(post.mu_d, np.tile([0.1, -0.2, 0.3], (5, 1)))
    np.testing.assert_allclose(post.sigma_d, np.tile(np.exp([0.0, -1.0, 0.5]), (5, 1)))


def test_toggling_a_leaves_xr_heads_bit_identical():
    m = _model()
    rng = Rng(0)
    u_d, u_r = rng.normal((6, 3)), rng.normal((6, 2))
    out0, out1 = m.decode(np.zeros(6), u_d, u_r), m.decode(np.ones(6), u_d, u_r)
    np.testing.assert_array_equal(out0[2], out1[2])
    np.testing.assert_array_equal(out0[3], out1[3])
    assert not np.array_equal(out0[0], out1[0])


def test_perturbing_ur_leaves_xd_heads_bit_identical():
    m = _model()
    rng = Rng(1)
    a, u_d, u_r = np.ones(6), rng.normal((6, 3)), rng.normal((6, 2))
    out0, out1 = m.decode(a, u_d, u_r), m.decode(a, u_d, u_r + 1.0)
    np.testing.assert_array_equal(out0[0], out1[0])
    np.testing.assert_array_equal(out0[1], out1[1])
    assert not np.array_equal(out0[4], out1[4])


def test_zero_dec_y_gives_half():
    m = _model()
    _zero(m.nets["dec_y"])
    rng = Rng(2)
    y = m.decode(np.ones(4), rng.normal((4, 3)), rng.normal((4, 2)))[4]
    np.testing.assert_array_equal(y, 0.5)


def test_y_prob_in_open_unit_interval():
    m = _model()
    rng = Rng(3)
    y = m.decode(np.ones(50), rng.normal((50, 3)) * 3, rng.normal((50, 2)) * 3)[4]
    assert np.all((y > 0) & (y < 1))


def test_shape_errors():
    m = _model()
    b = Batch.of(_DS, np.arange(3))
    with pytest.raises(ShapeError):
        m.encode(Batch(b.a, b.xd, b.xr[:, :2], b.y))
    with pytest.raises(ShapeError):
        m.decode(np.ones(3), np.zeros((3, 2)), np.zeros((3, 2)))


# -- elbo pieces -----------------------------------------------------------------


def test_kl_of_standard_normal_is_zero():
    assert kl_std_normal_np(np.zeros((2, 5)), np.ones((2, 5))).tolist() == [0.0, 0.0]


def test_kl_of_unit_shift_is_half_per_dim():
    np.testing.assert_allclose(kl_std_normal_np(np.ones((1, 4)), np.ones((1, 4))), [2.0])


def test_perfect_reconstruction_unit_sigma():
    m = _model()
    b = Batch.of(_DS, np.arange(4))
    rng = Rng(4)
    post = m.encode(b, rng)
    # decoder mean replaced by the observed x, sigma fixed at one
    head = m.nets["dec_xr"]
    for net in (head.mu, head.log_sigma):
        _zero(net)
    target = b.xr[0]
    head.mu.biases[-1][:] = target
    b1 = Batch(b.a, b.xd, np.tile(target, (4, 1)), b.y)
    parts = m.elbo(b1, post)
    d = b.xr.shape[1]
    assert parts.recon_xr == pytest.approx(-(d / 2) * math.log(2 * math.pi), abs=1e-12)


def test_total_matches_assembly():
    m = _model(beta_tc=5.0, beta_f=2.0, w_xd=0.5, w_y=2.0)
    b = Batch.of(_DS, np.arange(16))
    rng = Rng(5)
    eps = m.draw_eps(rng, 16)
    _, parts = m.model_loss(Tape(), b, rng, eps)
    expect = (-(0.5 * parts["recon_xd"] + parts["recon_xr"] + 2.0 * parts["recon_y"])
              + parts["kl_d"] + parts["kl_r"] + 5.0 * parts["tc"] + 2.0 * parts["fair"])
    assert parts["total"] == pytest.approx(expect, abs=1e-12)


def test_sigma_floor_applied():
    m = _model()
    m.nets["enc_r"].log_sigma.biases[-1][:] = -50.0
    for w in m.nets["enc_r"].log_sigma.weights:
        w[:] = 0.0
    post = m.encode(Batch.of(_DS, np.arange(3)))
    np.testing.assert_allclose(post.sigma_r, SIGMA_FLOOR)


def _linear_gaussian_model(w_d, s_d, w_r, s_r, c):
    frame = pd.DataFrame({"a": [1, 0], "xd": [0.3, -0.2], "xr": [1.0, -1.0], "y": [1, 0]})
    part = AttributePartition("a", "y", ("xd",), ("xr",))
    enc = [ColumnEncoding("xd", "continuous", mean=0.0, std=1.0),
           ColumnEncoding("xr", "continuous", mean=0.0, std=1.0)]
    ds = TabularDataset.build(frame, part, enc, fit=False)
    m = make_model(ds, TrainConfig(latent_d=1, latent_r=1, hidden=[], disc_hidden=[]))
    for net in m.parameters():
        net[:] = 0.0
    dec = m.nets
    dec["dec_xd"].mu.weights[0][:] = [[c, w_d]]          # input (a, u_d)
    dec["dec_xd"].log_sigma.biases[0][:] = math.log(s_d)
    dec["dec_xr"].mu.weights[0][:] = [[w_r]]
    dec["dec_xr"].log_sigma.biases[0][:] = math.log(s_r)
    return ds, m


def _exact_posterior(m, w, s, k_a=0.0, which="enc_d"):
    prec = 1.0 + w * w / s**2
    head = m.nets[which]
    # mean = (w / s^2) (x - k_a a) / prec ; inputs are (a, x, y)
    head.mu.weights[0][:] = [[-k_a * w / s**2 / prec, w / s**2 / prec, 0.0]]
    head.log_sigma.biases[0][:] = -0.5 * math.log(prec)


@pytest.mark.parametrize("exact", [True, False])
def test_elbo_bounded_by_linear_gaussian_evidence(exact):
    w_d, s_d, w_r, s_r, c = 1.3, 0.6, -0.8, 0.9, 0.7
    ds, m = _linear_gaussian_model(w_d, s_d, w_r, s_r, c)
    if exact:
        _exact_posterior(m, w_d, s_d, k_a=c, which="enc_d")
        _exact_posterior(m, w_r, s_r, which="enc_r")
    else:
        m.nets["enc_d"].mu.biases[0][:] = 0.4
        m.nets["enc_r"].log_sigma.biases[0][:] = -0.3
    # Gauss-Hermite nodes make the expectation over q exact (integrand is quadratic in u)
    nodes, weights = np.polynomial.hermite_e.hermegauss(5)
    weights = weights / weights.sum()
    for row in range(len(ds)):
        b = Batch.of(ds, [row])
        bound = 0.0
        for e1, w1 in zip(nodes, weights):
            for e2, w2 in zip(nodes, weights):
                post = m.encode(b, eps=(np.array([[e1]]), np.array([[e2]])))
                parts = m.elbo(b, post)
                bound += w1 * w2 * (parts.recon_xd + parts.recon_xr - parts.kl_d - parts.kl_r)
        a, xd, xr = b.a[0, 0], b.xd[0, 0], b.xr[0, 0]
        evidence = (-0.5 * math.log(2 * math.pi * (w_d**2 + s_d**2)) - (xd - c * a) ** 2 / (2 * (w_d**2 + s_d**2))
                    - 0.5 * math.log(2 * math.pi * (w_r**2 + s_r**2)) - xr**2 / (2 * (w_r**2 + s_r**2)))
        assert bound <= evidence + 1e-6
        if exact:
            assert bound == pytest.approx(evidence, abs=1e-9)
        else:
            assert bound < evidence - 1e-3


# -- TC and discriminator ----------------------------------------------------------


def test_half_discriminator():
    m = _model()
    _zero(m.nets["disc"])
    post = m.encode(Batch.of(_DS, np.arange(10)), Rng(0))
    tc, obj = m.tc_loss(post, _DS.a[:10], Rng(1))
    assert tc == 0.0
    assert obj == pytest.approx(math.log(0.25), abs=1e-15)


def test_tc_rejects_single_record():
    m = _model()
    post = m.encode(Batch.of(_DS, [0]), Rng(0))
    with pytest.raises(ValueError):
        m.tc_loss(post, _DS.a[:1], Rng(1))
    with pytest.raises(ValueError):
        m.model_loss(Tape(), Batch.of(_DS, [0]), Rng(0))


def _train_disc(m, a, u_d, u_r, steps=1500, seed=0):
    rng = Rng(seed)
    params = m.net_parameters("disc")
    state = AdamState.for_params(params, lr=3e-3)
    n = len(a)
    for _ in range(steps):
        idx = rng.permutation(n)[:256]
        tape = Tape()
        loss = m.disc_loss(tape, a[idx], u_d[idx], u_r[idx], rng.permutation(len(idx)))
        adam_step(params, tape.backward(loss).wrt(params), state)
    return m


def _latents(n, dependent, seed=0):
    rng = Rng(seed)
    u_r = rng.normal((n, 2))
    a = (rng.uniform(size=n) < 1 / (1 + np.exp(-2 * u_r[:, 0]))).astype(float)[:, None]
    u_d = np.hstack([u_r, u_r[:, :1]]) if dependent else rng.normal((n, 3))
    return a, u_d, u_r


def test_trained_discriminator_on_independent_latents_stays_near_half():
    m = _model(disc_hidden=[16])
    a, u_d, u_r = _latents(4000, dependent=False)
    _train_disc(m, a, u_d, u_r)
    ea, eu_d, eu_r = _latents(4000, dependent=False, seed=1)
    tc, _ = m.tc_loss(LatentPosterior(eu_d, None, eu_r, None, eu_d, eu_r), ea, Rng(2))
    assert abs(tc) < 0.1


def test_trained_discriminator_detects_dependence():
    m = _model(disc_hidden=[16])
    a, u_d, u_r = _latents(4000, dependent=True)
    _train_disc(m, a, u_d, u_r)
    ea, eu_d, eu_r = _latents(4000, dependent=True, seed=1)
    tc, obj = m.tc_loss(LatentPosterior(eu_d, None, eu_r, None, eu_d, eu_r), ea, Rng(2))
    assert tc > 1.0
    assert obj > math.log(0.25) + 0.3


# -- fairness term -------------------------------------------------------------------


def test_fairness_zero_for_a_blind_decoder():
    m = _model()
    m.nets["dec_y"].weights[0][:, 0] = 0.0
    post = m.encode(Batch.of(_DS, np.arange(20)), Rng(0))
    assert m.fairness_loss(post, _DS.a[:20]) == 0.0


def test_fairness_closed_form():
    m = _model(hidden=[])
    net = m.nets["dec_y"]
    _zero(net)
    net.weights[0][0, 0] = 2 * math.log(9)
    net.biases[0][0] = -math.log(9)
    post = m.encode(Batch.of(_DS, np.arange(20)), Rng(0))
    assert m.fairness_loss(post, _DS.a[:20]) == pytest.approx(0.8, abs=1e-12)


def test_fairness_matches_two_decode_calls():
    m = _model()
    post = m.encode(Batch.of(_DS, np.arange(30)), Rng(7))
    a = _DS.a[:30]
    p = m.decode(a, post.u_d, post.u_r)[4]
    p_cf = m.decode(1 - a, post.u_d, post.u_r)[4]
    assert m.fairness_loss(post, a) == pytest.approx(np.mean(np.abs(p - p_cf)), abs=1e-14)


# -- training -----------------------------------------------------------------------------


def test_discriminator_step_never_moves_model_and_model_step_never_moves_disc():
    m = _model(beta_tc=5.0)
    b = Batch.of(_DS, np.arange(64))

    # full alternating step
    m1 = copy.deepcopy(m)
    m1.train_step(b, Rng(3), m1.make_groups())

    # discriminator phase alone, same random stream
    m2 = copy.deepcopy(m)
    rng = Rng(3)
    groups = m2.make_groups()
    eps = m2.draw_eps(rng, len(b))
    perm = rng.permutation(len(b))
    post = m2.encode(b, eps=eps)
    tape = Tape()
    before = [p.copy() for name in m2.model_nets for p in m2.net_parameters(name)]
    groups["disc"].step(tape.backward(m2.disc_loss(tape, b.a, post.u_d, post.u_r, perm)))
    after = [p for name in m2.model_nets for p in m2.net_parameters(name)]
    for x, y in zip(before, after):
        np.testing.assert_array_equal(x, y)
    # the model phase of the full step left the discriminator where the disc phase put it
    for x, y in zip(m1.net_parameters("disc"), m2.net_parameters("disc")):
        np.testing.assert_array_equal(x, y)
    assert any(not np.array_equal(x, y) for x, y in
               zip(m1.net_parameters("enc_d"), m.net_parameters("enc_d")))


def test_beta_zero_skips_discriminator():
    m = _model(beta_tc=0.0)
    disc = [p.copy() for p in m.net_parameters("disc")]
    m.fit(_DS, epochs=1)
    for x, y in zip(disc, m.net_parameters("disc")):
        np.testing.assert_array_equal(x, y)


def test_training_is_deterministic(tmp_path):
    m1, m2 = _model(), _model()
    h1, h2 = m1.fit(_DS), m2.fit(_DS)
    assert h1 == h2
    for x, y in zip(m1.parameters(), m2.parameters()):
        np.testing.assert_array_equal(x, y)
    p1, p2 = save_checkpoint(m1, tmp_path / "a.json"), save_checkpoint(m2, tmp_path / "b.json")
    assert p1.read_bytes() == p2.read_bytes()


def test_history_records_every_component():
    m = _model(beta_tc=2.0, beta_f=1.0)
    h = m.fit(_DS)
    assert len(h) == 2
    for key in ("recon_xd", "recon_xr", "recon_y", "kl_d", "kl_r", "tc", "disc", "fair", "total"):
        assert key in h[0] and np.isfinite(h[0][key])


def test_nonfinite_loss_aborts_with_component_named():
    m = _model()
    m.nets["dec_xr"].mu.weights[-1][:] = np.inf
    with pytest.raises(NumericalError, match="non-finite recon_xr"):
        m.fit(_DS, epochs=1)


def test_checkpoint_round_trip(tmp_path):
    m = _model()
    m.fit(_DS, epochs=1)
    path = save_checkpoint(m, tmp_path / "ckpt.json")
    back = load_checkpoint(path)
    assert isinstance(back, Dcevae) and back.trained
    assert back.config.hash() == m.config.hash()
    b = Batch.of(_DS, np.arange(10))
    np.testing.assert_array_equal(back.encode(b).joint, m.encode(b).joint)


def test_plain_vae_loss_trends_down():
    ds = generate_scm(ScmSpec(seed=1), 2000).dataset
    m = make_model(ds, TrainConfig(beta_tc=0.0, hidden=[16], epochs=50, batch_size=256, lr=3e-3))
    totals = np.array([r["total"] for r in m.fit(ds)])
    slope = np.polyfit(np.arange(len(totals)), totals, 1)[0]
    assert slope < 0
    assert totals[-5:].mean() < totals[:5].mean()
