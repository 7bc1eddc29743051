import numpy as np
import pytest

from spikeforge import data, netgraph as ng, ratemodel, trainer

from oracles import fd_gradient


def _fd_fixture():
    """Tiny net with every drive pushed off the activation kink.

    Freshly initialized nets leave dead subgraphs whose preactivations sit
    exactly at zero, where central differences straddle the kink; a small
    positive bias moves every live neuron away from it.
    """
    rng = np.random.default_rng(7)
    images = rng.random((3, 24, 24))
    labels = (rng.random((3, 24, 24)) > 0.5).astype(np.int64)
    g = ng.build_unet(24, 1, 2, encoder_channels=1, seed=0)
    for l in g.layers:
        if l.activation == ng.ACT_SPIKING and l.bias is not None:
            l.bias += 3.0
    return g, images, trainer.crop_labels(g, labels)


def test_fd_fixture_is_well_posed():
    g, images, labels = _fd_fixture()
    assert ng.param_count(g) <= 500
    state = trainer.forward_pass(g, images, trainer.MODE_SURROGATE)
    for name, x in state.preact.items():
        if g.layer(name).activation == ng.ACT_SPIKING:
            assert np.abs(x).min() > 1e-3, name  # far beyond the probe step


def test_forward_zero_weights():
    g = ng.build_unet(16, 2, 1, seed=0)
    for l in g.layers:
        if l.weights is not None:
            l.weights[:] = 0.0
    g.layer("out").bias[:] = [0.3, -0.2]
    state = trainer.forward_pass(g, np.random.default_rng(0).random((2, 16, 16)),
                                 trainer.MODE_EVAL)
    for r in state.rates.values():
        assert np.all(r == 0.0)
    np.testing.assert_allclose(state.logits[..., 0], 0.3)
    np.testing.assert_allclose(state.logits[..., 1], -0.2)


def test_forward_records_quantized_rates():
    # a single encoder neuron driven at 600 must report 500 Hz in eval mode
    g = ng.build_unet(8, 1, 1, encoder_channels=1, seed=0)
    g.layer("enc").weights[:] = 600.0
    state = trainer.forward_pass(g, np.ones((1, 8, 8)), trainer.MODE_EVAL)
    np.testing.assert_allclose(state.rates["enc"], 500.0)


def test_forward_modes():
    g, images, _ = _fd_fixture()
    a = trainer.forward_pass(g, images, trainer.MODE_EVAL)
    b = trainer.forward_pass(g, images, trainer.MODE_EVAL)
    for k in a.rates:
        np.testing.assert_array_equal(a.rates[k], b.rates[k])
    c = trainer.forward_pass(g, images, trainer.MODE_TRAIN,
                             rng=np.random.default_rng(3))
    d = trainer.forward_pass(g, images, trainer.MODE_TRAIN,
                             rng=np.random.default_rng(3))
    for k in c.rates:
        np.testing.assert_array_equal(c.rates[k], d.rates[k])
    with pytest.raises(ValueError):
        trainer.forward_pass(g, images, trainer.MODE_TRAIN)  # rng required
    with pytest.raises(ValueError):
        trainer.forward_pass(g, images, "something")
    with pytest.raises(ValueError):
        trainer.forward_pass(g, images[:, :12, :], trainer.MODE_EVAL)


def test_softmax_cross_entropy():
    logits = np.zeros((1, 2, 2, 2))
    labels = np.zeros((1, 2, 2), dtype=np.int64)
    loss, dlogits = trainer.softmax_cross_entropy(logits, labels)
    assert loss == pytest.approx(np.log(2.0))
    np.testing.assert_allclose(dlogits.sum(axis=3), 0.0, atol=1e-12)
    # perfect confidence on the right class drives the loss to zero
    logits[..., 0] = 50.0
    loss, _ = trainer.softmax_cross_entropy(logits, labels)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_gradients_match_fd_full_network():
    g, images, labels = _fd_fixture()
    reg = ratemodel.RegularizerParams(weight=1e-4)

    def loss_of():
        state = trainer.forward_pass(g, images, trainer.MODE_SURROGATE)
        task, _ = trainer.softmax_cross_entropy(state.logits, labels)
        rl, _ = trainer.regularizer_terms(state, reg)
        return task + reg.weight * rl

    _, _, grads, _ = trainer.compute_gradients(
        g, images, labels, trainer.MODE_SURROGATE, reg=reg
    )
    pick = np.random.default_rng(0)
    worst = 0.0
    for name, (dw, db) in grads.items():
        layer = g.layer(name)
        for arr, darr in ((layer.weights, dw), (layer.bias, db)):
            flat, dflat = arr.reshape(-1), darr.reshape(-1)
            for i in pick.choice(flat.size, size=min(6, flat.size), replace=False):
                step = 1e-6 * max(1.0, abs(flat[i]))
                fd = fd_gradient(loss_of, flat, i, step)
                denom = max(abs(fd), abs(dflat[i]), 1e-8)
                worst = max(worst, abs(fd - dflat[i]) / denom)
    assert worst < 1e-4


def test_zero_input_zero_encoder_weight_grad():
    g, _, labels = _fd_fixture()
    images = np.zeros((3, 24, 24))
    _, _, grads, _ = trainer.compute_gradients(g, images, labels,
                                               trainer.MODE_SURROGATE)
    dw_enc, _ = grads["enc"]
    np.testing.assert_array_equal(dw_enc, 0.0)


def test_regularizer_only_gradients_respect_band():
    # drives of 80 vs 400 Hz equivalents: only the out-of-band layer moves
    g = ng.build_unet(12, 1, 1, encoder_channels=2, seed=1)
    g.layer("enc").weights[:] = 0.0
    g.layer("enc").bias[:] = [80.0, 80.0]
    g.layer("c1a").weights[:] = 0.0
    g.layer("c1a").bias[:] = 400.0
    g.layer("c1b").weights[:] = 0.0
    g.layer("c1b").bias[:] = 100.0
    images = np.full((2, 12, 12), 0.5)
    state = trainer.forward_pass(g, images, trainer.MODE_SURROGATE)
    reg = ratemodel.RegularizerParams(weight=1.0)
    _, rgrads = trainer.regularizer_terms(state, reg)
    grads = trainer.backward_pass(g, state, np.zeros_like(state.logits),
                                  rate_grads=rgrads)
    assert np.all(grads["c1a"][1] != 0.0)   # above the band: bias pushed
    np.testing.assert_array_equal(grads["c1b"][1], 0.0)
    np.testing.assert_array_equal(grads["enc"][1], 0.0)


def _tiny_task(n=24, seed=0):
    return data.synth_cells(seed, n, 16)


def test_train_smoke_loss_decreases():
    g = ng.build_unet(16, 2, 1, seed=2)
    cfg = trainer.TrainConfig(epochs=5, batch_size=8, learning_rate=2e-5, seed=0)
    history = trainer.train(g, _tiny_task(), cfg)
    assert len(history) == 5
    assert history[-1]["task_loss"] < history[0]["task_loss"]


def test_train_is_deterministic():
    h = []
    for _ in range(2):
        g = ng.build_unet(16, 2, 1, seed=2)
        cfg = trainer.TrainConfig(epochs=2, batch_size=8, learning_rate=2e-5, seed=1)
        h.append(trainer.train(g, _tiny_task(), cfg))
    assert h[0] == h[1]


def test_train_reg_weight_zero():
    g = ng.build_unet(16, 2, 1, seed=2)
    reg = ratemodel.RegularizerParams(weight=0.0)
    cfg = trainer.TrainConfig(epochs=2, batch_size=8, learning_rate=2e-5,
                              seed=0, reg=reg)
    history = trainer.train(g, _tiny_task(), cfg)
    assert all(e["reg_loss"] == 0.0 for e in history)


def test_train_divergence_aborts():
    # rates are capped and the log is clamped, so the finite-loss guard can
    # only trip on non-finite parameters; plant one and expect the abort
    g = ng.build_unet(16, 2, 1, seed=2)
    g.layer("out").bias[0] = np.nan
    cfg = trainer.TrainConfig(epochs=1, batch_size=8, learning_rate=2e-5, seed=0)
    with pytest.raises(trainer.TrainingDiverged, match="epoch 0"):
        trainer.train(g, _tiny_task(), cfg)


def test_evaluate_zero_net():
    g = ng.build_unet(16, 2, 1, seed=0)
    for l in g.layers:
        if l.weights is not None:
            l.weights[:] = 0.0
            l.bias[:] = 0.0
    res = trainer.evaluate(g, _tiny_task(8))
    assert all(v == 0.0 for v in res.layer_p99.values())


def test_evaluate_is_deterministic():
    g = ng.build_unet(16, 2, 1, seed=2)
    ds = _tiny_task(12)
    a = trainer.evaluate(g, ds)
    b = trainer.evaluate(g, ds)
    assert a == b


def test_normalize_init_hits_drive_targets():
    g = ng.build_unet(16, 2, 1, encoder_channels=2, seed=5)
    imgs = np.random.default_rng(0).random((8, 16, 16))
    trainer.normalize_init(g, imgs, drive_std=75.0, drive_mean=40.0)
    state = trainer.forward_pass(g, imgs, trainer.MODE_EVAL)
    for layer in g.layers:
        if layer.kind == ng.KIND_CONCAT:
            continue
        x = state.preact[layer.name]
        target = 1.0 if layer.kind == ng.KIND_OUTPUT else 75.0
        assert (x - layer.bias).std() == pytest.approx(target, rel=1e-9)
        chan_mean = x.reshape(-1, x.shape[3]).mean(axis=0)
        want = 0.0 if layer.kind == ng.KIND_OUTPUT else 40.0
        np.testing.assert_allclose(chan_mean, want, atol=1e-9)


def test_normalize_init_is_deterministic():
    imgs = np.random.default_rng(1).random((4, 16, 16))
    ga = trainer.normalize_init(ng.build_unet(16, 1, 1, seed=2), imgs)
    gb = trainer.normalize_init(ng.build_unet(16, 1, 1, seed=2), imgs)
    for la, lb in zip(ga.layers, gb.layers):
        if la.kind == ng.KIND_CONCAT:
            continue
        np.testing.assert_array_equal(la.weights, lb.weights)
        np.testing.assert_array_equal(la.bias, lb.bias)


def test_normalize_init_ignores_starting_bias():
    imgs = np.random.default_rng(3).random((4, 16, 16))
    ga = ng.build_unet(16, 1, 1, seed=4)
    gb = ng.build_unet(16, 1, 1, seed=4)
    for l in gb.layers:
        if l.kind != ng.KIND_CONCAT:
            l.bias += 17.0
    trainer.normalize_init(ga, imgs)
    trainer.normalize_init(gb, imgs)
    for la, lb in zip(ga.layers, gb.layers):
        if la.kind == ng.KIND_CONCAT:
            continue
        np.testing.assert_allclose(lb.weights, la.weights, rtol=1e-12)
        np.testing.assert_allclose(lb.bias, la.bias, rtol=1e-9, atol=1e-9)


def test_normalize_init_rejects_bad_probe():
    g = ng.build_unet(16, 1, 1, seed=6)
    with pytest.raises(ValueError, match="probe"):
        trainer.normalize_init(g, np.zeros((16, 16)))
    with pytest.raises(ValueError, match="zero drive spread"):
        trainer.normalize_init(g, np.zeros((2, 16, 16)))
