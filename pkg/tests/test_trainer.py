import math

import numpy as np
import pytest

from taustream import rnn, sim, trainer
from util_grad import finite_difference_grads, max_relative_error


# ---------------------------------------------------------------------------
# loss weights


def test_loss_weight_midpoint_is_half_before_normalization():
    n = 64
    i = np.arange(1, n + 1)
    raw = 1.0 / (1.0 + np.exp(-(i - n / 4) / (n / 4)))
    assert raw[n // 4 - 1] == pytest.approx(0.5, abs=1e-15)
    w = trainer.loss_weights(n)
    np.testing.assert_allclose(w, raw / raw.sum(), rtol=1e-15)


def test_loss_weight_final_value():
    # raw weight of the last step is sigmoid(3) = 1 / (1 + e^-3)
    n = 128
    i = np.arange(1, n + 1)
    raw = 1.0 / (1.0 + np.exp(-(i - n / 4) / (n / 4)))
    assert raw[-1] == pytest.approx(1.0 / (1.0 + math.exp(-3.0)), rel=1e-15)
    assert raw[-1] == pytest.approx(0.9525741268224334, rel=1e-12)


def test_loss_weights_monotone_and_normalized():
    for n in (16, 100, 256):
        w = trainer.loss_weights(n)
        assert np.all(np.diff(w) > 0)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# weighted MSPE


def test_mspe_zero_for_perfect_prediction():
    assert trainer.weighted_mspe(np.full(32, 2.5), 2.5) == 0.0


def test_mspe_unit_relative_error():
    # doubling the truth at every step gives exactly 1 under normalized weights
    assert trainer.weighted_mspe(np.full(32, 5.0), 2.5) == pytest.approx(1.0, rel=1e-12)


def test_mspe_matches_scalar_oracle():
    rng = np.random.default_rng(21)
    preds = rng.uniform(0.5, 5.0, 48)
    truth = 2.2
    w = trainer.loss_weights(48)
    oracle = sum(
        w[i] * ((preds[i] - truth) / truth) ** 2 for i in range(48)
    )
    assert trainer.weighted_mspe(preds, truth) == pytest.approx(oracle, rel=1e-12)


def test_mspe_rejects_zero_truth():
    with pytest.raises(ValueError):
        trainer.weighted_mspe(np.ones(4), 0.0)


# ---------------------------------------------------------------------------
# initialization


@pytest.mark.parametrize("variant", ["simple", "gru", "lstm"])
def test_init_hidden_blocks_orthogonal(variant):
    cfg = rnn.RnnConfig(variant=variant, hidden_size=16)
    w = trainer.init_weights(cfg, seed=4)
    for g in range(cfg.n_gates):
        block = w.u_hh[g * 16 : (g + 1) * 16]
        np.testing.assert_allclose(block.T @ block, np.eye(16), atol=1e-10)


def test_init_lstm_forget_bias_is_one():
    cfg = rnn.RnnConfig(variant="lstm", hidden_size=8)
    w = trainer.init_weights(cfg, seed=4)
    np.testing.assert_array_equal(w.b[8:16], np.ones(8))
    np.testing.assert_array_equal(w.b[:8], np.zeros(8))
    np.testing.assert_array_equal(w.b[16:], np.zeros(16))


def test_init_xavier_bounds():
    cfg = rnn.RnnConfig(variant="gru", hidden_size=16)
    w = trainer.init_weights(cfg, seed=4)
    assert np.max(np.abs(w.w_in)) <= math.sqrt(6.0 / (1 + 16))
    assert np.max(np.abs(w.head_w1)) <= math.sqrt(6.0 / (16 + 16))
    assert np.max(np.abs(w.head_w2)) <= math.sqrt(6.0 / (16 + 1))
    np.testing.assert_array_equal(w.head_b1, np.zeros(16))
    assert w.head_b2 == 0.0


# ---------------------------------------------------------------------------
# gradients


@pytest.mark.parametrize("variant", ["simple", "gru", "lstm"])
def test_bptt_matches_finite_differences(variant):
    cfg = rnn.RnnConfig(variant=variant, hidden_size=4)
    w = trainer.init_weights(cfg, seed=17)
    rng = np.random.default_rng(23)
    batch = rng.uniform(0.0, 50.0, (3, 16))
    truths = rng.uniform(0.5, 5.0, 3)
    _, analytic = trainer.loss_and_grads(w, batch, truths)
    numeric = finite_difference_grads(w, batch, truths)
    assert max_relative_error(analytic, numeric) < 1e-4


def test_last_step_only_gradient_matches_hand_derivation():
    # a single-photon sequence collapses the loss to the final step; the
    # gradient of the head output layer then has a closed form
    cfg = rnn.RnnConfig(variant="simple", hidden_size=3)
    w = trainer.init_weights(cfg, seed=2)
    ts = np.array([[7.0]])
    truth = np.array([2.0])
    loss, grads = trainer.loss_and_grads(w, ts, truth)

    x = 7.0 / cfg.input_scale_ns
    h = np.tanh(w.w_in * x + w.b + 0.0)
    u = 1.0 / (1.0 + np.exp(-(w.head_w1 @ h + w.head_b1)))
    y_hat = w.head_w2 @ u + w.head_b2
    y = 2.0 / cfg.output_scale_ns
    rel = (y_hat - y) / y
    assert loss == pytest.approx(rel**2, rel=1e-12)
    np.testing.assert_allclose(grads["head_w2"], 2.0 * rel / y * u, rtol=1e-12)
    assert grads["head_b2"] == pytest.approx(2.0 * rel / y, rel=1e-12)


def test_gradient_of_blocked_path_is_zero():
    # with the head output weights forced to zero, nothing downstream of the
    # hidden layer can influence the loss
    cfg = rnn.RnnConfig(variant="gru", hidden_size=4)
    w = trainer.init_weights(cfg, seed=3)
    w.head_w2[...] = 0.0
    batch = np.random.default_rng(5).uniform(0, 50, (2, 8))
    _, grads = trainer.loss_and_grads(w, batch, np.array([1.0, 2.0]))
    np.testing.assert_array_equal(grads["head_b1"], np.zeros(4))
    np.testing.assert_array_equal(grads["head_w1"], np.zeros((4, 4)))
    np.testing.assert_array_equal(grads["u_hh"], np.zeros((12, 4)))
    assert abs(grads["head_b2"]) > 0  # the still-connected bias does move


def test_bptt_raises_on_nonfinite_forward():
    cfg = rnn.RnnConfig(variant="simple", hidden_size=4)
    w = trainer.init_weights(cfg, seed=2)
    w.head_w2[...] = np.array([1e308, 1e308, 1e308, 1e308])
    w.head_b2 = 1e308
    with np.errstate(all="ignore"):
        with pytest.raises((trainer.TrainingDiverged, ValueError)):
            trainer.bptt_gradients(w, np.full((1, 4), 25.0), np.array([1e-300]))


# ---------------------------------------------------------------------------
# schedule and training loop


def test_learning_rate_schedule_values():
    cfg = trainer.TrainConfig(epochs=20)
    assert cfg.learning_rate_at(0) == pytest.approx(0.001)
    assert cfg.learning_rate_at(4) == pytest.approx(0.001)
    assert cfg.learning_rate_at(5) == pytest.approx(0.0009)
    assert cfg.learning_rate_at(10) == pytest.approx(0.001 * 0.9**2)


def _tiny_dataset(seed=14):
    cfg = sim.DatasetConfig(n_samples=120, photons_per_sample=24,
                            lifetime_range_ns=(0.5, 5.0))
    return sim.generate_dataset(cfg, master_seed=seed)


def test_train_is_deterministic_bitwise():
    ds = _tiny_dataset()
    cfg = trainer.TrainConfig(variant="gru", hidden_size=4, epochs=3, seed=9)
    w1, h1 = trainer.train(cfg, ds)
    w2, h2 = trainer.train(cfg, ds)
    for (name, a), (_, b) in zip(w1.param_items(), w2.param_items()):
        np.testing.assert_array_equal(np.asarray(a), np.asarray(b))
    assert h1.train_loss == h2.train_loss
    assert h1.eval_loss == h2.eval_loss


def test_train_returns_best_eval_checkpoint():
    ds = _tiny_dataset()
    cfg = trainer.TrainConfig(variant="gru", hidden_size=4, epochs=4, seed=9)
    w, hist = trainer.train(cfg, ds)
    assert hist.best_epoch == int(np.argmin(hist.eval_loss))
    assert hist.n_epochs == 4
    assert len(hist.learning_rate) == 4
    # returned weights reproduce the recorded best eval loss
    idx_eval = ds.split_indices()[1]
    loss, _ = trainer.loss_and_grads(
        w, ds.timestamps_ns[idx_eval], ds.tau_ns[idx_eval], want_grads=False)
    assert loss == pytest.approx(min(hist.eval_loss), rel=1e-12)


def test_train_loss_decreases_on_tiny_problem():
    ds = _tiny_dataset()
    cfg = trainer.TrainConfig(variant="gru", hidden_size=8, epochs=8, seed=1)
    _, hist = trainer.train(cfg, ds)
    assert hist.eval_loss[-1] < hist.eval_loss[0]
