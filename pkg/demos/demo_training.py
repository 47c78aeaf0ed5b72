"""Train a small streaming GRU estimator from scratch (a few minutes).

Uses a reduced dataset so the script stays quick; the full desk-scale recipe
(50k samples of 256 photons, 35 epochs) is what the acceptance suite runs.
Shows the loss-weight ramp, the learning-rate schedule, per-epoch progress,
and how the streamed estimate sharpens as photons accumulate.
"""

from taustream import rnn, sim, trainer

w = trainer.loss_weights(256)
print("loss weights: w[0] = {:.5f}, w[63] = {:.5f}, w[255] = {:.5f} (sum = {:.3f})"
      .format(w[0], w[63], w[255], w.sum()))

cfg = trainer.TrainConfig(variant="gru", hidden_size=16, epochs=10, seed=7)
print("learning rates:", [round(cfg.learning_rate_at(e), 6) for e in range(10)])

print("\ngenerating 6000 samples of 256 photons ...")
ds = sim.generate_dataset(sim.DatasetConfig(n_samples=6000, photons_per_sample=256),
                          master_seed=55)
weights, history = trainer.train(cfg, ds)
for e in range(history.n_epochs):
    print(f"epoch {e:2d}: train loss {history.train_loss[e]:.4f}, "
          f"eval loss {history.eval_loss[e]:.4f}, eval MAPE {history.eval_mape[e]:.4f}")
print(f"best epoch: {history.best_epoch}")

model = sim.mono_exponential(2.5, t0_ns=2.0)
seq = sim.generate_sequence(model, 256, seed=99)
print("\nstreaming estimate vs photons seen (truth 2.5 ns):")
for k, est in rnn.stream_estimate(seq, weights, emit_every=64):
    print(f"  after {k:3d} photons: {est:.3f} ns")
