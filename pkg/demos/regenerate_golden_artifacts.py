"""Regenerate the frozen artifacts under tests/data from scratch.

Everything here is deterministic, so a rerun reproduces the checked-in files
byte for byte:

* golden_head.weights.txt    tiny hand-built model whose zero-state read-out
                             is exactly 2.5 ns
* golden_gru8.weights.txt    GRU-8 trained on a wide lifetime range
                             (0.2 to 7 ns, 1024-photon samples) used by the
                             pipeline and quantization demos; the training
                             takes ~20 minutes on one core
* golden_gru8_q16.bin        its 16/16-bit convergent-rounding quantization
* golden_gru8_vectors.txt    integer GRU states for fixed input sequences
                             (the cross-platform bit-exactness witness)
"""

from pathlib import Path

import numpy as np

from taustream import io, quant, rnn, sim, trainer

DATA = Path(__file__).parent.parent / "tests" / "data"
DATA.mkdir(exist_ok=True)

# --- golden head file --------------------------------------------------------
cfg = rnn.RnnConfig(variant="gru", hidden_size=8, input_scale_ns=50.0,
                    output_scale_ns=10.0)
rng = np.random.default_rng(20240)
head = rnn.RnnWeights(
    config=cfg,
    w_in=rng.uniform(-0.5, 0.5, 24),
    b=np.zeros(24),
    u_hh=rng.uniform(-0.3, 0.3, (24, 8)),
    head_w1=np.zeros((8, 8)),
    head_b1=np.zeros(8),
    head_w2=np.full(8, 0.0625),
    head_b2=0.0,
    seed=20240,
)
io.write_weights(head, DATA / "golden_head.weights.txt")
print("golden_head.weights.txt: zero-state read-out =",
      rnn.head_predict(rnn.init_state(cfg), head), "ns")

# --- wide-range GRU-8 --------------------------------------------------------
ds_cfg = sim.DatasetConfig(n_samples=24_000, photons_per_sample=1024,
                           lifetime_range_ns=(0.2, 7.0))
dataset = sim.generate_dataset(ds_cfg, master_seed=3003)
train_cfg = trainer.TrainConfig(variant="gru", hidden_size=8, epochs=18,
                                batch_size=64, seed=12)
weights, history = trainer.train(train_cfg, dataset)
weights.dataset_hash = None
print(f"golden_gru8: best epoch {history.best_epoch}, "
      f"eval MAPE {history.eval_mape[history.best_epoch]:.4f}")
io.write_weights(weights, DATA / "golden_gru8.weights.txt")

# --- quantization + golden vectors -------------------------------------------
qw = quant.quantize_model(weights, 16, 16, rounding="convergent")
digest = io.write_quantized(qw, DATA / "golden_gru8_q16.bin")
vec_rng = np.random.default_rng(777)
vectors = []
for _ in range(4):
    ts = np.round(vec_rng.uniform(0, 50.0, 64) / 0.05) * 0.05
    _, state = quant.quantized_stream(ts[None, :], qw, return_state=True)
    vectors.append({"timestamps_ns": ts, "final_state": state[0]})
io.write_golden_vectors(DATA / "golden_gru8_vectors.txt", digest, vectors)
print("golden_gru8_q16.bin sha256:", digest[:16])
print("golden_gru8_vectors.txt: 4 vectors of 64 steps")
