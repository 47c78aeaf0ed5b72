"""Fixed-point quantization of a trained model, and why rounding matters.

Loads the small pretrained wide-range GRU shipped under tests/data, quantizes
it at several bitwidths and rounding modes, and compares estimates against
the float reference on fresh synthetic sequences.
"""

from pathlib import Path

import numpy as np

from taustream import benchmark, io, quant, rnn, sim

DATA = Path(__file__).parent.parent / "tests" / "data"

weights = io.read_weights(DATA / "golden_gru8.weights.txt")
print(f"loaded {weights.config.variant}-{weights.config.hidden_size} "
      f"(output scale {weights.config.output_scale_ns} ns)")

ds = sim.generate_dataset(
    sim.DatasetConfig(n_samples=400, photons_per_sample=512,
                      lifetime_range_ns=(0.2, 6.0)),
    master_seed=31,
)
float_est = benchmark.run_rnn(ds, weights)
float_mape = benchmark.compute_metrics(ds.tau_ns, float_est).mape
print(f"float reference MAPE: {float_mape:.4f}\n")

print("bits (w/a)  rounding     MAPE     max |q - float| [ns]")
for wbits, abits in [(16, 16), (8, 16), (16, 8)]:
    for mode in ("convergent", "truncate"):
        qw = quant.quantize_model(weights, wbits, abits, rounding=mode)
        est = benchmark.run_quantized_rnn(ds, qw)
        mape = benchmark.compute_metrics(ds.tau_ns, est).mape
        dev = np.max(np.abs(est - float_est))
        print(f"  {wbits:2d}/{abits:2d}     {mode:10s}  {mape:7.4f}   {dev:8.4f}")

fmt = quant.FixedPointFormat(16, 15)
for fn in ("sigmoid", "tanh"):
    table = quant.build_activation_table(fn, fmt)
    xs = np.linspace(-9, 9, 200_001)
    x_fixed = quant._round_scaled(xs * (1 << 19), "convergent")
    approx = quant.dequantize(quant.approx_activation(x_fixed, table, in_frac=19), fmt)
    err = np.max(np.abs(approx - quant._fn_ref(fn)(xs)))
    print(f"\n{fn} table: {table.n_segments} segments on "
          f"[{table.x_lo:g}, {table.x_hi:g}], max error {err:.2e} "
          f"(bound 2^-8 = {2**-8:.2e})")
