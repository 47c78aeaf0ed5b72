"""Command-line entry point.

Subcommands: simulate, train, eval, bench, crlb, quantize, pipeline.  Every
run echoes its effective configuration to ``<primary output>.manifest.json``
so results are attributable; outputs contain no wall-clock values, making
reruns with identical configuration byte-identical.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, benchmark, crlb, estimators, io, pipeline, quant, rnn, sim, trainer


def _manifest_for(out_path, args, extra=None):
    payload = {
        "tool": "taustream",
        "version": __version__,
        "config": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
    }
    if extra:
        payload.update(extra)
    io.write_manifest(str(out_path) + ".manifest.json", payload)


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    cfg = sim.DatasetConfig(
        n_samples=args.samples,
        photons_per_sample=args.photons,
        lifetime_range_ns=(args.tau_min, args.tau_max),
        t0_range_ns=(args.t0_min, args.t0_max),
        background_range=(args.bg_min, args.bg_max),
        irf_fwhm_ns=args.fwhm,
        period_ns=args.period,
        boundary=args.boundary,
        tdc_grid_ns=args.tdc_grid,
    )
    if args.threads > 1:
        chunks = np.array_split(np.arange(cfg.n_samples), args.threads)
        with ThreadPoolExecutor(args.threads) as pool:
            parts = list(pool.map(
                lambda idx: sim._generate_rows(cfg, args.seed, idx), chunks))
        ds = sim.Dataset(
            config=cfg, master_seed=args.seed,
            timestamps_ns=np.vstack([p[0] for p in parts]),
            tau_ns=np.concatenate([p[1] for p in parts]),
            t0_ns=np.concatenate([p[2] for p in parts]),
            background=np.concatenate([p[3] for p in parts]),
        )
    else:
        ds = sim.generate_dataset(cfg, master_seed=args.seed)
    digest = io.write_dataset(ds, args.out)
    if args.csv_out:
        io.export_dataset_csv(ds, args.csv_out)
    _manifest_for(args.out, args, {"dataset_sha256": digest})
    print(f"wrote {ds.n_samples} samples to {args.out} (sha256 {digest[:12]})")
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    ds = io.read_dataset(args.dataset)
    dataset_digest = io.sha256_file(args.dataset)
    cfg = trainer.TrainConfig(
        variant=args.variant,
        hidden_size=args.hidden,
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
        max_photons=args.max_photons,
    )
    weights, history = trainer.train(cfg, ds)
    weights.dataset_hash = dataset_digest
    digest = io.write_weights(weights, args.out)
    rows = [
        {
            "epoch": e,
            "learning_rate": history.learning_rate[e],
            "train_loss": history.train_loss[e],
            "eval_loss": history.eval_loss[e],
            "eval_mape": history.eval_mape[e],
            **({"wall_clock_s": history.wall_clock_s[e]} if args.include_timing else {}),
        }
        for e in range(history.n_epochs)
    ]
    history_out = args.history_out or str(args.out) + ".history.csv"
    io.write_rows_csv(rows, history_out)
    _manifest_for(args.out, args, {
        "weights_sha256": digest,
        "dataset_sha256": dataset_digest,
        "best_epoch": history.best_epoch,
    })
    print(f"trained {args.variant}-{args.hidden}: best epoch {history.best_epoch}, "
          f"eval MAPE {history.eval_mape[history.best_epoch]:.4f}")
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    if args.estimator == "rnn" and not args.weights:
        print("error: --weights is required for the rnn estimator", file=sys.stderr)
        return 2
    if args.estimator == "rnn-quant" and not args.qweights:
        print("error: --qweights is required for rnn-quant", file=sys.stderr)
        return 2
    ds = io.read_dataset(args.dataset)
    period = ds.config.period_ns
    n = ds.config.photons_per_sample

    if args.t0 == "known":
        t0 = ds.t0_ns
    else:
        t0 = np.array([
            estimators.build_histogram(ds.timestamps_ns[i], args.bins, period)
            .centers_ns[np.argmax(np.bincount(
                np.minimum((ds.timestamps_ns[i] / period * args.bins).astype(int),
                           args.bins - 1), minlength=args.bins))]
            for i in range(ds.n_samples)
        ])

    if args.estimator == "cmm":
        estimates = estimators.cmm_batch(ds.timestamps_ns, t0, period,
                                         correct_truncation=args.correct_truncation)
    elif args.estimator == "cmm-bgsub":
        n_bg = np.round(ds.background * n)
        estimates = estimators.cmm_bg_batch(ds.timestamps_ns, t0, period, n_bg)
    elif args.estimator == "lsfit":
        estimates = estimators.ls_fit_batch(ds.timestamps_ns, period, args.bins)
    elif args.estimator == "rnn":
        w = io.read_weights(args.weights)
        if args.verify:
            problems = io.verify_chain(weights_path=args.weights,
                                       dataset_hash=io.sha256_file(args.dataset))
            if problems:
                for p in problems:
                    print(f"provenance: {p}", file=sys.stderr)
                return 1
        estimates = benchmark.run_rnn(ds, w)
    else:  # rnn-quant
        qw = io.read_quantized(args.qweights)
        estimates = benchmark.run_quantized_rnn(ds, qw)

    rows = [
        {
            "sample_id": i,
            "truth_ns": float(ds.tau_ns[i]),
            "estimate_ns": float(estimates[i]),
            "estimator": args.estimator,
            "n_photons": n,
        }
        for i in range(ds.n_samples)
    ]
    io.write_rows_csv(rows, args.out)
    rep = benchmark.compute_metrics(ds.tau_ns, estimates, estimator=args.estimator)
    _manifest_for(args.out, args, {"mape": rep.mape, "rmse": rep.rmse, "mae": rep.mae})
    print(f"{args.estimator}: MAPE {rep.mape:.4f} RMSE {rep.rmse:.4f} "
          f"MAE {rep.mae:.4f} ({rep.n_failed} failures)")
    return 0


# ---------------------------------------------------------------------------
# bench


def _load_weight_args(pairs):
    out = {}
    for p in pairs or []:
        name, _, path = p.partition("=")
        if not path:
            raise ValueError(f"--weights expects name=path, got {p!r}")
        out[name] = io.read_weights(path)
    return out


def cmd_bench(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    weights = _load_weight_args(args.weights)
    if args.weights_dir:
        for path in sorted(Path(args.weights_dir).glob("*.weights.txt")):
            name = path.name.replace(".weights.txt", "")
            weights.setdefault(name, io.read_weights(path))
    scale = {"desk": (args.samples or 2000, 256), "paper": (args.samples or 2000, 1024)}
    n_samples, photons = scale[args.scale]

    if args.suite == "table1":
        reports = benchmark.table1_experiment(weights, n_samples=n_samples,
                                              photons=photons, seed=args.seed)
        rows = [r.as_row() for r in reports.values()]
        out = out_dir / "table1.csv"
        io.write_rows_csv(rows, out)
    elif args.suite == "table2":
        by_level = benchmark.table2_experiment(weights, n_samples=n_samples,
                                               photons=photons, seed=args.seed)
        rows = []
        for level, reports in by_level.items():
            for r in reports.values():
                row = r.as_row()
                row["background"] = level
                rows.append(row)
        out = out_dir / "table2.csv"
        io.write_rows_csv(rows, out, columns=["background"] + list(rows[0].keys())[:-1])
    else:  # crlb-sweep
        out = out_dir / "crlb_sweep.csv"
        rows = []
        for noise in (0.0, 0.01, 0.05):
            template = sim.mono_exponential(2.5, t0_ns=2.0, background=noise)
            swept = crlb.sweep("lifetime", [0.5, 1.0, 2.5, 5.0], template,
                               _mc_estimators(("cmm",)), n_photons=photons,
                               n_trials=args.trials, seed=args.seed)
            for r in swept:
                r["background"] = noise
                rows.append(r)
        io.write_rows_csv(rows, out)

    _manifest_for(out, args)
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# crlb


def _mc_estimators(names, weights_path=None):
    fns = {}
    for name in names:
        if name == "cmm":
            fns["cmm"] = lambda ts, m: estimators.cmm_estimate(
                ts, m.irf_peak_ns, m.repetition_period_ns).lifetime_ns
        elif name == "lsfit":
            fns["lsfit"] = lambda ts, m: estimators.ls_fit(
                estimators.build_histogram(ts, 256, m.repetition_period_ns)).lifetime_ns
        elif name == "rnn":
            w = io.read_weights(weights_path)
            fns["rnn"] = lambda ts, m, w=w: float(rnn.final_estimates(w, ts[None, :])[0])
        else:
            raise ValueError(f"unknown method {name!r}")
    return fns


def _parse_grid(spec: str) -> list[float]:
    lo, hi, n = spec.split(":")
    return list(np.linspace(float(lo), float(hi), int(n)))


def cmd_crlb(args) -> int:
    template = sim.mono_exponential(args.tau, t0_ns=args.t0, background=args.noise)
    methods = [m for m in args.methods.split(",") if m]
    fns = _mc_estimators(methods, weights_path=args.weights)
    grid = _parse_grid(args.grid) if args.grid else (
        [0.2, 0.5, 1.0, 2.5, 5.0] if args.sweep == "lifetime"
        else [128, 256, 512, 1024, 2048])
    if args.sweep == "photons":
        grid = [int(g) for g in grid]
    rows = crlb.sweep(args.sweep, grid, template, fns,
                      n_photons=args.photons, n_trials=args.trials, seed=args.seed)
    io.write_rows_csv(rows, args.out,
                      columns=["axis", "value", "method", "rel_std",
                               "ci_lo", "ci_hi", "crlb_bound"])
    if args.emit_plot_data:
        by_method: dict[str, list] = {}
        for r in rows:
            by_method.setdefault(r["method"], []).append(r)
        for method, mrows in by_method.items():
            series = [{"x": r["value"], "y": r["rel_std"]} for r in mrows]
            io.write_rows_csv(series, f"{args.out}.{method}.xy.csv", columns=["x", "y"])
    _manifest_for(args.out, args)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


# ---------------------------------------------------------------------------
# quantize


def cmd_quantize(args) -> int:
    w = io.read_weights(args.weights)
    qw = quant.quantize_model(w, weight_bits=args.wbits, act_bits=args.abits,
                              rounding=args.rounding)
    digest = io.write_quantized(qw, args.out)
    report_rows = [
        {"tensor": name,
         "max_abs_error": qw.report["max_abs_error"][name],
         "saturation_fraction": qw.report["saturation_fraction"].get(name, 0.0)}
        for name in qw.report["max_abs_error"]
    ]
    io.write_rows_csv(report_rows, str(args.out) + ".report.csv")
    if args.golden_out:
        rng = np.random.default_rng(args.seed)
        vectors = []
        for _ in range(args.golden_count):
            ts = np.round(rng.uniform(0, w.config.input_scale_ns, 64) / 0.05) * 0.05
            _, state = quant.quantized_stream(ts[None, :], qw, return_state=True)
            vectors.append({"timestamps_ns": ts, "final_state": state[0]})
        io.write_golden_vectors(args.golden_out, digest, vectors)
    _manifest_for(args.out, args, {
        "quantized_sha256": digest,
        "float_weights_sha256": qw.float_hash,
        "warnings": qw.report["warnings"],
    })
    for warning in qw.report["warnings"]:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"quantized {args.weights} -> {args.out} "
          f"(weights {args.wbits}b, activations {args.abits}b, {args.rounding})")
    return 0


# ---------------------------------------------------------------------------
# pipeline


def cmd_pipeline(args) -> int:
    qw = io.read_quantized(args.qweights)
    if args.events_in:
        events = io.read_events(args.events_in)
    elif args.scene == "bead":
        tau_map, rate_map = pipeline.bead_scene(rate_hz=args.rate)
        events = pipeline.synthesize_sensor_stream(tau_map, rate_map,
                                                   duration_ns=args.duration,
                                                   seed=args.seed)
    else:
        events = pipeline.uniform_load_stream(args.rate, args.duration, seed=args.seed)
    if args.events_out:
        io.write_events(events, args.events_out)
    frames, stats = pipeline.run_pipeline(events, qw,
                                          frame_period_ns=args.frame_period,
                                          core_latency_ns=args.core_latency,
                                          min_photons=args.min_photons,
                                          duration_ns=args.duration)
    def frame_rows(fr, with_index=True):
        rows = []
        for row in range(32):
            for col in range(32):
                r = {"row": row, "col": col,
                     "estimate_ns": float(fr.estimates_ns[row, col]),
                     "photons": int(fr.photon_counts[row, col])}
                if with_index:
                    r = {"frame": fr.index, **r}
                rows.append(r)
        return rows

    if args.frames_out:
        io.write_rows_csv([r for fr in frames for r in frame_rows(fr)], args.frames_out)
    if args.frames_dir:
        frames_dir = Path(args.frames_dir)
        frames_dir.mkdir(parents=True, exist_ok=True)
        for fr in frames:
            io.write_rows_csv(frame_rows(fr, with_index=False),
                              frames_dir / f"frame_{fr.index:05d}.csv")
    io.write_manifest(args.stats_out, stats.as_dict())
    _manifest_for(args.stats_out, args)
    print(f"{len(events)} events, processed {stats.processed_total}, "
          f"dropped {stats.dropped_total} "
          f"({stats.processed_rate_hz / 1e6:.2f} Mphoton/s, "
          f"{stats.n_frames} frames)")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="taustream",
        description="TCSPC lifetime estimation: simulation, estimators, "
                    "training, quantization, dataflow simulation, CRLB analysis",
    )
    p.add_argument("--version", action="version", version=f"taustream {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic timestamp dataset")
    s.add_argument("--samples", type=int, required=True)
    s.add_argument("--photons", type=int, required=True)
    s.add_argument("--tau-min", type=float, default=0.2)
    s.add_argument("--tau-max", type=float, default=5.0)
    s.add_argument("--t0-min", type=float, default=0.0)
    s.add_argument("--t0-max", type=float, default=5.0)
    s.add_argument("--bg-min", type=float, default=0.0)
    s.add_argument("--bg-max", type=float, default=0.0)
    s.add_argument("--fwhm", type=float, default=0.1673)
    s.add_argument("--period", type=float, default=50.0)
    s.add_argument("--boundary", choices=sim.BOUNDARY_MODES, default="reject")
    s.add_argument("--tdc-grid", type=float, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--csv-out", default=None)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="train a recurrent estimator from scratch")
    s.add_argument("--dataset", required=True)
    s.add_argument("--variant", choices=rnn.VARIANTS, default="gru")
    s.add_argument("--hidden", type=int, default=16)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--lr", type=float, default=0.001)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-photons", type=int, default=None)
    s.add_argument("--include-timing", action="store_true",
                   help="add wall-clock column to the history CSV")
    s.add_argument("--out", required=True)
    s.add_argument("--history-out", default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="run an estimator over a dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--estimator", choices=["cmm", "cmm-bgsub", "lsfit", "rnn", "rnn-quant"],
                   required=True)
    s.add_argument("--bins", type=int, default=256)
    s.add_argument("--correct-truncation", action="store_true")
    s.add_argument("--t0", choices=["known", "estimated"], default="known")
    s.add_argument("--weights", default=None)
    s.add_argument("--qweights", default=None)
    s.add_argument("--verify", action="store_true",
                   help="check provenance hashes before evaluating")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="estimator comparison suites")
    s.add_argument("--suite", choices=["table1", "table2", "crlb-sweep"], required=True)
    s.add_argument("--scale", choices=["desk", "paper"], default="desk")
    s.add_argument("--samples", type=int, default=None)
    s.add_argument("--trials", type=int, default=300)
    s.add_argument("--seed", type=int, default=1301)
    s.add_argument("--weights", nargs="*", metavar="NAME=PATH")
    s.add_argument("--weights-dir", default=None,
                   help="load every *.weights.txt in a directory")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("crlb", help="bound sweeps with Monte Carlo comparison")
    s.add_argument("--sweep", choices=["lifetime", "photons"], required=True)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--methods", default="cmm")
    s.add_argument("--weights", default=None)
    s.add_argument("--trials", type=int, default=300)
    s.add_argument("--photons", type=int, default=1024)
    s.add_argument("--tau", type=float, default=2.5)
    s.add_argument("--t0", type=float, default=2.0)
    s.add_argument("--grid", default=None, metavar="LO:HI:N")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--emit-plot-data", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_crlb)

    s = sub.add_parser("quantize", help="fixed-point quantization of trained weights")
    s.add_argument("--weights", required=True)
    s.add_argument("--wbits", type=int, choices=[8, 16, 32], default=16)
    s.add_argument("--abits", type=int, choices=[8, 16, 32], default=16)
    s.add_argument("--rounding", choices=list(quant.ROUNDING_MODES), default="convergent")
    s.add_argument("--golden-out", default=None)
    s.add_argument("--golden-count", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("pipeline", help="event-driven four-core dataflow simulation")
    s.add_argument("--qweights", required=True)
    s.add_argument("--scene", choices=["bead", "uniform"], default="bead")
    s.add_argument("--rate", type=float, default=10_000.0,
                   help="per-pixel rate (bead) or total offered rate (uniform), Hz")
    s.add_argument("--frame-period", type=float, default=1e8, metavar="NS")
    s.add_argument("--duration", type=float, default=2e8, metavar="NS")
    s.add_argument("--core-latency", type=float, default=1000.0, metavar="NS")
    s.add_argument("--min-photons", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--events-in", default=None)
    s.add_argument("--events-out", default=None)
    s.add_argument("--frames-out", default=None,
                   help="single multi-frame CSV")
    s.add_argument("--frames-dir", default=None,
                   help="directory for one CSV per frame")
    s.add_argument("--stats-out", required=True)
    s.set_defaults(func=cmd_pipeline)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, io.FormatError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
