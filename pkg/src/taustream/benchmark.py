"""Evaluation metrics and the estimator-comparison experiment harness.

RMSE here is the conventional sqrt(mean of squared errors).  The harness can
additionally report the alternative normalization sqrt(sum)/N (a factor
1/sqrt(N) smaller) behind ``include_alt_rmse`` for comparison with sources
that normalize that way.

All estimators inside one experiment consume the same timestamp matrix; the
report carries a hash of those bytes so cross-estimator comparability is
checkable after the fact.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass

import numpy as np

from . import estimators as est
from . import quant, rnn, sim


@dataclass
class MetricReport:
    estimator: str
    rmse: float
    mae: float
    mape: float
    n_samples: int
    n_failed: int = 0
    dataset_hash: str = ""
    runtime_s: float = 0.0
    rmse_alt: float | None = None  # sqrt(sum of squares) / N variant

    def as_row(self) -> dict:
        row = {
            "estimator": self.estimator,
            "rmse": self.rmse,
            "mae": self.mae,
            "mape": self.mape,
            "n_samples": self.n_samples,
            "n_failed": self.n_failed,
            "dataset_hash": self.dataset_hash,
        }
        if self.rmse_alt is not None:
            row["rmse_alt"] = self.rmse_alt
        return row


def compute_metrics(truths, estimates, estimator: str = "",
                    include_alt_rmse: bool = False,
                    dataset_hash: str = "") -> MetricReport:
    """RMSE / MAE / MAPE over paired truths and estimates.

    Failed estimates (NaN) are excluded from the averages and counted in
    ``n_failed``.
    """
    y = np.asarray(truths, dtype=np.float64)
    yh = np.asarray(estimates, dtype=np.float64)
    if y.shape != yh.shape or y.size < 1:
        raise ValueError("need equal-length nonempty truth/estimate arrays")
    if np.any(y <= 0):
        raise ValueError("truths must be positive")
    good = np.isfinite(yh)
    n_failed = int(np.count_nonzero(~good))
    if not np.any(good):
        return MetricReport(estimator, float("nan"), float("nan"), float("nan"),
                            y.size, n_failed, dataset_hash)
    err = y[good] - yh[good]
    n = err.size
    rmse = float(np.sqrt(np.mean(err**2)))
    return MetricReport(
        estimator=estimator,
        rmse=rmse,
        mae=float(np.mean(np.abs(err))),
        mape=float(np.mean(np.abs(err / y[good]))),
        n_samples=y.size,
        n_failed=n_failed,
        dataset_hash=dataset_hash,
        rmse_alt=(float(np.sqrt(np.sum(err**2)) / n) if include_alt_rmse else None),
    )


def dataset_hash(ds: sim.Dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.timestamps_ns).tobytes())
    h.update(np.ascontiguousarray(ds.tau_ns).tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# estimator adapters: Dataset -> per-sample estimates (ns)


def run_cmm(ds: sim.Dataset, correct_truncation: bool = False) -> np.ndarray:
    return est.cmm_batch(ds.timestamps_ns, ds.t0_ns, ds.config.period_ns,
                         correct_truncation=correct_truncation)


def run_cmm_bgsub(ds: sim.Dataset) -> np.ndarray:
    n = ds.config.photons_per_sample
    n_bg = np.round(ds.background * n)
    return est.cmm_bg_batch(ds.timestamps_ns, ds.t0_ns, ds.config.period_ns, n_bg)


def run_ls(ds: sim.Dataset, n_bins: int = 256) -> np.ndarray:
    return est.ls_fit_batch(ds.timestamps_ns, ds.config.period_ns, n_bins)


def run_rnn(ds: sim.Dataset, weights: rnn.RnnWeights, chunk: int = 512) -> np.ndarray:
    out = np.empty(ds.n_samples)
    for lo in range(0, ds.n_samples, chunk):
        out[lo : lo + chunk] = rnn.final_estimates(weights, ds.timestamps_ns[lo : lo + chunk])
    return out


def run_quantized_rnn(ds: sim.Dataset, qweights: quant.QuantizedWeights,
                      chunk: int = 512) -> np.ndarray:
    out = np.empty(ds.n_samples)
    for lo in range(0, ds.n_samples, chunk):
        out[lo : lo + chunk] = quant.quantized_stream(ds.timestamps_ns[lo : lo + chunk], qweights)
    return out


def evaluate_estimators(ds: sim.Dataset, estimator_fns: dict,
                        include_alt_rmse: bool = False) -> dict[str, MetricReport]:
    """Run named estimator adapters over one shared dataset."""
    dhash = dataset_hash(ds)
    reports = {}
    for name, fn in estimator_fns.items():
        t0 = time.perf_counter()
        estimates = fn(ds)
        rep = compute_metrics(ds.tau_ns, estimates, estimator=name,
                              include_alt_rmse=include_alt_rmse, dataset_hash=dhash)
        rep.runtime_s = time.perf_counter() - t0
        reports[name] = rep
    return reports


# ---------------------------------------------------------------------------
# table experiments


def noise_free_testset(n_samples: int, photons: int, seed: int = 1301) -> sim.Dataset:
    cfg = sim.DatasetConfig(n_samples=n_samples, photons_per_sample=photons,
                            background_range=(0.0, 0.0))
    return sim.generate_dataset(cfg, master_seed=seed)


def noisy_testset(n_samples: int, photons: int, background: float,
                  seed: int = 1302) -> sim.Dataset:
    cfg = sim.DatasetConfig(n_samples=n_samples, photons_per_sample=photons,
                            background_range=(background, background))
    return sim.generate_dataset(cfg, master_seed=seed)


def table1_experiment(
    rnn_weights: dict[str, rnn.RnnWeights],
    n_samples: int = 2000,
    photons: int = 1024,
    seed: int = 1301,
    n_bins: int = 256,
) -> dict[str, MetricReport]:
    """Noise-free comparison of LS fitting, CMM, and the given RNN models."""
    ds = noise_free_testset(n_samples, photons, seed)
    fns = {
        "lsfit": lambda d: run_ls(d, n_bins),
        "cmm": run_cmm,
    }
    for name, w in rnn_weights.items():
        fns[name] = lambda d, w=w: run_rnn(d, w)
    return evaluate_estimators(ds, fns)


def table2_experiment(
    rnn_weights: dict[str, rnn.RnnWeights],
    noise_levels: tuple[float, ...] = (0.01, 0.05),
    n_samples: int = 2000,
    photons: int = 1024,
    seed: int = 1302,
    n_bins: int = 256,
) -> dict[float, dict[str, MetricReport]]:
    """Background-noise comparison: LS, CMM, CMM with known-count background
    subtraction, and noise-trained RNN models."""
    out = {}
    for k, level in enumerate(noise_levels):
        ds = noisy_testset(n_samples, photons, level, seed + k)
        fns = {
            "lsfit": lambda d: run_ls(d, n_bins),
            "cmm": run_cmm,
            "cmm-bgsub": run_cmm_bgsub,
        }
        for name, w in rnn_weights.items():
            fns[name] = lambda d, w=w: run_rnn(d, w)
        out[level] = evaluate_estimators(ds, fns)
    return out
