"""Classical lifetime estimators: center-of-mass and histogram tail fitting.

The center-of-mass method (CMM) estimates the lifetime as the mean arrival
time minus the IRF peak position.  Because arrival times are confined to one
repetition period, the raw estimate is biased low for lifetimes that are not
small compared to the period; the optional correction inverts the exact mean
map  m(tau) = tau - T / (exp(T/tau) - 1)  by bisection.  That map holds both
for wrapped and for range-conditioned exponentials, which have equal means.

Least-squares fitting bins the timestamps and fits  A exp(-(t-t_peak)/tau) + B
to the histogram from its peak bin onward with damped Gauss-Newton steps.
The offset B absorbs uniform background, which is why the fit degrades far
more gracefully than CMM when background noise appears.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .sim import TimestampSequence

__all__ = [
    "Histogram",
    "EstimateReport",
    "LsFitOptions",
    "build_histogram",
    "cmm_estimate",
    "cmm_batch",
    "cmm_bg_subtracted",
    "ls_fit",
    "wrapped_exp_mean",
    "invert_wrapped_mean",
]


@dataclass(frozen=True)
class Histogram:
    """Uniformly binned counts over one repetition period."""

    edges_ns: np.ndarray  # (n_bins + 1,)
    counts: np.ndarray  # (n_bins,) integer
    period_ns: float

    def __post_init__(self):
        object.__setattr__(self, "edges_ns", np.asarray(self.edges_ns, dtype=np.float64))
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))
        if self.counts.size < 16:
            raise ValueError("histograms need at least 16 bins")
        if self.edges_ns.size != self.counts.size + 1:
            raise ValueError("edges must have one more entry than counts")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def centers_ns(self) -> np.ndarray:
        return 0.5 * (self.edges_ns[:-1] + self.edges_ns[1:])


@dataclass
class EstimateReport:
    """Outcome of one estimator run on one sample."""

    estimator: str
    lifetime_ns: float
    photon_count: int
    ok: bool
    aux: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)


def _timestamps(seq) -> np.ndarray:
    if isinstance(seq, TimestampSequence):
        return seq.timestamps_ns
    ts = np.asarray(seq, dtype=np.float64)
    if ts.size == 0:
        raise ValueError("empty timestamp sequence")
    return ts


# ---------------------------------------------------------------------------
# center of mass


def wrapped_exp_mean(tau_ns: float, period_ns: float) -> float:
    """Mean recorded time of an exponential confined to [0, period)."""
    r = period_ns / tau_ns
    if r > 700.0:  # exp overflow guard; the correction term is then ~0
        return tau_ns
    return tau_ns - period_ns / math.expm1(r)


def invert_wrapped_mean(mean_ns: float, period_ns: float, tol: float = 1e-12) -> float | None:
    """Solve m(tau) = mean for tau by bisection on [1e-3, period].

    Returns None when the mean lies outside the attainable range (heavy
    background pushes the sample mean past the exponential maximum T/2...).
    """
    lo, hi = 1e-3, period_ns
    if not (wrapped_exp_mean(lo, period_ns) <= mean_ns <= wrapped_exp_mean(hi, period_ns)):
        return None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if wrapped_exp_mean(mid, period_ns) < mean_ns:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def cmm_estimate(
    seq,
    t0_ns: float,
    period_ns: float,
    correct_truncation: bool = False,
) -> EstimateReport:
    """Center-of-mass estimate: mean timestamp minus the IRF peak position."""
    ts = _timestamps(seq)
    raw = float(ts.mean()) - t0_ns
    aux = {"raw_ns": raw}
    if raw <= 0:
        return EstimateReport(
            estimator="cmm",
            lifetime_ns=float("nan"),
            photon_count=ts.size,
            ok=False,
            aux=aux,
            diagnostics={"message": "mean arrival time not above t0", "converged": False},
        )
    if not correct_truncation:
        return EstimateReport("cmm", raw, ts.size, True, aux, {"converged": True, "message": "ok"})

    corrected = invert_wrapped_mean(raw, period_ns)
    if corrected is None:
        return EstimateReport(
            estimator="cmm",
            lifetime_ns=float("nan"),
            photon_count=ts.size,
            ok=False,
            aux=aux,
            diagnostics={"message": "mean outside correctable range", "converged": False},
        )
    aux["corrected_ns"] = corrected
    return EstimateReport("cmm", corrected, ts.size, True, aux, {"converged": True, "message": "ok"})


def cmm_batch(ts_matrix: np.ndarray, t0_ns, period_ns: float, correct_truncation: bool = False) -> np.ndarray:
    """Vectorized CMM over many samples; NaN where the estimate is non-physical."""
    ts_matrix = np.asarray(ts_matrix, dtype=np.float64)
    raw = ts_matrix.mean(axis=1) - np.asarray(t0_ns, dtype=np.float64)
    if not correct_truncation:
        return np.where(raw > 0, raw, np.nan)
    out = np.full(raw.shape, np.nan)
    for i, m in enumerate(raw):
        if m > 0:
            tau = invert_wrapped_mean(float(m), period_ns)
            if tau is not None:
                out[i] = tau
    return out


def cmm_bg_subtracted(
    seq,
    t0_ns: float,
    period_ns: float,
    n_bg: int,
    correct_truncation: bool = False,
) -> EstimateReport:
    """CMM with a known number of background photons removed.

    Background arrivals are uniform, so their expected contribution to the
    sum of timestamps is n_bg * T/2.
    """
    ts = _timestamps(seq)
    n = ts.size
    if not 0 <= n_bg < n:
        raise ValueError(f"n_bg must satisfy 0 <= n_bg < {n}, got {n_bg}")
    mean_fluo = (float(ts.sum()) - n_bg * period_ns / 2.0) / (n - n_bg)
    raw = mean_fluo - t0_ns
    aux = {"raw_ns": raw, "n_bg_subtracted": int(n_bg)}
    if raw <= 0:
        return EstimateReport(
            estimator="cmm-bgsub",
            lifetime_ns=float("nan"),
            photon_count=n,
            ok=False,
            aux=aux,
            diagnostics={"message": "mean arrival time not above t0", "converged": False},
        )
    if correct_truncation:
        corrected = invert_wrapped_mean(raw, period_ns)
        if corrected is None:
            return EstimateReport(
                estimator="cmm-bgsub",
                lifetime_ns=float("nan"),
                photon_count=n,
                ok=False,
                aux=aux,
                diagnostics={"message": "mean outside correctable range", "converged": False},
            )
        aux["corrected_ns"] = corrected
        return EstimateReport("cmm-bgsub", corrected, n, True, aux, {"converged": True, "message": "ok"})
    return EstimateReport("cmm-bgsub", raw, n, True, aux, {"converged": True, "message": "ok"})


def cmm_bg_batch(ts_matrix: np.ndarray, t0_ns, period_ns: float, n_bg) -> np.ndarray:
    """Vectorized background-subtracted CMM."""
    ts_matrix = np.asarray(ts_matrix, dtype=np.float64)
    n = ts_matrix.shape[1]
    n_bg = np.asarray(n_bg, dtype=np.float64)
    mean_fluo = (ts_matrix.sum(axis=1) - n_bg * period_ns / 2.0) / (n - n_bg)
    raw = mean_fluo - np.asarray(t0_ns, dtype=np.float64)
    return np.where(raw > 0, raw, np.nan)


# ---------------------------------------------------------------------------
# histogram and least-squares tail fit


def build_histogram(seq, n_bins: int, period_ns: float) -> Histogram:
    """Uniform binning of a sequence over [0, period)."""
    if n_bins < 16:
        raise ValueError(f"n_bins must be >= 16, got {n_bins}")
    ts = _timestamps(seq)
    edges = np.linspace(0.0, period_ns, n_bins + 1)
    counts, _ = np.histogram(ts, bins=edges)
    return Histogram(edges_ns=edges, counts=counts, period_ns=period_ns)


@dataclass(frozen=True)
class LsFitOptions:
    max_iterations: int = 200
    damping_init: float = 1e-3
    damping_max: float = 1e14
    min_post_peak_bins: int = 8


def _tail_init(t: np.ndarray, c: np.ndarray) -> tuple[float, float, float]:
    """Starting values from a log-linear regression on the offset-free tail."""
    k_tail = max(4, t.size // 10)
    b0 = float(c[-k_tail:].mean())
    resid = c - b0
    pos = resid > max(1e-9, 1e-6 * max(resid.max(), 1.0))
    if pos.sum() >= 2:
        slope, intercept = np.polyfit(t[pos] - t[0], np.log(resid[pos]), 1)
        if slope < 0:
            tau0 = -1.0 / slope
            a0 = math.exp(intercept)
        else:
            tau0 = (t[-1] - t[0]) / 3.0
            a0 = max(resid[0], 1.0)
    else:
        tau0 = (t[-1] - t[0]) / 3.0
        a0 = max(float(c[0] - b0), 1.0)
    tau0 = float(np.clip(tau0, 1e-3, 10.0 * (t[-1] - t[0] + 1.0)))
    return a0, tau0, b0


def ls_fit(hist: Histogram, opts: LsFitOptions | None = None) -> EstimateReport:
    """Fit A exp(-(t - t_peak)/tau) + B to the post-peak histogram bins."""
    opts = opts or LsFitOptions()
    counts = hist.counts.astype(np.float64)
    total = hist.total
    peak = int(np.argmax(counts))  # argmax takes the earliest maximal bin
    t = hist.centers_ns[peak:]
    c = counts[peak:]

    def failure(msg: str) -> EstimateReport:
        return EstimateReport(
            estimator="lsfit",
            lifetime_ns=float("nan"),
            photon_count=total,
            ok=False,
            aux={},
            diagnostics={"message": msg, "converged": False, "iterations": 0},
        )

    if t.size < opts.min_post_peak_bins:
        return failure(f"only {t.size} bins after the peak")
    if np.count_nonzero(counts) <= 1:
        return failure("degenerate histogram: all counts in one bin")
    if total < 100:
        return failure("too few photons for a stable fit")

    t_peak = t[0]
    x = t - t_peak
    a, tau, b = _tail_init(t, c)

    def model_sse(a_, tau_, b_):
        e = np.exp(-x / tau_)
        r = a_ * e + b_ - c
        return e, r, float(r @ r)

    e, r, sse = model_sse(a, tau, b)
    sse0 = sse
    lam = opts.damping_init
    converged = False
    message = "max iterations reached"
    iterations = 0

    for iterations in range(1, opts.max_iterations + 1):
        jac = np.column_stack([e, a * e * x / tau**2, np.ones_like(e)])
        g = jac.T @ r
        hess = jac.T @ jac
        stepped = False
        while lam <= opts.damping_max:
            damped = hess + lam * np.diag(np.diag(hess))
            try:
                step = np.linalg.solve(damped, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            a_new = max(a + step[0], 0.0)
            tau_new = float(np.clip(tau + step[1], 1e-4, 100.0 * hist.period_ns))
            b_new = b + step[2]
            e_new, r_new, sse_new = model_sse(a_new, tau_new, b_new)
            if sse_new < sse:
                rel_drop = (sse - sse_new) / max(sse, 1e-300)
                a, tau, b, e, r, sse = a_new, tau_new, b_new, e_new, r_new, sse_new
                lam = max(lam * 0.3, 1e-12)
                stepped = True
                if rel_drop < 1e-12:
                    converged = True
                    message = "converged: relative residual change below tolerance"
                break
            lam *= 10.0
        if not stepped:
            converged = sse < sse0 or iterations > 1
            message = "damping limit reached" if not converged else "converged: no further improvement"
            break
        if converged:
            break

    ok = converged and np.isfinite(tau) and tau > 0
    return EstimateReport(
        estimator="lsfit",
        lifetime_ns=float(tau) if ok else float("nan"),
        photon_count=total,
        ok=ok,
        aux={"amplitude": float(a), "offset": float(b), "t_peak_ns": float(t_peak)},
        diagnostics={
            "iterations": iterations,
            "residual": float(sse),
            "initial_residual": float(sse0),
            "converged": converged,
            "message": message,
        },
    )


def ls_fit_batch(ts_matrix: np.ndarray, period_ns: float, n_bins: int = 256) -> np.ndarray:
    """Histogram + tail fit per row; NaN where the fit fails."""
    out = np.full(ts_matrix.shape[0], np.nan)
    for i in range(ts_matrix.shape[0]):
        rep = ls_fit(build_histogram(ts_matrix[i], n_bins, period_ns))
        if rep.ok:
            out[i] = rep.lifetime_ns
    return out
