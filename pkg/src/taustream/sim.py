"""Synthetic TCSPC timestamp generation and its exact probability density.

A photon timestamp within one laser repetition period is modeled as a
mixture: with probability ``p_i`` it comes from fluorescence component ``i``
(an exponential decay with lifetime ``tau_i`` delayed by a Gaussian
instrument response centered at ``t0``), and with the remaining weight it is
uniform background.  The closed-form density of a fluorescence component is
the exponentially modified Gaussian (EMG), evaluated here with an
erfcx-based branch so it stays finite for sigma/tau ratios from ~1e-7 up.

Emission times can fall outside ``[0, T)``.  Two boundary conventions are
supported and must match between sampler and density:

* ``reject`` (default): out-of-range fluorescence draws are redrawn, i.e.
  each component is conditioned on landing inside the period.
* ``wrap``: times are folded modulo ``T``, like TCSPC electronics that
  timestamp relative to the most recent sync pulse.

All times are nanoseconds, double precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import erfc, erfcx, ndtr

from .rng import derive_rng

# ---------------------------------------------------------------------------
# conversions

_FWHM_TO_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

# absolute density cutoff for the periodic-image sum in wrap mode
_IMAGE_TAIL_CUTOFF = 1e-12

BOUNDARY_MODES = ("reject", "wrap")


def sigma_from_fwhm(fwhm_ns: float) -> float:
    """Gaussian standard deviation for a given full width at half maximum."""
    if not fwhm_ns > 0:
        raise ValueError(f"fwhm must be positive, got {fwhm_ns}")
    return fwhm_ns / _FWHM_TO_SIGMA


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class DecayModel:
    """Generative parameters for the photon timestamps of one pixel/sample.

    ``intensities`` has one more entry than ``lifetimes``; the last entry is
    the background weight.  Entries are non-negative and sum to one.
    """

    lifetimes_ns: tuple[float, ...]
    intensities: tuple[float, ...]
    irf_peak_ns: float
    irf_fwhm_ns: float
    repetition_period_ns: float
    boundary: str = "reject"

    def __post_init__(self):
        if len(self.lifetimes_ns) < 1:
            raise ValueError("at least one lifetime is required")
        if any(tau <= 0 for tau in self.lifetimes_ns):
            raise ValueError(f"lifetimes must be positive: {self.lifetimes_ns}")
        if len(self.intensities) != len(self.lifetimes_ns) + 1:
            raise ValueError(
                "intensities must have one entry per lifetime plus background"
            )
        if any(p < 0 for p in self.intensities):
            raise ValueError(f"intensities must be non-negative: {self.intensities}")
        if abs(sum(self.intensities) - 1.0) > 1e-12:
            raise ValueError(f"intensities must sum to 1: {sum(self.intensities)!r}")
        if not self.repetition_period_ns > 0:
            raise ValueError("repetition period must be positive")
        if not self.irf_fwhm_ns > 0:
            raise ValueError("IRF FWHM must be positive")
        if not 0 <= self.irf_peak_ns < self.repetition_period_ns:
            raise ValueError("IRF peak must lie in [0, period)")
        if self.boundary not in BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {BOUNDARY_MODES}")

    @property
    def sigma_ns(self) -> float:
        return sigma_from_fwhm(self.irf_fwhm_ns)

    @property
    def background_weight(self) -> float:
        return self.intensities[-1]

    @property
    def n_components(self) -> int:
        return len(self.lifetimes_ns)

    def with_background(self, weight: float) -> "DecayModel":
        """Same fluorescence shape, different background weight."""
        if not 0 <= weight < 1:
            raise ValueError("background weight must be in [0, 1)")
        fluo = sum(self.intensities[:-1])
        if fluo <= 0:
            raise ValueError("model has no fluorescence component to rescale")
        scale = (1.0 - weight) / fluo
        intens = tuple(p * scale for p in self.intensities[:-1]) + (weight,)
        return replace(self, intensities=intens)


def mono_exponential(
    tau_ns: float,
    t0_ns: float = 0.0,
    fwhm_ns: float = 0.1673,
    period_ns: float = 50.0,
    background: float = 0.0,
    boundary: str = "reject",
) -> DecayModel:
    """Convenience constructor for the single-lifetime model used throughout."""
    return DecayModel(
        lifetimes_ns=(float(tau_ns),),
        intensities=(1.0 - background, background),
        irf_peak_ns=float(t0_ns),
        irf_fwhm_ns=float(fwhm_ns),
        repetition_period_ns=float(period_ns),
        boundary=boundary,
    )


@dataclass(frozen=True)
class TimestampSequence:
    """Ordered photon arrival times of one sample, all within ``[0, T)``."""

    timestamps_ns: np.ndarray
    truth: DecayModel | None
    seed: int

    def __post_init__(self):
        ts = np.asarray(self.timestamps_ns, dtype=np.float64)
        object.__setattr__(self, "timestamps_ns", ts)
        if ts.size == 0:
            raise ValueError("a timestamp sequence may not be empty")
        if self.truth is not None:
            period = self.truth.repetition_period_ns
            if ts.min() < 0 or ts.max() >= period:
                raise ValueError("timestamps must lie in [0, period)")

    def __len__(self) -> int:
        return int(self.timestamps_ns.size)


# ---------------------------------------------------------------------------
# EMG closed forms (exponential decay convolved with a Gaussian IRF)


def _emg_density(u, tau: float, t0: float, sigma: float):
    """EMG density on the real line, numerically stable for tiny sigma.

    Uses erfc directly where its argument is negative (the exponent is then
    bounded) and the scaled complement erfcx otherwise, so neither branch
    can overflow in double precision.
    """
    u = np.asarray(u, dtype=np.float64)
    d = u - t0
    st = sigma / tau
    z = (st - d / sigma) / math.sqrt(2.0)
    out = np.empty_like(d)

    pos = z >= 0
    if np.any(pos):
        dp = d[pos]
        out[pos] = erfcx(z[pos]) * np.exp(-0.5 * (dp / sigma) ** 2) / (2.0 * tau)
    neg = ~pos
    if np.any(neg):
        a = 0.5 * st * st - d[neg] / tau
        out[neg] = np.exp(a) * erfc(z[neg]) / (2.0 * tau)
    return out


def _emg_cdf(u, tau: float, t0: float, sigma: float):
    """EMG cumulative distribution: Phi((u-t0)/sigma) - tau * density(u)."""
    u = np.asarray(u, dtype=np.float64)
    return ndtr((u - t0) / sigma) - tau * _emg_density(u, tau, t0, sigma)


def _emg_density_dtau(u, tau: float, t0: float, sigma: float):
    """Analytic derivative of the EMG density with respect to the lifetime."""
    u = np.asarray(u, dtype=np.float64)
    d = u - t0
    h = _emg_density(u, tau, t0, sigma)
    phi = np.exp(-0.5 * (d / sigma) ** 2) / math.sqrt(2.0 * math.pi)
    return h * (d / tau**2 - 1.0 / tau - sigma**2 / tau**3) + sigma * phi / tau**3


def _emg_cdf_dtau(u, tau: float, t0: float, sigma: float):
    """Analytic derivative of the EMG CDF with respect to the lifetime."""
    u = np.asarray(u, dtype=np.float64)
    d = u - t0
    h = _emg_density(u, tau, t0, sigma)
    phi = np.exp(-0.5 * (d / sigma) ** 2) / math.sqrt(2.0 * math.pi)
    return -h * (d / tau - sigma**2 / tau**2) - sigma * phi / tau**2


def _wrapped_image_range(tau: float, period: float) -> range:
    """Periodic image indices needed to reach the absolute tail cutoff.

    The j >= 1 images decay by exp(-period/tau) each; the j = -1 image covers
    the Gaussian left tail folding to the end of the period.  One extra image
    on each side is kept as margin.
    """
    peak = 1.0 / tau  # density scale at the rise
    n_right = 1
    while peak * math.exp(-n_right * period / tau) > _IMAGE_TAIL_CUTOFF and n_right < 64:
        n_right += 1
    return range(-1, n_right + 1)


def _component_density(t, model: DecayModel, i: int, dtau: bool = False):
    """Density (or its tau-derivative) of fluorescence component i on [0, T)."""
    tau = model.lifetimes_ns[i]
    t0 = model.irf_peak_ns
    sigma = model.sigma_ns
    period = model.repetition_period_ns
    t = np.asarray(t, dtype=np.float64)

    if model.boundary == "wrap":
        total = np.zeros_like(t)
        for j in _wrapped_image_range(tau, period):
            u = t + j * period
            total += _emg_density_dtau(u, tau, t0, sigma) if dtau else _emg_density(u, tau, t0, sigma)
        return total

    # reject mode: condition the EMG on [0, T)
    z_mass = float(_emg_cdf(period, tau, t0, sigma) - _emg_cdf(0.0, tau, t0, sigma))
    dens = _emg_density(t, tau, t0, sigma)
    if not dtau:
        return dens / z_mass
    ddens = _emg_density_dtau(t, tau, t0, sigma)
    dz = float(_emg_cdf_dtau(period, tau, t0, sigma) - _emg_cdf_dtau(0.0, tau, t0, sigma))
    return (ddens * z_mass - dens * dz) / z_mass**2


def _component_mass(edges, model: DecayModel, i: int) -> np.ndarray:
    """Exact probability mass of component i between consecutive edges."""
    tau = model.lifetimes_ns[i]
    t0 = model.irf_peak_ns
    sigma = model.sigma_ns
    period = model.repetition_period_ns
    edges = np.asarray(edges, dtype=np.float64)

    if model.boundary == "wrap":
        cdf = np.zeros_like(edges)
        for j in _wrapped_image_range(tau, period):
            cdf += _emg_cdf(edges + j * period, tau, t0, sigma)
        # constant offset cancels in the difference
        return np.diff(cdf)

    z_mass = float(_emg_cdf(period, tau, t0, sigma) - _emg_cdf(0.0, tau, t0, sigma))
    return np.diff(_emg_cdf(edges, tau, t0, sigma)) / z_mass


def density_at(t, model: DecayModel):
    """Mixture probability density of a recorded timestamp at time(s) ``t``.

    Scalar in, scalar out; array in, array out.  ``t`` must lie in [0, T).
    """
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    period = model.repetition_period_ns
    if t.size and (t.min() < 0 or t.max() >= period):
        raise ValueError("density_at requires t in [0, period)")

    out = np.full(t.shape, model.background_weight / period)
    for i in range(model.n_components):
        p = model.intensities[i]
        if p > 0:
            out += p * _component_density(t, model, i)
    return float(out[0]) if scalar else out


def density_dtau(t, model: DecayModel, component: int = 0):
    """Derivative of ``density_at`` with respect to one lifetime."""
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    p = model.intensities[component]
    out = p * _component_density(t, model, component, dtau=True)
    return float(out[0]) if scalar else out


def bin_probabilities(model: DecayModel, edges) -> np.ndarray:
    """Exact probability mass of each bin defined by ``edges`` (closed form)."""
    edges = np.asarray(edges, dtype=np.float64)
    period = model.repetition_period_ns
    masses = model.background_weight * np.diff(edges) / period
    for i in range(model.n_components):
        p = model.intensities[i]
        if p > 0:
            masses = masses + p * _component_mass(edges, model, i)
    return masses


# ---------------------------------------------------------------------------
# sampling


def _sample_batch(model: DecayModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` independent timestamps from the mixture, vectorized."""
    period = model.repetition_period_ns
    t0 = model.irf_peak_ns
    sigma = model.sigma_ns
    weights = np.asarray(model.intensities)
    comp = np.searchsorted(np.cumsum(weights), rng.random(n), side="right")
    comp = np.minimum(comp, len(weights) - 1)

    out = np.empty(n, dtype=np.float64)
    bg = comp == model.n_components
    n_bg = int(bg.sum())
    if n_bg:
        out[bg] = rng.random(n_bg) * period

    for i, tau in enumerate(model.lifetimes_ns):
        sel = comp == i
        m = int(sel.sum())
        if m == 0:
            continue
        u = rng.exponential(tau, m) + rng.normal(t0, sigma, m)
        if model.boundary == "wrap":
            u = np.mod(u, period)
            u[u >= period] = 0.0  # tiny negatives can fold onto the period itself
        else:
            bad = (u < 0) | (u >= period)
            guard = 0
            while np.any(bad):
                k = int(bad.sum())
                u[bad] = rng.exponential(tau, k) + rng.normal(t0, sigma, k)
                bad = (u < 0) | (u >= period)
                guard += 1
                if guard > 10_000:
                    raise RuntimeError("rejection sampling failed to terminate")
        out[sel] = u
    return out


def sample_timestamp(model: DecayModel, rng: np.random.Generator) -> float:
    """Draw a single timestamp (component, then delay per the component law)."""
    return float(_sample_batch(model, 1, rng)[0])


def generate_sequence(model: DecayModel, n_photons: int, seed: int) -> TimestampSequence:
    """Generate one sample of ``n_photons`` i.i.d. timestamps.

    Deterministic: the same (model, n_photons, seed) always yields the same
    sequence, on any platform.
    """
    if n_photons < 1:
        raise ValueError(f"n_photons must be >= 1, got {n_photons}")
    rng = derive_rng(seed, "sequence")
    ts = _sample_batch(model, int(n_photons), rng)
    return TimestampSequence(timestamps_ns=ts, truth=model, seed=int(seed))


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class DatasetConfig:
    """Generation recipe for a synthetic mono-exponential dataset."""

    n_samples: int
    photons_per_sample: int
    lifetime_range_ns: tuple[float, float] = (0.2, 5.0)
    t0_range_ns: tuple[float, float] = (0.0, 5.0)
    background_range: tuple[float, float] = (0.0, 0.0)
    irf_fwhm_ns: float = 0.1673
    period_ns: float = 50.0
    boundary: str = "reject"
    tdc_grid_ns: float | None = None
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.n_samples < 1 or self.photons_per_sample < 1:
            raise ValueError("sample and photon counts must be positive")
        for name in ("lifetime_range_ns", "t0_range_ns", "background_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} has inverted bounds: ({lo}, {hi})")
        if self.lifetime_range_ns[0] <= 0:
            raise ValueError("lifetimes must be positive")
        if not (0 <= self.background_range[0] and self.background_range[1] < 1):
            raise ValueError("background weights must lie in [0, 1)")
        if abs(sum(self.split) - 1.0) > 1e-12:
            raise ValueError(f"split ratios must sum to 1: {self.split}")
        if self.boundary not in BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {BOUNDARY_MODES}")
        if self.tdc_grid_ns is not None and not self.tdc_grid_ns > 0:
            raise ValueError("tdc grid must be positive when given")

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "photons_per_sample": self.photons_per_sample,
            "lifetime_range_ns": list(self.lifetime_range_ns),
            "t0_range_ns": list(self.t0_range_ns),
            "background_range": list(self.background_range),
            "irf_fwhm_ns": self.irf_fwhm_ns,
            "period_ns": self.period_ns,
            "boundary": self.boundary,
            "tdc_grid_ns": self.tdc_grid_ns,
            "split": list(self.split),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        return cls(
            n_samples=int(d["n_samples"]),
            photons_per_sample=int(d["photons_per_sample"]),
            lifetime_range_ns=tuple(d["lifetime_range_ns"]),
            t0_range_ns=tuple(d["t0_range_ns"]),
            background_range=tuple(d["background_range"]),
            irf_fwhm_ns=float(d["irf_fwhm_ns"]),
            period_ns=float(d["period_ns"]),
            boundary=str(d["boundary"]),
            tdc_grid_ns=None if d.get("tdc_grid_ns") is None else float(d["tdc_grid_ns"]),
            split=tuple(d["split"]),
        )


@dataclass
class Dataset:
    """A generated dataset: one row of timestamps per sample, plus truths."""

    config: DatasetConfig
    master_seed: int
    timestamps_ns: np.ndarray  # (n_samples, photons_per_sample)
    tau_ns: np.ndarray  # (n_samples,)
    t0_ns: np.ndarray  # (n_samples,)
    background: np.ndarray  # (n_samples,)
    rng_name: str = field(default="philox4x64-10/seedsequence")

    @property
    def n_samples(self) -> int:
        return int(self.timestamps_ns.shape[0])

    def model_for(self, i: int) -> DecayModel:
        return mono_exponential(
            tau_ns=float(self.tau_ns[i]),
            t0_ns=float(self.t0_ns[i]),
            fwhm_ns=self.config.irf_fwhm_ns,
            period_ns=self.config.period_ns,
            background=float(self.background[i]),
            boundary=self.config.boundary,
        )

    def sequence(self, i: int) -> TimestampSequence:
        return TimestampSequence(
            timestamps_ns=self.timestamps_ns[i],
            truth=self.model_for(i),
            seed=sample_seed(self.master_seed, i),
        )

    def split_indices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Deterministic shuffled train/eval/test split per the config ratios."""
        rng = derive_rng(self.master_seed, "split")
        order = rng.permutation(self.n_samples)
        n_train = int(round(self.config.split[0] * self.n_samples))
        n_eval = int(round(self.config.split[1] * self.n_samples))
        return (
            order[:n_train],
            order[n_train : n_train + n_eval],
            order[n_train + n_eval :],
        )

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            config=self.config,
            master_seed=self.master_seed,
            timestamps_ns=self.timestamps_ns[idx],
            tau_ns=self.tau_ns[idx],
            t0_ns=self.t0_ns[idx],
            background=self.background[idx],
            rng_name=self.rng_name,
        )


def sample_seed(master_seed: int, index: int) -> int:
    """Stable per-sample seed label recorded alongside each sequence."""
    return (int(master_seed) << 20 | int(index)) & (2**63 - 1)


def _generate_rows(
    config: DatasetConfig, master_seed: int, indices: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Generate the given sample rows; pure in (config, seed, index)."""
    n = len(indices)
    ts = np.empty((n, config.photons_per_sample), dtype=np.float64)
    tau = np.empty(n)
    t0 = np.empty(n)
    bg = np.empty(n)
    for row, idx in enumerate(indices):
        rng = derive_rng(master_seed, "dataset", int(idx))
        tau[row] = rng.uniform(*config.lifetime_range_ns)
        t0[row] = rng.uniform(*config.t0_range_ns)
        bg[row] = rng.uniform(*config.background_range)
        model = mono_exponential(
            tau_ns=tau[row],
            t0_ns=t0[row],
            fwhm_ns=config.irf_fwhm_ns,
            period_ns=config.period_ns,
            background=bg[row],
            boundary=config.boundary,
        )
        ts[row] = _sample_batch(model, config.photons_per_sample, rng)
    if config.tdc_grid_ns is not None:
        ts = np.floor(ts / config.tdc_grid_ns) * config.tdc_grid_ns
    return ts, tau, t0, bg


def generate_dataset(config: DatasetConfig, master_seed: int) -> Dataset:
    """Generate a full dataset; each sample owns a generator derived from
    (master seed, sample index), so regeneration of any subset is exact."""
    ts, tau, t0, bg = _generate_rows(config, master_seed, np.arange(config.n_samples))
    return Dataset(
        config=config,
        master_seed=int(master_seed),
        timestamps_ns=ts,
        tau_ns=tau,
        t0_ns=t0,
        background=bg,
    )
