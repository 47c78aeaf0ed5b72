"""Event-driven simulation of the four-core on-FPGA estimation dataflow.

Photon events from a 32x32 pixel array are serialized in wall-clock order
and routed to four compute units, each owning a quarter of the sensor
(8 rows of 32 pixels, i.e. pixel ids p belong to unit p // 256).  A unit
that receives an event while still busy with the previous one simply drops
it.  Accepted events update the pixel's quantized GRU hidden state held in
the unit's state memory.  At every frame boundary the head reads out all
pixels, a lifetime frame is emitted, and the hidden states reset; the busy
timers of the units persist across boundaries.

Wall-clock time is integer picoseconds end to end, so the busy/drop
arbitration is exact and platform independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import quant, sim
from .rng import derive_rng

SENSOR_SHAPE = (32, 32)
N_PIXELS = SENSOR_SHAPE[0] * SENSOR_SHAPE[1]
N_UNITS = 4
PIXELS_PER_UNIT = N_PIXELS // N_UNITS
TDC_BIN_PS = 50

EVENT_DTYPE = np.dtype([("pixel", "<u4"), ("wall_ps", "<u8"), ("t_ps", "<u4")])


def unit_of_pixel(pixel) -> np.ndarray:
    return np.asarray(pixel, dtype=np.int64) // PIXELS_PER_UNIT


def make_events(pixel, wall_ps, t_ps) -> np.ndarray:
    ev = np.empty(len(pixel), dtype=EVENT_DTYPE)
    ev["pixel"] = pixel
    ev["wall_ps"] = wall_ps
    ev["t_ps"] = t_ps
    return ev


@dataclass
class LifetimeFrame:
    """One read-out of the whole sensor."""

    index: int
    start_ps: int
    end_ps: int
    estimates_ns: np.ndarray  # (32, 32) float, NaN where invalid
    photon_counts: np.ndarray  # (32, 32) int

    def valid_fraction(self) -> float:
        return float(np.mean(np.isfinite(self.estimates_ns)))


@dataclass
class PipelineStats:
    offered: np.ndarray  # per unit
    processed: np.ndarray
    dropped: np.ndarray
    duration_ps: int
    n_frames: int

    @property
    def offered_total(self) -> int:
        return int(self.offered.sum())

    @property
    def processed_total(self) -> int:
        return int(self.processed.sum())

    @property
    def dropped_total(self) -> int:
        return int(self.dropped.sum())

    @property
    def processed_rate_hz(self) -> float:
        return self.processed_total / (self.duration_ps * 1e-12)

    @property
    def drop_fraction(self) -> float:
        return self.dropped_total / self.offered_total if self.offered_total else 0.0

    @property
    def frame_rate_hz(self) -> float:
        return self.n_frames / (self.duration_ps * 1e-12)

    def as_dict(self) -> dict:
        return {
            "offered_per_unit": self.offered.tolist(),
            "processed_per_unit": self.processed.tolist(),
            "dropped_per_unit": self.dropped.tolist(),
            "offered_total": self.offered_total,
            "processed_total": self.processed_total,
            "dropped_total": self.dropped_total,
            "drop_fraction": self.drop_fraction,
            "processed_rate_hz": self.processed_rate_hz,
            "n_frames": self.n_frames,
            "frame_rate_hz": self.frame_rate_hz,
            "duration_ps": self.duration_ps,
        }


def _arbitrate(wall_ps: np.ndarray, units: np.ndarray, latency_ps: int,
               busy_until: np.ndarray) -> np.ndarray:
    """Busy-drop arbitration per unit; mutates busy_until, returns accept mask."""
    wall = wall_ps.tolist()
    unit = units.tolist()
    busy = busy_until.tolist()
    accept = np.zeros(len(wall), dtype=bool)
    acc = accept.tolist()
    for i in range(len(wall)):
        u = unit[i]
        t = wall[i]
        if t >= busy[u]:
            busy[u] = t + latency_ps
            acc[i] = True
    busy_until[:] = busy
    return np.asarray(acc, dtype=bool)


def _advance_states(h_q: np.ndarray, pixels: np.ndarray, t_ps: np.ndarray,
                    qw: quant.QuantizedWeights, counts: np.ndarray):
    """Apply accepted events to their pixels' states, preserving order.

    Events of distinct pixels commute, so the k-th event of every pixel can
    be advanced in one batched integer GRU step.
    """
    if len(pixels) == 0:
        return
    order = np.argsort(pixels, kind="stable")
    px_sorted = pixels[order]
    ts_sorted = t_ps[order]
    uniq, starts, lens = np.unique(px_sorted, return_index=True, return_counts=True)
    counts_add = np.bincount(pixels, minlength=N_PIXELS)
    counts += counts_add
    max_len = int(lens.max())
    x_ns = ts_sorted.astype(np.float64) * 1e-3
    x_q_all = quant.quantize_input(x_ns, qw)
    for k in range(max_len):
        active = lens > k
        rows = uniq[active]
        xk = x_q_all[starts[active] + k]
        h_q[rows] = quant.quantized_gru_step(h_q[rows], xk, qw)


def run_pipeline(
    events: np.ndarray,
    qweights: quant.QuantizedWeights,
    frame_period_ns: float,
    core_latency_ns: float = 1000.0,
    min_photons: int = 1,
    duration_ns: float | None = None,
) -> tuple[list[LifetimeFrame], PipelineStats]:
    """Route a time-ordered event stream through the four compute units.

    ``events`` is an EVENT_DTYPE array sorted by wall time.  Frames cover
    [k*P, (k+1)*P); an event exactly on a boundary belongs to the next
    frame.  Returns the emitted frames and the throughput accounting.
    """
    if events.dtype != EVENT_DTYPE:
        raise ValueError("events must use the pipeline event dtype")
    walls = events["wall_ps"].astype(np.int64)
    if np.any(np.diff(walls) < 0):
        raise ValueError("events must be sorted by wall time")
    if frame_period_ns <= 0:
        raise ValueError("frame period must be positive")
    pixels_all = events["pixel"].astype(np.int64)
    if len(pixels_all) and pixels_all.max() >= N_PIXELS:
        raise ValueError("pixel id out of range")

    frame_ps = int(round(frame_period_ns * 1000))
    latency_ps = int(round(core_latency_ns * 1000))
    if duration_ns is None:
        end_ps = int(walls[-1]) + 1 if len(walls) else frame_ps
    else:
        end_ps = int(round(duration_ns * 1000))
    n_frames = max(1, math.ceil(end_ps / frame_ps))

    units_all = unit_of_pixel(pixels_all)
    busy_until = np.zeros(N_UNITS, dtype=np.int64)
    offered = np.zeros(N_UNITS, dtype=np.int64)
    processed = np.zeros(N_UNITS, dtype=np.int64)

    frames: list[LifetimeFrame] = []
    for f in range(n_frames):
        lo_ps, hi_ps = f * frame_ps, (f + 1) * frame_ps
        lo = np.searchsorted(walls, lo_ps, side="left")
        hi = np.searchsorted(walls, hi_ps, side="left")
        h_q = quant.quantized_zero_state(qweights, N_PIXELS)
        counts = np.zeros(N_PIXELS, dtype=np.int64)
        if hi > lo:
            w = walls[lo:hi]
            px = pixels_all[lo:hi]
            un = units_all[lo:hi]
            offered += np.bincount(un, minlength=N_UNITS)
            accept = _arbitrate(w, un, latency_ps, busy_until)
            processed += np.bincount(un[accept], minlength=N_UNITS)
            _advance_states(h_q, px[accept], events["t_ps"][lo:hi][accept].astype(np.int64),
                            qweights, counts)
        est = quant.quantized_head(h_q, qweights)
        est[counts < min_photons] = np.nan
        est[est < 0] = np.nan
        frames.append(LifetimeFrame(
            index=f,
            start_ps=lo_ps,
            end_ps=hi_ps,
            estimates_ns=est.reshape(SENSOR_SHAPE),
            photon_counts=counts.reshape(SENSOR_SHAPE),
        ))

    stats = PipelineStats(
        offered=offered,
        processed=processed,
        dropped=offered - processed,
        duration_ps=n_frames * frame_ps,
        n_frames=n_frames,
    )
    return frames, stats


# ---------------------------------------------------------------------------
# event stream synthesis


def synthesize_sensor_stream(
    tau_map_ns: np.ndarray,
    rate_map_hz: np.ndarray,
    duration_ns: float,
    seed: int,
    t0_ns: float = 2.0,
    fwhm_ns: float = 0.1673,
    period_ns: float = 50.0,
    background: float = 0.0,
    boundary: str = "reject",
) -> np.ndarray:
    """Per-pixel Poisson photon streams with TDC-quantized timestamps.

    Pixels with zero rate stay silent.  Arrival wall times are uniform order
    statistics over the duration (the Poisson process conditioned on its
    count); within-period timestamps follow each pixel's decay model and are
    floored onto the 50 ps TDC grid.
    """
    tau_map = np.asarray(tau_map_ns, dtype=np.float64).reshape(N_PIXELS)
    rate_map = np.asarray(rate_map_hz, dtype=np.float64).reshape(N_PIXELS)
    if np.any(rate_map < 0):
        raise ValueError("rates must be non-negative")

    chunks = []
    for p in np.nonzero(rate_map > 0)[0]:
        rng = derive_rng(seed, "pixel", int(p))
        n = rng.poisson(rate_map[p] * duration_ns * 1e-9)
        if n == 0:
            continue
        walls = np.sort(rng.random(n)) * duration_ns * 1000.0
        model = sim.mono_exponential(tau_map[p], t0_ns=t0_ns, fwhm_ns=fwhm_ns,
                                     period_ns=period_ns, background=background,
                                     boundary=boundary)
        ts = sim._sample_batch(model, int(n), rng)
        t_ps = (np.floor(ts * 1000.0 / TDC_BIN_PS) * TDC_BIN_PS).astype(np.uint32)
        chunk = make_events(np.full(n, p, dtype=np.uint32),
                            walls.astype(np.uint64), t_ps)
        chunks.append(chunk)

    if not chunks:
        return np.empty(0, dtype=EVENT_DTYPE)
    ev = np.concatenate(chunks)
    order = np.lexsort((ev["pixel"], ev["wall_ps"]))
    return ev[order]


def uniform_load_stream(
    total_rate_hz: float,
    duration_ns: float,
    seed: int = 0,
    period_ns: float = 50.0,
) -> np.ndarray:
    """Evenly spaced offered load, spread uniformly over pixels and units.

    Consecutive events rotate through the four units so every unit sees a
    regular cadence of total_rate/4; timestamps are random within-period
    values on the TDC grid.
    """
    dt_ps = 1e12 / total_rate_hz
    n = int(duration_ns * 1000 // dt_ps)
    i = np.arange(n, dtype=np.int64)
    walls = np.round(i * dt_ps).astype(np.uint64)
    pixels = ((i % N_UNITS) * PIXELS_PER_UNIT + (i // N_UNITS) % PIXELS_PER_UNIT).astype(np.uint32)
    rng = derive_rng(seed, "uniform-load")
    t_ps = (rng.integers(0, int(period_ns * 1000) // TDC_BIN_PS, n) * TDC_BIN_PS).astype(np.uint32)
    return make_events(pixels, walls, t_ps)


def bead_scene(
    tau_bead_ns: float = 5.5,
    radius_px: float = 10.0,
    rate_hz: float = 10_000.0,
    center: tuple[float, float] = (15.5, 15.5),
) -> tuple[np.ndarray, np.ndarray]:
    """A fluorescent disk on a dark background: (tau map, rate map)."""
    yy, xx = np.mgrid[0:SENSOR_SHAPE[0], 0:SENSOR_SHAPE[1]]
    disk = (yy - center[0]) ** 2 + (xx - center[1]) ** 2 <= radius_px**2
    tau_map = np.where(disk, tau_bead_ns, 1.0)
    rate_map = np.where(disk, rate_hz, 0.0)
    return tau_map, rate_map
