"""Bit-exact fixed-point arithmetic and quantized GRU inference.

Values are stored as signed integers with an implicit binary point:
``real = integer / 2**frac_bits``.  Dot products accumulate in widened int64
precision and are rounded once to the activation format (accumulate then
round, like a DSP-block MAC).  Sigmoid and tanh are piecewise-linear tables
over [-8, 8] with power-of-two segment widths, so a lookup is a shift and a
multiply -- every operation on every platform produces identical integers.

Three rounding modes are supported: ``truncate`` (drop bits, i.e. round
toward minus infinity), ``half-up`` (ties away from the floor), and
``convergent`` (ties to even, the mode that tracks floating point best).
Overflow saturates by default and is counted, never silent wraparound unless
requested.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import rnn

ROUNDING_MODES = ("truncate", "half-up", "convergent")
OVERFLOW_MODES = ("saturate", "wrap")


@dataclass(frozen=True)
class FixedPointFormat:
    total_bits: int
    frac_bits: int
    rounding: str = "convergent"
    overflow: str = "saturate"

    def __post_init__(self):
        if self.total_bits not in (8, 16, 32):
            raise ValueError("total bits must be 8, 16 or 32")
        if not 0 <= self.frac_bits < self.total_bits:
            raise ValueError("need 0 <= frac bits < total bits")
        if self.rounding not in ROUNDING_MODES:
            raise ValueError(f"rounding must be one of {ROUNDING_MODES}")
        if self.overflow not in OVERFLOW_MODES:
            raise ValueError(f"overflow must be one of {OVERFLOW_MODES}")

    @property
    def qmin(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def qmax(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def ulp(self) -> float:
        return 2.0 ** (-self.frac_bits)

    def describe(self) -> str:
        return (f"Q{self.total_bits - 1 - self.frac_bits}.{self.frac_bits}"
                f"/{self.rounding}/{self.overflow}")


@dataclass
class QuantStats:
    """Running counters for silent events inside quantized arithmetic."""

    saturations: int = 0
    values: int = 0

    def note(self, saturated: int, total: int):
        self.saturations += int(saturated)
        self.values += int(total)

    @property
    def saturation_fraction(self) -> float:
        return self.saturations / self.values if self.values else 0.0


def _round_scaled(scaled: np.ndarray, mode: str) -> np.ndarray:
    """Round real-valued ``x * 2**frac`` to integers under the given mode."""
    floored = np.floor(scaled)
    if mode == "truncate":
        out = floored
    elif mode == "half-up":
        out = np.floor(scaled + 0.5)
    else:  # convergent: ties to the even neighbor
        r = scaled - floored
        out = floored + (r > 0.5)
        tie = r == 0.5
        if np.any(tie):
            odd = np.mod(floored, 2.0) != 0
            out = out + (tie & odd)
    return out.astype(np.int64)


def quantize_value(x, fmt: FixedPointFormat, stats: QuantStats | None = None):
    """Real value(s) -> fixed-point integer(s) under the format's rounding
    and overflow behavior.  Scalar in, scalar out."""
    scalar = np.ndim(x) == 0
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot quantize non-finite values")
    q = _round_scaled(arr * (1 << fmt.frac_bits), fmt.rounding)
    if fmt.overflow == "saturate":
        clipped = np.clip(q, fmt.qmin, fmt.qmax)
        if stats is not None:
            stats.note(np.count_nonzero(clipped != q), q.size)
        q = clipped
    else:
        span = 1 << fmt.total_bits
        q = np.mod(q - fmt.qmin, span) + fmt.qmin
    return int(q[0]) if scalar else q


def dequantize(q, fmt: FixedPointFormat):
    return np.asarray(q, dtype=np.float64) * fmt.ulp


def shift_round(acc: np.ndarray, shift: int, mode: str) -> np.ndarray:
    """Divide int64 values by 2**shift with the given rounding, exactly."""
    if shift == 0:
        return acc.copy() if isinstance(acc, np.ndarray) else acc
    if shift < 0:
        return acc << (-shift)
    floor = acc >> shift
    if mode == "truncate":
        return floor
    rem = acc & ((1 << shift) - 1)
    half = 1 << (shift - 1)
    if mode == "half-up":
        return floor + (rem >= half)
    # convergent
    up = (rem > half) | ((rem == half) & ((floor & 1) == 1))
    return floor + up


def _saturate(q: np.ndarray, fmt: FixedPointFormat, stats: QuantStats | None) -> np.ndarray:
    if fmt.overflow == "wrap":
        span = 1 << fmt.total_bits
        return np.mod(q - fmt.qmin, span) + fmt.qmin
    clipped = np.clip(q, fmt.qmin, fmt.qmax)
    if stats is not None:
        stats.note(np.count_nonzero(clipped != q), q.size)
    return clipped


# ---------------------------------------------------------------------------
# piecewise-linear activation tables


@dataclass(frozen=True)
class ActivationTable:
    """PWL approximation of sigmoid or tanh on [x_lo, x_hi], fixed point.

    Breakpoint outputs are stored in the activation format.  Segment widths
    are powers of two, so the slope (y[i+1]-y[i]) / width is an exact
    integer at ``slope_frac`` fraction bits: each segment interpolates its
    quantized endpoints exactly, which makes the table continuous, monotone
    for monotone functions, and exactly odd-symmetric for tanh.
    """

    fn: str
    n_segments: int
    x_lo: float
    x_hi: float
    out_fmt: FixedPointFormat
    y_q: np.ndarray  # (n_segments + 1,) int64 at out_fmt.frac_bits
    slope_q: np.ndarray  # (n_segments,) int64 at slope_frac
    slope_frac: int

    @property
    def width(self) -> float:
        return (self.x_hi - self.x_lo) / self.n_segments


DEFAULT_SEGMENTS = {"sigmoid": 128, "tanh": 512}


def _fn_ref(fn: str):
    if fn == "sigmoid":
        return lambda x: 1.0 / (1.0 + np.exp(-x))
    if fn == "tanh":
        return np.tanh
    raise ValueError("fn must be 'sigmoid' or 'tanh'")


def build_activation_table(
    fn: str,
    out_fmt: FixedPointFormat,
    n_segments: int | None = None,
    x_range: tuple[float, float] = (-8.0, 8.0),
) -> ActivationTable:
    if n_segments is None:
        n_segments = DEFAULT_SEGMENTS[fn]
    if n_segments & (n_segments - 1):
        raise ValueError("segment count must be a power of two")
    lo, hi = x_range
    span = hi - lo
    k = int(round(math.log2(n_segments / span)))
    if 2.0**-k * n_segments != span:
        raise ValueError("x range over segments must give power-of-two widths")
    xs = np.linspace(lo, hi, n_segments + 1)
    ref = _fn_ref(fn)
    y_q = _round_scaled(ref(xs) * (1 << out_fmt.frac_bits), "convergent")
    # symmetric clipping (negative rail excluded) keeps tanh exactly odd
    y_q = np.clip(y_q, -out_fmt.qmax, out_fmt.qmax)
    # slope = dy / 2^-k at slope_frac = out frac bits: exactly dy_q << k
    slope_frac = out_fmt.frac_bits
    slope_q = np.diff(y_q) << k if k >= 0 else np.diff(y_q) >> (-k)
    return ActivationTable(fn=fn, n_segments=n_segments, x_lo=lo, x_hi=hi,
                           out_fmt=out_fmt, y_q=y_q, slope_q=slope_q,
                           slope_frac=slope_frac)


def approx_activation(x_q, table: ActivationTable, in_frac: int,
                      rounding: str = "convergent"):
    """Evaluate the table on fixed-point input(s) with ``in_frac`` fraction
    bits; the result is in the table's output format.  Integer-exact."""
    scalar = np.ndim(x_q) == 0
    x = np.atleast_1d(np.asarray(x_q, dtype=np.int64))
    lo_q = int(table.x_lo * (1 << in_frac))
    hi_q = int(table.x_hi * (1 << in_frac))
    x = np.clip(x, lo_q, hi_q)
    shift = in_frac - int(round(math.log2(table.n_segments / (table.x_hi - table.x_lo))))
    if shift >= 0:
        idx = (x - lo_q) >> shift
        idx = np.minimum(idx, table.n_segments - 1)
        dx = x - (lo_q + (idx << shift))  # at in_frac
    else:
        # input grid coarser than the segments: inputs land exactly on
        # segment boundaries
        idx = np.minimum((x - lo_q) << (-shift), table.n_segments - 1)
        dx = np.zeros_like(x)
    acc = table.slope_q[idx] * dx  # frac = slope_frac + in_frac
    acc += table.y_q[idx] << (table.slope_frac + in_frac - table.out_fmt.frac_bits)
    out = shift_round(acc, table.slope_frac + in_frac - table.out_fmt.frac_bits, rounding)
    out = np.clip(out, table.out_fmt.qmin, table.out_fmt.qmax)
    return int(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# quantized model


def _auto_frac(arr: np.ndarray, total_bits: int) -> int:
    """Largest fraction-bit count whose range still holds max(|arr|)."""
    peak = float(np.max(np.abs(arr))) if arr.size else 0.0
    frac = total_bits - 1
    while frac > 0 and peak > ((1 << (total_bits - 1)) - 1) / (1 << frac):
        frac -= 1
    return frac


MAC_MODES = ("widened", "per-product")


@dataclass
class QuantizedWeights:
    """Integer parameters of one GRU + head, with their formats.

    ``mac`` selects the accumulation semantics: ``widened`` keeps each dot
    product exact in int64 and rounds once (DSP-block behavior), while
    ``per-product`` rounds every multiply to the pre-activation format
    before summing, the way scalar fixed-point libraries evaluate.
    """

    config: rnn.RnnConfig
    weight_bits: int
    act_fmt: FixedPointFormat
    rounding: str
    tensors: dict  # name -> int64 ndarray
    formats: dict  # name -> FixedPointFormat (weights; biases are at acc scale)
    bias_frac: dict  # name -> fraction bits of the stored bias integers
    float_hash: str
    mac: str = "widened"
    report: dict = field(default_factory=dict)

    @property
    def pre_frac(self) -> int:
        """Fraction bits of dot-product results: activation bitwidth with
        three integer bits, covering the [-8, 8) table domain."""
        return self.act_fmt.total_bits - 4

    @property
    def sigmoid_table(self) -> ActivationTable:
        return build_activation_table("sigmoid", self.act_fmt)

    @property
    def tanh_table(self) -> ActivationTable:
        return build_activation_table("tanh", self.act_fmt)


def float_weights_hash(weights: rnn.RnnWeights) -> str:
    h = hashlib.sha256()
    h.update(weights.config.variant.encode())
    for name, arr in weights.param_items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(np.asarray(arr, dtype=np.float64)).tobytes())
    return h.hexdigest()


def quantize_model(
    weights: rnn.RnnWeights,
    weight_bits: int = 16,
    act_bits: int = 16,
    rounding: str = "convergent",
    weight_frac: int | None = None,
    act_frac: int | None = None,
    mac: str = "widened",
) -> QuantizedWeights:
    """Quantize all parameters; weight tensors each get the finest format
    that holds their range (or the explicit ``weight_frac``).

    Biases are stored at the accumulator scale of the layer they feed so no
    extra rounding happens when they are added to a dot product.
    """
    if rounding not in ROUNDING_MODES:
        raise ValueError(f"rounding must be one of {ROUNDING_MODES}")
    a_frac = (act_bits - 1) if act_frac is None else act_frac
    act_fmt = FixedPointFormat(act_bits, a_frac, rounding=rounding)

    tensors: dict[str, np.ndarray] = {}
    formats: dict[str, FixedPointFormat] = {}
    bias_frac: dict[str, int] = {}
    report = {"max_abs_error": {}, "saturation_fraction": {}, "warnings": []}

    weight_names = ("w_in", "u_hh", "head_w1", "head_w2")
    for name, arr in weights.param_items():
        arr = np.asarray(arr, dtype=np.float64)
        if name in weight_names:
            frac = _auto_frac(arr, weight_bits) if weight_frac is None else weight_frac
            fmt = FixedPointFormat(weight_bits, frac, rounding=rounding)
            stats = QuantStats()
            q = quantize_value(arr, fmt, stats)
            tensors[name] = np.atleast_1d(q)
            formats[name] = fmt
            err = float(np.max(np.abs(dequantize(q, fmt) - arr)))
            report["max_abs_error"][name] = err
            report["saturation_fraction"][name] = stats.saturation_fraction
            if stats.saturation_fraction > 0.01:
                report["warnings"].append(
                    f"{name}: {stats.saturation_fraction:.1%} of entries saturated")
        else:
            # bias at the accumulator scale of its consumer
            w_for = {"b": "w_in", "head_b1": "head_w1", "head_b2": "head_w2"}[name]
            frac_w = (_auto_frac(np.asarray(dict(weights.param_items())[w_for]), weight_bits)
                      if weight_frac is None else weight_frac)
            acc_frac = frac_w + a_frac
            q = _round_scaled(np.atleast_1d(arr) * (1 << acc_frac), rounding)
            tensors[name] = q
            bias_frac[name] = acc_frac
            report["max_abs_error"][name] = float(
                np.max(np.abs(q / (1 << acc_frac) - arr)))

    return QuantizedWeights(
        config=weights.config,
        weight_bits=weight_bits,
        act_fmt=act_fmt,
        rounding=rounding,
        tensors=tensors,
        formats=formats,
        bias_frac=bias_frac,
        float_hash=float_weights_hash(weights),
        report=report,
    )


# ---------------------------------------------------------------------------
# quantized GRU inference (batched over independent sequences/pixels)


def quantized_zero_state(qw: QuantizedWeights, batch: int = 1) -> np.ndarray:
    return np.zeros((batch, qw.config.hidden_size), dtype=np.int64)


def quantize_input(timestamp_ns, qw: QuantizedWeights, stats: QuantStats | None = None):
    x = np.asarray(timestamp_ns, dtype=np.float64) / qw.config.input_scale_ns
    return quantize_value(x, qw.act_fmt, stats)


def _to_pre(acc: np.ndarray, acc_frac: int, qw: QuantizedWeights,
            stats: QuantStats | None) -> np.ndarray:
    """Round a widened dot-product result to the pre-activation format
    (activation bitwidth, binary point at [-8, 8) range)."""
    pre = shift_round(acc, acc_frac - qw.pre_frac, qw.rounding)
    lo = -(8 << qw.pre_frac)
    hi = (8 << qw.pre_frac) - 1
    clipped = np.clip(pre, lo, hi)
    if stats is not None:
        stats.note(np.count_nonzero(clipped != pre), pre.size)
    return clipped


def quantized_gru_step(
    h_q: np.ndarray,
    x_q: np.ndarray,
    qw: QuantizedWeights,
    stats: QuantStats | None = None,
) -> np.ndarray:
    """One integer GRU update; h_q is (B, H), x_q is (B,) in the activation
    format.

    Each dot product accumulates in widened int64 precision and is rounded
    once into the pre-activation format, whose bitwidth is the activation
    bitwidth: at 16 bits that is Q4.12, at 8 bits Q4.4, which is the
    resolution loss that makes 8-bit activations collapse.
    """
    if qw.config.variant != "gru":
        raise ValueError("quantized inference supports the gru variant only")
    mode = qw.rounding
    hsz = qw.config.hidden_size
    af = qw.act_fmt.frac_bits
    pf = qw.pre_frac
    wf_in = qw.formats["w_in"].frac_bits
    wf_hh = qw.formats["u_hh"].frac_bits
    # exact int64 accumulation bound: product bits + sum growth + alignment
    needed = (qw.weight_bits + qw.act_fmt.total_bits - 2 + math.ceil(math.log2(hsz))
              + abs(wf_hh - wf_in) + 2)
    if needed > 62:
        raise ValueError("accumulator would overflow int64 for these formats")
    sig = qw.sigmoid_table
    tanh_t = qw.tanh_table

    w_in = qw.tensors["w_in"]
    b = qw.tensors["b"]
    u_hh = qw.tensors["u_hh"]
    b_frac = qw.bias_frac["b"]  # = wf_in + af

    # hidden contribution at wf_hh + af, input contribution at wf_in + af;
    # align everything on a common accumulator scale
    acc_frac = max(wf_hh + af, wf_in + af)
    hu = h_q @ u_hh.T  # (B, 3H) at wf_hh + af
    hu = hu << (acc_frac - (wf_hh + af))
    xc = x_q[:, None] * w_in[None, :] + (b[None, :] << (b_frac - (wf_in + af)))
    xc = xc << (acc_frac - (wf_in + af))

    pre_r = _to_pre(xc[:, :hsz] + hu[:, :hsz], acc_frac, qw, stats)
    pre_z = _to_pre(xc[:, hsz : 2 * hsz] + hu[:, hsz : 2 * hsz], acc_frac, qw, stats)
    r = approx_activation(pre_r, sig, pf, mode)
    z = approx_activation(pre_z, sig, pf, mode)

    # candidate gate: the inner dot product lands in the pre-activation
    # format, is gated by r, then joins the input contribution
    hu_n = _to_pre(hu[:, 2 * hsz :], acc_frac, qw, stats)
    n_acc = (r * hu_n) << max(0, acc_frac - (af + pf))
    n_acc += xc[:, 2 * hsz :] << max(0, (af + pf) - acc_frac)
    pre_n = _to_pre(n_acc, max(acc_frac, af + pf), qw, stats)
    n = approx_activation(pre_n, tanh_t, pf, mode)

    # h' = n + z * (h - n), rounded once back to the activation format
    acc = (n << af) + z * (h_q - n)
    h_new = shift_round(acc, af, mode)
    return _saturate(h_new, qw.act_fmt, stats)


def quantized_head(h_q: np.ndarray, qw: QuantizedWeights,
                   stats: QuantStats | None = None) -> np.ndarray:
    """Integer head: sigmoid hidden layer, linear output; returns ns."""
    mode = qw.rounding
    af = qw.act_fmt.frac_bits
    pf = qw.pre_frac
    wf1 = qw.formats["head_w1"].frac_bits
    wf2 = qw.formats["head_w2"].frac_bits
    sig = qw.sigmoid_table

    acc1 = h_q @ qw.tensors["head_w1"].T + (
        qw.tensors["head_b1"][None, :] << (qw.bias_frac["head_b1"] - (wf1 + af)))
    u = approx_activation(_to_pre(acc1, wf1 + af, qw, stats), sig, pf, mode)
    acc2 = u @ qw.tensors["head_w2"] + (
        qw.tensors["head_b2"][0] << (qw.bias_frac["head_b2"] - (wf2 + af)))
    y_q = shift_round(acc2, wf2, mode)  # down to activation frac
    y_q = _saturate(y_q, qw.act_fmt, stats)
    return dequantize(y_q, qw.act_fmt) * qw.config.output_scale_ns


def quantized_stream(
    timestamps_ns: np.ndarray,
    qw: QuantizedWeights,
    stats: QuantStats | None = None,
    return_state: bool = False,
):
    """Run full sequences (B, T) through the integer GRU; returns estimates
    in ns (and the final integer states when asked)."""
    ts = np.atleast_2d(np.asarray(timestamps_ns, dtype=np.float64))
    B, T = ts.shape
    h = quantized_zero_state(qw, B)
    x_all = quantize_input(ts, qw, stats)
    for t in range(T):
        h = quantized_gru_step(h, x_all[:, t], qw, stats)
    est = quantized_head(h, qw, stats)
    if return_state:
        return est, h
    return est
