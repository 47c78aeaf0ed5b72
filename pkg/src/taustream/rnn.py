"""Streaming recurrent lifetime estimators (floating-point reference).

Three single-layer cell variants (simple RNN, GRU, LSTM) consume one photon
timestamp per step, normalized by the repetition period so every input lies
in [0, 1).  A two-layer fully connected head (sigmoid hidden, linear output)
maps the hidden state to a lifetime normalized the same way; multiplying by
the output scale returns nanoseconds.

Gate conventions (single bias vector per gate, one block per gate stacked
row-wise in the weight matrices):

    simple:  h' = tanh(W x + U h + b)
    gru:     r = sig(W_r x + U_r h + b_r)
             z = sig(W_z x + U_z h + b_z)
             n = tanh(W_n x + b_n + r * (U_n h))
             h' = n + z * (h - n)
    lstm:    i, f, o = sig(...),  g = tanh(...)
             c' = f * c + i * g,  h' = o * tanh(c')

All state is float64.  Fixed-point behavior lives in the quant module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

VARIANTS = ("simple", "gru", "lstm")
_GATES = {"simple": 1, "gru": 3, "lstm": 4}


@dataclass(frozen=True)
class RnnConfig:
    variant: str
    hidden_size: int
    head_hidden: int | None = None
    input_scale_ns: float = 50.0
    output_scale_ns: float = 50.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.hidden_size < 1:
            raise ValueError("hidden size must be positive")
        if self.head_hidden is None:
            object.__setattr__(self, "head_hidden", self.hidden_size)
        if self.input_scale_ns <= 0 or self.output_scale_ns <= 0:
            raise ValueError("scales must be positive")

    @property
    def n_gates(self) -> int:
        return _GATES[self.variant]


@dataclass
class RnnWeights:
    """All parameters of one cell plus the regression head."""

    config: RnnConfig
    w_in: np.ndarray  # (G*H,)  input weights, input size is 1
    b: np.ndarray  # (G*H,)  one bias vector per gate
    u_hh: np.ndarray  # (G*H, H) hidden-to-hidden, gate blocks stacked
    head_w1: np.ndarray  # (HH, H)
    head_b1: np.ndarray  # (HH,)
    head_w2: np.ndarray  # (HH,)
    head_b2: float
    seed: int | None = None
    dataset_hash: str | None = None

    def __post_init__(self):
        g, h, hh = self.config.n_gates, self.config.hidden_size, self.config.head_hidden
        if self.w_in.shape != (g * h,) or self.b.shape != (g * h,):
            raise ValueError("input weight / bias shape mismatch")
        if self.u_hh.shape != (g * h, h):
            raise ValueError("hidden weight shape mismatch")
        if self.head_w1.shape != (hh, h) or self.head_b1.shape != (hh,):
            raise ValueError("head layer-1 shape mismatch")
        if self.head_w2.shape != (hh,):
            raise ValueError("head layer-2 shape mismatch")
        for arr in (self.w_in, self.b, self.u_hh, self.head_w1, self.head_b1, self.head_w2):
            if not np.all(np.isfinite(arr)):
                raise ValueError("weights must be finite")

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("w_in", self.w_in),
            ("b", self.b),
            ("u_hh", self.u_hh),
            ("head_w1", self.head_w1),
            ("head_b1", self.head_b1),
            ("head_w2", self.head_w2),
            ("head_b2", self.head_b2),
        ]

    def copy(self) -> "RnnWeights":
        return RnnWeights(
            config=self.config,
            w_in=self.w_in.copy(),
            b=self.b.copy(),
            u_hh=self.u_hh.copy(),
            head_w1=self.head_w1.copy(),
            head_b1=self.head_b1.copy(),
            head_w2=self.head_w2.copy(),
            head_b2=float(self.head_b2),
            seed=self.seed,
            dataset_hash=self.dataset_hash,
        )


@dataclass
class HiddenState:
    h: np.ndarray
    c: np.ndarray | None
    count: int = 0


def init_state(config: RnnConfig) -> HiddenState:
    """Zero state, zero photon counter."""
    h = np.zeros(config.hidden_size)
    c = np.zeros(config.hidden_size) if config.variant == "lstm" else None
    return HiddenState(h=h, c=c, count=0)


# ---------------------------------------------------------------------------
# batched cell steps (batch axis first; scalar streaming uses batch size 1).
# ``xc`` is the precomputed input contribution x * w_in + b of shape (B, G*H).


def input_contrib(x_norm: np.ndarray, w: RnnWeights) -> np.ndarray:
    return x_norm[..., None] * w.w_in + w.b


def step_simple(h, xc, w: RnnWeights):
    h_new = np.tanh(xc + h @ w.u_hh.T)
    return h_new, (h_new,)


def step_gru(h, xc, w: RnnWeights):
    hsz = w.config.hidden_size
    hu = h @ w.u_hh.T
    r = sigmoid(xc[:, :hsz] + hu[:, :hsz])
    z = sigmoid(xc[:, hsz : 2 * hsz] + hu[:, hsz : 2 * hsz])
    hu_n = hu[:, 2 * hsz :]
    n = np.tanh(xc[:, 2 * hsz :] + r * hu_n)
    h_new = n + z * (h - n)
    return h_new, (r, z, n, hu_n)


def step_lstm(h, c, xc, w: RnnWeights):
    hsz = w.config.hidden_size
    pre = xc + h @ w.u_hh.T
    i = sigmoid(pre[:, :hsz])
    f = sigmoid(pre[:, hsz : 2 * hsz])
    g = np.tanh(pre[:, 2 * hsz : 3 * hsz])
    o = sigmoid(pre[:, 3 * hsz :])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (i, f, g, o, tc)


def cell_step(state: HiddenState, timestamp_ns: float, weights: RnnWeights) -> HiddenState:
    """Advance the hidden state by one photon."""
    x = np.array([timestamp_ns / weights.config.input_scale_ns])
    xc = input_contrib(x, weights)
    h = state.h[None, :]
    if weights.config.variant == "simple":
        h_new, _ = step_simple(h, xc, weights)
        return HiddenState(h=h_new[0], c=None, count=state.count + 1)
    if weights.config.variant == "gru":
        h_new, _ = step_gru(h, xc, weights)
        return HiddenState(h=h_new[0], c=None, count=state.count + 1)
    h_new, c_new, _ = step_lstm(h, state.c[None, :], xc, weights)
    return HiddenState(h=h_new[0], c=c_new[0], count=state.count + 1)


def head_forward(h_mat: np.ndarray, w: RnnWeights):
    """Head on a (..., H) stack of hidden states; returns normalized outputs."""
    u = sigmoid(h_mat @ w.head_w1.T + w.head_b1)
    y = u @ w.head_w2 + w.head_b2
    return y, u


def head_predict(state: HiddenState, weights: RnnWeights) -> float:
    """Lifetime estimate (ns) read out from the current hidden state."""
    y, _ = head_forward(state.h[None, :], weights)
    return float(y[0]) * weights.config.output_scale_ns


def forward_sequences(weights: RnnWeights, x_norm: np.ndarray):
    """Full forward pass over (B, T) normalized inputs.

    Returns the stacked hidden states (B, T, H) and the per-step caches the
    trainer needs for backpropagation through time.
    """
    B, T = x_norm.shape
    hsz = weights.config.hidden_size
    variant = weights.config.variant
    hs = np.empty((B, T, hsz))
    h = np.zeros((B, hsz))
    xc = input_contrib(x_norm, weights)  # (B, T, G*H)

    if variant == "simple":
        for t in range(T):
            h, _ = step_simple(h, xc[:, t], weights)
            hs[:, t] = h
        return hs, {}

    if variant == "gru":
        rs = np.empty((B, T, hsz))
        zs = np.empty((B, T, hsz))
        ns = np.empty((B, T, hsz))
        hun = np.empty((B, T, hsz))
        for t in range(T):
            h, (r, z, n, hu_n) = step_gru(h, xc[:, t], weights)
            hs[:, t] = h
            rs[:, t], zs[:, t], ns[:, t], hun[:, t] = r, z, n, hu_n
        return hs, {"r": rs, "z": zs, "n": ns, "hu_n": hun}

    c = np.zeros((B, hsz))
    gates = {k: np.empty((B, T, hsz)) for k in ("i", "f", "g", "o", "tc", "c_prev")}
    for t in range(T):
        gates["c_prev"][:, t] = c
        h, c, (i, f, g, o, tc) = step_lstm(h, c, xc[:, t], weights)
        hs[:, t] = h
        gates["i"][:, t], gates["f"][:, t], gates["g"][:, t] = i, f, g
        gates["o"][:, t], gates["tc"][:, t] = o, tc
    return hs, gates


def final_estimates(weights: RnnWeights, timestamps_ns: np.ndarray) -> np.ndarray:
    """Batched end-of-sequence estimates in ns for (B, T) timestamp rows."""
    x = np.asarray(timestamps_ns, dtype=np.float64) / weights.config.input_scale_ns
    hs, _ = forward_sequences(weights, x)
    y, _ = head_forward(hs[:, -1], weights)
    return y * weights.config.output_scale_ns


def stream_estimate(seq, weights: RnnWeights, emit_every: int = 0) -> list[tuple[int, float]]:
    """Fold the cell over a sequence, emitting head read-outs along the way.

    Emits after every ``emit_every`` photons (0 means only at the end); the
    final emission is always present and is the sample's estimate.
    """
    ts = seq.timestamps_ns if hasattr(seq, "timestamps_ns") else np.asarray(seq, dtype=np.float64)
    if ts.size == 0:
        raise ValueError("empty sequence")
    state = init_state(weights.config)
    out: list[tuple[int, float]] = []
    for k, t in enumerate(ts, start=1):
        state = cell_step(state, float(t), weights)
        if emit_every > 0 and k % emit_every == 0 and k < ts.size:
            out.append((k, head_predict(state, weights)))
    out.append((int(ts.size), head_predict(state, weights)))
    return out
