"""From-scratch training of the recurrent estimators.

The loss is a weighted mean squared percentage error over the per-timestep
head predictions: later photons carry more weight through a sigmoid ramp
centered at a quarter of the sequence, so the network is rewarded for
refining its estimate as evidence accumulates.  Gradients are exact
backpropagation through the fully unrolled sequence; the optimizer is Adam
with a step-decayed learning rate, and the returned weights are the
checkpoint with the lowest evaluation loss.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import rnn, sim
from .rng import derive_rng


class TrainingDiverged(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class TrainConfig:
    variant: str = "gru"
    hidden_size: int = 16
    head_hidden: int | None = None
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.001
    decay: float = 0.9
    decay_every: int = 5
    loss_pivot_fraction: float = 0.25
    seed: int = 0
    max_photons: int | None = None  # truncate training sequences, None = full
    clip_norm: float | None = None
    # conditioning of the optimization problem: predictions are normalized by
    # a scale comparable to the lifetimes themselves, and the input weights
    # start with extra gain because inputs t/T concentrate well below 1
    output_scale_ns: float = 10.0
    input_init_gain: float = 8.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must be in (0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")

    def learning_rate_at(self, epoch: int) -> float:
        """Step decay: constant within each block of ``decay_every`` epochs."""
        return self.learning_rate * self.decay ** (epoch // self.decay_every)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    eval_loss: list = field(default_factory=list)
    eval_mape: list = field(default_factory=list)
    learning_rate: list = field(default_factory=list)
    wall_clock_s: list = field(default_factory=list)
    best_epoch: int = -1
    adam: dict = field(default_factory=dict)

    @property
    def n_epochs(self) -> int:
        return len(self.train_loss)


# ---------------------------------------------------------------------------
# loss


def loss_weights(n_timesteps: int, pivot_fraction: float = 0.25) -> np.ndarray:
    """Per-timestep loss weights: sigmoid ramp, normalized to sum to one."""
    if n_timesteps < 1:
        raise ValueError("need at least one timestep")
    i = np.arange(1, n_timesteps + 1, dtype=np.float64)
    pivot = pivot_fraction * n_timesteps
    raw = 1.0 / (1.0 + np.exp(-(i - pivot) / pivot))
    return raw / raw.sum()


def weighted_mspe(predictions_ns, truth_ns: float, weights=None) -> float:
    """Weighted mean squared percentage error of one sample's predictions."""
    preds = np.asarray(predictions_ns, dtype=np.float64)
    if truth_ns == 0:
        raise ValueError("truth lifetime must be nonzero")
    w = loss_weights(preds.size) if weights is None else np.asarray(weights)
    if w.size != preds.size:
        raise ValueError("weights and predictions must have equal length")
    rel = (preds - truth_ns) / truth_ns
    return float(np.sum(w * rel * rel))


# ---------------------------------------------------------------------------
# initialization


def _orthogonal(rng: np.random.Generator, size: int) -> np.ndarray:
    a = rng.normal(size=(size, size))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


def _xavier(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_weights(config: rnn.RnnConfig, seed: int, input_gain: float = 1.0) -> rnn.RnnWeights:
    """Orthogonal hidden blocks, Xavier-uniform input and head, zero biases
    (LSTM forget gate bias starts at one).

    ``input_gain`` rescales the input weights away from the unit-variance
    assumption behind Xavier; the trainer uses it because normalized
    timestamps concentrate far below one.
    """
    rng = derive_rng(seed, "init")
    g, h, hh = config.n_gates, config.hidden_size, config.head_hidden
    u_hh = np.vstack([_orthogonal(rng, h) for _ in range(g)])
    w_in = _xavier(rng, g * h, 1)[:, 0] * input_gain
    b = np.zeros(g * h)
    if config.variant == "lstm":
        b[h : 2 * h] = 1.0  # forget gate
    head_w1 = _xavier(rng, hh, h)
    head_b1 = np.zeros(hh)
    head_w2 = _xavier(rng, 1, hh)[0]
    return rnn.RnnWeights(
        config=config,
        w_in=w_in,
        b=b,
        u_hh=u_hh,
        head_w1=head_w1,
        head_b1=head_b1,
        head_w2=head_w2,
        head_b2=0.0,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# exact gradients through the unrolled network


def loss_and_grads(weights: rnn.RnnWeights, batch_ns: np.ndarray, truths_ns: np.ndarray,
                   want_grads: bool = True, pivot_fraction: float = 0.25):
    """Weighted-MSPE batch loss and its exact parameter gradients."""
    cfg = weights.config
    x = np.asarray(batch_ns, dtype=np.float64) / cfg.input_scale_ns
    y = np.asarray(truths_ns, dtype=np.float64) / cfg.output_scale_ns
    B, T = x.shape
    hsz = cfg.hidden_size
    w = loss_weights(T, pivot_fraction)

    hs, caches = rnn.forward_sequences(weights, x)
    y_hat, u = rnn.head_forward(hs, weights)  # (B, T), (B, T, HH)
    rel = (y_hat - y[:, None]) / y[:, None]
    loss = float(np.mean(np.sum(w[None, :] * rel * rel, axis=1)))
    if not want_grads:
        return loss, None

    dy = (2.0 / B) * w[None, :] * rel / y[:, None]  # (B, T)

    # head backward over all timesteps at once (flattened to BLAS matmuls)
    hh = cfg.head_hidden
    u_flat = u.reshape(B * T, hh)
    hs_flat = hs.reshape(B * T, hsz)
    du = dy[:, :, None] * weights.head_w2[None, None, :]
    dpre1 = du * u * (1.0 - u)
    dpre1_flat = dpre1.reshape(B * T, hh)
    grads = {
        "head_w2": dy.ravel() @ u_flat,
        "head_b2": float(dy.sum()),
        "head_w1": dpre1_flat.T @ hs_flat,
        "head_b1": dpre1_flat.sum(axis=0),
    }
    dh_all = (dpre1_flat @ weights.head_w1).reshape(B, T, hsz)

    h_prev_all = np.concatenate([np.zeros((B, 1, hsz)), hs[:, :-1]], axis=1)
    dh_next = np.zeros((B, hsz))

    if cfg.variant == "simple":
        d_pre = np.empty((B, T, hsz))
        for t in range(T - 1, -1, -1):
            dh = dh_all[:, t] + dh_next
            dpre = dh * (1.0 - hs[:, t] ** 2)
            d_pre[:, t] = dpre
            dh_next = dpre @ weights.u_hh
        m_all = d_pre
    elif cfg.variant == "gru":
        r, z, n, hu_n = caches["r"], caches["z"], caches["n"], caches["hu_n"]
        d_pre = np.empty((B, T, 3 * hsz))
        m_all = np.empty((B, T, 3 * hsz))
        for t in range(T - 1, -1, -1):
            dh = dh_all[:, t] + dh_next
            rt, zt, nt = r[:, t], z[:, t], n[:, t]
            dz = dh * (h_prev_all[:, t] - nt)
            dn = dh * (1.0 - zt)
            dpre_n = dn * (1.0 - nt * nt)
            dpre_r = dpre_n * hu_n[:, t] * rt * (1.0 - rt)
            m_t = m_all[:, t]
            m_t[:, :hsz] = dpre_r
            m_t[:, hsz : 2 * hsz] = dz * zt * (1.0 - zt)
            m_t[:, 2 * hsz :] = dpre_n * rt
            d_pre[:, t, :hsz] = dpre_r
            d_pre[:, t, hsz : 2 * hsz] = m_t[:, hsz : 2 * hsz]
            d_pre[:, t, 2 * hsz :] = dpre_n
            dh_next = dh * zt + m_t @ weights.u_hh
    else:  # lstm
        i, f, g = caches["i"], caches["f"], caches["g"]
        o, tc, c_prev = caches["o"], caches["tc"], caches["c_prev"]
        d_pre = np.empty((B, T, 4 * hsz))
        dc_next = np.zeros((B, hsz))
        for t in range(T - 1, -1, -1):
            dh = dh_all[:, t] + dh_next
            it, ft, gt, ot, tct = i[:, t], f[:, t], g[:, t], o[:, t], tc[:, t]
            do = dh * tct
            dc = dc_next + dh * ot * (1.0 - tct * tct)
            d_pre[:, t, :hsz] = dc * gt * it * (1.0 - it)
            d_pre[:, t, hsz : 2 * hsz] = dc * c_prev[:, t] * ft * (1.0 - ft)
            d_pre[:, t, 2 * hsz : 3 * hsz] = dc * it * (1.0 - gt * gt)
            d_pre[:, t, 3 * hsz :] = do * ot * (1.0 - ot)
            dc_next = dc * ft
            dh_next = d_pre[:, t] @ weights.u_hh
        m_all = d_pre

    g_all = m_all.shape[2]
    grads["u_hh"] = m_all.reshape(B * T, g_all).T @ h_prev_all.reshape(B * T, hsz)
    d_pre_flat = d_pre.reshape(B * T, d_pre.shape[2])
    grads["b"] = d_pre_flat.sum(axis=0)
    grads["w_in"] = d_pre_flat.T @ x.ravel()
    return loss, grads


def bptt_gradients(weights: rnn.RnnWeights, sequences_ns: np.ndarray, truths_ns: np.ndarray,
                   pivot_fraction: float = 0.25):
    """Exact batch-averaged gradients of the weighted MSPE loss.

    Raises TrainingDiverged when the forward pass produces non-finite values.
    """
    sequences_ns = np.atleast_2d(np.asarray(sequences_ns, dtype=np.float64))
    truths_ns = np.atleast_1d(np.asarray(truths_ns, dtype=np.float64))
    if sequences_ns.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    loss, grads = loss_and_grads(weights, sequences_ns, truths_ns, pivot_fraction=pivot_fraction)
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss}", None)
    return loss, grads


# ---------------------------------------------------------------------------
# Adam


class Adam:
    """Standard bias-corrected Adam over the named parameter arrays."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, weights: rnn.RnnWeights, grads: dict, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, _ in weights.param_items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(np.asarray(g, dtype=np.float64))
                self.v[name] = np.zeros_like(np.asarray(g, dtype=np.float64))
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * np.square(g)
            update = lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            if name == "head_b2":
                weights.head_b2 = float(weights.head_b2 - update)
            else:
                getattr(weights, name)[...] -= update


def _clip_gradients(grads: dict, max_norm: float):
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g)))
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * scale
    return grads


# ---------------------------------------------------------------------------
# training loop


def _eval_pass(weights, x_ns, tau_ns, pivot_fraction, chunk=512):
    """Eval loss and final-emission MAPE, computed in forward-only chunks."""
    losses = []
    mape_terms = []
    for lo in range(0, x_ns.shape[0], chunk):
        xs = x_ns[lo : lo + chunk]
        ys = tau_ns[lo : lo + chunk]
        loss, _ = loss_and_grads(weights, xs, ys, want_grads=False,
                                 pivot_fraction=pivot_fraction)
        losses.append(loss * xs.shape[0])
        est = rnn.final_estimates(weights, xs)
        mape_terms.append(np.abs(est - ys) / ys)
    mape = float(np.concatenate(mape_terms).mean())
    return sum(losses) / x_ns.shape[0], mape


def train(config: TrainConfig, dataset: sim.Dataset) -> tuple[rnn.RnnWeights, TrainHistory]:
    """Train a fresh model on the dataset's train split, select the
    checkpoint with the best eval loss, and return it with the history."""
    rnn_cfg = rnn.RnnConfig(
        variant=config.variant,
        hidden_size=config.hidden_size,
        head_hidden=config.head_hidden,
        input_scale_ns=dataset.config.period_ns,
        output_scale_ns=config.output_scale_ns,
    )
    weights = init_weights(rnn_cfg, config.seed, input_gain=config.input_init_gain)
    weights.dataset_hash = None  # set by callers that know the file hash
    adam = Adam(config.adam_beta1, config.adam_beta2, config.adam_eps)
    history = TrainHistory(adam={"beta1": config.adam_beta1,
                                 "beta2": config.adam_beta2,
                                 "eps": config.adam_eps})

    idx_train, idx_eval, _ = dataset.split_indices()
    n_photons = dataset.config.photons_per_sample
    if config.max_photons is not None:
        n_photons = min(n_photons, config.max_photons)
    x_train = dataset.timestamps_ns[idx_train, :n_photons]
    y_train = dataset.tau_ns[idx_train]
    x_eval = dataset.timestamps_ns[idx_eval, :n_photons]
    y_eval = dataset.tau_ns[idx_eval]

    best = weights.copy()
    best_loss = np.inf
    start = time.perf_counter()

    for epoch in range(config.epochs):
        lr = config.learning_rate_at(epoch)
        order = derive_rng(config.seed, "shuffle", epoch).permutation(len(idx_train))
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, len(order), config.batch_size):
            sel = order[lo : lo + config.batch_size]
            loss, grads = loss_and_grads(weights, x_train[sel], y_train[sel],
                                         pivot_fraction=config.loss_pivot_fraction)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss diverged at epoch {epoch}", history)
            if config.clip_norm is not None:
                grads = _clip_gradients(grads, config.clip_norm)
            adam.step(weights, grads, lr)
            epoch_loss += loss
            n_batches += 1

        eval_loss, eval_mape = _eval_pass(weights, x_eval, y_eval,
                                          config.loss_pivot_fraction)
        history.train_loss.append(epoch_loss / max(n_batches, 1))
        history.eval_loss.append(eval_loss)
        history.eval_mape.append(eval_mape)
        history.learning_rate.append(lr)
        history.wall_clock_s.append(time.perf_counter() - start)
        if eval_loss < best_loss:
            best_loss = eval_loss
            best = weights.copy()
            history.best_epoch = epoch

    return best, history
