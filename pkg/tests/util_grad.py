"""Finite-difference gradient oracle shared by trainer and acceptance tests."""

import numpy as np

from taustream import trainer


def finite_difference_grads(weights, batch_ns, truths_ns, eps=1e-5):
    """Central differences of the batch loss with respect to every parameter."""

    def loss_value():
        loss, _ = trainer.loss_and_grads(weights, batch_ns, truths_ns, want_grads=False)
        return loss

    out = {}
    for name, arr in weights.param_items():
        if name == "head_b2":
            orig = weights.head_b2
            weights.head_b2 = orig + eps
            up = loss_value()
            weights.head_b2 = orig - eps
            down = loss_value()
            weights.head_b2 = orig
            out[name] = (up - down) / (2 * eps)
            continue
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = loss_value()
            flat[j] = orig - eps
            down = loss_value()
            flat[j] = orig
            gflat[j] = (up - down) / (2 * eps)
        out[name] = g
    return out


def max_relative_error(analytic, numeric):
    """Worst-case relative disagreement across all parameters."""
    worst = 0.0
    for name, g in analytic.items():
        a = np.asarray(g, dtype=np.float64).ravel()
        b = np.asarray(numeric[name], dtype=np.float64).ravel()
        denom = np.maximum(np.abs(a) + np.abs(b), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst
