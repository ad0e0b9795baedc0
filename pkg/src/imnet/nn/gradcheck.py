"""Finite-difference verification of network parameter gradients."""

import numpy as np

from .network import Network


def grad_check(net: Network, x, loss_fn, epsilon=1e-5, n_coords=100, rng=None) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn(output) -> (loss, dloss/doutput)``. Up to ``n_coords`` parameter
    coordinates are sampled uniformly over all parameters.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    out = net.forward(x, keep=True)
    _, g = loss_fn(out)
    _, grads = net.backward(g)

    names = list(net.params)
    sizes = np.array([net.params[n].size for n in names])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in picks:
        j = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, idx = names[j], int(flat - offsets[j])
        p = net.params[name].reshape(-1)
        orig = p[idx]
        p[idx] = orig + epsilon
        plus, _ = loss_fn(net.forward(x))
        p[idx] = orig - epsilon
        minus, _ = loss_fn(net.forward(x))
        p[idx] = orig
        numeric = (plus - minus) / (2 * epsilon)
        analytic = grads[name].reshape(-1)[idx]
        err = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-7)
        worst = max(worst, err)
    return worst
