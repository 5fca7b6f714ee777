"""Central finite-difference gradient checks shared by the test modules."""

import numpy as np

from forecastbench import autograd as ag


def gradcheck(loss_fn, weights: dict, n_probe: int = 20, eps: float = 1e-5, seed: int = 0) -> float:
    """Largest relative error between analytic and numeric gradients on random coordinates.

    eps=1e-5 balances O(eps^2) truncation against round-off of order 1e-16/eps.
    """
    params = {k: ag.parameter(v.copy()) for k, v in weights.items()}
    loss_fn(params).backward()
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}

    rng = np.random.default_rng(seed)
    keys = sorted(weights)
    sizes = np.array([weights[k].size for k in keys])
    worst = 0.0
    for _ in range(n_probe):
        key = keys[rng.choice(len(keys), p=sizes / sizes.sum())]
        idx = np.unravel_index(rng.integers(weights[key].size), weights[key].shape)

        def at(delta):
            shifted = {k: v.copy() for k, v in weights.items()}
            shifted[key][idx] += delta
            with ag.no_grad():
                return loss_fn({k: ag.Tensor(v) for k, v in shifted.items()}).item()

        numeric = (at(eps) - at(-eps)) / (2 * eps)
        a = analytic[key][idx]
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-6))
    return worst
