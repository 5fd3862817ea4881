"""Independent reference computations used by the unit and acceptance tests.

These are deliberately naive: direct sums, pairwise loops and central finite
differences, sharing no code with the package implementations they check.
"""

import itertools

import numpy as np

from hscrl.ppo import Batch, TrainConfig, init_params, ppo_loss


def gae_brute(rewards, values, gamma, lam):
    """adv_t = sum_l (gamma*lam)^l * delta_{t+l}, with a zero value after the last step."""
    n = len(rewards)
    v = list(values) + [0.0]
    deltas = [rewards[t] + gamma * v[t + 1] - v[t] for t in range(n)]
    return [sum((gamma * lam) ** l * deltas[t + l] for l in range(n - t)) for t in range(n)]


def dominates(a, b):
    """Maximize column 0, minimize column 1."""
    return a[0] >= b[0] and a[1] <= b[1] and (a[0] > b[0] or a[1] < b[1])


def brute_fronts(points):
    """Peel nondominated layers with an explicit pairwise scan each round."""
    remaining = set(range(len(points)))
    fronts = []
    while remaining:
        layer = {i for i in remaining
                 if not any(dominates(points[j], points[i]) for j in remaining if j != i)}
        fronts.append(layer)
        remaining -= layer
    return fronts


def toy_problem(seed, obs_size=3, n_bits=2, hidden=4, n=16):
    rng = np.random.default_rng(seed)
    params = init_params(obs_size, n_bits, hidden, rng, output_gain=1.0)
    for w in params.weights.values():
        w += rng.normal(0, 0.3, w.shape)
    obs = rng.normal(size=(n, obs_size))
    actions = (rng.random((n, n_bits)) < 0.5).astype(np.float64)
    adv = rng.normal(size=n)
    batch = Batch(
        obs=obs,
        actions=actions,
        # old log-probs spread out so that some ratios land outside the clip band
        old_log_probs=rng.normal(-1.4, 0.4, size=n),
        advantages=(adv - adv.mean()) / adv.std() if n > 1 else adv,
        returns=rng.normal(size=n),
    )
    return params, batch


def finite_difference_error(seed, h=1e-5, config=None):
    """Max elementwise relative error of analytic vs central-difference gradients."""
    config = config or TrainConfig()
    params, batch = toy_problem(seed)
    _, grads, _ = ppo_loss(params, batch, config)
    worst = 0.0
    for key, w in params.weights.items():
        for idx in itertools.product(*map(range, w.shape)):
            orig = w[idx]
            w[idx] = orig + h
            up = ppo_loss(params, batch, config)[0]
            w[idx] = orig - h
            down = ppo_loss(params, batch, config)[0]
            w[idx] = orig
            numeric = (up - down) / (2 * h)
            analytic = grads[key][idx]
            rel = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-6)
            worst = max(worst, rel)
    return worst
