"""Self-checks behind ``negrec verify``: gradient and softmax/loss properties."""

from __future__ import annotations

import math

import numpy as np

from negrec.model import encode_state, init_params, score, softmax, softmax_prob
from negrec.objective import (
    FULL,
    LabeledExample,
    Sampled,
    Sign,
    batch_loss,
    batch_gradients,
    finite_diff_check,
    negative_term,
    positive_term,
)
from negrec.simenv import Event


def random_events(rng: np.random.Generator, num_items: int, length: int) -> tuple[Event, ...]:
    out = []
    for t in range(length):
        disliked = bool(rng.random() < 0.3)
        out.append(
            Event(
                item_id=int(rng.integers(num_items)),
                dwell=float(rng.random()),
                skipped=bool(rng.random() < 0.3),
                disliked=disliked,
                liked=(not disliked) and bool(rng.random() < 0.3),
                step=t,
            )
        )
    return tuple(out)


def random_instance(seed: int, num_items: int = 20, dim: int = 8, max_len: int = 5, batch_size: int = 6):
    """A small batch with both label signs, and params drawn at unit scale.

    Prefix-sharing examples are included so the packed path is exercised.
    """
    rng = np.random.default_rng([seed, 0xC4EC])
    params = init_params(num_items, dim, seed=int(rng.integers(2**31)), scale=0.5)
    traj = random_events(rng, num_items, max_len)
    batch = []
    for i in range(batch_size):
        if i < 2:
            hist = traj[: int(rng.integers(0, max_len + 1))]
        else:
            hist = random_events(rng, num_items, int(rng.integers(0, max_len + 1)))
        sign = Sign.POSITIVE if i % 2 == 0 else Sign.NEGATIVE
        batch.append(LabeledExample(hist, int(rng.integers(num_items)), sign, float(rng.uniform(0.3, 2.0))))
    return batch, params


def gradient_suite(seed: int = 0, instances: int = 20, epsilon: float = 1e-5) -> list[float]:
    return [finite_diff_check(*random_instance(seed * 1000 + i), epsilon=epsilon, seed=i) for i in range(instances)]


def property_suite(seed: int = 0) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng([seed, 0x9209])
    results = []

    worst_sum = worst_shift = 0.0
    for _ in range(200):
        logits = rng.normal(0, rng.uniform(0.1, 30), size=int(rng.integers(2, 50)))
        worst_sum = max(worst_sum, abs(softmax(logits).sum() - 1.0))
        shifted = softmax(logits + rng.uniform(-1000, 1000))
        worst_shift = max(worst_shift, float(np.abs(shifted - softmax(logits)).max()))
    results.append(("softmax_sums_to_one", bool(worst_sum <= 1e-9), f"max_dev={worst_sum:.3g}"))
    results.append(("softmax_shift_invariance", bool(worst_shift <= 1e-12), f"max_dev={worst_shift:.3g}"))

    ln2 = math.log(2.0)
    dev = max(abs(positive_term(0.5, 1.0) - ln2), abs(negative_term(0.5, 1.0) - ln2))
    results.append(("loss_branch_ln2", bool(dev <= 1e-12), f"dev={dev:.3g}"))

    worst = 0.0
    for i in range(10):
        batch, params = random_instance(seed * 1000 + 500 + i)
        total = 0.0
        for ex in batch:
            p = softmax_prob(score(encode_state(ex.history, params), params), ex.label_item)
            term = positive_term if ex.sign is Sign.POSITIVE else negative_term
            total += term(p, ex.weight)
        worst = max(worst, abs(batch_loss(batch, params) - total))
    results.append(("loss_decomposition", bool(worst <= 1e-12), f"max_dev={worst:.3g}"))

    worst = 0.0
    for i in range(5):
        batch, params = random_instance(seed * 1000 + 700 + i, num_items=10)
        mode = Sampled(params.num_items - 1, seed=i)
        worst = max(worst, abs(batch_loss(batch, params, mode) - batch_loss(batch, params, FULL)))
        g_s, g_f = batch_gradients(batch, params, mode), batch_gradients(batch, params, FULL)
        worst = max(worst, max(float(np.abs(g_s[k] - g_f[k]).max()) for k in g_f))
    results.append(("sampled_equals_full", bool(worst <= 1e-9), f"max_dev={worst:.3g}"))
    return results
