"""Positive cross-entropy plus the not-to-recommend loss, with exact gradients.

For a batch of labelled examples the joint objective is::

    L = - sum_pos r_i log p(y_i | s_i) - sum_neg w_i log(1 - p(y_i | s_i))

where ``p`` is a softmax over ``s_i . v_j``. Gradients are obtained by hand:
through the softmax, the inner products, and backpropagation through time
over the recurrent encoder.

Histories that are prefixes of one another (the usual case: every example
cut from the same trajectory) are packed into a single recurrent row, and
each label reads the hidden state at its prefix length. This is only a
scheduling optimisation; packing never changes the value being computed.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from negrec.model import BLOCKS, ModelParams, effective_history, feedback_features, softmax
from negrec.simenv import Event

PROB_FLOOR = 1e-12


class Sign(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class LabeledExample:
    history: tuple[Event, ...]
    label_item: int
    sign: Sign
    weight: float = 1.0

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError(f"label weight must be positive, got {self.weight}")


@dataclass(frozen=True)
class Full:
    pass


@dataclass(frozen=True)
class Sampled:
    """Uniform sampled softmax with ``num_negatives`` items besides the label."""

    num_negatives: int
    seed: int = 0

    def __post_init__(self):
        if self.num_negatives < 1:
            raise ValueError("sampled softmax needs at least one negative")


FULL = Full()


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, block: str):
        super().__init__(f"non-finite gradient entries in {block}")
        self.block = block


# --- scalar terms ------------------------------------------------------------


def _clamp(p):
    return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


def positive_term(p: float, r: float = 1.0) -> float:
    return float(-r * np.log(_clamp(p)))


def negative_term(p: float, w: float = 1.0) -> float:
    """Not-to-recommend loss ``-w log(1 - p)``; vanishes as ``p -> 0``."""
    return float(-w * np.log1p(-_clamp(p)))


def negative_weight_ce_term(p: float, w: float = 1.0) -> float:
    """Cross-entropy with label weight ``-w``, i.e. ``+w log p``. Unbounded below."""
    return float(w * np.log(p))


def negative_weight_ce_grad_p(p: float, w: float = 1.0) -> float:
    return w / p


# --- packing -----------------------------------------------------------------


@dataclass
class PackedBatch:
    item_ids: np.ndarray  # (B, T) int
    feats: np.ndarray  # (B, T, 2)
    mask: np.ndarray  # (B, T) float 0/1
    label_row: np.ndarray  # (N,)
    label_pos: np.ndarray  # (N,)

    @property
    def max_len(self) -> int:
        return self.item_ids.shape[1]


def pack_histories(histories: Sequence[Sequence[Event]], params: ModelParams) -> PackedBatch:
    """Pack histories into recurrent rows, sharing rows between prefixes.

    Sharing is detected by object identity of the events, which holds for
    histories sliced from one trajectory; anything else gets its own row.
    """
    eff = [effective_history(h, params) for h in histories]
    order = sorted(range(len(eff)), key=lambda i: -len(eff[i]))
    rows: list[list[Event]] = []
    index: dict[tuple[int, int], int] = {}
    label_row = np.zeros(len(eff), dtype=np.int64)
    label_pos = np.zeros(len(eff), dtype=np.int64)
    for i in order:
        seq = eff[i]
        n = len(seq)
        row = -1
        if n == 0:
            row = 0 if rows else -1
        else:
            cand = index.get((id(seq[-1]), n))
            if cand is not None and all(a is b for a, b in zip(rows[cand], seq)):
                row = cand
        if row < 0:
            row = len(rows)
            rows.append(seq)
            for t, ev in enumerate(seq, start=1):
                index.setdefault((id(ev), t), row)
        label_row[i], label_pos[i] = row, n
    if not rows:
        rows.append([])
    T = max(len(r) for r in rows)
    B = len(rows)
    item_ids = np.zeros((B, T), dtype=np.int64)
    feats = np.zeros((B, T, 2))
    mask = np.zeros((B, T))
    # encode each distinct event once, then gather rows by table position
    config = params.feature_config
    slot: dict[int, int] = {}
    table = []
    for seq in rows:
        for ev in seq:
            if id(ev) not in slot:
                slot[id(ev)] = len(table)
                table.append((ev.item_id, *feedback_features(ev, config)))
    table_arr = np.array(table, dtype=np.float64).reshape(-1, 3)
    for b, seq in enumerate(rows):
        if not seq:
            continue
        n = len(seq)
        picked = table_arr[[slot[id(ev)] for ev in seq]]
        item_ids[b, :n] = picked[:, 0]
        feats[b, :n] = picked[:, 1:]
        mask[b, :n] = 1.0
    if item_ids.size and (item_ids.min() < 0 or item_ids.max() >= params.num_items):
        bad = item_ids[(item_ids < 0) | (item_ids >= params.num_items)][0]
        raise IndexError(f"item {bad} out of range for {params.num_items} items")
    return PackedBatch(item_ids, feats, mask, label_row, label_pos)


def merge_packed(parts: Sequence[PackedBatch]) -> PackedBatch:
    """Stack independently packed batches; labels keep their concatenated order."""
    T = max(p.max_len for p in parts)
    B = sum(p.item_ids.shape[0] for p in parts)
    item_ids = np.zeros((B, T), dtype=np.int64)
    feats = np.zeros((B, T, 2))
    mask = np.zeros((B, T))
    rows, label_row = 0, []
    for p in parts:
        b, t = p.item_ids.shape
        item_ids[rows : rows + b, :t] = p.item_ids
        feats[rows : rows + b, :t] = p.feats
        mask[rows : rows + b, :t] = p.mask
        label_row.append(p.label_row + rows)
        rows += b
    return PackedBatch(
        item_ids, feats, mask, np.concatenate(label_row), np.concatenate([p.label_pos for p in parts])
    )


# --- forward / backward through the recurrent encoder ------------------------


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _encoder_forward(packed: PackedBatch, params: ModelParams):
    d = params.dim
    E, W, U, b = params.item_embeddings, params.w_input, params.w_hidden, params.bias
    B, T = packed.item_ids.shape
    H = np.zeros((T + 1, B, d))
    cache = []
    for t in range(T):
        h = H[t]
        m = packed.mask[:, t : t + 1]
        x = np.concatenate([E[packed.item_ids[:, t]], packed.feats[:, t]], axis=1)
        gx = x @ W + b
        gh = h @ U[:, : 2 * d]
        z = _sigmoid(gx[:, :d] + gh[:, :d])
        r = _sigmoid(gx[:, d : 2 * d] + gh[:, d:])
        rh = r * h
        n = np.tanh(gx[:, 2 * d :] + rh @ U[:, 2 * d :])
        h_new = (1.0 - z) * n + z * h
        H[t + 1] = m * h_new + (1.0 - m) * h
        cache.append((x, z, r, rh, n))
    return H, cache


def _encoder_backward(packed: PackedBatch, params: ModelParams, H, cache, dH):
    """Accumulate parameter gradients given dL/dH at every position."""
    d = params.dim
    W, U = params.w_input, params.w_hidden
    grads = {name: np.zeros_like(a) for name, a in params.arrays().items()}
    g = dH[-1].copy()
    for t in range(packed.max_len - 1, -1, -1):
        x, z, r, rh, n = cache[t]
        h = H[t]
        m = packed.mask[:, t : t + 1]
        dh_new = m * g
        dn = dh_new * (1.0 - z)
        dz = dh_new * (h - n)
        dh_prev = dh_new * z + (1.0 - m) * g
        da_n = dn * (1.0 - n * n)
        grads["w_hidden"][:, 2 * d :] += rh.T @ da_n
        drh = da_n @ U[:, 2 * d :].T
        dr = drh * h
        dh_prev += drh * r
        da_z = dz * z * (1.0 - z)
        da_r = dr * r * (1.0 - r)
        da_zr = np.concatenate([da_z, da_r], axis=1)
        grads["w_hidden"][:, : 2 * d] += h.T @ da_zr
        dh_prev += da_zr @ U[:, : 2 * d].T
        da = np.concatenate([da_zr, da_n], axis=1)
        grads["w_input"] += x.T @ da
        grads["bias"] += da.sum(axis=0)
        dx = da @ W.T
        np.add.at(grads["item_embeddings"], packed.item_ids[:, t], dx[:, :d])
        g = dh_prev + dH[t]
    return grads


def forward_states(histories: Sequence[Sequence[Event]], params: ModelParams) -> np.ndarray:
    """User states (N, d) for many histories at once."""
    packed = pack_histories(histories, params)
    H, _ = _encoder_forward(packed, params)
    return H[packed.label_pos, packed.label_row]


# --- the joint objective -----------------------------------------------------


@dataclass
class LossResult:
    total: float
    positive: float
    negative: float
    num_positive: int
    num_negative: int
    grads: dict[str, np.ndarray] | None = None


def _candidates(labels: np.ndarray, num_items: int, mode) -> tuple[np.ndarray | None, float]:
    """Candidate item ids per example (label first) and the logit correction."""
    if isinstance(mode, Full) or mode.num_negatives >= num_items:
        return None, 0.0
    n = mode.num_negatives
    rng = np.random.default_rng(mode.seed)
    cand = np.empty((len(labels), n + 1), dtype=np.int64)
    cand[:, 0] = labels
    for i, y in enumerate(labels):
        draw = rng.choice(num_items - 1, size=n, replace=False)
        cand[i, 1:] = draw + (draw >= y)
    return cand, float(np.log(n / (num_items - 1)))


def logit_gradient(P: np.ndarray, target: np.ndarray, neg: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """dL/dlogits for rows of softmax probabilities ``P``.

    Positive rows: ``r (P - e_y)``. Negative rows: ``w p_y (e_y - P) / (1 - p_y)``,
    whose label entry reduces to ``w p_y`` and so stays finite as ``p_y -> 0``.
    """
    rows = np.arange(len(target))
    p = P[rows, target]
    G = P.copy()
    G[rows, target] -= 1.0
    q = np.maximum(1.0 - p, PROB_FLOOR)
    G_neg = -P * (p / q)[:, None]
    G_neg[rows, target] = p
    return np.where(neg[:, None], G_neg, G) * weight[:, None]


def _example_scale(signs_neg: np.ndarray, normalize: str) -> np.ndarray:
    n = len(signs_neg)
    if normalize == "sum":
        return np.ones(n)
    if normalize == "mean":
        return np.full(n, 1.0 / n)
    if normalize == "per_sign":
        n_neg = signs_neg.sum()
        n_pos = n - n_neg
        return np.where(signs_neg, 1.0 / max(n_neg, 1), 1.0 / max(n_pos, 1))
    raise ValueError(f"unknown normalization {normalize!r}")


def evaluate(
    batch: Sequence[LabeledExample],
    params: ModelParams,
    mode=FULL,
    normalize: str = "sum",
    with_grads: bool = True,
    packed: PackedBatch | None = None,
) -> LossResult:
    """Loss of a batch and, optionally, its exact gradient for every block.

    ``normalize`` is ``"sum"`` (plain sums), ``"mean"`` (divide by batch
    size) or ``"per_sign"`` (mean within each sign, then add). ``packed``
    may carry a precomputed packing of the batch histories, in batch order.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if packed is None:
        packed = pack_histories([ex.history for ex in batch], params)
    H, cache = _encoder_forward(packed, params)
    S = H[packed.label_pos, packed.label_row]  # (N, d)
    labels = np.array([ex.label_item for ex in batch], dtype=np.int64)
    if labels.min() < 0 or labels.max() >= params.num_items:
        raise IndexError("label item out of range")
    neg = np.array([ex.sign is Sign.NEGATIVE for ex in batch])
    weight = np.array([ex.weight for ex in batch], dtype=np.float64)
    scale = _example_scale(neg, normalize) * weight
    E = params.item_embeddings
    N = len(batch)
    rows = np.arange(N)

    cand, correction = _candidates(labels, params.num_items, mode)
    if cand is None:
        logits = S @ E.T
        target = labels
    else:
        Ec = E[cand]  # (N, n+1, d)
        logits = np.einsum("nd,ncd->nc", S, Ec)
        logits[:, 1:] -= correction
        target = np.zeros(N, dtype=np.int64)
    P = softmax(logits)
    p = P[rows, target]
    pc = _clamp(p)
    pos_losses = -np.log(pc)
    neg_losses = -np.log1p(-pc)
    per_example = scale * np.where(neg, neg_losses, pos_losses)
    result = LossResult(
        total=float(per_example.sum()),
        positive=float(per_example[~neg].sum()),
        negative=float(per_example[neg].sum()),
        num_positive=int((~neg).sum()),
        num_negative=int(neg.sum()),
    )
    if not with_grads:
        return result

    G = logit_gradient(P, target, neg, scale)

    grads_E_out = np.zeros_like(E)
    if cand is None:
        dS = G @ E
        grads_E_out += G.T @ S
    else:
        dS = np.einsum("nc,ncd->nd", G, Ec)
        np.add.at(grads_E_out, cand.ravel(), (G[:, :, None] * S[:, None, :]).reshape(-1, params.dim))
    dH = np.zeros_like(H)
    np.add.at(dH, (packed.label_pos, packed.label_row), dS)
    grads = _encoder_backward(packed, params, H, cache, dH)
    grads["item_embeddings"] += grads_E_out
    for name in BLOCKS:
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteGradientError(name)
    result.grads = grads
    return result


def batch_loss(batch, params, mode=FULL, normalize: str = "sum") -> float:
    return evaluate(batch, params, mode, normalize, with_grads=False).total


def batch_gradients(batch, params, mode=FULL, normalize: str = "sum") -> dict[str, np.ndarray]:
    return evaluate(batch, params, mode, normalize).grads


def finite_diff_check(
    batch,
    params: ModelParams,
    epsilon: float = 1e-5,
    mode=FULL,
    normalize: str = "sum",
    coords_per_block: int = 64,
    seed: int = 0,
    grads: dict[str, np.ndarray] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Coordinates are sampled per parameter block (all of a block if it is
    smaller than ``coords_per_block``). The relative error uses the guarded
    denominator ``max(|analytic|, |numeric|, 1e-8)``. ``grads`` substitutes
    the analytic gradient, which lets tests check the checker.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    if grads is None:
        grads = batch_gradients(batch, params, mode, normalize)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in BLOCKS:
        base = params.arrays()[name]
        flat_idx = np.arange(base.size)
        if base.size > coords_per_block:
            flat_idx = np.sort(rng.choice(base.size, coords_per_block, replace=False))
        for j in flat_idx:
            idx = np.unravel_index(j, base.shape)
            plus, minus = base.copy(), base.copy()
            plus[idx] += epsilon
            minus[idx] -= epsilon
            f_plus = batch_loss(batch, params.with_arrays(**{name: plus}), mode, normalize)
            f_minus = batch_loss(batch, params.with_arrays(**{name: minus}), mode, normalize)
            numeric = (f_plus - f_minus) / (2 * epsilon)
            analytic = grads[name][idx]
            denom = max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def boundedness_sweep(num_points: int = 61, num_items: int = 1000, w: float = 1.0) -> list[dict]:
    """Sweep a negative label's probability from 1e-12 to 0.5.

    The label logit ``a`` sits against ``num_items - 1`` zero logits, so
    ``p = e^a / (e^a + A - 1)``. Returns one row per point with the
    not-to-recommend loss and its label-logit gradient ``w p``, and the
    negative-weight cross-entropy value and its derivative in ``p``.
    """
    rows = []
    for p in np.logspace(-12, np.log10(0.5), num_points):
        a = float(np.log(p * (num_items - 1) / (1.0 - p)))
        logits = np.zeros(num_items)
        logits[0] = a
        P = softmax(logits)[None, :]
        p_eval = float(P[0, 0])
        grad = logit_gradient(P, np.array([0]), np.array([True]), np.array([w]))[0, 0]
        rows.append(
            {
                "p": p_eval,
                "label_logit": a,
                "not_to_recommend_loss": negative_term(p_eval, w),
                "not_to_recommend_grad_logit": float(grad),
                "negative_weight_ce_loss": negative_weight_ce_term(p_eval, w),
                "negative_weight_ce_grad_p": negative_weight_ce_grad_p(p_eval, w),
            }
        )
    return rows


def write_sweep_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) for k, v in row.items()})
