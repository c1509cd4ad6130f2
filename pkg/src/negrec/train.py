"""Label extraction from logs, minibatch SGD on the joint objective, evaluation."""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from negrec.catalog import Corpus
from negrec.model import (
    FeatureConfig,
    ModelParams,
    init_params,
    load_checkpoint,
    save_checkpoint,
    softmax,
)
from negrec.objective import (
    FULL,
    LabeledExample,
    NonFiniteGradientError,
    Sampled,
    Sign,
    evaluate,
    forward_states,
    merge_packed,
    pack_histories,
)
from negrec.simenv import Trajectory

__all__ = [
    "Variant",
    "TrainConfig",
    "TrainReport",
    "TrainingError",
    "build_examples",
    "split_users",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "heldout_dislike_probability",
    "top1_skip_rate",
]


class Variant(str, enum.Enum):
    BASELINE = "BASELINE"
    FEATURE_ONLY = "FEATURE_ONLY"
    FEATURE_AND_LABEL = "FEATURE_AND_LABEL"
    EXCLUDE_HEURISTIC = "EXCLUDE_HEURISTIC"
    SKIP_LABELS = "SKIP_LABELS"


_FEATURES = {
    Variant.BASELINE: FeatureConfig(use_dislike_feature=False),
    Variant.FEATURE_ONLY: FeatureConfig(use_dislike_feature=True),
    Variant.FEATURE_AND_LABEL: FeatureConfig(use_dislike_feature=True),
    Variant.EXCLUDE_HEURISTIC: FeatureConfig(use_dislike_feature=False, exclude_disliked_from_input=True),
    Variant.SKIP_LABELS: FeatureConfig(use_dislike_feature=False),
}


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    variant: Variant = Variant.BASELINE
    learning_rate: float = 0.1
    batch_size: int = 8  # trajectories per minibatch
    epochs: int = 5
    seed: int = 0
    dim: int = 32
    max_history: int = 50
    init_scale: float = 0.05
    r_positive: float = 1.0
    w_dislike: float = 1.0
    w_skip: float = 0.3
    positive_dwell_cutoff: float = 0.6
    # None for the full softmax, else the number of uniformly sampled negatives
    sampled_negatives: int | None = None
    normalize: str = "sum"
    # global gradient-norm cap per step; None disables clipping
    clip_norm: float | None = None
    holdout_fraction: float = 0.1
    # None follows the variant; True/False forces skip labels on any variant
    skip_labels: bool | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def feature_config(self) -> FeatureConfig:
        return _FEATURES[self.variant]

    @property
    def dislike_labels(self) -> bool:
        return self.variant is Variant.FEATURE_AND_LABEL

    @property
    def use_skip_labels(self) -> bool:
        if self.skip_labels is not None:
            return self.skip_labels
        return self.variant is Variant.SKIP_LABELS

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["variant"] = self.variant.value
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class TrainReport:
    config: dict
    epochs: list[dict] = field(default_factory=list)
    heldout_users: list[int] = field(default_factory=list)
    num_examples: dict = field(default_factory=dict)
    checkpoint_path: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> None:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        with open(path.with_suffix(".csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "total", "pos_term", "neg_term"])
            for row in self.epochs:
                writer.writerow([row["epoch"], repr(row["total"]), repr(row["pos_term"]), repr(row["neg_term"])])


def _trajectory_examples(traj: Trajectory, config: TrainConfig) -> list[LabeledExample]:
    exclude = config.feature_config.exclude_disliked_from_input
    out = []
    history: list = []
    for event in traj.events:
        hist = tuple(history)
        if event.liked or event.dwell >= config.positive_dwell_cutoff:
            out.append(LabeledExample(hist, event.item_id, Sign.POSITIVE, config.r_positive))
        if event.disliked and config.dislike_labels:
            out.append(LabeledExample(hist, event.item_id, Sign.NEGATIVE, config.w_dislike))
        if event.skipped and config.use_skip_labels:
            out.append(LabeledExample(hist, event.item_id, Sign.NEGATIVE, config.w_skip))
        if not (exclude and event.disliked):
            history.append(event)
    return out


def build_examples(logs: Sequence[Trajectory], config: TrainConfig) -> list[LabeledExample]:
    """Turn every labelled event into an example whose history is its strict prefix.

    Positives are liked events or events with dwell at or above the cutoff.
    Negatives come from dislikes (FEATURE_AND_LABEL) and/or skips (skip
    labels). Unlabelled events still appear in later histories, except
    disliked events under EXCLUDE_HEURISTIC.
    """
    if not logs:
        raise ValueError("no trajectories given")
    return [ex for traj in logs for ex in _trajectory_examples(traj, config)]


def split_users(logs: Sequence[Trajectory], fraction: float, seed: int):
    """Seeded split by user index into (train, held-out)."""
    if fraction <= 0:
        return list(logs), []
    order = sorted(logs, key=lambda t: t.user_index)
    rng = np.random.default_rng([seed, 0x5EED])
    n_held = max(1, int(round(fraction * len(order))))
    held = set(rng.choice(len(order), size=n_held, replace=False).tolist())
    train_part = [t for i, t in enumerate(order) if i not in held]
    held_part = [t for i, t in enumerate(order) if i in held]
    return train_part, held_part


def train(
    logs: Sequence[Trajectory],
    config: TrainConfig,
    num_items: int,
    init: ModelParams | None = None,
) -> tuple[ModelParams, TrainReport]:
    """Plain SGD over seeded shuffles of trajectory minibatches."""
    train_logs, held = split_users(logs, config.holdout_fraction, config.seed)
    per_traj = [_trajectory_examples(t, config) for t in train_logs]
    n_pos = sum(ex.sign is Sign.POSITIVE for exs in per_traj for ex in exs)
    if n_pos == 0:
        raise TrainingError("training logs yield no positive examples")
    params = init or init_params(
        num_items,
        config.dim,
        config.feature_config,
        seed=config.seed,
        scale=config.init_scale,
        max_history=config.max_history,
        variant=config.variant.value,
    )
    params = params.copy()
    report = TrainReport(
        config=config.to_dict(),
        heldout_users=sorted(t.user_index for t in held),
        num_examples={
            "positive": n_pos,
            "negative": sum(ex.sign is Sign.NEGATIVE for exs in per_traj for ex in exs),
        },
    )
    # packing depends only on histories and the feature config, so do it once
    packs = [pack_histories([ex.history for ex in exs], params) if exs else None for exs in per_traj]
    rng = np.random.default_rng([config.seed, 0xBA7C4])
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(per_traj))
        totals = np.zeros(3)
        for start in range(0, len(order), config.batch_size):
            chosen = [j for j in order[start : start + config.batch_size] if per_traj[j]]
            if not chosen:
                continue
            batch = [ex for j in chosen for ex in per_traj[j]]
            packed = merge_packed([packs[j] for j in chosen])
            mode = FULL
            if config.sampled_negatives is not None:
                mode = Sampled(config.sampled_negatives, seed=int(rng.integers(2**63)))
            try:
                res = evaluate(batch, params, mode, config.normalize, packed=packed)
            except NonFiniteGradientError as exc:
                raise TrainingError(f"non-finite gradient at step {step}: {exc}") from exc
            if not np.isfinite(res.total):
                raise TrainingError(f"non-finite loss at step {step}")
            totals += (res.total, res.positive, res.negative)
            if config.learning_rate:
                lr = config.learning_rate
                if config.clip_norm is not None:
                    norm = np.sqrt(sum(float(np.sum(g * g)) for g in res.grads.values()))
                    if norm > config.clip_norm:
                        lr *= config.clip_norm / norm
                params = params.with_arrays(
                    **{k: v - lr * res.grads[k] for k, v in params.arrays().items()}
                )
            step += 1
        report.epochs.append(
            {"epoch": epoch, "total": totals[0], "pos_term": totals[1], "neg_term": totals[2]}
        )
    return params, report


# --- held-out evaluation ------------------------------------------------------


def heldout_dislike_probability(params: ModelParams, logs: Sequence[Trajectory]) -> float:
    """Mean p(item | history) over every disliked event in ``logs``.

    Histories follow the model's own input rules (exclusion, truncation).
    """
    histories, items = [], []
    for traj in logs:
        for t, event in enumerate(traj.events):
            if event.disliked:
                histories.append(traj.events[:t])
                items.append(event.item_id)
    if not items:
        raise ValueError("no disliked events to evaluate")
    S = forward_states(histories, params)
    P = softmax(S @ params.item_embeddings.T)
    return float(P[np.arange(len(items)), items].mean())


def top1_skip_rate(params: ModelParams, corpus: Corpus, logs: Sequence[Trajectory]) -> float:
    """Fraction of logged prefixes whose top-1 recommendation the user would skip.

    The skip rule is deterministic (affinity below the user's threshold), so
    no randomness enters the comparison between models.
    """
    histories, users = [], []
    for traj in logs:
        for t in range(len(traj.events)):
            histories.append(traj.events[:t])
            users.append(traj.user)
    S = forward_states(histories, params)
    top = np.argmax(S @ params.item_embeddings.T, axis=1)
    skips = [
        float(np.dot(u.preference, corpus.topics[i])) < u.skip_threshold for u, i in zip(users, top)
    ]
    return float(np.mean(skips))
