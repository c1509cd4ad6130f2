"""Counterfactual forks for measuring how recommendations react to feedback.

A simulated user consumes ``k - 1`` recommended items. The model's top item
at step ``k`` becomes the fork item; each counterfactual branch appends a
different action on that item to the identical history, and the step
``k + 1`` slates are compared by how much of the slate shares the fork item's
content cluster or creator.
"""

from __future__ import annotations

import csv
import enum
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from negrec.catalog import Corpus
from negrec.model import ModelParams, ModelPolicy, encode_state, retrieve_top_k
from negrec.simenv import (
    Event,
    RandomPolicy,
    SimConfig,
    UserProfile,
    chunked,
    generate_trajectory,
    sample_user,
    user_streams,
)


class Action(str, enum.Enum):
    POSITIVE_BASELINE = "POSITIVE_BASELINE"
    DISLIKE_ON_POSITIVE = "DISLIKE_ON_POSITIVE"


class Mode(str, enum.Enum):
    CONTENT = "CONTENT"
    CREATOR = "CREATOR"


BRANCHES = (Action.POSITIVE_BASELINE, Action.DISLIKE_ON_POSITIVE)


def action_event(action: Action, item_id: int, step: int) -> Event:
    """Long-dwell consumption, with or without a dislike on top."""
    return Event(
        item_id=item_id,
        dwell=1.0,
        skipped=False,
        disliked=action is Action.DISLIKE_ON_POSITIVE,
        liked=False,
        step=step,
    )


def similarity_score(slate: Sequence[int], anchor: int, mode: Mode, corpus: Corpus) -> float:
    if len(slate) == 0:
        raise ValueError("empty slate")
    labels = corpus.cluster_ids if Mode(mode) is Mode.CONTENT else corpus.creator_ids
    target = labels[corpus[anchor].item_id]
    return float(np.count_nonzero(labels[np.asarray(slate)] == target)) / len(slate)


@dataclass
class ForkResult:
    fork_item: int
    history: tuple[Event, ...]
    slates: dict[Action, list[int]]


def run_fork(
    params: ModelParams,
    corpus: Corpus,
    user: UserProfile,
    k: int,
    actions: Sequence[Action],
    slate_size: int,
    rng: np.random.Generator,
    sim_config: SimConfig = SimConfig(),
    prefork_policy: str = "model",
) -> ForkResult:
    if k < 2:
        raise ValueError("k must be >= 2")
    if slate_size < 1:
        raise ValueError("slate_size must be >= 1")
    policy = ModelPolicy(params, sim_config.slate_sample_size)
    walker = policy if prefork_policy == "model" else RandomPolicy(len(corpus), sim_config.slate_sample_size)
    traj = generate_trajectory(user, walker, k - 1, rng, corpus, sim_config)
    history = traj.events
    h = policy.state(history)
    fork_item = retrieve_top_k(h, params, 1)[0]
    slates = {}
    for action in actions:
        event = action_event(Action(action), fork_item, k - 1)
        if k <= params.max_history:
            state = policy.step(h, event)
        else:
            state = encode_state(history + (event,), params)
        slates[Action(action)] = retrieve_top_k(state, params, slate_size)
    return ForkResult(fork_item, history, slates)


@dataclass
class ResponsivenessReport:
    variant: str
    num_simulations: int
    k: int
    slate_size: int
    seed: int
    # mode -> branch -> mean similarity over retained simulations
    similarity: dict = field(default_factory=dict)
    responsiveness: dict = field(default_factory=dict)
    ci: dict = field(default_factory=dict)
    excluded: dict = field(default_factory=dict)
    identical_slates: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ResponsivenessReport":
        return cls(**doc)

    def csv_rows(self) -> list[list]:
        rows = []
        for mode in Mode:
            lo, hi = self.ci[mode.value]
            for branch in BRANCHES:
                rows.append(
                    [
                        self.variant,
                        mode.value,
                        branch.value,
                        repr(self.similarity[mode.value][branch.value]),
                        repr(self.responsiveness[mode.value]),
                        repr(lo),
                        repr(hi),
                    ]
                )
        return rows

    def write(self, path) -> None:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        with open(path.with_suffix(".csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant", "mode", "branch", "mean_similarity", "responsiveness", "ci_lo", "ci_hi"])
            writer.writerows(self.csv_rows())


def _simulate(args) -> np.ndarray:
    """Per-simulation similarities, shape (n, 2 modes, 2 branches), plus identity flags."""
    indices, params, corpus, k, slate_size, seed, sim_config, prefork_policy = args
    out = np.zeros((len(indices), 2, 2))
    same = np.zeros(len(indices), dtype=bool)
    for row, idx in enumerate(indices):
        user_seed, rng = user_streams(seed, idx)
        user = sample_user(user_seed, corpus.topic_dim, sim_config)
        fork = run_fork(params, corpus, user, k, BRANCHES, slate_size, rng, sim_config, prefork_policy)
        for m, mode in enumerate(Mode):
            for b, branch in enumerate(BRANCHES):
                out[row, m, b] = similarity_score(fork.slates[branch], fork.fork_item, mode, corpus)
        same[row] = fork.slates[BRANCHES[0]] == fork.slates[BRANCHES[1]]
    return out, same


def relative_change(base: np.ndarray, counterfactual: np.ndarray) -> float:
    return float((counterfactual.mean() - base.mean()) / base.mean())


def bootstrap_ci(
    base: np.ndarray,
    counterfactual: np.ndarray,
    rng: np.random.Generator,
    resamples: int = 1000,
    level: float = 0.95,
) -> tuple[float, float]:
    """Paired percentile bootstrap of the relative change over simulations."""
    n = len(base)
    idx = rng.integers(0, n, size=(resamples, n))
    b = base[idx].mean(axis=1)
    c = counterfactual[idx].mean(axis=1)
    stats = (c - b) / b
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(stats, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def measure_responsiveness(
    params: ModelParams,
    corpus: Corpus,
    num_simulations: int = 2000,
    k: int = 50,
    slate_size: int = 50,
    seed: int = 0,
    sim_config: SimConfig = SimConfig(),
    workers: int = 1,
    bootstrap_resamples: int = 1000,
    prefork_policy: str = "model",
) -> ResponsivenessReport:
    """Run independent forks and aggregate similarity per branch and mode.

    Simulations whose baseline-branch similarity is zero leave the relative
    change undefined; they are counted per mode and excluded from that mode.
    """
    if num_simulations < 1:
        raise ValueError("num_simulations must be >= 1")
    jobs = [
        (idx, params, corpus, k, slate_size, seed, sim_config, prefork_policy)
        for idx in chunked(num_simulations, 50)
    ]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_simulate, jobs))
    else:
        parts = [_simulate(job) for job in jobs]
    sims = np.concatenate([p[0] for p in parts])
    same = np.concatenate([p[1] for p in parts])

    report = ResponsivenessReport(
        variant=params.variant,
        num_simulations=num_simulations,
        k=k,
        slate_size=slate_size,
        seed=seed,
        identical_slates=int(same.sum()),
    )
    for m, mode in enumerate(Mode):
        base, cf = sims[:, m, 0], sims[:, m, 1]
        keep = base > 0
        report.excluded[mode.value] = int((~keep).sum())
        base, cf = base[keep], cf[keep]
        if len(base) == 0:
            report.similarity[mode.value] = {b.value: float("nan") for b in BRANCHES}
            report.responsiveness[mode.value] = float("nan")
            report.ci[mode.value] = [float("nan"), float("nan")]
            continue
        report.similarity[mode.value] = {
            BRANCHES[0].value: float(base.mean()),
            BRANCHES[1].value: float(cf.mean()),
        }
        report.responsiveness[mode.value] = relative_change(base, cf)
        rng = np.random.default_rng([seed, 0xB007, m])
        report.ci[mode.value] = list(bootstrap_ci(base, cf, rng, bootstrap_resamples))
    return report


SUMMARY_HEADER = [
    "variant",
    "mode",
    "baseline_similarity",
    "counterfactual_similarity",
    "responsiveness",
    "ci_lo",
    "ci_hi",
    "num_simulations",
    "excluded",
]


def merge_reports(reports: Sequence[ResponsivenessReport]) -> list[list]:
    """One summary row per (variant, mode), sorted for stable output."""
    rows = []
    for rep in sorted(reports, key=lambda r: r.variant):
        for mode in Mode:
            sim = rep.similarity[mode.value]
            rows.append(
                [
                    rep.variant,
                    mode.value,
                    repr(sim[BRANCHES[0].value]),
                    repr(sim[BRANCHES[1].value]),
                    repr(rep.responsiveness[mode.value]),
                    repr(rep.ci[mode.value][0]),
                    repr(rep.ci[mode.value][1]),
                    rep.num_simulations,
                    rep.excluded[mode.value],
                ]
            )
    return rows
