"""Stochastic simulated users that consume recommendations and leave feedback.

The behavior model is deliberately transparent: a user's affinity to an item
is the inner product ``a = <preference, topic>``, and every signal (dwell,
skip, like, dislike) is a simple function of ``a`` plus seeded noise, so tests
can compute their own oracles.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from negrec.catalog import Corpus, Item

#: Policies map ``(history, rng)`` to an ordered slate of item ids.
Policy = Callable[[Sequence["Event"], np.random.Generator], Sequence[int]]


class ProtocolError(RuntimeError):
    """A policy violated the slate contract (e.g. returned an empty slate)."""


class SimulationError(RuntimeError):
    """A per-user simulation failed; ``user_index`` names the offender."""

    def __init__(self, user_index: int, cause: BaseException):
        super().__init__(f"user {user_index}: {type(cause).__name__}: {cause}")
        self.user_index = user_index


@dataclass(frozen=True)
class SimConfig:
    like_propensity: float = 0.3
    dislike_propensity_range: tuple[float, float] = (0.2, 0.6)
    skip_threshold_range: tuple[float, float] = (-0.1, 0.1)
    dwell_gain: float = 4.0
    dwell_noise: float = 0.1
    skip_dwell_cutoff: float = 0.2
    slate_sample_size: int = 10
    # False suppresses skips and dislikes entirely (cleaner pre-fork histories)
    allow_negative_feedback: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "SimConfig":
        doc = dict(doc)
        for key in ("dislike_propensity_range", "skip_threshold_range"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


@dataclass(frozen=True)
class UserProfile:
    preference: np.ndarray
    dislike_propensity: float
    skip_threshold: float
    seed: int

    def to_dict(self) -> dict:
        return {
            "preference": [float(x) for x in self.preference],
            "dislike_propensity": self.dislike_propensity,
            "skip_threshold": self.skip_threshold,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "UserProfile":
        return cls(
            np.asarray(doc["preference"], dtype=np.float64),
            doc["dislike_propensity"],
            doc["skip_threshold"],
            doc["seed"],
        )


@dataclass(frozen=True)
class Event:
    item_id: int
    dwell: float
    skipped: bool
    disliked: bool
    liked: bool
    step: int

    def __post_init__(self):
        if self.disliked and self.liked:
            raise ValueError("an event cannot be both liked and disliked")


@dataclass(frozen=True)
class Trajectory:
    user: UserProfile
    events: tuple[Event, ...]
    user_index: int = 0

    def to_dict(self) -> dict:
        return {
            "user_index": self.user_index,
            "user": self.user.to_dict(),
            "events": [asdict(e) for e in self.events],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Trajectory":
        return cls(
            UserProfile.from_dict(doc["user"]),
            tuple(Event(**e) for e in doc["events"]),
            doc.get("user_index", 0),
        )


def sample_user(seed: int, topic_dim: int, config: SimConfig = SimConfig()) -> UserProfile:
    rng = np.random.default_rng(seed)
    pref = rng.standard_normal(topic_dim)
    pref /= np.linalg.norm(pref)
    lo, hi = config.dislike_propensity_range
    dislike = float(lo if lo == hi else rng.uniform(lo, hi))
    lo, hi = config.skip_threshold_range
    threshold = float(lo if lo == hi else rng.uniform(lo, hi))
    return UserProfile(pref, dislike, threshold, seed)


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + np.exp(-x))


def react(
    user: UserProfile,
    item: Item,
    rng: np.random.Generator,
    step: int = 0,
    config: SimConfig = SimConfig(),
    corpus: Corpus | None = None,
) -> Event:
    """Sample the user's reaction to one consumed item.

    Draws are taken in a fixed order (dwell noise, skip dwell, dislike, like)
    whether or not they are used, so streams stay aligned across branches.
    """
    if corpus is not None and not (0 <= item.item_id < len(corpus) and corpus.items[item.item_id] is item):
        raise KeyError(f"item {item.item_id} does not belong to the active corpus")
    a = float(np.dot(user.preference, item.topic))
    noise, skip_dwell, u_dislike, u_like = (
        rng.normal(0.0, config.dwell_noise),
        rng.uniform(0.0, config.skip_dwell_cutoff),
        rng.random(),
        rng.random(),
    )
    dwell = min(max(_sigmoid(config.dwell_gain * a) + noise, 0.0), 1.0)
    skipped = config.allow_negative_feedback and a < user.skip_threshold
    if skipped:
        dwell = skip_dwell
    disliked = config.allow_negative_feedback and u_dislike < user.dislike_propensity * max(0.0, -a)
    liked = (not disliked) and u_like < config.like_propensity * max(0.0, a)
    return Event(item.item_id, float(dwell), bool(skipped), bool(disliked), bool(liked), step)


def generate_trajectory(
    user: UserProfile,
    policy: Policy,
    length: int,
    rng: np.random.Generator,
    corpus: Corpus,
    config: SimConfig = SimConfig(),
    user_index: int = 0,
) -> Trajectory:
    if length < 1:
        raise ValueError("trajectory length must be >= 1")
    events: list[Event] = []
    for step in range(length):
        slate = policy(tuple(events), rng)
        if len(slate) == 0:
            raise ProtocolError(f"policy returned an empty slate at step {step}")
        pick = int(rng.integers(min(len(slate), config.slate_sample_size)))
        item_id = int(slate[pick])
        if not 0 <= item_id < len(corpus):
            raise ProtocolError(f"policy recommended unknown item {item_id}")
        events.append(react(user, corpus.items[item_id], rng, step, config))
    return Trajectory(user, tuple(events), user_index)


class RandomPolicy:
    """Uniform random slates drawn from the trajectory's own RNG stream."""

    def __init__(self, num_items: int, slate_size: int = 10):
        self.num_items = num_items
        self.slate_size = min(slate_size, num_items)

    def __call__(self, history, rng):
        return rng.choice(self.num_items, size=self.slate_size, replace=False)


def user_streams(seed: int, index: int) -> tuple[int, np.random.Generator]:
    """Derive the (profile seed, trajectory RNG) pair for one simulated user."""
    ss = np.random.SeedSequence([seed, index])
    profile_ss, traj_ss = ss.spawn(2)
    return int(profile_ss.generate_state(1)[0]), np.random.default_rng(traj_ss)


def _simulate_users(args) -> list[Trajectory]:
    indices, length, policy, seed, corpus, config = args
    out = []
    for idx in indices:
        user_seed, rng = user_streams(seed, idx)
        user = sample_user(user_seed, corpus.topic_dim, config)
        try:
            out.append(generate_trajectory(user, policy, length, rng, corpus, config, idx))
        except Exception as exc:
            raise SimulationError(idx, exc) from exc
    return out


def chunked(n: int, size: int) -> list[range]:
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


def generate_logs(
    num_users: int,
    trajectory_length: int,
    policy: Policy,
    seed: int,
    corpus: Corpus,
    config: SimConfig = SimConfig(),
    workers: int = 1,
) -> list[Trajectory]:
    """Simulate ``num_users`` independent trajectories.

    Each user's profile and RNG stream derive from ``(seed, index)`` only, so
    output does not depend on ``workers`` or on execution order.
    """
    if num_users < 1:
        raise ValueError("num_users must be >= 1")
    jobs = [(idx, trajectory_length, policy, seed, corpus, config) for idx in chunked(num_users, 64)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_simulate_users, jobs))
    else:
        parts = [_simulate_users(job) for job in jobs]
    return [traj for part in parts for traj in part]


def save_logs(logs: Sequence[Trajectory], path) -> None:
    with open(path, "w") as fh:
        for traj in logs:
            fh.write(json.dumps(traj.to_dict(), sort_keys=True) + "\n")


def load_logs(path) -> list[Trajectory]:
    return [Trajectory.from_dict(json.loads(line)) for line in Path(path).read_text().splitlines() if line]
