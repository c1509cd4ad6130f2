"""Synthetic item corpus with content clusters and creators."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CORPUS_VERSION = 1


class SizingError(ValueError):
    """Raised when corpus parameters cannot yield a balanced corpus."""


@dataclass(frozen=True)
class Item:
    item_id: int
    cluster_id: int
    creator_id: int
    topic: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True)
class Corpus:
    """Immutable item collection.

    ``topics`` is the stacked (A, d_t) ground-truth affinity matrix. It is read
    by the simulator only; the model never sees it.
    """

    items: tuple[Item, ...]
    num_clusters: int
    num_creators: int
    seed: int = 0
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        topics = np.stack([it.topic for it in self.items])
        topics.setflags(write=False)
        object.__setattr__(self, "topics", topics)
        object.__setattr__(self, "cluster_ids", np.array([it.cluster_id for it in self.items]))
        object.__setattr__(self, "creator_ids", np.array([it.creator_id for it in self.items]))

    def __len__(self) -> int:
        return len(self.items)

    @property
    def topic_dim(self) -> int:
        return self.topics.shape[1]

    def __getitem__(self, item_id: int) -> Item:
        if not 0 <= item_id < len(self.items):
            raise KeyError(f"item {item_id} not in corpus of size {len(self.items)}")
        return self.items[item_id]

    def to_dict(self) -> dict:
        return {
            "version": CORPUS_VERSION,
            "seed": self.seed,
            "parameters": dict(self.params),
            "num_clusters": self.num_clusters,
            "num_creators": self.num_creators,
            "items": [
                {
                    "item_id": it.item_id,
                    "cluster_id": it.cluster_id,
                    "creator_id": it.creator_id,
                    "topic": [float(x) for x in it.topic],
                }
                for it in self.items
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Corpus":
        if doc.get("version") != CORPUS_VERSION:
            raise ValueError(f"unsupported corpus version {doc.get('version')!r}")
        items = tuple(
            Item(d["item_id"], d["cluster_id"], d["creator_id"], np.asarray(d["topic"], dtype=np.float64))
            for d in doc["items"]
        )
        if [it.item_id for it in items] != list(range(len(items))):
            raise ValueError("item ids must be contiguous from 0")
        return cls(items, doc["num_clusters"], doc["num_creators"], doc["seed"], doc["parameters"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "Corpus":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _balanced_labels(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % k)


def generate_corpus(
    num_items: int,
    num_clusters: int,
    num_creators: int,
    topic_dim: int,
    seed: int,
    sigma: float = 0.25,
    creator_weight: float = 0.0,
) -> Corpus:
    """Draw a corpus whose item topics scatter around per-cluster centroids.

    Each item's topic is ``normalize(centroid[c] + creator_weight * style[r] + sigma * noise)``
    where centroids and creator styles are uniform on the unit sphere and
    ``noise ~ N(0, I / topic_dim)`` (so ``sigma`` is a relative spread).
    Cluster and creator labels are independent balanced permutations.
    """
    if min(num_items, num_clusters, num_creators, topic_dim) <= 0:
        raise SizingError("all corpus sizes must be positive")
    if num_items < 2 * max(num_clusters, num_creators):
        raise SizingError(
            f"num_items={num_items} must be at least 2*max(num_clusters, num_creators)"
            f"={2 * max(num_clusters, num_creators)}"
        )
    rng = np.random.default_rng(seed)
    cluster_ids = _balanced_labels(num_items, num_clusters, rng)
    creator_ids = _balanced_labels(num_items, num_creators, rng)
    centroids = _unit_rows(rng.standard_normal((num_clusters, topic_dim)))
    styles = _unit_rows(rng.standard_normal((num_creators, topic_dim)))
    noise = rng.standard_normal((num_items, topic_dim)) / np.sqrt(topic_dim)
    topics = _unit_rows(centroids[cluster_ids] + creator_weight * styles[creator_ids] + sigma * noise)
    items = tuple(
        Item(i, int(cluster_ids[i]), int(creator_ids[i]), topics[i]) for i in range(num_items)
    )
    params = {
        "num_items": num_items,
        "num_clusters": num_clusters,
        "num_creators": num_creators,
        "topic_dim": topic_dim,
        "sigma": sigma,
        "creator_weight": creator_weight,
    }
    return Corpus(items, num_clusters, num_creators, seed, params)
