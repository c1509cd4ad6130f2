"""Feedback-aware sequential retrieval model.

Each consumed item is encoded as ``[v_item, dwell, dislike_flag]`` and fed
through a single gated recurrent cell whose hidden size equals the item
embedding size, so the final hidden state ``s`` scores items by ``s . v_j``.

Gate layout in the packed weight matrices is ``[update | reset | candidate]``::

    z  = sigmoid(x W_z + h U_z + b_z)
    r  = sigmoid(x W_r + h U_r + b_r)
    n  = tanh(x W_n + (r * h) U_n + b_n)
    h' = (1 - z) * n + z * h
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from negrec.simenv import Event

NUM_FEATURES = 2
CHECKPOINT_VERSION = 1
BLOCKS = ("item_embeddings", "w_input", "w_hidden", "bias")


@dataclass(frozen=True)
class FeatureConfig:
    use_dislike_feature: bool = True
    use_dwell_feature: bool = True
    exclude_disliked_from_input: bool = False


@dataclass(frozen=True, eq=False)
class ModelParams:
    item_embeddings: np.ndarray  # (A, d)
    w_input: np.ndarray  # (d + f, 3d)
    w_hidden: np.ndarray  # (d, 3d)
    bias: np.ndarray  # (3d,)
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)
    max_history: int = 50
    variant: str = ""

    def __post_init__(self):
        num_items, dim = self.item_embeddings.shape
        expected = {
            "w_input": (dim + NUM_FEATURES, 3 * dim),
            "w_hidden": (dim, 3 * dim),
            "bias": (3 * dim,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def num_items(self) -> int:
        return self.item_embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.item_embeddings.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in BLOCKS}

    def with_arrays(self, **arrays) -> "ModelParams":
        return replace(self, **arrays)

    def copy(self) -> "ModelParams":
        return self.with_arrays(**{k: v.copy() for k, v in self.arrays().items()})

    def equals(self, other: "ModelParams") -> bool:
        """Bitwise equality of all arrays plus configuration."""
        return (
            self.feature_config == other.feature_config
            and self.max_history == other.max_history
            and all(
                a.shape == b.shape and a.tobytes() == b.tobytes()
                for a, b in zip(self.arrays().values(), other.arrays().values())
            )
        )


def init_params(
    num_items: int,
    dim: int,
    feature_config: FeatureConfig = FeatureConfig(),
    seed: int = 0,
    scale: float = 0.05,
    max_history: int = 50,
    variant: str = "",
) -> ModelParams:
    rng = np.random.default_rng(seed)
    return ModelParams(
        item_embeddings=rng.uniform(-scale, scale, (num_items, dim)),
        w_input=rng.uniform(-scale, scale, (dim + NUM_FEATURES, 3 * dim)),
        w_hidden=rng.uniform(-scale, scale, (dim, 3 * dim)),
        bias=rng.uniform(-scale, scale, 3 * dim),
        feature_config=feature_config,
        max_history=max_history,
        variant=variant,
    )


def feedback_features(event: Event, config: FeatureConfig) -> tuple[float, float]:
    dwell = float(event.dwell) if config.use_dwell_feature else 0.0
    flag = 1.0 if (config.use_dislike_feature and event.disliked) else 0.0
    return dwell, flag


def encode_event(event: Event, params: ModelParams) -> np.ndarray:
    if not 0 <= event.item_id < params.num_items:
        raise IndexError(f"item {event.item_id} out of range for {params.num_items} items")
    return np.concatenate(
        [params.item_embeddings[event.item_id], feedback_features(event, params.feature_config)]
    )


def effective_history(history: Sequence[Event], params: ModelParams) -> list[Event]:
    """Truncate to the most recent ``max_history`` events, then apply exclusion."""
    recent = list(history[-params.max_history :]) if params.max_history else []
    if params.feature_config.exclude_disliked_from_input:
        recent = [e for e in recent if not e.disliked]
    return recent


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_step(h: np.ndarray, x: np.ndarray, params: ModelParams) -> np.ndarray:
    d = params.dim
    gx = x @ params.w_input + params.bias
    gh = h @ params.w_hidden[:, : 2 * d]
    z = _sigmoid(gx[..., :d] + gh[..., :d])
    r = _sigmoid(gx[..., d : 2 * d] + gh[..., d:])
    n = np.tanh(gx[..., 2 * d :] + (r * h) @ params.w_hidden[:, 2 * d :])
    return (1.0 - z) * n + z * h


def encode_state(history: Sequence[Event], params: ModelParams) -> np.ndarray:
    h = np.zeros(params.dim)
    for event in effective_history(history, params):
        h = gru_step(h, encode_event(event, params), params)
    return h


def score(state: np.ndarray, params: ModelParams) -> np.ndarray:
    return params.item_embeddings @ state


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - np.max(logits, axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax_prob(logits: np.ndarray, index: int) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= index < logits.shape[-1]:
        raise IndexError(f"index {index} out of range")
    return float(softmax(logits)[index])


def top_k(logits: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest logits, descending, ties by ascending index."""
    if not 1 <= k <= logits.shape[-1]:
        raise ValueError(f"K={k} must lie in [1, {logits.shape[-1]}]")
    return np.argsort(-logits, kind="stable")[:k]


def retrieve_top_k(state: np.ndarray, params: ModelParams, k: int) -> list[int]:
    return top_k(score(state, params), k).tolist()


class ModelPolicy:
    """Recommend the model's top-``slate_size`` items for a history.

    Simulated trajectories grow one event at a time, so the last state is
    cached and extended with a single recurrent step when the new history
    is the cached one plus one event. The incremental path runs the same
    ``gru_step`` on the same shapes as :func:`encode_state`, hence yields
    bitwise-identical states.
    """

    def __init__(self, params: ModelParams, slate_size: int = 10):
        self.params = params
        self.slate_size = slate_size
        self._len = 0
        self._last: Event | None = None
        self._state = np.zeros(params.dim)

    def state(self, history: Sequence[Event]) -> np.ndarray:
        n = len(history)
        last = history[-1] if n else None
        if n == self._len and last is self._last:
            return self._state
        if (
            n == self._len + 1
            and n <= self.params.max_history
            and (n == 1 or history[-2] is self._last)
        ):
            h = self.step(self._state, last)
        else:
            h = encode_state(history, self.params)
        self._len, self._last, self._state = n, last, h
        return h

    def step(self, h: np.ndarray, event: Event) -> np.ndarray:
        """Advance a state by one event, honoring input exclusion."""
        if self.params.feature_config.exclude_disliked_from_input and event.disliked:
            return h
        return gru_step(h, encode_event(event, self.params), self.params)

    def __call__(self, history, rng=None):
        return retrieve_top_k(self.state(history), self.params, self.slate_size)

    def __getstate__(self):
        return {"params": self.params, "slate_size": self.slate_size}

    def __setstate__(self, state):
        self.__init__(state["params"], state["slate_size"])


# --- checkpoints -------------------------------------------------------------


class CheckpointError(Exception):
    """Base class for checkpoint load failures."""


class ChecksumError(CheckpointError):
    """Content is truncated, unparseable, or does not match its checksum."""


class CheckpointVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    """Well-formed JSON missing required fields or carrying malformed values."""


class DimensionError(CheckpointError, ValueError):
    pass


def _checksum(meta: dict, arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256(json.dumps(meta, sort_keys=True).encode())
    for name in BLOCKS:
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        h.update(name.encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _meta(params: ModelParams) -> dict:
    return {
        "feature_config": asdict(params.feature_config),
        "dims": {
            "num_items": params.num_items,
            "dim": params.dim,
            "num_features": NUM_FEATURES,
            "max_history": params.max_history,
        },
        "variant": params.variant,
    }


def save_checkpoint(params: ModelParams, path) -> None:
    meta = _meta(params)
    doc = {
        "version": CHECKPOINT_VERSION,
        **meta,
        "arrays": {name: a.ravel().tolist() for name, a in params.arrays().items()},
        "checksum": _checksum(meta, params.arrays()),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path, num_items: int | None = None) -> ModelParams:
    """Load and verify a checkpoint; ``num_items`` pins the expected corpus size."""
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ChecksumError(f"{path}: content unreadable or truncated ({exc})") from exc
    if not isinstance(doc, dict):
        raise CorruptCheckpointError(f"{path}: top-level value is not an object")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: version {doc.get('version')!r} != {CHECKPOINT_VERSION}")
    try:
        fc = FeatureConfig(**doc["feature_config"])
        dims = doc["dims"]
        A, d, f = dims["num_items"], dims["dim"], dims["num_features"]
        shapes = {
            "item_embeddings": (A, d),
            "w_input": (d + f, 3 * d),
            "w_hidden": (d, 3 * d),
            "bias": (3 * d,),
        }
        raw = {name: np.asarray(doc["arrays"][name], dtype=np.float64) for name in BLOCKS}
        stored = doc["checksum"]
        max_history = dims["max_history"]
        variant = doc.get("variant", "")
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    if f != NUM_FEATURES:
        raise DimensionError(f"{path}: num_features={f}, expected {NUM_FEATURES}")
    for name, shape in shapes.items():
        if raw[name].size != int(np.prod(shape)):
            raise DimensionError(f"{path}: {name} has {raw[name].size} values, expected shape {shape}")
    arrays = {name: raw[name].reshape(shapes[name]) for name in BLOCKS}
    meta = {k: doc[k] for k in ("feature_config", "dims", "variant") if k in doc}
    if _checksum(meta, arrays) != stored:
        raise ChecksumError(f"{path}: checksum mismatch")
    if num_items is not None and A != num_items:
        raise DimensionError(f"{path}: checkpoint has {A} items, corpus has {num_items}")
    return ModelParams(**arrays, feature_config=fc, max_history=max_history, variant=variant)
