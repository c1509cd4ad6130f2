import numpy as np
import pytest

from negrec.catalog import generate_corpus
from negrec.simenv import Event


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(60, 4, 6, 8, seed=3)


def make_event(item_id, dwell=0.5, skipped=False, disliked=False, liked=False, step=0):
    return Event(item_id, dwell, skipped, disliked, liked, step)


def rand_history(rng: np.random.Generator, num_items: int, length: int):
    return tuple(
        make_event(int(rng.integers(num_items)), float(rng.random()), disliked=bool(rng.random() < 0.3), step=t)
        for t in range(length)
    )
