"""Seeded synthetic interaction logs with long-tail structure.

The generator mimics the shape of public e-commerce review logs: a
Zipf-distributed item popularity (a few head items absorb most traffic),
short per-user histories, and learnable first-order structure.  Items are
grouped into latent topics; each item has a handful of designated
follower items inside its topic, and sequences interleave follower
transitions with popularity-weighted draws.  Because followers are picked
uniformly over the topic, most of them are tail items, so the log carries
genuine head-to-tail co-occurrence signal.

Useful as a desk-scale stand-in wherever a real export is unavailable,
and for deterministic test fixtures.
"""

from __future__ import annotations

import numpy as np

from .corpus import Interaction
from .rand import derive_rng


def generate_interactions(n_users: int = 3500, n_items: int = 1200,
                          n_topics: int = 12, seed: int = 7,
                          mean_extra_len: float = 5.0,
                          zipf_exponent: float = 1.05,
                          follow_prob: float = 0.55,
                          topic_prob: float = 0.85,
                          n_followers: int = 3) -> list[Interaction]:
    """Draw a full interaction log; deterministic per seed."""
    rng = derive_rng(seed, 0)

    popularity = 1.0 / np.arange(1, n_items + 1, dtype=np.float64) ** zipf_exponent
    # shuffle so popularity rank is independent of topic layout
    pop_rank = rng.permutation(n_items)
    weight = popularity[pop_rank]
    weight /= weight.sum()

    topics = np.arange(n_items) % n_topics
    topic_items = [np.flatnonzero(topics == t) for t in range(n_topics)]
    topic_weights = []
    for t in range(n_topics):
        w = weight[topic_items[t]]
        topic_weights.append(w / w.sum())

    followers = np.zeros((n_items, n_followers), dtype=np.int64)
    for v in range(n_items):
        pool = topic_items[topics[v]]
        followers[v] = pool[rng.integers(len(pool), size=n_followers)]

    log: list[Interaction] = []
    for u in range(n_users):
        urng = derive_rng(seed, 1, u)
        topic = int(urng.integers(n_topics))
        length = 3 + int(urng.poisson(mean_extra_len))
        prev = None
        for step in range(length):
            roll = urng.random()
            if prev is not None and roll < follow_prob:
                v = int(followers[prev][urng.integers(n_followers)])
            elif roll < follow_prob + (1 - follow_prob) * topic_prob:
                pool = topic_items[topic]
                v = int(urng.choice(pool, p=topic_weights[topic]))
            else:
                v = int(urng.choice(n_items, p=weight))
            log.append(Interaction(f"u{u:05d}", f"i{v:05d}", step))
            prev = v
    return log


def write_csv(path, interactions: list[Interaction], delimiter: str = ",") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in interactions:
            fh.write(f"{r.user_id}{delimiter}{r.item_id}{delimiter}{r.timestamp}\n")
