import numpy as np
import pytest

from tailaug import corpus, simcand, synth
from tailaug.corpus import Interaction


def store_from_sequences(user_items: dict, max_len: int = 50, split: bool = True):
    """Build a split store from {user: [raw item ids in time order]}."""
    log = []
    for user, items in user_items.items():
        for t, item in enumerate(items):
            log.append(Interaction(str(user), str(item), t))
    store = corpus.build_sequences(log, max_len)
    return corpus.leave_one_out_split(store) if split else store


def segmentation_with_heads(store, head_items, head_users=(), beta=0.5):
    """Segmentation with explicit head membership (internal ids)."""
    head_items = frozenset(head_items)
    head_users = frozenset(head_users)
    return corpus.Segmentation(
        head_users=head_users,
        tail_users=frozenset(range(store.n_users)) - head_users,
        head_items=head_items,
        tail_items=frozenset(range(1, store.n_items + 1)) - head_items,
        beta=beta, n_users=store.n_users, n_items=store.n_items)


def candidate_sets(n_items, mapping: dict, k: int = 10):
    """CandidateSets with an explicit union list per internal item id."""
    empty = np.array([], dtype=np.int64)
    c = [np.asarray(mapping.get(v, []), dtype=np.int64) for v in range(1, n_items + 1)]
    return simcand.CandidateSets(k=k, cr=[empty] * n_items, cc=[empty] * n_items, c=c)


@pytest.fixture(scope="session")
def small_corpus():
    """Deterministic synthetic corpus shared by training/eval tests."""
    log = synth.generate_interactions(n_users=80, n_items=50, n_topics=5, seed=11)
    log = corpus.k_core_filter(log, 3)
    store = corpus.leave_one_out_split(corpus.build_sequences(log, 20))
    seg = corpus.segment(store, beta=0.5)
    cands, sim = simcand.build_candidates(
        store, seg, simcand.SolverConfig(ridge_penalty=10.0, diag_cap=0.2), k=5)
    return store, seg, cands, sim


@pytest.fixture(scope="session")
def medium_store():
    """Larger corpus where per-epoch progress dominates sampling noise."""
    log = synth.generate_interactions(n_users=300, n_items=80, n_topics=6, seed=11)
    log = corpus.k_core_filter(log, 3)
    return corpus.leave_one_out_split(corpus.build_sequences(log, 20))


def users_with_train_len(store, min_len, count):
    users = [u for u in range(store.n_users) if len(store.train_prefix(u)) >= min_len]
    return users[:count]
