"""Full-ranking evaluation with segmented metrics and tail coverage.

Every evaluation scores the target against the whole real-item set (no
sampled negatives, no seen-item filtering by default) and breaks ties
pessimistically: the target ranks after every item with an equal score,
so metrics never benefit from score collisions.

Reports carry hit ratio and NDCG at each cutoff for five segments
(overall, head/tail item by the *target's* membership, head/tail user by
the user's membership) plus tail coverage: the fraction of tail items
that appear in at least one user's top-K list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import Segmentation, SequenceStore, read_json, write_json
from .encoders import ModelState, encode_batch
from .errors import DataError

REPORT_SCHEMA = "tailaug.metric_report.v1"

SEGMENTS = ("overall", "head_item", "tail_item", "head_user", "tail_user")

_EVAL_BATCH = 512


@dataclass(frozen=True)
class RankingResult:
    user: int
    target: int
    rank: int


def _phase_input(store: SequenceStore, u: int, phase: str) -> np.ndarray:
    if phase == "valid":
        seq = store.train_prefix(u)
    elif phase == "test":
        seq = np.concatenate([store.train_prefix(u), [store.valid_item(u)]])
    else:
        raise ValueError(f"phase must be 'valid' or 'test', got {phase!r}")
    return seq[-store.max_len:]


def _phase_target(store: SequenceStore, u: int, phase: str) -> int:
    return store.valid_item(u) if phase == "valid" else store.test_item(u)


def _score_users(model: ModelState, store: SequenceStore, users, phase: str):
    """Yield (user, scores-over-real-items, input-seq) in eval batches."""
    users = list(users)
    item_emb = model.embeddings[1:]  # padding row excluded from ranking
    for start in range(0, len(users), _EVAL_BATCH):
        chunk = users[start:start + _EVAL_BATCH]
        seqs = [_phase_input(store, u, phase) for u in chunk]
        h, _ = encode_batch(model, seqs)
        scores = h @ item_emb.T
        for row, u, seq in zip(scores, chunk, seqs):
            yield u, row, seq


def rank_of_target(scores: np.ndarray, target: int) -> int:
    """1-based pessimistic rank: the target sorts after equal scores.

    ``scores[j]`` is the score of internal item id j + 1.
    """
    return int(np.count_nonzero(scores >= scores[target - 1]))


def rank_users(model: ModelState, store: SequenceStore, phase: str = "test",
               users=None, filter_seen: bool = False) -> list[RankingResult]:
    """Rank each user's held-out target over the whole item set.

    ``filter_seen`` (off by default) drops the user's already-seen items
    from the ranking, except the target itself when it reoccurs.
    """
    if users is None:
        users = range(store.n_users)
    out = []
    for u, row, seq in _score_users(model, store, users, phase):
        target = _phase_target(store, u, phase)
        if filter_seen:
            seen = np.unique(seq)
            seen = seen[seen != target]
            row = row.copy()
            row[seen - 1] = -np.inf
        out.append(RankingResult(user=u, target=target,
                                 rank=rank_of_target(row, target)))
    return out


def full_rank(model: ModelState, store: SequenceStore, user: int,
              phase: str = "test", filter_seen: bool = False) -> RankingResult:
    return rank_users(model, store, phase, users=[user], filter_seen=filter_seen)[0]


def hit_at_k(results, k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not results:
        raise DataError("cannot compute metrics over zero ranking results")
    return sum(r.rank <= k for r in results) / len(results)


def ndcg_at_k(results, k: int) -> float:
    """Single-target NDCG: gain 1/log2(rank+1) inside the cutoff, else 0.

    Uses correctly-rounded summation so the value is reproducible to the
    last bit regardless of accumulation order.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not results:
        raise DataError("cannot compute metrics over zero ranking results")
    gains = [1.0 / math.log2(r.rank + 1) if r.rank <= k else 0.0 for r in results]
    return math.fsum(gains) / len(results)


def top_k_lists(model: ModelState, store: SequenceStore, k: int,
                users=None, phase: str = "test") -> dict[int, np.ndarray]:
    """Deterministic top-K recommendation lists (score desc, id asc on ties)."""
    if users is None:
        users = range(store.n_users)
    ids = np.arange(1, store.n_items + 1, dtype=np.int64)
    lists = {}
    for u, row, _ in _score_users(model, store, users, phase):
        order = np.lexsort((ids, -row))
        lists[u] = ids[order[:k]].copy()
    return lists


def tail_coverage_at_k(model: ModelState, store: SequenceStore, k: int,
                       segmentation: Segmentation, users=None,
                       phase: str = "test") -> float:
    """Fraction of tail items recommended to at least one user at cutoff K."""
    if not segmentation.tail_items:
        return 0.0
    covered: set[int] = set()
    head = segmentation.item_head_mask
    for lst in top_k_lists(model, store, k, users=users, phase=phase).values():
        covered.update(int(v) for v in lst if not head[v])
    return len(covered) / len(segmentation.tail_items)


@dataclass
class MetricReport:
    """Per-segment metrics; empty segments are absent rather than zero."""

    ks: list[int]
    segments: dict[str, dict[str, float]]
    tcov: dict[int, float]
    phase: str = "test"

    def to_json_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "ks": list(self.ks),
            "phase": self.phase,
            "segments": self.segments,
            "tcov": {str(k): v for k, v in self.tcov.items()},
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "MetricReport":
        if d.get("schema") != REPORT_SCHEMA:
            raise DataError(f"unexpected report schema: {d.get('schema')!r}")
        return cls(ks=[int(k) for k in d["ks"]],
                   segments=d["segments"],
                   tcov={int(k): float(v) for k, v in d["tcov"].items()},
                   phase=d.get("phase", "test"))

    def save(self, path, lineage: dict | None = None) -> None:
        d = self.to_json_dict()
        if lineage is not None:
            d["lineage"] = lineage
        write_json(path, d)

    @classmethod
    def load(cls, path) -> "MetricReport":
        return cls.from_json_dict(read_json(path))


def _segment_members(results, segmentation: Segmentation):
    yield "overall", results
    yield "head_item", [r for r in results if r.target in segmentation.head_items]
    yield "tail_item", [r for r in results if r.target in segmentation.tail_items]
    yield "head_user", [r for r in results if r.user in segmentation.head_users]
    yield "tail_user", [r for r in results if r.user in segmentation.tail_users]


def segmented_report(results, segmentation: Segmentation, ks,
                     tcov: dict[int, float] | None = None,
                     phase: str = "test") -> MetricReport:
    """Metrics per segment; item segments key on the held-out target."""
    if not results:
        raise DataError("cannot build a report from zero ranking results")
    segments = {}
    for name, members in _segment_members(results, segmentation):
        if not members:
            continue
        row: dict[str, float] = {"count": len(members)}
        for k in ks:
            row[f"hit@{k}"] = hit_at_k(members, k)
            row[f"ndcg@{k}"] = ndcg_at_k(members, k)
        segments[name] = row
    return MetricReport(ks=list(ks), segments=segments, tcov=tcov or {}, phase=phase)


def evaluate_model(model: ModelState, store: SequenceStore,
                   segmentation: Segmentation, ks=(5, 10, 20),
                   phase: str = "test", filter_seen: bool = False,
                   tcov_ks=None) -> MetricReport:
    """Rank every user, then assemble the segmented report plus tail coverage."""
    results = rank_users(model, store, phase=phase, filter_seen=filter_seen)
    tcov = {int(k): tail_coverage_at_k(model, store, int(k), segmentation, phase=phase)
            for k in (ks if tcov_ks is None else tcov_ks)}
    return segmented_report(results, segmentation, ks, tcov=tcov, phase=phase)


def validation_score(model: ModelState, store: SequenceStore, k: int = 10) -> float:
    """NDCG@k on the validation targets (early-stopping criterion)."""
    results = rank_users(model, store, phase="valid")
    return ndcg_at_k(results, k)


_COLUMNS = (("overall", "Overall"), ("head_item", "Head Item"),
            ("tail_item", "Tail Item"), ("head_user", "Head User"),
            ("tail_user", "Tail User"))


def format_table(report: MetricReport) -> str:
    """Aligned text table: one metric per row, one segment per column."""
    width = 11
    header = f"{'metric':<10}" + "".join(f"{label:>{width}}" for _, label in _COLUMNS)
    lines = [header, "-" * len(header)]
    for k in report.ks:
        for metric in (f"hit@{k}", f"ndcg@{k}"):
            cells = []
            for name, _ in _COLUMNS:
                seg = report.segments.get(name)
                cells.append(f"{seg[metric]:>{width}.4f}" if seg else f"{'--':>{width}}")
            lines.append(f"{metric:<10}" + "".join(cells))
    counts = []
    for name, _ in _COLUMNS:
        seg = report.segments.get(name)
        counts.append(f"{seg['count']:>{width}d}" if seg else f"{'--':>{width}}")
    lines.append(f"{'count':<10}" + "".join(counts))
    for k in sorted(report.tcov):
        lines.append(f"tcov@{k:<5}{report.tcov[k]:>{width}.4f}")
    return "\n".join(lines)


def mean_report(reports: list[MetricReport]) -> MetricReport:
    """Average metrics across same-structure reports (multi-seed runs)."""
    if not reports:
        raise DataError("no reports to aggregate")
    first = reports[0]
    for other in reports[1:]:
        if other.ks != first.ks or set(other.segments) != set(first.segments):
            raise DataError("reports have mismatched structure; cannot average")
    segments = {}
    for name, row in first.segments.items():
        out = {"count": row["count"]}
        for key in row:
            if key == "count":
                continue
            out[key] = float(np.mean([r.segments[name][key] for r in reports]))
        segments[name] = out
    tcov = {k: float(np.mean([r.tcov[k] for r in reports])) for k in first.tcov}
    return MetricReport(ks=list(first.ks), segments=segments, tcov=tcov,
                        phase=first.phase)
