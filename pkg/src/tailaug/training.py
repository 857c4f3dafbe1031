"""Losses, negative sampling, Adam, and the two-stage training loop.

Stage 1 optimizes the plain next-item BCE objective so item embeddings
converge on original data; stage 2 adds, with unit weights, a per-sequence
operator-augmentation loss and a batch-level cross-mixup loss.  Disabling
both stage-2 additions reproduces stage-1 behaviour bit-exactly, because
the main path draws from random streams that are disjoint from the
augmentation streams and epochs are indexed globally across stages.

Per step, each eligible user contributes one (prefix -> next item) pair:
a prefix end is sampled uniformly inside the training prefix and the
following training item is the positive; one uniform negative is drawn
from the items absent from the user's training prefix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import serialize
from .augment import (CrossPlan, OperatorConfig, apply_cross_mixup,
                      augment_sequence, plan_cross_batch)
from .corpus import Segmentation, SequenceStore, classify_sequence
from .encoders import ModelState, backward_batch, encode_batch, lookup, sigmoid
from .errors import DataError, NumericError
from .rand import AUGMENT, CROSS, NEGATIVE, PREFIX, SHUFFLE, derive_rng
from .simcand import CandidateSets

CHECKPOINT_SCHEMA = "tailaug.checkpoint.v1"


@dataclass
class TrainConfig:
    batch_size: int = 256
    stage1_epochs: int = 50
    stage2_epochs: int = 150
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    enable_operator_loss: bool = True
    enable_cross_loss: bool = True
    patience: int | None = 10

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        # zero is legal (no-op steps, useful in tests); negative is not
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ValueError("epoch counts must be >= 0")


def softplus(x):
    return np.logaddexp(0.0, x)


def bce_loss_batch(h, e_pos, e_neg):
    """Row-wise -[log sigma(h.e+) + log(1 - sigma(h.e-))], numerically stable.

    Returns (losses, dh, de_pos, de_neg); gradients are per row and
    unscaled (callers apply their own reduction weights).
    """
    h = np.asarray(h, dtype=np.float64)
    e_pos = np.asarray(e_pos, dtype=np.float64)
    e_neg = np.asarray(e_neg, dtype=np.float64)
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(e_pos)) and np.all(np.isfinite(e_neg))):
        raise NumericError("non-finite inputs to BCE loss")
    x_pos = np.sum(h * e_pos, axis=-1)
    x_neg = np.sum(h * e_neg, axis=-1)
    losses = softplus(-x_pos) + softplus(x_neg)
    g_pos = sigmoid(np.atleast_1d(x_pos)) - 1.0
    g_neg = sigmoid(np.atleast_1d(x_neg))
    g_pos = g_pos.reshape(x_pos.shape)[..., np.newaxis]
    g_neg = g_neg.reshape(x_neg.shape)[..., np.newaxis]
    dh = g_pos * e_pos + g_neg * e_neg
    de_pos = g_pos * h
    de_neg = g_neg * h
    return losses, dh, de_pos, de_neg


def bce_loss(h, e_pos, e_neg):
    """Single-instance BCE; returns (loss, dh, de_pos, de_neg)."""
    losses, dh, de_pos, de_neg = bce_loss_batch(
        np.asarray(h)[np.newaxis], np.asarray(e_pos)[np.newaxis], np.asarray(e_neg)[np.newaxis])
    return float(losses[0]), dh[0], de_pos[0], de_neg[0]


def sample_negative(user_train_items, n_items: int, rng: np.random.Generator) -> int:
    """Uniform item id outside the user's training items; never the padding id."""
    owned = user_train_items if isinstance(user_train_items, (set, frozenset)) \
        else set(int(v) for v in user_train_items)
    if len(owned) >= n_items:
        raise DataError("user interacted with every item; no negative exists")
    for _ in range(10_000):
        v = int(rng.integers(1, n_items + 1))
        if v not in owned:
            return v
    eligible = np.setdiff1d(np.arange(1, n_items + 1), np.fromiter(owned, dtype=np.int64))
    return int(eligible[rng.integers(len(eligible))])


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init_adam(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(m={k: np.zeros_like(p) for k, p in params.items()},
                     v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, config: TrainConfig) -> dict[str, np.ndarray]:
    """Standard bias-corrected Adam update, applied in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - config.beta1 ** t
    bc2 = 1.0 - config.beta2 ** t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        params[name] -= config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.eps)
    return params


@dataclass
class Batch:
    users: np.ndarray
    prefixes: list[np.ndarray]
    targets: np.ndarray
    negatives: np.ndarray

    def __len__(self):
        return len(self.users)


def _epoch_batches(store: SequenceStore, eligible: np.ndarray, train_sets: list[set],
                   seed: int, epoch: int, batch_size: int):
    order = eligible[derive_rng(seed, SHUFFLE, epoch).permutation(len(eligible))]
    for start in range(0, len(order), batch_size):
        users = order[start:start + batch_size]
        prefixes, targets, negatives = [], [], []
        for u in users:
            train = store.train_prefix(int(u))
            k = int(derive_rng(seed, PREFIX, epoch, int(u)).integers(1, len(train)))
            prefixes.append(train[:k])
            targets.append(int(train[k]))
            neg_rng = derive_rng(seed, NEGATIVE, epoch, int(u))
            negatives.append(sample_negative(train_sets[int(u)], store.n_items, neg_rng))
        yield Batch(users=users, prefixes=prefixes,
                    targets=np.asarray(targets, dtype=np.int64),
                    negatives=np.asarray(negatives, dtype=np.int64))


def batch_loss(model: ModelState, batch: Batch, *,
               samples=None, op_lams=None, plan: CrossPlan | None = None,
               enable_operator: bool = False, enable_cross: bool = False):
    """Composite per-batch loss and gradients.

    The main term always runs.  With the operator term enabled, ``samples``
    and ``op_lams`` supply each row's augmentation and mixup weight; the
    augmented representation blends the extended-original encoding with
    the augmented-sequence encoding.  With the cross term enabled, ``plan``
    pairs rows of the pool (originals followed by the operator-mixed rows,
    when present) within preference classes; positives and negatives are
    mixed with the same pairing and weights.  All randomness is injected,
    so the function is deterministic and finite-difference checkable.

    Returns (components, grads) where components has per-term means.
    """
    n = len(batch)
    h, cache = encode_batch(model, batch.prefixes)
    e_pos = lookup(model, batch.targets)
    e_neg = lookup(model, batch.negatives)

    losses, dh_row, dpos_row, dneg_row = bce_loss_batch(h, e_pos, e_neg)
    loss_main = float(np.mean(losses))
    dh = dh_row / n
    dpos = dpos_row / n
    dneg = dneg_row / n

    components = {"main": loss_main, "operator": 0.0, "cross": 0.0}
    h_ao = None
    dh_ext = dh_pr = None
    ext_cache = pr_cache = None
    lam_op = None

    if enable_operator:
        if samples is None or op_lams is None:
            raise ValueError("operator term enabled but samples/op_lams missing")
        h_ext, ext_cache = encode_batch(model, [s.s_ext for s in samples])
        h_pr, pr_cache = encode_batch(model, [s.s_prime for s in samples])
        lam_op = np.asarray(op_lams, dtype=np.float64)[:, np.newaxis]
        h_ao = lam_op * h_ext + (1.0 - lam_op) * h_pr
        op_losses, dh_ao, dpos_row, dneg_row = bce_loss_batch(h_ao, e_pos, e_neg)
        components["operator"] = float(np.mean(op_losses))
        dh_ao = dh_ao / n
        dh_ext = lam_op * dh_ao
        dh_pr = (1.0 - lam_op) * dh_ao
        dpos += dpos_row / n
        dneg += dneg_row / n

    if enable_cross:
        if plan is None:
            raise ValueError("cross term enabled but plan missing")
        if h_ao is not None:
            h_pool = np.concatenate([h, h_ao], axis=0)
            pos_pool = np.concatenate([e_pos, e_pos], axis=0)
            neg_pool = np.concatenate([e_neg, e_neg], axis=0)
        else:
            h_pool, pos_pool, neg_pool = h, e_pos, e_neg
        p = h_pool.shape[0]
        if len(plan.pairing) != p:
            raise ValueError(f"cross plan covers {len(plan.pairing)} rows, pool has {p}")
        h_ac, pos_ac, neg_ac = apply_cross_mixup(plan, h_pool, pos_pool, neg_pool)
        cr_losses, dh_ac, dpos_ac, dneg_ac = bce_loss_batch(h_ac, pos_ac, neg_ac)
        components["cross"] = float(np.mean(cr_losses))
        lam = plan.lams[:, np.newaxis]
        pi = plan.pairing
        dh_pool = lam * (dh_ac / p)
        np.add.at(dh_pool, pi, (1.0 - lam) * (dh_ac / p))
        dpos_pool = lam * (dpos_ac / p)
        np.add.at(dpos_pool, pi, (1.0 - lam) * (dpos_ac / p))
        dneg_pool = lam * (dneg_ac / p)
        np.add.at(dneg_pool, pi, (1.0 - lam) * (dneg_ac / p))
        dh += dh_pool[:n]
        dpos += dpos_pool[:n]
        dneg += dneg_pool[:n]
        if h_ao is not None:
            dh_ao_cross = dh_pool[n:]
            dh_ext += lam_op * dh_ao_cross
            dh_pr += (1.0 - lam_op) * dh_ao_cross
            dpos += dpos_pool[n:]
            dneg += dneg_pool[n:]

    components["total"] = components["main"] + components["operator"] + components["cross"]

    grads = backward_batch(model, cache, dh)
    if enable_operator:
        for extra in (backward_batch(model, ext_cache, dh_ext),
                      backward_batch(model, pr_cache, dh_pr)):
            for name, g in extra.items():
                grads[name] += g
    np.add.at(grads["item_embeddings"], batch.targets, dpos)
    np.add.at(grads["item_embeddings"], batch.negatives, dneg)
    grads["item_embeddings"][0] = 0.0
    return components, grads


def _draw_stage2_randomness(batch: Batch, store, segmentation, candidates,
                            op_config: OperatorConfig, seed: int, epoch: int,
                            step: int, classes_by_user, *, enable_operator,
                            enable_cross, trace=None):
    samples = op_lams = plan = None
    if enable_operator:
        samples, op_lams = [], []
        for u, prefix in zip(batch.users, batch.prefixes):
            rng = derive_rng(seed, AUGMENT, epoch, int(u))
            sample = augment_sequence(prefix, segmentation, candidates, op_config,
                                      store.max_len, rng)
            lam = float(rng.beta(op_config.alpha, op_config.alpha))
            samples.append(sample)
            op_lams.append(lam)
            if trace is not None:
                trace.write(sample.trace_line(user=int(u), mix_weight=lam) + "\n")
    if enable_cross:
        classes = [classes_by_user[int(u)] for u in batch.users]
        if enable_operator:
            classes = classes + classes  # operator rows inherit the original's class
        rng = derive_rng(seed, CROSS, epoch, step)
        plan = plan_cross_batch(classes, op_config.alpha, rng)
    return samples, op_lams, plan


def _run_epochs(store: SequenceStore, model: ModelState, config: TrainConfig, *,
                epochs: int, epoch_offset: int = 0,
                segmentation: Segmentation | None = None,
                candidates: CandidateSets | None = None,
                op_config: OperatorConfig | None = None,
                enable_operator: bool = False, enable_cross: bool = False,
                adam: AdamState | None = None, validator=None, trace=None):
    store._require_split()
    if (enable_operator or enable_cross) and (segmentation is None or candidates is None
                                              or op_config is None):
        raise ValueError("augmentation losses need segmentation, candidates, op_config")
    eligible = np.asarray([u for u in range(store.n_users)
                           if len(store.train_prefix(u)) >= 2], dtype=np.int64)
    if len(eligible) == 0:
        raise DataError("no user has a training prefix of length >= 2")
    train_sets = [set(store.train_prefix(u).tolist()) for u in range(store.n_users)]
    classes_by_user = {}
    if enable_cross:
        classes_by_user = {u: classify_sequence(store.train_prefix(u), segmentation)
                           for u in range(store.n_users)
                           if len(store.train_prefix(u)) >= 1}

    if adam is None:
        adam = init_adam(model.params)
    history = []
    best_score, best_params, bad_epochs = -np.inf, None, 0
    for e in range(epoch_offset, epoch_offset + epochs):
        sums = {"main": 0.0, "operator": 0.0, "cross": 0.0, "total": 0.0}
        count = 0
        for step, batch in enumerate(_epoch_batches(store, eligible, train_sets,
                                                    config.seed, e, config.batch_size)):
            samples, op_lams, plan = _draw_stage2_randomness(
                batch, store, segmentation, candidates, op_config, config.seed, e,
                step, classes_by_user, enable_operator=enable_operator,
                enable_cross=enable_cross, trace=trace)
            components, grads = batch_loss(
                model, batch, samples=samples, op_lams=op_lams, plan=plan,
                enable_operator=enable_operator, enable_cross=enable_cross)
            if not np.isfinite(components["total"]):
                raise NumericError(
                    f"training diverged: non-finite loss at epoch {e}, step {step} "
                    f"(components: {components})")
            adam_step(model.params, grads, adam, config)
            for k in sums:
                sums[k] += components.get(k, 0.0) * len(batch)
            count += len(batch)
        record = {"epoch": e, **{f"loss_{k}": sums[k] / count for k in sums}}
        if validator is not None:
            score = float(validator(model))
            record["valid_score"] = score
            if score > best_score:
                best_score, bad_epochs = score, 0
                best_params = {k: v.copy() for k, v in model.params.items()}
            else:
                bad_epochs += 1
        history.append(record)
        if (validator is not None and config.patience is not None
                and bad_epochs > config.patience):
            break
    if best_params is not None:
        model.params.update(best_params)
    return history, adam


def train_stage1(store: SequenceStore, model: ModelState, config: TrainConfig, *,
                 epochs: int | None = None, epoch_offset: int = 0,
                 adam: AdamState | None = None, validator=None):
    """Main-objective-only training (also the baseline arm)."""
    return _run_epochs(store, model, config,
                       epochs=config.stage1_epochs if epochs is None else epochs,
                       epoch_offset=epoch_offset, adam=adam, validator=validator)


def train_stage2(store: SequenceStore, model: ModelState,
                 candidates: CandidateSets, segmentation: Segmentation,
                 config: TrainConfig, op_config: OperatorConfig, *,
                 epochs: int | None = None, epoch_offset: int | None = None,
                 adam: AdamState | None = None, validator=None, trace=None):
    """Augmented training on top of a stage-1 model.

    Epoch indices continue from stage 1 so that running stage 2 with both
    augmentation losses disabled is bit-identical to more stage-1 epochs.
    """
    return _run_epochs(
        store, model, config,
        epochs=config.stage2_epochs if epochs is None else epochs,
        epoch_offset=config.stage1_epochs if epoch_offset is None else epoch_offset,
        segmentation=segmentation, candidates=candidates, op_config=op_config,
        enable_operator=config.enable_operator_loss,
        enable_cross=config.enable_cross_loss,
        adam=adam, validator=validator, trace=trace)


def save_checkpoint(path, model: ModelState, adam: AdamState | None, *,
                    epoch: int, config_meta: dict, metrics: dict | None = None,
                    lineage: dict | None = None) -> None:
    """Persist parameters (and optimizer moments) as named float32 sections.

    The blob format quantizes to float32; loading restores exactly the
    stored 32-bit values.
    """
    sections = {f"param/{k}": v for k, v in model.params.items()}
    adam_step_count = 0
    if adam is not None:
        sections.update({f"adam_m/{k}": v for k, v in adam.m.items()})
        sections.update({f"adam_v/{k}": v for k, v in adam.v.items()})
        adam_step_count = adam.step
    serialize.write_blob(path, sections, meta={
        "schema": CHECKPOINT_SCHEMA,
        "n_items": model.n_items,
        "dim": model.dim,
        "encoder": model.encoder_name,
        "epoch": epoch,
        "adam_step": adam_step_count,
        "config": config_meta,
        "metrics": metrics or {},
        "lineage": lineage or {},
    })


def load_checkpoint(path):
    sections, meta = serialize.read_blob(path)
    if meta.get("schema") != CHECKPOINT_SCHEMA:
        raise DataError(f"unexpected checkpoint schema: {meta.get('schema')!r}")
    params = {k[len("param/"):]: sections[k].astype(np.float64)
              for k in sections if k.startswith("param/")}
    model = ModelState(n_items=int(meta["n_items"]), dim=int(meta["dim"]),
                       encoder_name=meta["encoder"], params=params)
    adam = None
    if any(k.startswith("adam_m/") for k in sections):
        adam = AdamState(
            m={k[len("adam_m/"):]: sections[k].astype(np.float64)
               for k in sections if k.startswith("adam_m/")},
            v={k[len("adam_v/"):]: sections[k].astype(np.float64)
               for k in sections if k.startswith("adam_v/")},
            step=int(meta["adam_step"]))
    return model, adam, meta
