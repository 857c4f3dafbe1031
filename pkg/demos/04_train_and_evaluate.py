"""End-to-end training comparison at demo scale.

Trains the recurrent encoder twice on the same corpus and seed: once
with the plain objective only (baseline), once with the two-stage
schedule whose second stage adds the operator and cross-augmentation
losses.  Both arms get the same total number of epochs; the segmented
report shows where the augmentation helps.

Takes a couple of minutes on one CPU core.  For the full five-seed
protocol use the CLI (see README).
"""

from tailaug import corpus, evaluation, simcand, synth
from tailaug.augment import OperatorConfig
from tailaug.encoders import init_model
from tailaug.training import TrainConfig, init_adam, train_stage1, train_stage2

log = synth.generate_interactions(n_users=2000, n_items=800, n_topics=10, seed=9)
store = corpus.leave_one_out_split(
    corpus.build_sequences(corpus.k_core_filter(log, 5), max_len=50))
seg = corpus.segment(store)
cands, _ = simcand.build_candidates(store, seg, simcand.SolverConfig(10.0, 0.2), k=10)
stats = corpus.dataset_stats(store)
print(f"corpus: {stats.n_users} users, {stats.n_items} items, "
      f"avg length {stats.avg_length:.1f}")

SEED = 0
cfg = TrainConfig(batch_size=256, learning_rate=0.003, seed=SEED,
                  stage1_epochs=25, stage2_epochs=25, patience=None)
op_cfg = OperatorConfig(a=0.2, b=0.8, alpha=0.3)


def evaluate(model, label):
    report = evaluation.evaluate_model(model, store, seg, ks=(5, 10, 20))
    print(f"\n=== {label} ===")
    print(evaluation.format_table(report))
    return report


# ---------------------------------------------------------------------
# Baseline: the plain objective for the full epoch budget.
model = init_model(store.n_items, dim=32, seed=SEED, encoder="gru")
train_stage1(store, model, cfg, epochs=cfg.stage1_epochs + cfg.stage2_epochs)
base = evaluate(model, "baseline (plain objective, 50 epochs)")

# ---------------------------------------------------------------------
# Two-stage: plain objective first so embeddings settle, then the
# augmentation losses join with unit weights.
model = init_model(store.n_items, dim=32, seed=SEED, encoder="gru")
adam = init_adam(model.params)
_, adam = train_stage1(store, model, cfg, adam=adam)
train_stage2(store, model, cands, seg, cfg, op_cfg, adam=adam)
aug = evaluate(model, "augmented (25 plain + 25 augmented epochs)")

# ---------------------------------------------------------------------
b, a = base.segments, aug.segments
for name in ("overall", "head_item", "tail_item", "head_user", "tail_user"):
    if name in b and name in a:
        x, y = b[name]["hit@10"], a[name]["hit@10"]
        rel = (y - x) / x if x else float("inf")
        print(f"H@10 {name:10s}: {x:.4f} -> {y:.4f}  ({rel:+.1%})")
print(f"TCov@5          : {base.tcov[5]:.4f} -> {aug.tcov[5]:.4f}")
