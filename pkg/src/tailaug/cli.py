"""Command-line pipeline: prepare -> candidates -> train -> evaluate -> report.

Each subcommand persists versioned artifacts into an output directory and
embeds a lineage id (config hash chained through parents); downstream
subcommands refuse inputs from a different lineage unless ``--force`` is
given.  Flags override config-file keys.  Exit codes: 0 ok, 2 config
error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import corpus, evaluation, simcand, synth, training
from .augment import OperatorConfig
from .config import config_hash, lineage_id, load_config
from .encoders import init_model
from .errors import ConfigError, DataError, NumericError, TailaugError
from .rand import SUBSAMPLE, derive_rng

CORPUS_KEYS = ["corpus.k_core", "corpus.max_len", "corpus.delimiter",
               "corpus.header", "corpus.beta", "corpus.sample_users", "seed"]
CANDIDATE_KEYS = ["simcand.ridge_penalty", "simcand.diag_cap", "simcand.k",
                  "simcand.read"]
TRAIN_KEYS = ["model.dim", "model.encoder", "train.batch_size",
              "train.stage1_epochs", "train.stage2_epochs", "train.learning_rate",
              "train.beta1", "train.beta2", "train.eps", "train.operator_loss",
              "train.cross_loss", "train.patience", "augment.a", "augment.b",
              "augment.alpha"]


def _file_sha(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def _artifact(out_dir, name) -> Path:
    return Path(out_dir) / name


def _check_lineage(expected: str | None, found: str | None, what: str, force: bool):
    if force or expected is None or found is None:
        return
    if expected != found:
        raise DataError(
            f"{what}: lineage mismatch (expected {expected}, found {found}); "
            "artifacts come from a different config or input. Re-run the "
            "upstream step or pass --force to override.")


# ---------------------------------------------------------------- prepare

def cmd_prepare(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    log = corpus.load_interactions(args.input, delimiter=cfg["corpus.delimiter"],
                                   header=cfg["corpus.header"])
    log = corpus.k_core_filter(log, cfg["corpus.k_core"])
    n_sample = cfg["corpus.sample_users"]
    if n_sample:
        users = sorted({r.user_id for r in log})
        if n_sample < len(users):
            rng = derive_rng(cfg["seed"], SUBSAMPLE)
            keep = set(np.asarray(users, dtype=object)[
                rng.permutation(len(users))[:n_sample]])
            log = [r for r in log if r.user_id in keep]
            log = corpus.k_core_filter(log, cfg["corpus.k_core"])
    if not log:
        raise DataError(
            f"k-core filtering with k={cfg['corpus.k_core']} removed every "
            "interaction; the dataset is too sparse for this k")

    store = corpus.leave_one_out_split(
        corpus.build_sequences(log, cfg["corpus.max_len"]))
    seg = corpus.segment(store, beta=cfg["corpus.beta"])
    stats = corpus.dataset_stats(store)

    prep_id = lineage_id("prepare", config_hash(cfg, CORPUS_KEYS),
                         {"input": _file_sha(args.input)})
    lineage = {"id": prep_id}
    store.lineage = lineage
    store.save(_artifact(out_dir, "store.json"))
    seg.save(_artifact(out_dir, "segmentation.json"), lineage=lineage)
    stats_dict = stats.to_json_dict()
    stats_dict["lineage"] = lineage
    corpus.write_json(_artifact(out_dir, "stats.json"), stats_dict)

    print(f"users={stats.n_users} items={stats.n_items} "
          f"interactions={stats.n_interactions} avg_length={stats.avg_length:.2f} "
          f"sparsity={stats.sparsity:.4%}")
    print(f"head_users={len(seg.head_users)} head_items={len(seg.head_items)} "
          f"lineage={prep_id}")
    return 0


def _load_prepared(out_dir):
    store_path = _artifact(out_dir, "store.json")
    seg_path = _artifact(out_dir, "segmentation.json")
    for p in (store_path, seg_path):
        if not p.exists():
            raise DataError(f"missing artifact {p}; run `tailaug prepare` first")
    store = corpus.SequenceStore.load(store_path)
    seg = corpus.Segmentation.load(seg_path)
    seg_lineage = corpus.read_json(seg_path).get("lineage", {})
    store_id = (store.lineage or {}).get("id")
    _check_lineage(store_id, seg_lineage.get("id"), "segmentation vs store", False)
    return store, seg, store_id


# ------------------------------------------------------------- candidates

def cmd_candidates(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out_dir = Path(args.out_dir)
    store, seg, store_id = _load_prepared(out_dir)

    if store.n_items > cfg["simcand.warn_items"]:
        print(f"warning: {store.n_items} items exceed simcand.warn_items="
              f"{cfg['simcand.warn_items']}; the dense solve needs "
              f"~{8 * store.n_items ** 2 / 1e9:.1f} GB. Consider preparing with "
              "corpus.sample_users at desk scale.", file=sys.stderr)

    solver_cfg = simcand.SolverConfig(ridge_penalty=cfg["simcand.ridge_penalty"],
                                      diag_cap=cfg["simcand.diag_cap"])
    cands, sim = simcand.build_candidates(store, seg, solver_cfg,
                                          cfg["simcand.k"], read=cfg["simcand.read"])
    cand_id = lineage_id("candidates", config_hash(cfg, CANDIDATE_KEYS),
                         {"prepare": store_id or ""})
    cands.save(_artifact(out_dir, "candidates.json"),
               lineage={"id": cand_id, "prepare": store_id})
    if args.save_similarity:
        sim.save(_artifact(out_dir, "similarity.bin"))
    sizes = [len(c) for c in cands.c]
    print(f"candidates for {store.n_items} items: mean |c_v|={np.mean(sizes):.1f} "
          f"min={min(sizes)} max={max(sizes)}; solver branches={sim.branch_counts}; "
          f"lineage={cand_id}")
    return 0


# ------------------------------------------------------------------ train

def _train_one_seed(cfg, mode, seed, store, seg, cands, store_id, cand_id,
                    out_dir, trace_path, quiet=False):
    t0 = time.perf_counter()
    tcfg = training.TrainConfig(
        batch_size=cfg["train.batch_size"],
        stage1_epochs=cfg["train.stage1_epochs"],
        stage2_epochs=cfg["train.stage2_epochs"],
        learning_rate=cfg["train.learning_rate"],
        beta1=cfg["train.beta1"], beta2=cfg["train.beta2"], eps=cfg["train.eps"],
        seed=seed,
        enable_operator_loss=cfg["train.operator_loss"],
        enable_cross_loss=cfg["train.cross_loss"],
        patience=cfg["train.patience"] if cfg["train.patience"] >= 0 else None,
    )
    op_cfg = OperatorConfig(a=cfg["augment.a"], b=cfg["augment.b"],
                            alpha=cfg["augment.alpha"])
    model = init_model(store.n_items, cfg["model.dim"], seed,
                       encoder=cfg["model.encoder"])
    validator = None
    if tcfg.patience is not None:
        validator = lambda m: evaluation.validation_score(m, store, k=10)

    adam = training.init_adam(model.params)
    if mode == "baseline":
        history, adam = training.train_stage1(
            store, model, tcfg, epochs=tcfg.stage1_epochs + tcfg.stage2_epochs,
            adam=adam, validator=validator)
    else:
        history, adam = training.train_stage1(store, model, tcfg, adam=adam,
                                              validator=validator)
        trace = open(trace_path, "w", encoding="utf-8") if trace_path else None
        try:
            h2, adam = training.train_stage2(store, model, cands, seg, tcfg, op_cfg,
                                             adam=adam, validator=validator,
                                             trace=trace)
        finally:
            if trace is not None:
                trace.close()
        history = history + h2

    ckpt_path = _artifact(out_dir, f"checkpoint_{mode}_seed{seed}.bin")
    config_meta = {k: cfg[k] for k in TRAIN_KEYS}
    config_meta.update({"mode": mode, "seed": seed})
    training.save_checkpoint(
        ckpt_path, model, adam, epoch=history[-1]["epoch"] if history else 0,
        config_meta=config_meta,
        metrics={"final_loss": history[-1]["loss_total"] if history else None},
        lineage={"prepare": store_id, "candidates": cand_id})
    with open(_artifact(out_dir, f"losses_{mode}_seed{seed}.jsonl"), "w",
              encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if not quiet:
        last = history[-1] if history else {}
        print(f"mode={mode} seed={seed} epochs={len(history)} "
              f"final_loss={last.get('loss_total', float('nan')):.4f} "
              f"({time.perf_counter() - t0:.1f}s) -> {ckpt_path.name}")
    return ckpt_path


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out_dir = Path(args.out_dir)
    store, seg, store_id = _load_prepared(out_dir)

    cands, cand_id = None, None
    needs_candidates = args.mode == "augmented"
    cand_path = _artifact(out_dir, "candidates.json")
    if needs_candidates:
        if not cand_path.exists():
            raise DataError(f"missing artifact {cand_path}; run `tailaug candidates` first")
        cands = simcand.CandidateSets.load(cand_path)
        cand_lineage = corpus.read_json(cand_path).get("lineage", {})
        cand_id = cand_lineage.get("id")
        _check_lineage(store_id, cand_lineage.get("prepare"),
                       "candidates vs store", args.force)

    seeds = _parse_seeds(args.seeds) if args.seeds else [cfg["seed"]]
    for seed in seeds:
        _train_one_seed(cfg, args.mode, seed, store, seg, cands, store_id,
                        cand_id, out_dir, args.trace)
    return 0


# --------------------------------------------------------------- evaluate

def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out_dir = Path(args.out_dir)
    store, seg, store_id = _load_prepared(out_dir)

    if args.checkpoint:
        ckpt_paths = [Path(p) for p in args.checkpoint]
    else:
        seeds = _parse_seeds(args.seeds) if args.seeds else [cfg["seed"]]
        ckpt_paths = [_artifact(out_dir, f"checkpoint_{args.mode}_seed{s}.bin")
                      for s in seeds]
    reports = []
    for path in ckpt_paths:
        if not path.exists():
            raise DataError(f"missing checkpoint {path}; run `tailaug train` first")
        model, _, meta = training.load_checkpoint(path)
        _check_lineage(store_id, meta.get("lineage", {}).get("prepare"),
                       f"checkpoint {path.name} vs store", args.force)
        report = evaluation.evaluate_model(
            model, store, seg, ks=cfg["eval.ks"], phase=args.phase,
            filter_seen=cfg["eval.filter_seen"])
        rep_path = path.with_name(path.stem + f"_report_{args.phase}.json")
        report.save(rep_path, lineage={"checkpoint": path.name,
                                       "prepare": store_id})
        rep_path.with_suffix(".txt").write_text(
            evaluation.format_table(report) + "\n", encoding="utf-8")
        reports.append(report)
        print(f"== {path.name} ({args.phase}) ==")
        print(evaluation.format_table(report))
    if len(reports) > 1:
        mean = evaluation.mean_report(reports)
        mean_path = _artifact(out_dir, f"report_{args.mode}_mean_{args.phase}.json")
        mean.save(mean_path)
        mean_path.with_suffix(".txt").write_text(
            evaluation.format_table(mean) + "\n", encoding="utf-8")
        print(f"== mean over {len(reports)} checkpoints ==")
        print(evaluation.format_table(mean))
    return 0


# ----------------------------------------------------------------- report

def cmd_report(args) -> int:
    reports = [evaluation.MetricReport.load(p) for p in args.reports]
    mean = evaluation.mean_report(reports) if len(reports) > 1 else reports[0]
    if args.out:
        mean.save(args.out)
    print(evaluation.format_table(mean))
    return 0


# ------------------------------------------------------------------ synth

def cmd_synth(args) -> int:
    # test-fixture generator, handy for demos; not part of the core pipeline
    log = synth.generate_interactions(n_users=args.users, n_items=args.items,
                                      seed=args.seed)
    synth.write_csv(args.out, log, delimiter=",")
    print(f"wrote {len(log)} interactions ({args.users} users, {args.items} items) "
          f"to {args.out}")
    return 0


# ------------------------------------------------------------------- main

_FLAG_TO_KEY = {
    "seed": "seed",
    "k_core": "corpus.k_core",
    "max_len": "corpus.max_len",
    "delimiter": "corpus.delimiter",
    "header": "corpus.header",
    "beta": "corpus.beta",
    "sample_users": "corpus.sample_users",
    "ridge_penalty": "simcand.ridge_penalty",
    "diag_cap": "simcand.diag_cap",
    "k": "simcand.k",
    "read": "simcand.read",
    "a": "augment.a",
    "b": "augment.b",
    "alpha": "augment.alpha",
    "dim": "model.dim",
    "encoder": "model.encoder",
    "batch_size": "train.batch_size",
    "stage1_epochs": "train.stage1_epochs",
    "stage2_epochs": "train.stage2_epochs",
    "learning_rate": "train.learning_rate",
    "patience": "train.patience",
    "operator_loss": "train.operator_loss",
    "cross_loss": "train.cross_loss",
    "ks": "eval.ks",
    "filter_seen": "eval.filter_seen",
}


def _overrides(args) -> dict:
    out = {}
    for flag, key in _FLAG_TO_KEY.items():
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = value
    return out


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--seeds expects comma-separated integers: {exc}") from exc
    if not seeds:
        raise ConfigError("--seeds is empty")
    return seeds


def _add_common(p):
    p.add_argument("--config", help="config file (JSON or key=value lines)")
    p.add_argument("--out-dir", default="artifacts", help="artifact directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true",
                   help="proceed despite artifact lineage mismatches")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tailaug",
        description="Long-tail sequential recommendation with tail-aware augmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest, filter, split, segment")
    _add_common(p)
    p.add_argument("--input", required=True, help="interaction file (user,item,timestamp)")
    p.add_argument("--k-core", dest="k_core", type=int, default=None)
    p.add_argument("--max-len", dest="max_len", type=int, default=None)
    p.add_argument("--delimiter", default=None)
    p.add_argument("--header", action="store_const", const=True, default=None,
                   help="skip a header row")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--sample-users", dest="sample_users", type=int, default=None,
                   help="sub-sample this many users (then re-apply k-core)")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("candidates", help="solve similarity and build candidate sets")
    _add_common(p)
    p.add_argument("--ridge-penalty", dest="ridge_penalty", type=float, default=None)
    p.add_argument("--diag-cap", dest="diag_cap", type=float, default=None)
    p.add_argument("--k", type=int, default=None, help="top-K correlation candidates")
    p.add_argument("--read", choices=["column", "row"], default=None)
    p.add_argument("--save-similarity", action="store_true",
                   help="persist the dense similarity matrix blob")
    p.set_defaults(func=cmd_candidates)

    p = sub.add_parser("train", help="train a model (baseline or augmented)")
    _add_common(p)
    p.add_argument("--mode", choices=["baseline", "augmented"], default="augmented")
    p.add_argument("--seeds", default=None, help="comma-separated seed sweep")
    p.add_argument("--encoder", choices=["gru", "pooled"], default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--stage1-epochs", dest="stage1_epochs", type=int, default=None)
    p.add_argument("--stage2-epochs", dest="stage2_epochs", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--patience", type=int, default=None,
                   help="early-stopping patience; negative disables")
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--trace", default=None,
                   help="write one JSON line per augmented sample to this file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="rank held-out targets and report metrics")
    _add_common(p)
    p.add_argument("--checkpoint", nargs="*", default=None,
                   help="explicit checkpoint path(s); default derives from mode/seeds")
    p.add_argument("--mode", choices=["baseline", "augmented"], default="augmented")
    p.add_argument("--seeds", default=None, help="comma-separated seed sweep")
    p.add_argument("--phase", choices=["valid", "test"], default="test")
    p.add_argument("--ks", default=None, help="comma-separated metric cutoffs")
    p.add_argument("--filter-seen", dest="filter_seen", action="store_const",
                   const=True, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="aggregate one or more report files")
    p.add_argument("reports", nargs="+", help="metric report JSON files")
    p.add_argument("--out", default=None, help="write the (mean) report here")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="generate a synthetic long-tail interaction log")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=3500)
    p.add_argument("--items", type=int, default=1200)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except TailaugError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
