"""Command line entry point: end-to-end workflows over conversation data.

Subcommands: synth, train, score, eval, pairs, judge, validate-embeddings,
import-convai. Every artifact-producing command writes a run manifest next
to its primary output. Exit codes: 0 success, 1 internal failure, 2 bad
input or arguments.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import data as d
from . import evaluation as ev
from . import model as m
from . import sampling as sp
from . import training as tr
from .errors import ConvImpactError, DegenerateEvaluationError


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(primary_output, command: str, resolved: dict, inputs, seed, started: float):
    manifest = {
        "command": command,
        "tool_version": __version__,
        "resolved_config": resolved,
        "inputs": {str(p): _sha256(p) for p in inputs if p and Path(p).exists()},
        "seed": seed,
        "started_at": started,
        "finished_at": time.time(),
    }
    path = str(primary_output) + ".manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


def _load_dataset(path, profile: str, min_utterances: int) -> list[d.Conversation]:
    conversations = [d.preprocess(c, profile) for c in d.load_conversations(path)]
    if min_utterances > 0:
        conversations = d.filter_min_utterances(conversations, min_utterances)
    return conversations


def _add_data_flags(p: argparse.ArgumentParser):
    p.add_argument("--profile", choices=d.PROFILES, default="none",
                   help="preprocessing profile applied on load")
    p.add_argument("--min-utterances", type=int, default=0,
                   help="drop conversations shorter than this after preprocessing")


# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    started = time.time()
    impacts = None
    if args.impacts:
        impacts = tuple(float(x) for x in args.impacts.split(","))
    spec = d.SyntheticSpec(
        n_conversations=args.n_conversations,
        min_len=args.min_len,
        max_len=args.max_len,
        embed_dim=args.dim,
        n_prototypes=args.prototypes,
        impacts=impacts,
        noise_sigma=args.noise,
        perturbation_sigma=args.perturbation,
        mixture_alpha=args.mixture_alpha,
        seed=args.seed,
    )
    conversations, table, truth = d.generate_synthetic(spec)
    d.write_conversations(args.out_data, conversations)
    d.write_embeddings(args.out_embeddings, table)
    d.write_truth(args.out_truth, truth)
    write_manifest(
        args.out_data, "synth",
        {k: v for k, v in vars(args).items() if k != "func"},
        [], args.seed, started,
    )
    print(
        f"wrote {len(conversations)} conversations, {len(table)} embeddings "
        f"(dim {table.dim}) and ground truth"
    )
    return 0


def _train_config(args) -> tr.TrainConfig:
    config = tr.load_train_config(args.config) if args.config else tr.TrainConfig()
    if args.seed is not None:
        config.seed = args.seed
    config.validate()
    return config


def cmd_train(args) -> int:
    started = time.time()
    config = _train_config(args)
    embeddings = d.read_embeddings(args.embeddings)
    train_set = _load_dataset(args.data, args.profile, args.min_utterances)
    dev_set = _load_dataset(args.dev, args.profile, args.min_utterances) if args.dev else []
    init = m.load_params(args.init) if args.init else None

    trained = tr.train(
        args.variant, train_set, dev_set, embeddings, config,
        init=init, hidden_dim=args.hidden_dim,
    )
    m.save_params(trained.params, args.out)
    history_path = args.history or (str(args.out) + ".history.json")
    with open(history_path, "w", encoding="utf-8") as f:
        json.dump(
            {
                "best_dev_pearson": trained.best_dev_pearson,
                "epoch_selected": trained.epoch_selected,
                "history": [
                    {"epoch": h.epoch, "train_loss": h.train_loss, "dev_pearson": h.dev_pearson}
                    for h in trained.history
                ],
            },
            f, indent=2,
        )
        f.write("\n")
    write_manifest(
        args.out, "train",
        {"variant": args.variant, "config": vars(config), "hidden_dim": args.hidden_dim,
         "profile": args.profile, "init": args.init and str(args.init)},
        [args.data, args.dev, args.embeddings, args.config, args.init],
        config.seed, started,
    )
    best = trained.best_dev_pearson
    if math.isnan(best):
        print(f"trained {args.variant}: no dev selection (ran {len(trained.history)} epochs)")
    else:
        print(f"trained {args.variant}: best dev pearson {best:.4f} at epoch {trained.epoch_selected}")
    return 0


def cmd_score(args) -> int:
    started = time.time()
    params = m.load_params(args.model)
    embeddings = d.read_embeddings(args.embeddings)
    conversations = _load_dataset(args.data, args.profile, args.min_utterances)
    reports = [
        m.forward(params, embeddings.conversation_matrix(conv), conv.id)
        for conv in conversations
    ]
    m.write_reports(args.out, reports)
    write_manifest(
        args.out, "score",
        {"model": str(args.model), "profile": args.profile},
        [args.model, args.data, args.embeddings], None, started,
    )
    print(f"scored {len(reports)} conversations -> {args.out}")
    return 0


def _ranked_entries(conversations, reports, scope: str):
    """RankedUtterance lists: one global list, or one per conversation."""
    conv_map = {c.id: c for c in conversations}
    groups = []
    for rep in reports:
        conv = conv_map.get(rep.conversation_id)
        if conv is None:
            continue
        group = []
        for row in rep.rows:
            label = conv.utterances[row.index].label
            if label in ("good", "bad"):
                group.append(ev.ranked_from_annotation(conv.utterance_id(row.index), row.s, label))
        if group:
            groups.append(group)
    if scope == "global":
        merged = [e for g in groups for e in g]
        return [merged] if merged else []
    return groups


def _grouped_c_index(groups) -> tuple[float, int, int]:
    total = 0.0
    pairs = 0
    n_issue = n_non = 0
    for g in groups:
        issues = [e.score for e in g if e.label == ev.ISSUE]
        nons = [e.score for e in g if e.label == ev.NON_ISSUE]
        n_issue += len(issues)
        n_non += len(nons)
        if not issues or not nons:
            continue
        total += ev.c_index(g) * len(issues) * len(nons)
        pairs += len(issues) * len(nons)
    if pairs == 0:
        raise DegenerateEvaluationError(
            "c_index needs at least one (issue, non-issue) pair in scope"
        )
    return total / pairs, n_issue, n_non


def _eval_scores_mode(args) -> dict:
    conversations = _load_dataset(args.data, args.profile, args.min_utterances)
    reports = m.read_reports(args.scores)
    groups = _ranked_entries(conversations, reports, args.scope)
    entry: dict = {"seed": None}
    if groups:
        c, n_issue, n_non = _grouped_c_index(groups)
        entry.update(c_index=c)
    else:
        raise DegenerateEvaluationError("no labeled utterances for c_index")
    rated = {c.id: c.rating for c in conversations if c.rating is not None}
    qs = [(rep.q, rated[rep.conversation_id]) for rep in reports if rep.conversation_id in rated]
    if len(qs) >= 2:
        try:
            entry["pearson"] = ev.pearson([q for q, _ in qs], [r for _, r in qs])
        except ConvImpactError:
            pass
    return ev.build_metrics_report(
        args.variant or "unknown", args.dataset_name, args.split_name,
        [entry], n_issue, n_non,
    )


def _eval_fit_mode(args, seeds: list[int]) -> dict:
    config = _train_config(args)
    embeddings = d.read_embeddings(args.embeddings)
    train_set = _load_dataset(args.train, args.profile, args.min_utterances)
    dev_set = _load_dataset(args.dev, args.profile, args.min_utterances) if args.dev else []
    test_set = _load_dataset(args.test, args.profile, args.min_utterances) if args.test else []

    per_seed = []
    n_issue = n_non = 0
    for seed in seeds:
        cfg = tr.TrainConfig(**{**vars(config), "seed": seed})
        trained = tr.train(
            args.variant, train_set, dev_set, embeddings, cfg, hidden_dim=args.hidden_dim
        )
        entry: dict = {"seed": seed, "pearson_dev": trained.best_dev_pearson,
                       "epoch_selected": trained.epoch_selected}
        if test_set:
            qs, ratings = [], []
            for conv in test_set:
                if conv.rating is None:
                    continue
                rep = m.forward(trained.params, embeddings.conversation_matrix(conv), conv.id)
                qs.append(rep.q)
                ratings.append(conv.rating)
            if len(qs) >= 2:
                try:
                    entry["pearson_test"] = ev.pearson(qs, ratings)
                except ConvImpactError:
                    pass
        reports = [
            m.forward(trained.params, embeddings.conversation_matrix(conv), conv.id)
            for conv in train_set
        ]
        groups = _ranked_entries(train_set, reports, args.scope)
        if groups:
            c, n_issue, n_non = _grouped_c_index(groups)
            entry["c_index"] = c
        per_seed.append(entry)
    return ev.build_metrics_report(
        args.variant, args.dataset_name, args.split_name, per_seed, n_issue, n_non
    )


def cmd_eval(args) -> int:
    started = time.time()
    if args.scores:
        report = _eval_scores_mode(args)
        inputs = [args.scores, args.data]
        seed = None
    else:
        for flag in ("variant", "train", "embeddings"):
            if not getattr(args, flag):
                raise ConvImpactError(
                    f"--{flag} is required when --scores is not given (fit mode)"
                )
        seeds = [int(s) for s in (args.seeds or "0").split(",")]
        report = _eval_fit_mode(args, seeds)
        inputs = [args.train, args.dev, args.test, args.embeddings, args.config]
        seed = seeds
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
            f.write("\n")
        write_manifest(args.out, "eval", {"scope": args.scope}, inputs, seed, started)
    print(text)
    return 0


def cmd_pairs(args) -> int:
    started = time.time()
    conversations = _load_dataset(args.data, args.profile, args.min_utterances)
    reports = m.read_reports(args.scores)
    embeddings = d.read_embeddings(args.embeddings)
    pairs = sp.sample_pairs(
        conversations, reports, embeddings,
        n_pairs=args.n, pct=args.pct, k_fraction=args.k_fraction, seed=args.seed,
    )
    sp.write_pair_files(pairs, args.out_pairs, args.out_key)
    write_manifest(
        args.out_pairs, "pairs",
        {"n": args.n, "pct": args.pct, "k_fraction": args.k_fraction},
        [args.scores, args.data, args.embeddings], args.seed, started,
    )
    print(f"wrote {len(pairs)} pairs -> {args.out_pairs}, key -> {args.out_key}")
    return 0


def cmd_judge(args) -> int:
    started = time.time()
    key = sp.load_key(args.key)
    per_annotator = []
    for path in args.judgments:
        judgments = sp.load_judgments(path)
        triples = []
        for pair_id, entry in key.items():
            if pair_id not in judgments:
                raise ConvImpactError(f"{path}: missing judgment for {pair_id!r}")
            low = entry["low_utterance_id"]
            high = entry["high_utterance_id"]
            chosen = low if judgments[pair_id] == entry["low_member"] else high
            triples.append((low, high, chosen))
        per_annotator.append(
            {"annotator": str(path), "accuracy": ev.pair_accuracy(triples), "n_pairs": len(triples)}
        )
    report = {
        "per_annotator": per_annotator,
        "average": float(np.mean([e["accuracy"] for e in per_annotator])),
    }
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
            f.write("\n")
        write_manifest(args.out, "judge", {}, [args.key, *args.judgments], None, started)
    print(text)
    return 0


def cmd_validate_embeddings(args) -> int:
    table = d.read_embeddings(args.path)
    print(f"{args.path}: ok, dim {table.dim}, {len(table)} embeddings")
    return 0


def cmd_import_convai(args) -> int:
    started = time.time()
    conversations = d.import_convai(args.input)
    d.write_conversations(args.out, conversations)
    write_manifest(args.out, "import-convai", {}, [args.input], None, started)
    print(f"imported {len(conversations)} conversations -> {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convimpact",
        description="Per-utterance quality impact analysis from conversation ratings.",
    )
    parser.add_argument("--version", action="version", version=f"convimpact {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with planted impacts")
    p.add_argument("--out-data", required=True)
    p.add_argument("--out-embeddings", required=True)
    p.add_argument("--out-truth", required=True)
    p.add_argument("--n-conversations", type=int, default=2000)
    p.add_argument("--min-len", type=int, default=5)
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--prototypes", type=int, default=8)
    p.add_argument("--impacts", help="comma-separated planted impact per prototype")
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--perturbation", type=float, default=0.05)
    p.add_argument("--mixture-alpha", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a model variant")
    p.add_argument("--variant", required=True, choices=m.VARIANTS)
    p.add_argument("--data", required=True)
    p.add_argument("--dev")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.add_argument("--init", help="warm-start model file (finetuning)")
    p.add_argument("--hidden-dim", type=int, default=200)
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    _add_data_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="emit per-utterance impact reports")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    _add_data_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="compute metrics (from score files or by fitting)")
    p.add_argument("--scores", help="impact report file (artifact mode)")
    p.add_argument("--data", help="labeled conversations for artifact mode")
    p.add_argument("--variant", choices=m.VARIANTS)
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--test")
    p.add_argument("--embeddings")
    p.add_argument("--config")
    p.add_argument("--seeds", help="comma-separated training seeds (fit mode)")
    p.add_argument("--hidden-dim", type=int, default=200)
    p.add_argument("--scope", choices=("global", "conversation"), default="global")
    p.add_argument("--dataset-name", default="dataset")
    p.add_argument("--split-name", default="train")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=None)
    _add_data_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pairs", help="sample blind review pairs")
    p.add_argument("--scores", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--pct", type=float, default=5.0)
    p.add_argument("--k-fraction", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-pairs", required=True)
    p.add_argument("--out-key", required=True)
    _add_data_flags(p)
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("judge", help="score human judgments against the key")
    p.add_argument("--key", required=True)
    p.add_argument("--judgments", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("validate-embeddings", help="check a UEB1 embedding file")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate_embeddings)

    p = sub.add_parser("import-convai", help="convert a ConvAI release file to JSONL")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import_convai)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConvImpactError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - last-resort diagnostic
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
