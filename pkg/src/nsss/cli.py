"""Command-line entry point: ``nsss <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error (bad corpus, checkpoint or
score file), 3 training divergence.

Configuration precedence is command-line flag > ``--config`` JSON file >
``--preset`` > built-in default.  The seed falls back to ``NSSS_SEED`` when neither the
flag nor the config file sets it.  Every run prints a header on stderr with
the version, seed, a hash of the resolved configuration and the
configuration itself.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .errors import DataError, DivergenceDetected, NsssError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("nsss")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# --- configuration ---------------------------------------------------------

TRAIN_FLAGS = {"d": "d", "h": "h", "lr": "learning_rate", "epochs": None, "negative_ratio": "negative_ratio",
               "clip_norm": "clip_norm"}
DEFAULTS = {
    "seed": 0,
    "log_level": "WARNING",
    "test_fraction": 0.2,
    "train": {},
    "eval": {"num_distractors": 99, "k_rerank": 10},
    "similarity": {"metric": "dot", "normalize": "both"},
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def preset(name: str) -> dict:
    from .trainer import DESK, DESK_SIMILARITY
    if name != "desk":
        raise UsageError(f"unknown preset {name!r}")
    train = {k: v for k, v in DESK.to_dict().items() if k != "seed"}
    return {"train": train, "similarity": {"metric": DESK_SIMILARITY.metric.value,
                                           "normalize": DESK_SIMILARITY.normalize_mode}}


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if getattr(args, "preset", None):
        cfg = _merge(cfg, preset(args.preset))
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise DataError(f"config {args.config} is not a JSON object")
    cfg = _merge(cfg, file_cfg)
    if "seed" not in file_cfg and os.environ.get("NSSS_SEED", "").strip():
        try:
            cfg["seed"] = int(os.environ["NSSS_SEED"])
        except ValueError:
            raise UsageError(f"NSSS_SEED must be an integer, got {os.environ['NSSS_SEED']!r}") from None
    flags = vars(args)
    for key in ("seed", "log_level", "test_fraction", "corpus", "checkpoint", "lexicon"):
        if flags.get(key) is not None:
            cfg[key] = flags[key]
    for flag, field in TRAIN_FLAGS.items():
        if flags.get(flag) is None:
            continue
        if flag == "epochs":
            for name in ("entity_epochs", "action_epochs", "e2e_epochs"):
                cfg["train"][name] = flags[flag]
        else:
            cfg["train"][field] = flags[flag]
    if flags.get("distractors") is not None:
        cfg["eval"]["num_distractors"] = flags["distractors"]
    if flags.get("k_rerank") is not None:
        cfg["eval"]["k_rerank"] = flags["k_rerank"]
    if flags.get("metric") is not None:
        cfg["similarity"]["metric"] = flags["metric"]
    if flags.get("normalize") is not None:
        cfg["similarity"]["normalize"] = flags["normalize"]
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode("utf-8")).hexdigest()[:12]


def print_header(command: str, cfg: dict, args: argparse.Namespace | None = None) -> None:
    print(f"# nsss {__version__} command={command} seed={cfg['seed']} config={config_hash(cfg)}", file=sys.stderr)
    print(f"# config {json.dumps(cfg, sort_keys=True)}", file=sys.stderr)
    if args is not None:
        extra = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config") and v is not None}
        print(f"# args {json.dumps(extra, sort_keys=True)}", file=sys.stderr)


def _validate_paths(cfg: dict, need: Sequence[str]) -> None:
    for key in need:
        path = cfg.get(key)
        if not path:
            raise UsageError(f"--{key} is required")
        if not Path(path).is_file():
            raise DataError(f"{key} file not found: {path}")
    if cfg.get("lexicon") and not Path(cfg["lexicon"]).is_file():
        raise DataError(f"lexicon file not found: {cfg['lexicon']}")


# --- builders --------------------------------------------------------------

def _parser(cfg):
    from .parser import Lexicon, QueryParser, default_parser
    if cfg.get("lexicon"):
        try:
            return QueryParser(Lexicon.from_file(cfg["lexicon"]))
        except (OSError, ValueError) as exc:
            raise DataError(f"bad lexicon {cfg['lexicon']}: {exc}") from exc
    return default_parser()


def _corpus(cfg):
    from .corpus import load_corpus
    return load_corpus(cfg["corpus"])


def _train_cfg(cfg):
    from .trainer import TrainConfig
    try:
        return TrainConfig.from_dict({**cfg["train"], "seed": cfg["seed"]})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad training config: {exc}") from None


def _eval_cfg(cfg):
    from .evaluation import EvalConfig
    try:
        return EvalConfig(seed=cfg["seed"], **cfg["eval"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad evaluation config: {exc}") from None


def _sim_cfg(cfg):
    from .similarity import SimilarityConfig
    try:
        return SimilarityConfig.from_mode(cfg["similarity"]["metric"], cfg["similarity"]["normalize"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_params(cfg):
    from .modules import ModelParams
    try:
        return ModelParams.load(cfg["checkpoint"])
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load checkpoint {cfg['checkpoint']}: {exc}") from exc


def _split(corpus, cfg):
    from .corpus import split_queries
    frac = cfg["test_fraction"]
    if frac <= 0:
        return list(corpus.queries), list(corpus.queries)
    return split_queries(corpus, frac, cfg["seed"])


def _first_stage(args, corpus):
    from .scorer import BM25FirstStage, BM25Index, ExternalFirstStage
    if getattr(args, "first_stage_file", None):
        return ExternalFirstStage.from_tsv(args.first_stage_file)
    return BM25FirstStage(BM25Index.from_corpus(corpus))


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


# --- subcommands -----------------------------------------------------------

def cmd_synth(args, cfg):
    from .corpus import dumps_corpus
    from .synthetic import generate_synthetic_corpus
    _emit(dumps_corpus(generate_synthetic_corpus(cfg["seed"], args.n)), args.out)


def cmd_index(args, cfg):
    from .scorer import BM25Index
    _validate_paths(cfg, ["corpus"])
    index = BM25Index.from_corpus(_corpus(cfg))
    terms = sorted(index.terms, key=index.terms.get)
    stats = {
        "k1": index.k1, "b": index.b, "n_docs": len(index), "avgdl": index.avgdl,
        "idf": {t: float(index.idf[i]) for t, i in zip(terms, range(len(terms)))},
        "doc_len": {d: float(n) for d, n in zip(index.doc_ids, index.doc_len)},
    }
    _emit(json.dumps(stats, indent=1, sort_keys=True), args.out)


def cmd_label(args, cfg):
    from .weak_labels import build_pretraining_set, label_snippet
    _validate_paths(cfg, ["corpus"])
    corpus = _corpus(cfg)
    if args.phrase:
        ids = [args.snippet] if args.snippet else corpus.snippet_ids
        rows = []
        for sid in ids:
            if sid not in corpus.snippets:
                raise DataError(f"unknown snippet id {sid!r}")
            snip = corpus.snippets[sid]
            vec = label_snippet(args.phrase, snip)
            rows.append({"snippet_id": sid, "phrase": args.phrase, "labels": vec.labels.tolist(),
                         "tokens": snip.texts, "sources": [sorted(s) for s in vec.sources],
                         "analysis_unavailable": vec.analysis_unavailable})
    else:
        rows = [{"snippet_id": ex.snippet_id, "phrase": ex.entity_phrase, "labels": ex.labels.labels.tolist(),
                 "matched": ex.matched}
                for ex in build_pretraining_set(corpus, cfg["seed"], parser=_parser(cfg))]
    _emit("\n".join(json.dumps(r) for r in rows), args.out)


def cmd_train(args, cfg):
    from .trainer import ARM_TOGGLES, Arm, MetricsLog, train
    _validate_paths(cfg, ["corpus"])
    if not cfg.get("checkpoint"):
        raise UsageError("--checkpoint (output path) is required")
    tcfg = _train_cfg(cfg)
    if args.arm:
        toggles = dict(zip(("entity_pretrain", "action_pretrain", "end_to_end"), ARM_TOGGLES[Arm(args.arm)]))
        tcfg = dataclasses.replace(tcfg, **toggles)
    corpus = _corpus(cfg)
    train_q, _ = _split(corpus, cfg)
    metrics = MetricsLog(args.metrics_log)
    try:
        params = train(corpus, tcfg, _sim_cfg(cfg), queries=train_q, metrics=metrics, parser=_parser(cfg))
    finally:
        metrics.close()
    params.save(cfg["checkpoint"])
    print(json.dumps({"checkpoint": cfg["checkpoint"], "n_params": params.n_params,
                      "final": metrics.rows[-1] if metrics.rows else None}))


def cmd_search(args, cfg):
    from .corpus import QueryRecord
    from .scorer import rerank
    _validate_paths(cfg, ["corpus"] + ([] if args.first_stage_only else ["checkpoint"]))
    corpus = _corpus(cfg)
    if len(corpus) == 0:
        raise DataError("corpus has no snippets")
    q = QueryRecord(args.query_id, args.query, "")
    ranked = _first_stage(args, corpus).rank(q, corpus.snippet_ids, len(corpus))
    if not args.first_stage_only:
        ranked = rerank(q, ranked, _load_params(cfg), _sim_cfg(cfg), cfg["eval"]["k_rerank"],
                        corpus.snippets, _parser(cfg))
        if ranked.fallback:
            print("# query not parsed; showing first-stage order", file=sys.stderr)
    for e in ranked.entries[:args.k]:
        score = e.rerank_score if e.rerank_score is not None else e.first_stage_score
        print(f"{e.snippet_id}\t{score:.6f}")


def cmd_eval(args, cfg):
    from .evaluation import breakdown, breakdown_csv, evaluate
    _validate_paths(cfg, ["corpus"] + ([] if args.first_stage_only else ["checkpoint"]))
    corpus = _corpus(cfg)
    _, test_q = _split(corpus, cfg)
    scorer = None if args.first_stage_only else _load_params(cfg)
    record = evaluate(scorer, corpus, _eval_cfg(cfg), sim=_sim_cfg(cfg), queries=test_q,
                      first_stage=_first_stage(args, corpus), parser=_parser(cfg))
    _emit(record.to_json(), args.out)
    if args.breakdown:
        table = breakdown_csv(breakdown(record.results, args.breakdown))
        if args.breakdown_out:
            Path(args.breakdown_out).write_text(table, encoding="utf-8")
        else:
            sys.stdout.write(table)


def cmd_perturb(args, cfg):
    from .evaluation import evaluate, perturbation_pairs, perturbation_ratio
    _validate_paths(cfg, ["corpus", "checkpoint"])
    corpus = _corpus(cfg)
    parser = _parser(cfg)
    _, test_q = _split(corpus, cfg)
    params, sim, ecfg = _load_params(cfg), _sim_cfg(cfg), _eval_cfg(cfg)
    model = evaluate(params, corpus, ecfg, sim=sim, queries=test_q, parser=parser)
    base = evaluate(None, corpus, ecfg, queries=test_q, parser=parser)
    pairs = perturbation_pairs(model, base, corpus, parser)
    if not pairs:
        raise DataError("no correctly ranked single-verb, single-entity queries to perturb")
    pool = [p for p in (parser.parse_query(q.raw_text) for q in corpus.queries) if p]
    ratios = perturbation_ratio(params, pairs, args.kinds, pool, sim, args.count, cfg["seed"])
    _emit(json.dumps({"n_pairs": len(pairs), "count": args.count, "ratios": ratios}, indent=2), args.out)


def cmd_parse_query(args, cfg):
    parsed = _parser(cfg).parse_query(args.text)
    if not parsed:
        print(f"ParseFailure({parsed.reason.value}): {parsed.detail}")
        return
    print(parsed.notation())


def cmd_explain_layout(args, cfg):
    from .scorer import query_layout
    layout = query_layout(args.text, _parser(cfg))
    if not layout:
        print(f"ParseFailure({layout.reason.value}): {layout.detail}")
        return
    print(layout.notation())


# --- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file (flags override it, it overrides defaults)")
    common.add_argument("--seed", type=int, help="random seed (default: config, then NSSS_SEED, then 0)")
    common.add_argument("--lexicon", help="JSON lexicon replacing the bundled one")
    common.add_argument("--log-level", dest="log_level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    data = _Parser(add_help=False)
    data.add_argument("--corpus", help="JSONL corpus with id, code, docstring fields")
    data.add_argument("--checkpoint", help="model checkpoint (.npz)")
    data.add_argument("--test-fraction", dest="test_fraction", type=float,
                      help="fraction of queries held out from training and used by eval (default 0.2; 0 = all)")

    model = _Parser(add_help=False)
    model.add_argument("--k-rerank", dest="k_rerank", type=int, help="re-rank this many first-stage results (default 10)")
    model.add_argument("--metric", choices=["dot", "l2", "weighted_cosine"])
    model.add_argument("--normalize", choices=["none", "entity", "action", "both"])
    model.add_argument("--preset", choices=["desk"], help="tuned settings for the 300-pair synthetic corpus")
    model.add_argument("--first-stage-only", action="store_true", help="skip the neural re-ranker")
    model.add_argument("--first-stage-file", help="TSV of query_id, snippet_id, score replacing BM25")

    top = _Parser(prog="nsss", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    top.add_argument("--version", action="version", version=f"nsss {__version__}")
    sub = top.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="write a synthetic corpus")
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("index", parents=[common, data], help="write BM25 statistics as JSON")
    p.add_argument("--out")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("label", parents=[common, data], help="weak labels as JSON lines (one phrase, or the pretraining set)")
    p.add_argument("--phrase")
    p.add_argument("--snippet", help="restrict --phrase to one snippet id")
    p.add_argument("--out")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", parents=[common, data, model], help="train and write a checkpoint")
    p.add_argument("--d", type=int)
    p.add_argument("--h", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int, help="epochs for every phase")
    p.add_argument("--negative-ratio", dest="negative_ratio", type=float)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--arm", choices=["full", "no_action_pretrain", "no_both_pretrain", "no_end_to_end"])
    p.add_argument("--metrics-log", dest="metrics_log", help="append JSON lines {phase, epoch, loss, val_loss}")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("search", parents=[common, data, model], help="rank snippets for one query")
    p.add_argument("--query", required=True)
    p.add_argument("--query-id", dest="query_id", default="query")
    p.add_argument("--k", type=int, default=10, help="number of results to print")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", parents=[common, data, model], help="distractor-pool evaluation")
    p.add_argument("--distractors", type=int, help="distractors per query (default 99)")
    p.add_argument("--k", dest="k_rerank", type=int, help="alias of --k-rerank")
    p.add_argument("--breakdown", choices=["max_depth", "avg_args"])
    p.add_argument("--breakdown-out", dest="breakdown_out")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("perturb", parents=[common, data, model], help="perturbed/original score ratios")
    p.add_argument("--distractors", type=int)
    p.add_argument("--k", dest="k_rerank", type=int, help="alias of --k-rerank")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--kinds", nargs="+", default=["swap_entity", "swap_verb"], choices=["swap_entity", "swap_verb"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("parse-query", parents=[common], help="print the semantic parse")
    p.add_argument("text")
    p.set_defaults(func=cmd_parse_query)

    p = sub.add_parser("explain-layout", parents=[common], help="print the compiled module layout")
    p.add_argument("text")
    p.set_defaults(func=cmd_explain_layout)
    return top


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        logging.basicConfig(level=cfg["log_level"], format="%(levelname)s %(name)s: %(message)s")
        print_header(args.command, cfg, args)
        args.func(args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DivergenceDetected as exc:
        print(f"nsss: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, OSError) as exc:
        print(f"nsss: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NsssError as exc:
        print(f"nsss: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
