"""Command-line surface: build-index, search, train, eval, bench, gen-synthetic.

Machine-readable output goes to stdout, diagnostics to stderr.  Exit codes:
0 success, 1 runtime error, 2 usage error.  A --config TOML/JSON file may
supply any flag's long name as a key; explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .corpus import Corpus, load_corpus
from .encoders import HashedEncoder, QueryInput, RemoteEncoder, render_query_flagged
from .evaluation import (
    bench_latency,
    bench_rows_to_csv,
    load_eval_records,
    run_eval,
)
from .index import FlatIndex, HnswIndex, HnswParams, load_index, save_index
from .retriever import BeamConfig, RemoteChainScorer, lexical_score, rerank, retrieve
from .synthetic import generate_synthetic_task
from .trainer import (
    TrainConfig,
    example_to_dict,
    load_model,
    load_training_data,
    save_model,
    train,
)


class UsageError(Exception):
    """Bad flag combination or value: exits with code 2."""


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def _info(args, message: str) -> None:
    if getattr(args, "verbose", False):
        print(message, file=sys.stderr)


def _atomic_write_text(path: Path, content: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(content, encoding="utf-8")
    os.replace(tmp, path)


def _require(args, name: str):
    value = getattr(args, name.replace("-", "_"))
    if value is None:
        raise UsageError(f"--{name} is required")
    return value


def _parse_k_list(raw: str) -> list[int]:
    try:
        values = [int(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --k-list {raw!r}: {exc}") from exc
    if not values or any(k < 1 for k in values):
        raise UsageError(f"--k-list must contain positive integers, got {raw!r}")
    deduped = sorted(set(values))
    if len(deduped) != len(values):
        _warn(f"--k-list contains duplicates; using {','.join(map(str, deduped))}")
    return deduped


DEFAULT_DIMENSION = 384


def _build_encoder(args, expected_dim: int | None = None):
    """Encoder from --model (trained) or --encoder hashed|remote:URL."""
    if getattr(args, "model", None):
        model = load_model(args.model)
        if expected_dim is not None and model.dimension != expected_dim:
            raise ValueError(
                f"model dimension {model.dimension} does not match index dimension {expected_dim}"
            )
        return model
    spec = getattr(args, "encoder", None) or "hashed"
    if spec == "hashed":
        if args.dim is not None and expected_dim is not None and args.dim != expected_dim:
            raise ValueError(
                f"--dim {args.dim} does not match index dimension {expected_dim}"
            )
        dim = args.dim if args.dim is not None else (expected_dim or DEFAULT_DIMENSION)
        return HashedEncoder(dim, seed=args.hash_seed)
    if spec.startswith("remote:"):
        return RemoteEncoder(spec[len("remote:") :], dimension=expected_dim)
    raise UsageError(f"--encoder must be 'hashed' or 'remote:URL', got {spec!r}")


def _build_scorer(spec: str):
    if spec == "none":
        return None
    if spec == "lexical":
        return lexical_score
    if spec.startswith("remote:"):
        return RemoteChainScorer(spec[len("remote:") :])
    raise UsageError(f"--rerank must be 'lexical', 'none', or 'remote:URL', got {spec!r}")


# subcommands -------------------------------------------------------------------


def cmd_build_index(args) -> int:
    corpus = load_corpus(_require(args, "corpus"))
    out = Path(_require(args, "out"))
    if args.hnsw and args.ef_construction < 1:
        raise UsageError(f"--ef-construction must be >= 1, got {args.ef_construction}")
    if args.hnsw and args.m_links < 2:
        raise UsageError(f"--m-links must be >= 2, got {args.m_links}")
    encoder = _build_encoder(args)
    _info(args, f"encoding {len(corpus)} passages")
    vectors = np.stack([encoder.encode_passage(p) for p in corpus])
    flat = FlatIndex.build(vectors, ids=corpus.ids)
    index: FlatIndex | HnswIndex = flat
    if args.hnsw:
        _info(args, "building hnsw graph")
        index = HnswIndex.build(
            flat,
            HnswParams(
                m_links=args.m_links,
                ef_construction=args.ef_construction,
                ef_search=args.ef_search,
                seed=args.seed,
            ),
        )
    save_index(index, out)
    _info(args, f"wrote {index.kind} index ({index.count} x {index.dimension}) to {out}")
    return 0


def cmd_search(args) -> int:
    index = load_index(_require(args, "index"))
    corpus = load_corpus(_require(args, "corpus"))
    question = _require(args, "query")
    encoder = _build_encoder(args, expected_dim=index.dimension)
    k_out = args.k
    beam = max(args.beam, k_out)
    config = BeamConfig(
        hops=args.hops,
        beam_width=beam,
        k_out=k_out,
        candidates_per_hop=args.candidates,
    )
    if args.verbose:
        _, truncated = render_query_flagged(QueryInput(question))
        if truncated:
            _warn("question was truncated to the query character budget")
    chains = retrieve(question, corpus, index, encoder, config)
    scorer = _build_scorer(args.rerank)
    if scorer is not None and chains:
        chains = rerank(chains, scorer, question, corpus)
    for rank, chain in enumerate(chains, start=1):
        passages = [
            {"id": corpus.lookup(h).id, "title": corpus.lookup(h).title}
            for h in chain.passages
        ]
        if args.json:
            record = {
                "rank": rank,
                "total_score": chain.total_score,
                "hop_scores": list(chain.hop_scores),
                "passages": passages,
            }
            if chain.rerank_score is not None:
                record["rerank_score"] = chain.rerank_score
            print(json.dumps(record, sort_keys=True))
        else:
            titles = " -> ".join(f"{p['id']}:{p['title']}" for p in passages)
            print(f"{rank:>3}  total={chain.total_score:.6f}  {titles}")
    return 0


def cmd_train(args) -> int:
    if args.epochs is not None and args.epochs < 1:
        raise UsageError(f"--epochs must be >= 1, got {args.epochs}")
    data = load_training_data(_require(args, "data"))
    corpus = load_corpus(_require(args, "corpus"))
    dev = load_training_data(args.dev_data) if args.dev_data else None
    config = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        dimension=args.dim,
        shared_encoder=not args.no_shared,
        use_memory_bank=not args.no_bank,
        use_hard_negatives=not args.no_hard_negs,
        ordered=not args.unordered,
    )
    result = train(data, config, corpus=corpus, dev=dev)
    out = Path(_require(args, "out"))
    save_model(result.model, out)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".trainlog.json")
    _atomic_write_text(log_path, json.dumps(result.log, sort_keys=True, indent=2) + "\n")
    _info(
        args,
        f"trained model (phase {result.model.phase}) dev recall "
        f"{result.log['final_dev_recall']:.4f}; wrote {out} and {log_path}",
    )
    print(json.dumps({"model": str(out), "log": str(log_path),
                      "final_dev_recall": result.log["final_dev_recall"]}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    index = load_index(_require(args, "index"))
    corpus = load_corpus(_require(args, "corpus"))
    records = load_eval_records(_require(args, "data"))
    encoder = _build_encoder(args, expected_dim=index.dimension)
    k_list = _parse_k_list(args.k_list)
    hops = args.hops
    k_out = max(1, max(k_list) // hops)
    beam = max(args.beam, k_out)
    config = BeamConfig(hops=hops, beam_width=beam, k_out=k_out, candidates_per_hop=beam)
    scorer = _build_scorer(args.rerank)
    report = run_eval(records, corpus, index, encoder, config, k_list, scorer=scorer, warn=_warn)
    print(report.to_json())
    if args.csv:
        lines = ["k,recall"] + [f"{k},{v}" for k, v in report.recall_csv_rows()]
        _atomic_write_text(Path(args.csv), "\n".join(lines) + "\n")
    return 0


def cmd_bench(args) -> int:
    index = load_index(_require(args, "index"))
    encoder = _build_encoder(args, expected_dim=index.dimension)
    queries_path = Path(_require(args, "queries"))
    queries = [line.strip() for line in queries_path.read_text(encoding="utf-8").splitlines()
               if line.strip()]
    if not queries:
        raise UsageError(f"no queries in {queries_path}")
    k_list = _parse_k_list(args.k_list)
    rows = bench_latency(index, encoder, queries, k_list)
    sys.stdout.write(bench_rows_to_csv(rows))
    return 0


def cmd_gen_synthetic(args) -> int:
    out_dir = Path(_require(args, "out_dir"))
    try:
        corpus, train_set, dev_set = generate_synthetic_task(
            args.entities, args.relations, args.seed
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out_dir.mkdir(parents=True, exist_ok=True)

    def passage_line(p) -> str:
        obj = {"id": p.id, "title": p.title, "text": p.text}
        if p.meta:
            obj["meta"] = p.meta
        return json.dumps(obj, sort_keys=True)

    _atomic_write_text(
        out_dir / "corpus.jsonl", "\n".join(passage_line(p) for p in corpus) + "\n"
    )
    for name, examples in (("train.jsonl", train_set), ("dev.jsonl", dev_set)):
        lines = [json.dumps(example_to_dict(e), sort_keys=True) for e in examples]
        _atomic_write_text(out_dir / name, "\n".join(lines) + "\n")
    eval_lines = [
        json.dumps(
            {
                "question": e.question,
                "answer": e.answer,
                "gold_ids": [p.id for p in e.positives],
                "type": e.qtype,
            },
            sort_keys=True,
        )
        for e in dev_set
    ]
    _atomic_write_text(out_dir / "dev_eval.jsonl", "\n".join(eval_lines) + "\n")
    _info(
        args,
        f"wrote corpus ({len(corpus)}), train ({len(train_set)}), dev ({len(dev_set)}) to {out_dir}",
    )
    print(json.dumps({"corpus": len(corpus), "train": len(train_set), "dev": len(dev_set)},
                     sort_keys=True))
    return 0


# parser ---------------------------------------------------------------------------


def _add_encoder_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--model", help="trained model file (overrides --encoder)")
    sub.add_argument("--encoder", help="hashed | remote:URL (default hashed)")
    sub.add_argument("--dim", type=int, default=None,
                     help="hashed encoder dimension (default: index dimension or 384)")
    sub.add_argument("--hash-seed", type=int, default=0, help="hashed encoder seed")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="hopret", description="Multi-hop dense retrieval engine"
    )
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    parser.add_argument("--config", help="TOML or JSON file of flag defaults")
    parser.add_argument("--verbose", action="store_true")
    # The same globals are accepted after the subcommand; SUPPRESS keeps the
    # subparser from clobbering values parsed before it.
    parent = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    parent.add_argument("--seed", type=int)
    parent.add_argument("--config")
    parent.add_argument("--verbose", action="store_true")
    commands = parser.add_subparsers(dest="command", required=True)
    registry: dict[str, argparse.ArgumentParser] = {}

    sub = commands.add_parser("build-index", parents=[parent],
                              help="encode a corpus and write an index")
    sub.add_argument("--corpus")
    sub.add_argument("--out")
    sub.add_argument("--hnsw", action="store_true", help="build an HNSW graph over the flat index")
    sub.add_argument("--m-links", type=int, default=16)
    sub.add_argument("--ef-construction", type=int, default=200)
    sub.add_argument("--ef-search", type=int, default=64)
    _add_encoder_flags(sub)
    sub.set_defaults(func=cmd_build_index)
    registry["build-index"] = sub

    sub = commands.add_parser("search", parents=[parent], help="retrieve passage chains for a question")
    sub.add_argument("--index")
    sub.add_argument("--corpus")
    sub.add_argument("--query")
    sub.add_argument("--hops", type=int, default=2)
    sub.add_argument("--beam", type=int, default=16)
    sub.add_argument("--k", type=int, default=10)
    sub.add_argument("--candidates", type=int, default=None, help="MIPS k per expansion")
    sub.add_argument("--rerank", default="none", help="lexical | none | remote:URL")
    sub.add_argument("--json", action="store_true", help="one JSON object per chain")
    _add_encoder_flags(sub)
    sub.set_defaults(func=cmd_search)
    registry["search"] = sub

    sub = commands.add_parser("train", parents=[parent], help="train the linear embedder")
    sub.add_argument("--data")
    sub.add_argument("--corpus")
    sub.add_argument("--dev-data")
    sub.add_argument("--out")
    sub.add_argument("--log", help="training log path (default <out>.trainlog.json)")
    sub.add_argument("--dim", type=int, default=384)
    sub.add_argument("--epochs", type=int, default=30)
    sub.add_argument("--lr", type=float, default=0.05)
    sub.add_argument("--batch-size", type=int, default=16)
    sub.add_argument("--no-shared", action="store_true", help="split query/passage encoders")
    sub.add_argument("--no-bank", action="store_true", help="skip the memory-bank phase")
    sub.add_argument("--no-hard-negs", action="store_true", help="drop mined hard negatives")
    sub.add_argument("--unordered", action="store_true", help="shuffle gold passage order")
    sub.set_defaults(func=cmd_train)
    registry["train"] = sub

    sub = commands.add_parser("eval", parents=[parent], help="run the metric suite over an eval set")
    sub.add_argument("--index")
    sub.add_argument("--corpus")
    sub.add_argument("--data")
    sub.add_argument("--k-list", default="2,10,20")
    sub.add_argument("--hops", type=int, default=2)
    sub.add_argument("--beam", type=int, default=16)
    sub.add_argument("--rerank", default="none")
    sub.add_argument("--csv", help="also write per-k recall rows to this path")
    _add_encoder_flags(sub)
    sub.set_defaults(func=cmd_eval)
    registry["eval"] = sub

    sub = commands.add_parser("bench", parents=[parent], help="latency benchmark (batch size 1)")
    sub.add_argument("--index")
    sub.add_argument("--queries", help="text file, one query per line")
    sub.add_argument("--k-list", default="1,5,10,20,50,100,200")
    _add_encoder_flags(sub)
    sub.set_defaults(func=cmd_bench)
    registry["bench"] = sub

    sub = commands.add_parser("gen-synthetic", parents=[parent], help="generate the synthetic two-hop task")
    sub.add_argument("--entities", type=int, default=200)
    sub.add_argument("--relations", type=int, default=5)
    sub.add_argument("--out-dir")
    sub.set_defaults(func=cmd_gen_synthetic)
    registry["gen-synthetic"] = sub

    return parser, registry


def _load_config_file(path: str) -> dict:
    raw = Path(path).read_bytes()
    if path.endswith(".toml"):
        return tomllib.loads(raw.decode("utf-8"))
    if path.endswith(".json"):
        return json.loads(raw.decode("utf-8"))
    # Sniff: try TOML first, then JSON.
    try:
        return tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError:
        return json.loads(raw.decode("utf-8"))


def _apply_config(argv: list[str], parser, registry) -> None:
    """Seed parser defaults from --config so explicit flags still win."""
    config_path = None
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            config_path = argv[i + 1]
        elif token.startswith("--config="):
            config_path = token[len("--config=") :]
    if config_path is None:
        return
    values = _load_config_file(config_path)
    if not isinstance(values, dict):
        raise UsageError(f"config file {config_path} must contain a table/object")
    command = next((t for t in argv if not t.startswith("-")), None)
    targets = [parser] + ([registry[command]] if command in registry else [])
    for key, value in values.items():
        dest = key.replace("-", "_")
        matched = False
        for target in targets:
            if any(action.dest == dest for action in target._actions):
                target.set_defaults(**{dest: value})
                matched = True
        if not matched:
            raise UsageError(f"config key {key!r} does not match any flag")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, registry = build_parser()
    try:
        _apply_config(argv, parser, registry)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 1
    except Exception as exc:  # runtime failures map to exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
