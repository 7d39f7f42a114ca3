"""Command-line entry point: ``memdag <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Sequence

from .config import Config, load_config
from .errors import MemDagError, ProviderError, RecordError, ValidationError

logger = logging.getLogger("memdag")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VALIDATION = 2
EXIT_PROVIDER = 3


def _emit(obj: Any) -> None:
    print(json.dumps(obj, sort_keys=True, ensure_ascii=False))


def _config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides")
    for f in fields(Config):
        if f.name == "extra_body":
            group.add_argument("--extra-body", dest="extra_body", type=json.loads, help="JSON object")
            continue
        kind = type(Config().to_dict()[f.name])
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind, default=None)


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    return {f.name: getattr(args, f.name, None) for f in fields(Config)}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memdag", description="Threaded DAG long-term memory store")
    p.add_argument("--config", help="JSON config file")
    p.add_argument(
        "--data-dir",
        default=os.environ.get("MEMDAG_DATA_DIR", ".memdag"),
        help="store directory (default: $MEMDAG_DATA_DIR or ./.memdag)",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    _config_flags(p)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8080)
    s.add_argument("--token", default=os.environ.get("MEMDAG_TOKEN"), help="require this bearer token")

    s = sub.add_parser("ingest", help="write a corpus of dialogue turns")
    s.add_argument("corpus")
    mode = s.add_mutually_exclusive_group()
    mode.add_argument("--batch", dest="mode", action="store_const", const="batched")
    mode.add_argument("--per-turn", dest="mode", action="store_const", const="per_turn")
    s.set_defaults(mode="batched")

    s = sub.add_parser("query", help="closure retrieval for a query")
    s.add_argument("text")
    s.add_argument("--k", type=int)
    s.add_argument("--depth", type=int)

    s = sub.add_parser("agent", help="answer a question with the tool loop")
    s.add_argument("text")

    sub.add_parser("rebuild", help="recompute edges and reduce transitively")
    sub.add_parser("check", help="run the invariant suite")
    sub.add_parser("stats", help="print store statistics")

    s = sub.add_parser("export", help="write memory records as JSONL")
    s.add_argument("path")
    s = sub.add_parser("import", help="replace the store with JSONL records")
    s.add_argument("path")

    s = sub.add_parser("bench", help="replay a corpus in each write mode")
    s.add_argument("corpus", nargs="?", help="turn JSONL (default: bundled synthetic corpus)")
    s.add_argument("--probes", help="probe file (default: next to the corpus)")
    s.add_argument("--modes", default="per_turn,batched")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--timing", action="store_true", help="include host wall-clock time")

    s = sub.add_parser("gen-corpus", help="write a synthetic corpus and its probes")
    s.add_argument("out", help="corpus path; probes go next to it")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--turns", type=int, default=200)
    s.add_argument("--probes", type=int, default=40)
    return p


def _open_store(args: argparse.Namespace, cfg: Config):
    from .store import MemoryStore

    return MemoryStore(cfg, data_dir=args.data_dir)


def _run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, **_overrides(args))
    cmd = args.command

    if cmd == "gen-corpus":
        from .bench import CorpusSpec, generate_corpus, probes_path_for, write_corpus

        out = Path(args.out)
        turns, meta = generate_corpus(CorpusSpec(turns=args.turns, probes=args.probes, seed=args.seed))
        write_corpus(turns, meta, out, probes_path_for(out))
        _emit({"corpus": str(out), "probes": str(probes_path_for(out)), "turns": len(turns)})
        return EXIT_OK

    if cmd == "bench":
        from .bench import BUNDLED_CORPUS, MODES, bench_replay, load_corpus, load_probes, probes_path_for

        corpus = Path(args.corpus) if args.corpus else BUNDLED_CORPUS
        probes = load_probes(args.probes or probes_path_for(corpus))
        turns = load_corpus(corpus)
        modes = [m.strip() for m in args.modes.split(",") if m.strip()]
        bad = [m for m in modes if m not in MODES]
        if bad:
            raise ValidationError(f"unknown modes {bad}; choose from {list(MODES)}")
        for mode in modes:
            report, _ = bench_replay(turns, probes, mode, args.seed, cfg, timing=args.timing)
            print(report.to_json())
        return EXIT_OK

    if cmd == "serve":
        import uvicorn

        from .service import create_app

        store = _open_store(args, cfg)
        try:
            uvicorn.run(create_app(store, args.token), host=args.host, port=args.port)
        finally:
            store.snapshot()
            store.close()
        return EXIT_OK

    store = _open_store(args, cfg)
    try:
        if cmd == "ingest":
            from .bench import load_corpus

            turns = load_corpus(args.corpus)
            if args.mode == "per_turn":
                reports = [store.add_turn(t).to_dict() for t in turns]
            else:
                reports = [
                    store.add_batch(turns[i : i + cfg.batch_size]).to_dict()
                    for i in range(0, len(turns), cfg.batch_size)
                ]
            store.snapshot()
            added = sum(r["actions"]["add"] for r in reports)
            _emit({"mode": args.mode, "turns": len(turns), "added": added, "stats": store.stats()})
        elif cmd == "query":
            _emit(store.retrieve(args.text, k=args.k, depth=args.depth).to_dict())
        elif cmd == "agent":
            _emit(store.agent_query(args.text).to_dict())
        elif cmd == "rebuild":
            _emit(store.rebuild())
        elif cmd == "check":
            violations = store.check()
            _emit({"violations": violations})
            if violations:
                return EXIT_ERROR
        elif cmd == "stats":
            _emit(store.stats())
        elif cmd == "export":
            _emit({"exported": store.export_jsonl(args.path)})
        elif cmd == "import":
            _emit({"imported": store.import_jsonl(args.path)})
    finally:
        store.close()
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _run(args)
    except (ValidationError, RecordError) as exc:
        violations = getattr(exc, "violations", None)
        print(f"error: {exc}" + (f" ({'; '.join(violations)})" if violations else ""), file=sys.stderr)
        return EXIT_VALIDATION
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except MemDagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
