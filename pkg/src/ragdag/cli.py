"""Command line entry points.

Exit codes: 0 on success, 1 on a domain error (printed to stderr as
``ErrorName: detail``), 2 on bad usage (argparse's own convention).

Settings come from three layers, later wins: a JSON config file (via
--config or the RAGDAG_CONFIG env var), then explicit flags. Config keys
are checked strictly; an unknown key is a ConfigError, not a silent skip.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import bench as bench_mod
from . import curate as curate_mod
from .corpus import SOURCES, ChunkPolicy, ChunkStore, ingest
from .embed import HashEncoder
from .errors import ConfigError, RagdagError, StoreIO
from .modelgw import ROLES, ModelGateway, make_backend
from .pipeline import Pipeline, PipelineConfig
from .vindex import BACKEND_NAME, IndexParams, VectorIndex

CONFIG_KEYS = frozenset({
    "backend",
    "budgets",
    "enable_gate",
    "enable_dag",
    "enable_rag",
    "retrieve_n",
    "coarse_k",
    "decompose_retries",
    "gate_max_output_tokens",
    "dag_max_output_tokens",
    "answer_max_output_tokens",
    "encoder_seed",
})


def _load_config(explicit: str | None) -> dict:
    path = explicit or os.environ.get("RAGDAG_CONFIG")
    if not path:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path=path) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", path=path) from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", path=path)
    unknown = sorted(set(raw) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(
            f"unknown config key {unknown[0]!r}", path=path, known=sorted(CONFIG_KEYS)
        )
    return raw


def _pipeline_config(config: dict, args: argparse.Namespace) -> PipelineConfig:
    kw = {k: v for k, v in config.items() if k not in ("backend", "encoder_seed")}
    for flag, key in (
        ("gate", "enable_gate"),
        ("dag", "enable_dag"),
        ("rag", "enable_rag"),
        ("retrieve_n", "retrieve_n"),
        ("coarse_k", "coarse_k"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            kw[key] = value
    return PipelineConfig(**kw)


def _encoder_seed(config: dict, args: argparse.Namespace) -> int:
    value = getattr(args, "encoder_seed", None)
    if value is not None:
        return value
    return int(config.get("encoder_seed", 0))


def _build_pipeline(args: argparse.Namespace, config: dict,
                    cfg: PipelineConfig | None = None) -> Pipeline:
    spec = getattr(args, "backend", None) or config.get("backend")
    if not spec:
        raise ConfigError("no model backend; pass --backend or set it in the config")
    backend = make_backend(spec)
    gateway = ModelGateway(
        {role: backend for role in ROLES}, budgets=config.get("budgets")
    )
    if cfg is None:
        cfg = _pipeline_config(config, args)
    encoder = index = texts = None
    if cfg.enable_rag:
        if not (getattr(args, "index", None) and getattr(args, "store", None)):
            raise ConfigError("retrieval is enabled; --index and --store are required")
        index = VectorIndex.load(args.index)
        texts = ChunkStore(args.store).texts_by_id()
        encoder = HashEncoder(dims=index.dims, seed=_encoder_seed(config, args))
    return Pipeline(gateway, cfg, encoder=encoder, index=index, chunk_texts=texts)


def _ensemble(args: argparse.Namespace) -> bench_mod.EnsembleConfig:
    return bench_mod.EnsembleConfig(
        shuffle_trials=getattr(args, "shuffle_trials", 1) or 1,
        seed=getattr(args, "ensemble_seed", 0) or 0,
    )


# -- commands ------------------------------------------------------------


def _iter_documents(paths: list[str], source: str):
    for raw in paths:
        path = Path(raw)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise StoreIO("cannot read input file", path=raw, cause=str(exc)) from exc
        if path.suffix == ".jsonl":
            for line in text.splitlines():
                if line.strip():
                    yield json.loads(line)
        else:
            yield {"source": source, "title": path.stem, "raw_text": text}


def cmd_ingest(args: argparse.Namespace) -> int:
    store = ChunkStore(args.out)
    policy = ChunkPolicy(max_tokens=args.max_tokens)
    manifest = ingest(_iter_documents(args.files, args.source), policy, store)
    if args.manifest:
        manifest.save(args.manifest)
    total = manifest.total.chunk_count
    print(f"ingested {total} chunks from {len(args.files)} file(s) into {args.out}")
    return 0


def cmd_index_build(args: argparse.Namespace) -> int:
    texts = ChunkStore(args.store).texts_by_id()
    if not texts:
        raise ConfigError("chunk store is empty", path=args.store)
    encoder = HashEncoder(dims=args.dims, seed=args.encoder_seed)
    params = IndexParams(
        dims=args.dims,
        max_neighbors=args.m,
        ef_construction=args.ef_construction,
        ef_search=args.ef_search,
        seed=args.seed,
    )
    entries = ((cid, encoder.encode(text)) for cid, text in sorted(texts.items()))
    index = VectorIndex.build(entries, params)
    index.save(args.out)
    print(
        f"indexed {len(texts)} vectors (dims={args.dims}, backend={index.backend_name})"
        f" -> {args.out}"
    )
    return 0


def cmd_index_search(args: argparse.Namespace) -> int:
    index = VectorIndex.load(args.index)
    encoder = HashEncoder(dims=index.dims, seed=args.encoder_seed)
    query = encoder.encode(args.query)
    hits = index.search_exact(query, args.k) if args.exact else index.search(query, args.k)
    for hit in hits:
        print(f"{hit.chunk_id}\t{hit.score:.6f}")
    return 0


def cmd_index_stats(args: argparse.Namespace) -> int:
    index = VectorIndex.load(args.index)
    stats = index.stats()
    stats["backend"] = index.backend_name
    print(json.dumps(stats, sort_keys=True, indent=2))
    return 0


def cmd_ask(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    pipeline = _build_pipeline(args, config)
    result = pipeline.answer(args.question)
    if args.out:
        Path(args.out).write_text(result.to_json() + "\n", encoding="utf-8")
        print(result.final_answer)
    else:
        print(result.to_json())
    return 0


def cmd_bench_run(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    items = bench_mod.load_dataset(
        args.data, format=args.format, questions_only=args.questions_only
    )
    pipeline = _build_pipeline(args, config)
    report = bench_mod.evaluate(
        items,
        pipeline,
        ensemble=_ensemble(args),
        trace_dir=args.trace_dir,
        dataset_name=Path(args.data).name,
    )
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    print(bench_mod.render_report_table({"run": report}))
    return 0


def cmd_bench_sweep(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    items = bench_mod.load_dataset(
        args.data, format=args.format, questions_only=args.questions_only
    )
    n_values = [int(part) for part in args.n_values.split(",") if part.strip()]
    if not n_values:
        raise ConfigError("--n-values needs at least one integer")

    def factory(n: int) -> Pipeline:
        cfg = _pipeline_config(config, args)
        cfg = PipelineConfig(**{**cfg.__dict__, "retrieve_n": n})
        return _build_pipeline(args, config, cfg=cfg)

    reports = bench_mod.sweep_docs(
        items, factory, n_values, ensemble=_ensemble(args), trace_dir=args.trace_dir
    )
    print(bench_mod.render_report_table({f"n={n}": r for n, r in reports.items()}))
    return 0


def cmd_bench_ablate(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    items = bench_mod.load_dataset(
        args.data, format=args.format, questions_only=args.questions_only
    )
    variants = []
    for name, toggles in bench_mod.standard_ablation_toggles():
        cfg = PipelineConfig(**{**_pipeline_config(config, args).__dict__, **toggles})
        variants.append((name, _build_pipeline(args, config, cfg=cfg)))
    rows = bench_mod.ablate(
        items, variants, ensemble=_ensemble(args), trace_dir=args.trace_dir
    )
    print(bench_mod.render_ablation_table(rows))
    return 0


def cmd_curate_filter(args: argparse.Namespace) -> int:
    records = curate_mod.load_curation_records(args.infile)
    kept = curate_mod.filter_by_score(records, args.threshold, field_name=args.field)
    if args.dedupe:
        kept = curate_mod.dedupe_by_instruction(kept)
    curate_mod.save_curation_records(kept, args.out)
    print(f"kept {len(kept)} of {len(records)} records -> {args.out}")
    return 0


def cmd_curate_kcenter(args: argparse.Namespace) -> int:
    records = curate_mod.load_curation_records(args.infile)
    missing = [r.id for r in records if r.embedding is None]
    if missing:
        raise ConfigError(
            "every record needs an embedding for coverage selection",
            missing=missing[:5],
        )
    embeddings = [r.embedding for r in records]
    picked = curate_mod.k_center_greedy(embeddings, args.m, seed_index=args.seed_index)
    curate_mod.save_curation_records([records[i] for i in picked], args.out)
    print(f"selected {len(picked)} of {len(records)} records -> {args.out}")
    return 0


def cmd_curate_ragrecords(args: argparse.Namespace) -> int:
    index = VectorIndex.load(args.index)
    encoder = HashEncoder(dims=index.dims, seed=args.encoder_seed)
    out_records = []
    try:
        lines = Path(args.questions).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise StoreIO(
            "cannot read questions file", path=args.questions, cause=str(exc)
        ) from exc
    for line in lines:
        if not line.strip():
            continue
        obj = json.loads(line)
        out_records.append(
            curate_mod.build_rag_record(
                obj["question"],
                obj["golden"],
                index,
                args.n_distractors,
                encoder=encoder,
                answer=obj.get("answer", ""),
            )
        )
    curate_mod.save_rag_records(out_records, args.out)
    print(f"wrote {len(out_records)} training records -> {args.out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    counts = bench_mod.aggregate_traces(args.trace_dir)
    rows = [["metric", "value"]]
    for key in sorted(counts):
        value = counts[key]
        if isinstance(value, float):
            rows.append([key, f"{value:.4f}"])
        else:
            rows.append([key, str(value)])
    print(bench_mod._align(rows))
    return 0


def cmd_backends(args: argparse.Namespace) -> int:
    from .vindex import available_backends

    for name, available in sorted(available_backends().items()):
        marker = "active" if name == BACKEND_NAME else ("ok" if available else "missing")
        print(f"{name}\t{marker}")
    return 0


# -- parser --------------------------------------------------------------


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", help="scripted:<rules.jsonl> or an http(s) endpoint")
    p.add_argument("--index", help="vector index file")
    p.add_argument("--store", help="chunk store JSONL")
    p.add_argument("--config", help="JSON config file (or set RAGDAG_CONFIG)")
    p.add_argument("--encoder-seed", type=int, default=None, dest="encoder_seed")
    p.add_argument("--retrieve-n", type=int, default=None, dest="retrieve_n")
    p.add_argument("--coarse-k", type=int, default=None, dest="coarse_k")
    p.add_argument("--gate", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--dag", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--rag", action=argparse.BooleanOptionalAction, default=None)


def _add_bench_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="benchmark JSONL file")
    p.add_argument("--format", default="native", choices=bench_mod.FORMATS)
    p.add_argument("--questions-only", action="store_true", dest="questions_only")
    p.add_argument("--trace-dir", default=None, dest="trace_dir")
    p.add_argument("--shuffle-trials", type=int, default=1, dest="shuffle_trials")
    p.add_argument("--ensemble-seed", type=int, default=0, dest="ensemble_seed")
    _add_pipeline_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragdag",
        description="gated, graph-decomposed retrieval question answering",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="chunk documents into a store")
    p.add_argument("files", nargs="+")
    p.add_argument("--source", required=True, choices=SOURCES)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.add_argument("--max-tokens", type=int, default=256, dest="max_tokens")
    p.set_defaults(func=cmd_ingest)

    p_index = sub.add_parser("index", help="build and query the vector index")
    index_sub = p_index.add_subparsers(dest="index_command", required=True)

    p = index_sub.add_parser("build")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dims", type=int, default=64)
    p.add_argument("--encoder-seed", type=int, default=0, dest="encoder_seed")
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--ef-construction", type=int, default=200, dest="ef_construction")
    p.add_argument("--ef-search", type=int, default=128, dest="ef_search")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_index_build)

    p = index_sub.add_parser("search")
    p.add_argument("--index", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--exact", action="store_true")
    p.add_argument("--encoder-seed", type=int, default=0, dest="encoder_seed")
    p.set_defaults(func=cmd_index_search)

    p = index_sub.add_parser("stats")
    p.add_argument("--index", required=True)
    p.set_defaults(func=cmd_index_stats)

    p = sub.add_parser("ask", help="answer one question, emit the full trace")
    p.add_argument("--question", required=True)
    p.add_argument("--out", help="write the trace here instead of stdout")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_ask)

    p_bench = sub.add_parser("bench", help="benchmark runs")
    bench_sub = p_bench.add_subparsers(dest="bench_command", required=True)

    p = bench_sub.add_parser("run")
    _add_bench_flags(p)
    p.add_argument("--out", help="write the report JSON here")
    p.set_defaults(func=cmd_bench_run)

    p = bench_sub.add_parser("sweep")
    _add_bench_flags(p)
    p.add_argument("--n-values", required=True, dest="n_values",
                   help="comma list of passage counts, e.g. 1,3,5")
    p.set_defaults(func=cmd_bench_sweep)

    p = bench_sub.add_parser("ablate")
    _add_bench_flags(p)
    p.set_defaults(func=cmd_bench_ablate)

    p_curate = sub.add_parser("curate", help="training-data curation")
    curate_sub = p_curate.add_subparsers(dest="curate_command", required=True)

    p = curate_sub.add_parser("filter")
    p.add_argument("--in", required=True, dest="infile")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--field", default="quality_score")
    p.add_argument("--dedupe", action="store_true")
    p.set_defaults(func=cmd_curate_filter)

    p = curate_sub.add_parser("kcenter")
    p.add_argument("--in", required=True, dest="infile")
    p.add_argument("--out", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--seed-index", type=int, default=0, dest="seed_index")
    p.set_defaults(func=cmd_curate_kcenter)

    p = curate_sub.add_parser("ragrecords")
    p.add_argument("--questions", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-distractors", type=int, default=4, dest="n_distractors")
    p.add_argument("--encoder-seed", type=int, default=0, dest="encoder_seed")
    p.set_defaults(func=cmd_curate_ragrecords)

    p = sub.add_parser("report", help="recount a trace directory")
    p.add_argument("--trace-dir", required=True, dest="trace_dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("backends", help="show which search kernels are active")
    p.set_defaults(func=cmd_backends)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RagdagError as exc:
        print(f"{exc.name}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"ValueError: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
