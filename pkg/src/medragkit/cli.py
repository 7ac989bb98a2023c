"""Single executable exposing the pipeline as subcommands.

Exit codes: 0 ok, 1 usage/config, 2 data, 3 provider.  Every run that
writes an output file also writes a run-record (config hash, input
hashes, package version) beside it, enabling byte-for-byte replay with
the mock provider.  No subcommand mutates its inputs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__, analyze, augment, corpus, judge, metrics, retrieval
from .config import RunConfig
from .embedding import HttpEmbeddingClient, StubEmbedder
from .errors import ConfigError, DataError, ProviderError
from .jsonlio import dumps_canonical, read_jsonl, write_jsonl
from .llmclient import HttpChatProvider, LlmClient, MockProvider
from .manifest import TrainingManifest, build_manifest, exclude_benchmark_leakage
from .textutil import sha256_hex

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PROVIDER = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems map to exit code 1, not argparse's 2
        raise ConfigError(message)


def _load_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "mock", None):
        config.provider = "mock"
        config.mock_script = args.mock
    if getattr(args, "provider", None):
        config.provider = args.provider
    config.validate()
    return config


def _build_llm(config: RunConfig) -> LlmClient:
    if config.provider == "mock":
        if not config.mock_script:
            raise ConfigError("mock provider selected but no --mock script given")
        provider = MockProvider.from_script_file(config.mock_script)
    else:
        provider = HttpChatProvider()
    return LlmClient(provider, cache_dir=config.cache_dir, rps=config.rps)


def _build_embedder(config: RunConfig):
    if config.embed_url:
        return HttpEmbeddingClient(config.embed_url)
    return StubEmbedder(dim=config.embed_dim)


def _write_run_record(output: str | None, command: str, config: RunConfig,
                      inputs: list[str]) -> None:
    if not output:
        return
    record = {
        "command": command,
        "config_hash": config.config_hash(),
        "inputs": {p: sha256_hex(Path(p).read_bytes()) for p in inputs if Path(p).exists()},
        "version": __version__,
    }
    path = Path(output).with_suffix(Path(output).suffix + ".run.json")
    path.write_text(dumps_canonical(record) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    config = _load_config(args)
    result = corpus.ingest(args.input, format=args.format)
    write_jsonl(args.output, (r.to_dict() for r in result.records))
    rejects_path = args.rejects or str(Path(args.output).with_suffix(".rejects.jsonl"))
    write_jsonl(rejects_path, (r.to_dict() for r in result.rejects))
    _write_run_record(args.output, "ingest", config, [args.input])
    print(f"ingested {len(result.records)} records, {len(result.rejects)} rejects")
    return EXIT_OK


def cmd_index(args) -> int:
    config = _load_config(args)
    docs = retrieval.load_docs(args.docs)
    index = retrieval.build_index(docs, _build_embedder(config))
    index.save(args.output)
    if index.rejects:
        write_jsonl(str(Path(args.output)) + ".rejects.jsonl",
                    (r.to_dict() for r in index.rejects))
    _write_run_record(args.output, "index", config, [args.docs])
    print(f"indexed {len(index)} docs (dim={index.dim}), {len(index.rejects)} rejected")
    return EXIT_OK


def cmd_retrieve(args) -> int:
    config = _load_config(args)
    index = retrieval.Index.load(args.index)
    query = retrieval.Query(text=args.query_text, image=args.query_image)
    results = retrieval.retrieve_context(
        index, query, k=args.k if args.k is not None else config.retrieval_k,
        embed=_build_embedder(config),
        require_guideline=not args.no_guideline,
        exclude_case=args.exclude_case,
    )
    lines = [dumps_canonical(r.to_dict()) for r in results]
    if args.output:
        Path(args.output).write_text("\n".join(lines) + "\n", encoding="utf-8")
        _write_run_record(args.output, "retrieve", config, [args.index])
    else:
        for line in lines:
            print(line)
    return EXIT_OK


def cmd_sample_slices(args) -> int:
    config = _load_config(args)
    cap = args.cap if args.cap is not None else config.slice_cap
    result = corpus.ingest(args.input)
    out_records = []
    for record in result.records:
        volumes: dict[str, list] = {}
        flat = []
        for img in record.images:
            if img.volume_id is None:
                flat.append(img)
            else:
                volumes.setdefault(img.volume_id, []).append(img)
        sampled = []
        for volume_id in sorted(volumes):
            sampled.extend(corpus.sample_slices(volumes[volume_id], cap=cap))
        import dataclasses as _dc

        out_records.append(_dc.replace(record, images=flat + sampled))
    write_jsonl(args.output, (r.to_dict() for r in out_records))
    _write_run_record(args.output, "sample-slices", config, [args.input])
    print(f"sampled slices for {len(out_records)} records (cap={cap})")
    return EXIT_OK


def cmd_augment(args) -> int:
    config = _load_config(args)
    llm = _build_llm(config)
    result = corpus.ingest(args.cases)
    index = retrieval.Index.load(args.index)
    samples, audit = augment.augment_corpus(
        result.records, index, _build_embedder(config), llm,
        k=config.retrieval_k, require_guideline=config.require_guideline,
        model=config.model,
    )
    write_jsonl(args.output, (s.to_dict() for s in samples))
    audit_path = args.audit or str(Path(args.output)) + ".audit.jsonl"
    write_jsonl(audit_path, audit)
    _write_run_record(args.output, "augment", config, [args.cases, args.index])
    print(f"augmented {len(result.records)} cases into {len(samples)} samples")
    return EXIT_OK


def cmd_classify(args) -> int:
    config = _load_config(args)
    llm = _build_llm(config)
    audit: list[dict] = []
    out = []
    if args.task == "modality":
        for _, item in read_jsonl(args.input):
            label = analyze.classify_modality(
                item.get("image"), item.get("caption"), llm,
                model=config.model, audit=audit,
            )
            out.append({"id": item.get("id"), "label": label.value})
    else:
        for _, item in read_jsonl(args.input):
            qclass = analyze.classify_question(
                item["question"], item.get("answer"), llm,
                model=config.model, audit=audit,
            )
            out.append({"id": item.get("id"), "label": qclass.value})
    write_jsonl(args.output, out)
    write_jsonl(str(Path(args.output)) + ".audit.jsonl", audit)
    _write_run_record(args.output, "classify", config, [args.input])
    if args.task == "question":
        labels = [analyze.QuestionClass(o["label"]) for o in out]
        print(f"knowledge share: {analyze.knowledge_share(labels):.1f}%")
    print(f"classified {len(out)} items")
    return EXIT_OK


def cmd_stats(args) -> int:
    config = _load_config(args)
    labels = []
    for _, obj in read_jsonl(args.labels):
        raw = obj["label"] if isinstance(obj, dict) else obj
        labels.append(corpus.ModalityLabel(raw))
    report = analyze.distribution_report(labels, seed=config.seed)
    print(report.format_table())
    if args.output:
        Path(args.output).write_text(dumps_canonical(report.to_dict()) + "\n",
                                     encoding="utf-8")
        _write_run_record(args.output, "stats", config, [args.labels])
    return EXIT_OK


def cmd_manifest(args) -> int:
    config = _load_config(args)
    samples = [augment.InstructionSample.from_dict(obj)
               for _, obj in read_jsonl(args.samples)]
    manifest = build_manifest(samples, args.stage, seed=config.seed, limit=args.limit)
    if args.exclude:
        benchmark_ids = [
            line.strip()
            for line in Path(args.exclude).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        manifest = exclude_benchmark_leakage(manifest, benchmark_ids, store=samples)
    manifest.write(args.output)
    _write_run_record(args.output, "manifest", config, [args.samples])
    print(dumps_canonical(manifest.header()))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    preds, golds, ids = [], [], []
    gold_by_id = {}
    for _, obj in read_jsonl(args.gold):
        gold_by_id[str(obj["id"])] = obj
    for _, obj in read_jsonl(args.preds):
        item_id = str(obj["id"])
        if item_id not in gold_by_id:
            raise DataError(f"prediction id {item_id} missing from gold file")
        ids.append(item_id)
        preds.append(obj.get("output", obj.get("pred", "")))
        golds.append(gold_by_id[item_id]["answer"])
    report = metrics.accuracy(preds, golds, n_options=args.options, ids=ids)
    out = report.to_dict()
    print(f"accuracy: {report.accuracy:.3f} (n={report.n})")
    if report.unmatched:
        print(f"unmatched outputs (counted wrong): {', '.join(report.unmatched)}")
    if args.lexicon:
        lexicon = metrics.ConceptLexicon.load(args.lexicon)
        pairs = []
        for item_id, obj in ((i, gold_by_id[i]) for i in ids):
            if "gold_text" in obj:
                pred_obj = next(o for _, o in read_jsonl(args.preds) if str(o["id"]) == item_id)
                pairs.append((obj["gold_text"], pred_obj.get("output", "")))
        if pairs:
            umls = metrics.umls_corpus_report(pairs, lexicon)
            out["umls"] = umls
            print(
                f"umls factuality: P={umls['precision']:.4f} R={umls['recall']:.4f} "
                f"F1={umls['f1']:.4f} (n={umls['n']})"
            )
    if args.output:
        Path(args.output).write_text(dumps_canonical(out) + "\n", encoding="utf-8")
        _write_run_record(args.output, "evaluate", config, [args.preds, args.gold])
    return EXIT_OK


def cmd_judge(args) -> int:
    config = _load_config(args)
    llm = _build_llm(config)
    dataset = [obj for _, obj in read_jsonl(args.input)]
    report = judge.judge_run(dataset, llm, model=config.judge_model)
    write_jsonl(args.output, report.to_records())
    _write_run_record(args.output, "judge", config, [args.input])
    agg = report.aggregate
    print(
        "aggregate: key_points={key_points:.4f} inference={inference:.4f} "
        "evidence={evidence:.4f} overall={overall:.4f}".format(**agg)
        + f" (excluded={report.excluded})"
    )
    return EXIT_OK


def cmd_pipeline(args) -> int:
    config = _load_config(args)
    if not config.pipeline:
        raise ConfigError("config has no pipeline stage list")
    for stage in config.pipeline:
        command = stage.get("command")
        stage_args = stage.get("args", {})
        argv = [command]
        for key, value in stage_args.items():
            flag = "--" + key.replace("_", "-")
            if isinstance(value, bool):
                if value:
                    argv.append(flag)
            else:
                argv.extend([flag, str(value)])
        if args.config:
            argv.extend(["--config", args.config])
        print(f"pipeline stage: {' '.join(argv)}")
        code = main(argv)
        if code != EXIT_OK:
            return code
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="run-config JSON file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--mock", help="mock provider script (JSONL)")
    parser.add_argument("--provider", choices=["mock", "http"], help="provider backend")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="medragkit", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a corpus file into records + rejects")
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="cases", choices=list(corpus.INGEST_FORMATS))
    p.add_argument("--output", required=True)
    p.add_argument("--rejects")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("index", help="build the retrieval index from a docs file")
    p.add_argument("--docs", required=True)
    p.add_argument("--output", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("retrieve", help="query the index for top-k context")
    p.add_argument("--index", required=True)
    p.add_argument("--query-text")
    p.add_argument("--query-image")
    p.add_argument("--k", type=int)
    p.add_argument("--no-guideline", action="store_true",
                   help="drop the >=1 text guideline constraint")
    p.add_argument("--exclude-case")
    p.add_argument("--output")
    _add_common(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("sample-slices", help="cap 3D volumes at N 2D slices")
    p.add_argument("--input", required=True)
    p.add_argument("--cap", type=int)
    p.add_argument("--output", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_sample_slices)

    p = sub.add_parser("augment", help="generate instruction samples for a corpus")
    p.add_argument("--cases", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--audit")
    _add_common(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("classify", help="modality or question classification")
    p.add_argument("--task", choices=["modality", "question"], required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("stats", help="modality distribution report")
    p.add_argument("--labels", required=True)
    p.add_argument("--output")
    _add_common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("manifest", help="build a staged training manifest")
    p.add_argument("--samples", required=True)
    p.add_argument("--stage", choices=["pretrain", "instruction", "annealing"],
                   required=True)
    p.add_argument("--limit", type=int)
    p.add_argument("--exclude", help="benchmark case-id exclusion list (one per line)")
    p.add_argument("--output", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_manifest)

    p = sub.add_parser("evaluate", help="closed-QA accuracy (+ optional concept F1)")
    p.add_argument("--preds", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--options", type=int, default=5)
    p.add_argument("--lexicon")
    p.add_argument("--output")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("judge", help="three-aspect judge scoring")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("pipeline", help="run the stage list from the config file")
    _add_common(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER


if __name__ == "__main__":
    sys.exit(main())
