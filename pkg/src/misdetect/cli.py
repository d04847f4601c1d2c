"""Command-line entry point: ingest, index, distill, augment, predict, evaluate.

Exit codes: 0 success, 1 input error, 2 backend error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Sequence

from .backends import BackendError, make_completion_backend, make_embedding_backend
from .config import ConfigError, RunConfig, load_config
from .fusion import evaluate
from .labels import (
    IngestError,
    build_label_space,
    ingest_dataset,
    read_records,
    read_triplets,
    write_records,
    write_rejections,
)
from .pipeline import PipelineBackends, read_predictions, run_predictions, write_failures, write_predictions
from .reasoning import build_distilled_dataset, read_distilled, write_distilled, write_sft
from .reranking import build_verification_dataset, write_verification_dataset, write_verification_sft
from .retrieval import EmbeddedDataset, IndexBuildError, build_index

log = logging.getLogger("misdetect")

EXIT_OK, EXIT_INPUT, EXIT_BACKEND = 0, 1, 2


class InputError(Exception):
    pass


def _require(path: Path | None, what: str) -> Path:
    if path is None:
        raise InputError(f"no {what} path configured")
    if not path.exists():
        raise InputError(f"{what} not found: {path}")
    return path


def _open_out(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    return path.open("w", encoding="utf-8", newline="\n")


def _read_records(path: Path):
    with path.open(encoding="utf-8") as fh:
        return read_records(fh)


def cmd_ingest(cfg: RunConfig, args: argparse.Namespace) -> int:
    src = _require(Path(args.dataset) if args.dataset else cfg.paths.dataset, "dataset")
    with src.open(encoding="utf-8", newline="") as fh:
        result = ingest_dataset(fh, cfg.column_map, cfg.delimiter)
    out, rej = cfg.paths.records_path, cfg.paths.output("rejections.jsonl")
    with _open_out(out) as fh:
        write_records(result.records, fh)
    with _open_out(rej) as fh:
        write_rejections(result.rejections, fh)
    print(f"ingested {len(result.records)} record(s), rejected {len(result.rejections)} -> {out}")
    rate = len(result.rejections) / result.row_count if result.row_count else 0.0
    if rate > cfg.max_rejection_rate:
        print(
            f"error: rejection rate {rate:.3f} exceeds threshold {cfg.max_rejection_rate:.3f}; see {rej}",
            file=sys.stderr,
        )
        return EXIT_INPUT
    return EXIT_OK


def cmd_index(cfg: RunConfig, args: argparse.Namespace) -> int:
    records = _read_records(_require(cfg.paths.records_path, "records"))
    embedder = make_embedding_backend(cfg.backend("embedder"))
    index = build_index(records, embedder, workers=cfg.workers)
    manifest = index.save(_prepare(cfg.paths.index_path))
    print(f"indexed {len(index)} entries (d={index.dimension}) -> {cfg.paths.index_path} [{manifest.name}]")
    return EXIT_OK


def _prepare(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def cmd_distill(cfg: RunConfig, args: argparse.Namespace) -> int:
    records = _read_records(_require(cfg.paths.records_path, "records"))
    teacher = make_completion_backend(cfg.backend("teacher"))
    judge = make_completion_backend(cfg.backend("judge"))
    result = build_distilled_dataset(records, teacher, judge, cfg.hyper.m_candidates, cfg.seed, workers=cfg.workers)
    with _open_out(cfg.paths.distilled_path) as fh:
        write_distilled(result.records, fh)
    with _open_out(cfg.paths.output("distilled_sft.jsonl")) as fh:
        write_sft(result.records, fh)
    fail_path = cfg.paths.output("distill_failures.jsonl")
    with _open_out(fail_path) as fh:
        for f in result.failures:
            fh.write(json.dumps(f.to_json(), ensure_ascii=False) + "\n")
    print(f"distilled {len(result.records)} record(s), {len(result.failures)} failure(s) -> {cfg.paths.distilled_path}")
    if result.failures:
        print(f"error: distillation failures listed in {fail_path}", file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


def cmd_augment(cfg: RunConfig, args: argparse.Namespace) -> int:
    space = build_label_space(_read_records(_require(cfg.paths.records_path, "records")))
    with _require(cfg.paths.distilled_path, "distilled dataset").open(encoding="utf-8") as fh:
        distilled = read_distilled(fh)
    examples = build_verification_dataset(distilled, space, cfg.hyper.m_negatives, cfg.seed)
    out = cfg.paths.output("verification.jsonl")
    with _open_out(out) as fh:
        write_verification_dataset(examples, fh)
    with _open_out(cfg.paths.output("verification_sft.jsonl")) as fh:
        write_verification_sft(examples, fh)
    print(f"wrote {len(examples)} verification example(s) -> {out}")
    return EXIT_OK


def cmd_predict(cfg: RunConfig, args: argparse.Namespace) -> int:
    src = _require(Path(args.input) if args.input else cfg.paths.instances, "input instances")
    with src.open(encoding="utf-8") as fh:
        triplets = read_triplets(fh)
    index = EmbeddedDataset.load(_require(cfg.paths.index_path, "index"))
    backends = PipelineBackends(
        embedder=make_embedding_backend(cfg.backend("embedder")),
        reasoner=make_completion_backend(cfg.backend("reasoner")),
        reranker=make_completion_backend(cfg.backend("reranker")),
    )
    run = run_predictions(
        triplets, index, backends, cfg.hyper.k, cfg.fusion, workers=cfg.workers, exclude_self=cfg.exclude_self
    )
    out = cfg.paths.predictions_path
    manifest = cfg.paths.output("predict_failures.jsonl")
    with _open_out(out) as fh:
        write_predictions(run.predictions, fh)
    with _open_out(manifest) as fh:
        write_failures(run.failures, fh)
    print(f"predicted {len(run.predictions)} instance(s), {len(run.failures)} failure(s) -> {out}")
    if run.failures:
        print(f"error: failed instances listed in {manifest}", file=sys.stderr)
        return EXIT_BACKEND if any(f.is_backend_error for f in run.failures) else EXIT_INPUT
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args: argparse.Namespace) -> int:
    pred_path = _require(Path(args.predictions) if args.predictions else cfg.paths.predictions_path, "predictions")
    truth_path = _require(Path(args.truths) if args.truths else cfg.paths.truths_path, "truths")
    with pred_path.open(encoding="utf-8") as fh:
        preds = read_predictions(fh)
    truths = {r.instance_id: r.label for r in _read_records(truth_path)}
    try:
        report = evaluate(preds, truths, cfg.hyper.m_values)
    except KeyError as exc:
        raise InputError(exc.args[0]) from None
    text = report.to_text()
    with _open_out(cfg.paths.output("report.txt")) as fh:
        fh.write(text)
    with _open_out(cfg.paths.output("report.json")) as fh:
        fh.write(report.to_json_text())
    print(text, end="")
    return EXIT_OK


COMMANDS: dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "ingest": cmd_ingest,
    "index": cmd_index,
    "distill": cmd_distill,
    "augment": cmd_augment,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--k", type=int)
    common.add_argument("--alpha", type=float)
    common.add_argument("--beta", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="misdetect", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("ingest", parents=[common], help="CSV -> records + rejection report")
    p.add_argument("--dataset", help="override paths.dataset")
    sub.add_parser("index", parents=[common], help="embed records into an index file")
    sub.add_parser("distill", parents=[common], help="teacher candidates + judge -> distilled dataset")
    sub.add_parser("augment", parents=[common], help="distilled dataset -> Yes/No verification dataset")
    p = sub.add_parser("predict", parents=[common], help="rank labels for input instances")
    p.add_argument("--input", help="override paths.instances")
    p = sub.add_parser("evaluate", parents=[common], help="MAP@m report from predictions and truths")
    p.add_argument("--predictions", help="override paths.predictions")
    p.add_argument("--truths", help="override paths.truths")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).apply_overrides(
            seed=args.seed, workers=args.workers, k=args.k, alpha=args.alpha, beta=args.beta
        )
        return COMMANDS[args.command](cfg, args)
    except (InputError, ConfigError, IngestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (BackendError, IndexBuildError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
