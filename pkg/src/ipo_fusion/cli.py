"""Command-line pipeline: ingest, index, answer, features, train, evaluate, gmp, llm-baseline.

Exit codes: 0 success, 1 validation error, 2 missing upstream artifact, 3 service failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, PipelineConfig, load_config
from .dataset import (
    Board, DatasetError, IpoRecord, PriceKind, Target, Task, attach_answers, attach_gmp, attach_news,
    parse_records, read_record_store, split_by_year, write_answers, write_record_store,
)
from .features import FeatureConfig, FeatureError, FeatureMatrix, FeaturePipeline, labeled, \
    read_feature_csv, read_macro_table, target_vector
from .gmp import Period, alignment_table, gmp_error
from .learners import LearnerTask, TrainedModel, TrainingError, automl_select
from .metrics import classification_report, regression_report
from .qa_client import (
    DEFAULT_COLUMN_DESCRIPTIONS, ENV_EMBED_KEY, ENV_GEN_KEY, EmbeddingClient, EmbeddingServiceConfig,
    GenerationClient, GenerationServiceConfig, HashingEmbedder, ResponseCache, ServiceError, answer_question,
    llm_baseline_predict, map_ordered,
)
from .report import EvaluationRow, Variant, emit_report, format_gmp_tables
from .retrieval import QUESTION_BANK, ProspectusDoc, RetrievalError, RetrievalIndex, build_index, hybrid_retrieve
from .stacking import TextModelConfig, build_meta_features

logger = logging.getLogger("ipo_fusion")

EXIT_OK, EXIT_INVALID, EXIT_MISSING, EXIT_SERVICE = 0, 1, 2, 3


class MissingArtifact(RuntimeError):
    def __init__(self, what: Path | str, step: str):
        super().__init__(f"missing {what}; run `ipo-fusion {step}` first")
        self.step = step


@dataclass
class Context:
    config: PipelineConfig
    seed: int
    offline: bool
    board: Board
    target: Target | None
    variant: Variant

    @property
    def out(self) -> Path:
        return self.config.output_dir

    @property
    def stem(self) -> str:
        return f"{self.board.value}-{self.target.value}-{_variant_slug(self.variant)}"


def _variant_slug(variant: Variant) -> str:
    return {"N-C": "nc", "+T": "t", "+T+Nw": "t-nw"}[Variant(variant).value]


def company_slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


# ---------------------------------------------------------------- manifests


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        for p in sorted(path.rglob("*")):
            if p.is_file():
                h.update(str(p.relative_to(path)).encode())
                h.update(file_digest(p).encode())
        return h.hexdigest()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(step: str, ctx: Context, inputs: Sequence[Path], params: dict | None = None) -> dict:
    return {"step": step, "tool_version": __version__, "seed": ctx.seed, "config_hash": ctx.config.digest(),
            "inputs": {str(p): file_digest(p) for p in inputs if p is not None and p.exists()},
            "params": params or {}}


def _manifest_path(output: Path) -> Path:
    return output.with_name(output.name + ".manifest.json")


def up_to_date(output: Path, manifest: dict) -> bool:
    mpath = _manifest_path(output)
    if not output.exists() or not mpath.exists():
        return False
    return json.loads(mpath.read_text(encoding="utf-8")) == manifest


def write_manifest(output: Path, manifest: dict) -> None:
    _manifest_path(output).write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")


def _skip(step: str, output: Path) -> int:
    print(f"{step}: up to date ({output})")
    return EXIT_OK


# ---------------------------------------------------------------- shared helpers


def _records_path(ctx: Context) -> Path:
    return ctx.out / "records.jsonl"


def _answers_path(ctx: Context) -> Path:
    return ctx.out / "answers.jsonl"


def _index_dir(ctx: Context) -> Path:
    return ctx.out / "indexes"


def _require(path: Path, step: str) -> Path:
    if not path.exists():
        raise MissingArtifact(path, step)
    return path


def load_records(ctx: Context, board: Board | None = None) -> list[IpoRecord]:
    records = read_record_store(_require(_records_path(ctx), "ingest"))
    return [r for r in records if board is None or r.board is board]


def _embedder(ctx: Context):
    svc = ctx.config.services
    if ctx.offline:
        return HashingEmbedder(svc.offline_dimension, svc.embed_max_input)
    if not svc.embed_url:
        raise ConfigError("no embedding endpoint: set services.embed_url or IPO_EMBED_URL, or pass --offline")
    cfg = EmbeddingServiceConfig(svc.embed_url, svc.embed_dimension, svc.embed_max_input, svc.timeout,
                                 svc.retries, svc.embed_model, os.environ.get(ENV_EMBED_KEY))
    return EmbeddingClient(cfg, ResponseCache(ctx.config.cache_dir / "embeddings"))


def _generator(ctx: Context, purpose: str) -> GenerationClient:
    svc = ctx.config.services
    if ctx.offline:
        raise ConfigError(f"{purpose} needs the text generation service; --offline forbids network access")
    if not svc.gen_url:
        raise ConfigError("no generation endpoint: set services.gen_url or IPO_GEN_URL")
    cfg = GenerationServiceConfig(svc.gen_url, svc.gen_model, svc.timeout, svc.retries, os.environ.get(ENV_GEN_KEY))
    return GenerationClient(cfg, ResponseCache(ctx.config.cache_dir / "generations"))


def _learner_task(target: Target) -> LearnerTask:
    return LearnerTask.CLASSIFICATION if target.task is Task.DIRECTION else LearnerTask.REGRESSION


# ---------------------------------------------------------------- commands


def cmd_ingest(ctx: Context) -> int:
    cfg = ctx.config
    sources = [(Board.MAIN, cfg.path(cfg.paths.main_board)), (Board.SME, cfg.path(cfg.paths.sme))]
    aux = [cfg.path(p) for p in (cfg.paths.gmp, cfg.paths.news)]
    answers = _answers_path(ctx)
    inputs = [p for _, p in sources if p] + [p for p in aux if p] + [answers]
    out = _records_path(ctx)
    manifest = build_manifest("ingest", ctx, inputs)
    if up_to_date(out, manifest):
        print_counts(load_records(ctx))
        return _skip("ingest", out)
    records: list[IpoRecord] = []
    for board, path in sources:
        if path is not None:
            records.extend(parse_records(path, board))
    if cfg.paths.gmp:
        records = attach_gmp(records, cfg.path(cfg.paths.gmp))
    if cfg.paths.news:
        records = attach_news(records, cfg.path(cfg.paths.news))
    if answers.exists():
        records = attach_answers(records, answers)
    ctx.out.mkdir(parents=True, exist_ok=True)
    write_record_store(out, records)
    write_manifest(out, manifest)
    print_counts(records)
    return EXIT_OK


def split_counts(records: Sequence[IpoRecord]) -> dict[str, dict[str, int]]:
    out = {}
    for board in Board:
        rows = [r for r in records if r.board is board]
        if not rows:
            continue
        split = split_by_year(rows)
        out[board.value] = {"total": len(rows), "train": len(split.train), "test": len(split.test),
                            "excluded": len(split.excluded)}
    return out


def print_counts(records: Sequence[IpoRecord]) -> None:
    for board, c in split_counts(records).items():
        print(f"{board}: records={c['total']} train={c['train']} test={c['test']} excluded={c['excluded']}")


def cmd_index(ctx: Context) -> int:
    cfg = ctx.config
    if not cfg.paths.prospectus_dir:
        raise ConfigError("paths.prospectus_dir is not set")
    pdir = cfg.path(cfg.paths.prospectus_dir)
    records = load_records(ctx)
    embedder = _embedder(ctx)
    _index_dir(ctx).mkdir(parents=True, exist_ok=True)
    built = skipped = 0
    for slug in sorted({company_slug(r.company_id) for r in records}):
        src = pdir / f"{slug}.json"
        if not src.exists():
            logger.info("%s: no prospectus", slug)
            continue
        out = _index_dir(ctx) / f"{slug}.json"
        manifest = build_manifest("index", ctx, [src], {"embedder": type(embedder).__name__})
        if up_to_date(out, manifest):
            skipped += 1
            continue
        try:
            doc = ProspectusDoc.load(src, slug)
        except (RetrievalError, ValueError) as exc:
            logger.warning("%s: %s", src, exc)
            continue
        numbers = sorted(doc.pages)
        vectors = embedder.embed_batch([doc.pages[p] or " " for p in numbers])
        build_index(doc, dict(zip(numbers, vectors))).save(out)
        write_manifest(out, manifest)
        built += 1
    print(f"index: built={built} up_to_date={skipped}")
    return EXIT_OK


def cmd_answer(ctx: Context) -> int:
    records = load_records(ctx)
    idx_dir = _require(_index_dir(ctx), "index")
    indexes = sorted(idx_dir.glob("*.json"))
    indexes = [p for p in indexes if not p.name.endswith(".manifest.json")]
    if not indexes:
        raise MissingArtifact(idx_dir / "*.json", "index")
    out = _answers_path(ctx)
    manifest = build_manifest("answer", ctx, [_records_path(ctx), *indexes],
                              {"temperature": ctx.config.services.temperature, "model": ctx.config.services.gen_model})
    if up_to_date(out, manifest):
        return _skip("answer", out)
    generator = _generator(ctx, "answer")
    embedder = _embedder(ctx)
    question_vectors = embedder.embed_batch(list(QUESTION_BANK))
    by_slug = {p.stem: p for p in indexes}
    rows = []
    for rec in records:
        path = by_slug.get(company_slug(rec.company_id))
        if path is None:
            continue
        index = RetrievalIndex.load(path)
        # per-question embeddings are precomputed; the lookup ignores the text argument
        vec_of = dict(zip(QUESTION_BANK, question_vectors))
        contexts = [hybrid_retrieve(index, q, vec_of.__getitem__) for q in QUESTION_BANK]
        answers = map_ordered(
            lambda qc: answer_question(qc[0], qc[1][0], qc[1][1], generator, ctx.config.services.temperature),
            list(zip(QUESTION_BANK, contexts)), ctx.config.services.max_in_flight)
        rows.append((rec.company_id, rec.listing_date, answers))
    write_answers(out, rows)
    write_manifest(out, manifest)
    print(f"answer: {len(rows)} companies, {sum(a is not None for _, _, ans in rows for a in ans)} answers")
    return EXIT_OK


def _feature_paths(ctx: Context) -> dict[str, Path]:
    base = ctx.out / "features" / ctx.stem
    return {"dir": base, "train": base / "train.csv", "test": base / "test.csv", "info": base / "info.json",
            "meta_train": base / "meta_train.json", "meta_test": base / "meta_test.json"}


def cmd_features(ctx: Context) -> int:
    cfg = ctx.config
    paths = _feature_paths(ctx)
    inputs = [_require(_records_path(ctx), "ingest")]
    if ctx.variant is not Variant.NC:
        inputs.append(_require(_answers_path(ctx), "answer"))
    if cfg.paths.macro:
        inputs.append(cfg.path(cfg.paths.macro))
    manifest = build_manifest("features", ctx, inputs, {"target": ctx.target.value, "variant": ctx.variant.value,
                                                          "embedder": "hashing" if ctx.offline else "service"})
    if up_to_date(paths["info"], manifest):
        return _skip("features", paths["info"])
    records = load_records(ctx, ctx.board)
    if ctx.variant is not Variant.NC:
        records = attach_answers(records, _answers_path(ctx))
    if ctx.variant is Variant.TEXT_NEWS and not any(r.news_content for r in records):
        raise MissingArtifact("news content (set paths.news)", "ingest")
    split = split_by_year(records)
    train, test = labeled(split.train, ctx.target), labeled(split.test, ctx.target)
    if not train or not test:
        raise FeatureError(f"{ctx.board.value}: no labelled train or test rows for {ctx.target.value}")
    macro = read_macro_table(cfg.path(cfg.paths.macro)) if cfg.paths.macro else None
    include_meta = ctx.variant is not Variant.NC
    fcfg = FeatureConfig(cfg.features.imputation, cfg.features.rare_category_threshold, include_meta, ctx.target)
    pipeline = FeaturePipeline(fcfg, macro).fit(train)
    meta_train = meta_test = None
    if include_meta:
        tm = cfg.text_models
        tcfg = TextModelConfig(tuple(tm.kinds), tm.budget, tm.folds, ctx.seed, tm.min_texts)
        meta_train, meta_test = build_meta_features(train, test, ctx.target, _embedder(ctx), tcfg,
                                                    with_news=ctx.variant is Variant.TEXT_NEWS)
    Xtr, Xte = pipeline.transform(train, meta_train), pipeline.transform(test, meta_test)
    paths["dir"].mkdir(parents=True, exist_ok=True)
    Xtr.to_csv(paths["train"])
    Xte.to_csv(paths["test"])
    if include_meta:
        meta_train.save(paths["meta_train"])
        meta_test.save(paths["meta_test"])
    info = {"board": ctx.board.value, "target": ctx.target.value, "variant": ctx.variant.value,
            "kinds": Xtr.kinds_json(), "train_labels": target_vector(train, ctx.target).tolist(),
            "test_labels": target_vector(test, ctx.target).tolist()}
    paths["info"].write_text(json.dumps(info, sort_keys=True), encoding="utf-8")
    write_manifest(paths["info"], manifest)
    print(f"features: {ctx.stem} train={Xtr.shape} test={Xte.shape}")
    return EXIT_OK


def load_features(ctx: Context) -> tuple[FeatureMatrix, np.ndarray, FeatureMatrix, np.ndarray]:
    paths = _feature_paths(ctx)
    info = json.loads(_require(paths["info"], f"features --variant={ctx.variant.value}").read_text(encoding="utf-8"))
    Xtr = read_feature_csv(paths["train"], info["kinds"])
    Xte = read_feature_csv(paths["test"], info["kinds"])
    return Xtr, np.asarray(info["train_labels"]), Xte, np.asarray(info["test_labels"])


def _model_dir(ctx: Context) -> Path:
    return ctx.out / "models" / ctx.stem


def cmd_train(ctx: Context) -> int:
    paths = _feature_paths(ctx)
    _require(paths["info"], f"features --variant={ctx.variant.value}")
    mdir = _model_dir(ctx)
    board_path = mdir / "leaderboard.json"
    lc = ctx.config.learners
    manifest = build_manifest("train", ctx, [paths["info"], paths["train"]],
                              {"kinds": lc.kinds, "budget": lc.budget, "folds": lc.folds})
    if up_to_date(board_path, manifest):
        return _skip("train", board_path)
    Xtr, ytr, _, _ = load_features(ctx)
    board = automl_select(Xtr, ytr, _learner_task(ctx.target), budget=lc.budget, k=lc.folds, seed=ctx.seed,
                          kinds=lc.kinds)
    mdir.mkdir(parents=True, exist_ok=True)
    for old in mdir.glob("*.model.json"):
        old.unlink()
    for i, entry in enumerate(board.entries):
        entry.model.save(mdir / f"{i:02d}_{entry.kind}.model.json")
    board.save(board_path)
    write_manifest(board_path, manifest)
    for e in board.entries:
        print(f"{e.name:<60} cv_{board.metric_name}={e.cv_metric:.4f}")
    print(f"selected: {board.selected.name}")
    return EXIT_OK


def evaluate_variant(ctx: Context) -> list[EvaluationRow]:
    mdir = _model_dir(ctx)
    _require(mdir / "leaderboard.json", f"train --variant={ctx.variant.value}")
    _, _, Xte, yte = load_features(ctx)
    rows = []
    for path in sorted(mdir.glob("*.model.json")):
        model = TrainedModel.load(path)
        preds = model.predict(Xte)
        rep = classification_report(preds, yte) if ctx.target.task is Task.DIRECTION else regression_report(preds, yte)
        rows.append(EvaluationRow(ctx.target.value, ctx.variant, model.spec.kind, rep, ctx.board.value))
    return rows


def cmd_evaluate(ctx: Context, variants: Sequence[Variant]) -> int:
    rows = []
    for v in variants:
        sub = Context(ctx.config, ctx.seed, ctx.offline, ctx.board, ctx.target, v)
        if len(variants) > 1 and not (_model_dir(sub) / "leaderboard.json").exists():
            continue
        rows.extend(evaluate_variant(sub))
    if not rows:
        raise MissingArtifact(f"trained models for {ctx.board.value}/{ctx.target.value}", "train")
    rdir = ctx.out / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    stem = f"{ctx.board.value}-{ctx.target.value}"
    text = emit_report(rows, "text")
    (rdir / f"{stem}.txt").write_text(text, encoding="utf-8")
    (rdir / f"{stem}.json").write_text(emit_report(rows, "json"), encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_gmp(ctx: Context) -> int:
    out = ctx.out / "gmp_report.json"
    manifest = build_manifest("gmp", ctx, [_require(_records_path(ctx), "ingest")])
    if up_to_date(out, manifest):
        print((ctx.out / "gmp_report.txt").read_text(encoding="utf-8"), end="")
        return _skip("gmp", out)
    records = load_records(ctx)
    tables, errors = [], {}
    for board in Board:
        for period in Period:
            t = alignment_table(records, board, period)
            if t.eligible == 0:
                continue
            tables.append(t)
            try:
                errors[f"{board.value}/{period.value}"] = gmp_error(records, period, board)
            except ValueError:
                pass
    if not tables:
        raise MissingArtifact("GMP values in the record store (set paths.gmp)", "ingest")
    text = format_gmp_tables(tables, errors)
    (ctx.out / "gmp_report.txt").write_text(text, encoding="utf-8")
    out.write_text(json.dumps({"tables": [t.as_dict() for t in tables],
                               "errors": {k: v.as_dict() for k, v in errors.items()}}, indent=2, sort_keys=True),
                   encoding="utf-8")
    write_manifest(out, manifest)
    print(text, end="")
    return EXIT_OK


def cmd_llm_baseline(ctx: Context) -> int:
    out = ctx.out / "llm_baseline" / f"{ctx.board.value}-{ctx.target.value}.json"
    manifest = build_manifest("llm-baseline", ctx, [_require(_records_path(ctx), "ingest")],
                              {"target": ctx.target.value, "model": ctx.config.services.gen_model})
    if up_to_date(out, manifest):
        return _skip("llm-baseline", out)
    generator = _generator(ctx, "llm-baseline")
    test = labeled(split_by_year(load_records(ctx, ctx.board)).test, ctx.target)
    if not test:
        raise FeatureError(f"no labelled test rows for {ctx.target.value}")
    verdicts = map_ordered(lambda r: llm_baseline_predict(r, DEFAULT_COLUMN_DESCRIPTIONS, ctx.target, generator,
                                                          ctx.config.services.temperature),
                           test, ctx.config.services.max_in_flight)
    truth = target_vector(test, ctx.target)
    confident = np.array([not v.not_confident for v in verdicts])
    values = np.array([v.value for v in verdicts], dtype=float)
    metrics = None
    if confident.any():
        if ctx.target.task is Task.DIRECTION:
            metrics = classification_report(values[confident], truth[confident]).as_dict()
        else:
            metrics = regression_report(values[confident], truth[confident]).as_dict()
    result = {"board": ctx.board.value, "target": ctx.target.value, "n": len(test),
              "not_confident_share": float(1 - confident.mean()), "metrics_on_confident_rows": metrics,
              "verdicts": [{"company": r.company_id, "listing_date": r.listing_date.isoformat(),
                            "value": None if np.isnan(v.value) else v.value} for r, v in zip(test, verdicts)]}
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result, indent=2, sort_keys=True), encoding="utf-8")
    write_manifest(out, manifest)
    print(f"llm-baseline {ctx.board.value}/{ctx.target.value}: n={len(test)} "
          f"not-confident={100 * result['not_confident_share']:.2f}% metrics={metrics}")
    return EXIT_OK


# ---------------------------------------------------------------- argument parsing

_VARIANTS = {"N-C": Variant.NC, "NC": Variant.NC, "+T": Variant.TEXT, "T": Variant.TEXT,
             "+T+Nw": Variant.TEXT_NEWS, "T+Nw": Variant.TEXT_NEWS}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML pipeline config")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--offline", action="store_true",
                        help="forbid network access; embeddings come from a local hashing embedder")
    common.add_argument("--board", default="MainBoard", help="MainBoard or SME")
    common.add_argument("--target", choices=[k.value for k in PriceKind], default="close",
                        help="listing-day price the target is defined on")
    common.add_argument("--task", choices=[t.value for t in Task], default="direction")
    common.add_argument("--variant", choices=sorted(_VARIANTS), default="N-C", help="feature set")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ipo-fusion", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("ingest", "parse, label and split the record files"),
                           ("index", "build per-company retrieval indexes from prospectus pages"),
                           ("answer", "answer the 25 prospectus questions per company"),
                           ("features", "build the feature matrices for one target and variant"),
                           ("train", "cross-validate learners and persist the leaderboard"),
                           ("evaluate", "score trained models on the test year"),
                           ("gmp", "grey-market premium alignment tables and error"),
                           ("llm-baseline", "zero-shot LLM predictions on the test year")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        if name == "evaluate":
            p.add_argument("--all-variants", action="store_true", help="report every trained variant")
    return parser


def _context(args) -> Context:
    config = load_config(args.config)
    config.validate()
    seed = config.seed if args.seed is None else args.seed
    config.seed = seed
    needs_target = args.command in ("features", "train", "evaluate", "llm-baseline")
    target = Target.of(args.task, args.target) if needs_target else None
    return Context(config, seed, args.offline, Board.parse(args.board), target, _VARIANTS[args.variant])


_COMMANDS: dict[str, Callable[..., int]] = {
    "ingest": cmd_ingest, "index": cmd_index, "answer": cmd_answer, "features": cmd_features, "train": cmd_train,
    "gmp": cmd_gmp, "llm-baseline": cmd_llm_baseline,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx = _context(args)
        if args.command == "evaluate":
            variants = list(Variant) if args.all_variants else [ctx.variant]
            return cmd_evaluate(ctx, variants)
        return _COMMANDS[args.command](ctx)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ServiceError as exc:
        print(f"service failure: {exc}", file=sys.stderr)
        return EXIT_SERVICE
    except (ConfigError, DatasetError, FeatureError, TrainingError, RetrievalError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
