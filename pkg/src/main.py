import argparse
import json
import logging
import sys
import time

from annotations import (
    AnnotatedRecord,
    MatchStage,
    WeakAnnotation,
    read_annotation_file,
    read_corpus,
    write_annotation_file,
    write_corpus,
)
from config_manager import ConfigManager
from embedding import export_text, load_embeddings, save_embeddings
from errors import ConfigError, PipelineError
from evaluation import EvalMode, Subset, evaluate_corpus
from linker import (
    LinkMode,
    linked_to_annotated,
    load_linker,
    mention_from_span,
    save_linker,
    write_linked,
)
from ontology import (
    load_merge_spec,
    load_ontology,
    merge_children,
    save_merge_spec,
    save_ontology,
)
from pipeline import WeakSupervisionPipeline
from synthcorpus import NoiseConfig, generate_corpus, generate_ontology
from tagger import RefineMode, TrainingStrategy, load_tagger, save_tagger, write_conll

logger = logging.getLogger("cli")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _refine_mode(value: str) -> RefineMode | None:
    return None if value == "none" else RefineMode(value)


def _load_optional_embeddings(path):
    return load_embeddings(path) if path else None


def _eval_modes(value: str) -> list[EvalMode]:
    try:
        return [EvalMode(part.strip().lower()) for part in value.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"--modes takes a comma list of partial, exact and type, got '{value}'")


def cmd_synth_ontology(args, cm: ConfigManager) -> dict:
    n_concepts = args.n_concepts or cm.getint("Synth", "n_concepts")
    n_children = args.n_children if args.n_children is not None else cm.getint("Synth", "n_children")
    ont, merge_ids = generate_ontology(n_concepts, args.synonyms_per, cm.seed, n_children)
    save_ontology(ont, args.out)
    summary = {"ontology": args.out, "concepts": len(ont), "children": len(merge_ids)}
    if args.merge_out:
        save_merge_spec(args.merge_out, merge_ids)
        summary["merge_spec"] = args.merge_out
    return summary


def cmd_synth_corpus(args, cm: ConfigManager) -> dict:
    ont = load_ontology(args.ontology)
    noise = NoiseConfig.zero() if args.zero_noise else cm.noise_config()
    n_records = args.n_records or cm.getint("Synth", "n_records")
    records, gold = generate_corpus(ont, n_records, noise, cm.seed, cm.separator_config())
    write_corpus(args.out_corpus, records)
    write_annotation_file(args.out_gold, gold)
    return {
        "corpus": args.out_corpus,
        "gold": args.out_gold,
        "records": len(records),
        "mentions": sum(len(g.annotations) for g in gold),
    }


def cmd_merge_ontology(args, cm: ConfigManager) -> dict:
    ont = load_ontology(args.ontology)
    merged = merge_children(ont, load_merge_spec(args.merge))
    save_ontology(merged, args.out)
    return {"ontology": args.out, "before": len(ont), "after": len(merged)}


def cmd_train_embeddings(args, cm: ConfigManager) -> dict:
    corpus = read_corpus(args.corpus)
    pipeline = WeakSupervisionPipeline(cm)
    embeddings = pipeline.train_embeddings(corpus)
    save_embeddings(embeddings, args.out)
    summary = {
        "embeddings": args.out,
        "vocab": len(embeddings.vocab),
        "dim": embeddings.dim,
        "loss_history": embeddings.metadata["loss_history"],
    }
    if args.export_text:
        export_text(embeddings, args.export_text)
        summary["text_export"] = args.export_text
    return summary


def cmd_weaklabel(args, cm: ConfigManager) -> dict:
    corpus = read_corpus(args.corpus)
    ont = load_ontology(args.ontology)
    stages = MatchStage.parse_list(args.stages)
    pipeline = WeakSupervisionPipeline(cm)
    weak = pipeline.weak_label(corpus, ont, _load_optional_embeddings(args.embeddings), stages)
    weak.save(args.out)
    return {
        "annotations_file": args.out,
        "stages": [s.value for s in weak.stages],
        "annotations": weak.annotation_count(),
        "stats": weak.stats,
    }


def cmd_train_tagger(args, cm: ConfigManager) -> dict:
    strategy = TrainingStrategy(args.strategy)
    weak = read_annotation_file(args.weak) if args.weak else None
    gold = read_annotation_file(args.gold) if args.gold else None
    pipeline = WeakSupervisionPipeline(cm)
    embeddings = _load_optional_embeddings(args.embeddings)
    ont = load_ontology(args.ontology) if args.ontology else None
    model = pipeline.train_tagger(strategy, weak, gold, embeddings, ont=ont)
    save_tagger(model, args.out)
    summary = {"tagger": args.out, "strategy": strategy.value, "loss_history": model.metadata["loss_history"]}
    if args.conll:
        source = gold if strategy is TrainingStrategy.SUPERVISED else weak
        summary["conll_records"] = write_conll(args.conll, pipeline.encode(source, weak=source is weak, ont=ont))
        summary["conll"] = args.conll
    return summary


def cmd_train_linker(args, cm: ConfigManager) -> dict:
    records = read_annotation_file(args.annotations)
    ont = load_ontology(args.ontology)
    pipeline = WeakSupervisionPipeline(cm)
    model = pipeline.train_linker(records, ont, _load_optional_embeddings(args.embeddings))
    save_linker(model, args.out)
    return {
        "linker": args.out,
        "classes": len(model.classes),
        "features": len(model.features),
        "loss_history": model.metadata["loss_history"],
    }


def cmd_extract(args, cm: ConfigManager) -> dict:
    corpus = read_corpus(args.corpus)
    refine = _refine_mode(args.mode)
    if refine is not None and not args.ontology:
        raise ConfigError("--mode s1/s1s2 needs --ontology")
    ont = load_ontology(args.ontology) if args.ontology else None
    pipeline = WeakSupervisionPipeline(cm)
    model = load_tagger(args.tagger)
    mentions = pipeline.extract(model, corpus, ont, _load_optional_embeddings(args.embeddings), refine)
    rows = [
        AnnotatedRecord(
            rec.id,
            rec.text,
            [WeakAnnotation(rec.id, m.span, None) for m in mentions[rec.id]],
        )
        for rec in corpus
    ]
    write_annotation_file(args.out, rows)
    return {"mentions_file": args.out, "mentions": sum(len(m) for m in mentions.values())}


def cmd_link(args, cm: ConfigManager) -> dict:
    ont = load_ontology(args.ontology)
    mode = LinkMode(args.mode)
    if mode is not LinkMode.EXACT and not args.linker:
        raise ConfigError(f"--mode {mode.value} needs --linker")
    model = load_linker(args.linker, ont) if args.linker else None
    mention_records = read_annotation_file(args.mentions)
    sep_cfg = cm.separator_config()
    corpus = [r.record for r in mention_records]
    mentions = {
        r.record_id: [mention_from_span(r.record, a.span, sep_cfg) for a in r.annotations]
        for r in mention_records
    }
    pipeline = WeakSupervisionPipeline(cm)
    entities = pipeline.link(corpus, mentions, ont, mode, model, _load_optional_embeddings(args.embeddings))
    write_linked(args.out, entities)
    summary = {"linked_file": args.out, "mode": mode.value, "linked": len(entities)}
    if args.pred_out:
        write_annotation_file(args.pred_out, linked_to_annotated(corpus, entities))
        summary["predictions"] = args.pred_out
    return summary


def cmd_pipeline(args, cm: ConfigManager) -> dict:
    corpus = read_corpus(args.corpus)
    ont = load_ontology(args.ontology)
    gold = read_annotation_file(args.gold) if args.gold else None
    train_gold = read_annotation_file(args.train_gold) if args.train_gold else None
    pipeline = WeakSupervisionPipeline(cm)
    return pipeline.run(
        corpus,
        ont,
        args.out_dir,
        MatchStage.parse_list(args.stages),
        TrainingStrategy(args.strategy),
        _refine_mode(args.refine),
        LinkMode(args.mode),
        gold=gold,
        train_gold=train_gold,
    )


def cmd_evaluate(args, cm: ConfigManager) -> dict:
    modes = _eval_modes(args.modes) if args.modes else None
    report = evaluate_corpus(args.gold, args.pred, Subset(args.subset), cm.separator_config(), modes)
    if args.out:
        report.save(args.out)
    return report.to_json()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="pipeline ini file (optional)")
    common.add_argument("--seed", type=int, default=None, help="overrides [General] seed")
    common.add_argument("--workers", type=int, default=None, help="overrides [General] workers")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(
        prog="ccnorm",
        description="Weakly supervised extraction and linking of chief-complaint concepts",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-ontology", parents=[common], help="generate a synthetic ontology")
    p.add_argument("--n-concepts", type=int, default=None)
    p.add_argument("--n-children", type=int, default=None)
    p.add_argument("--synonyms-per", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--merge-out", default=None, help="write the child ids as a merge spec")
    p.set_defaults(func=cmd_synth_ontology)

    p = sub.add_parser("synth-corpus", parents=[common], help="generate a corpus and its gold file")
    p.add_argument("--ontology", required=True)
    p.add_argument("--n-records", type=int, default=None)
    p.add_argument("--zero-noise", action="store_true", help="one clean synonym per record")
    p.add_argument("--out-corpus", required=True)
    p.add_argument("--out-gold", required=True)
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("merge-ontology", parents=[common], help="fold child concepts into parents")
    p.add_argument("--ontology", required=True)
    p.add_argument("--merge", required=True, help="file with one concept id per line")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_merge_ontology)

    p = sub.add_parser("train-embeddings", parents=[common], help="train subword embeddings")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--export-text", default=None, help="also write a word2vec-style text file")
    p.set_defaults(func=cmd_train_embeddings)

    p = sub.add_parser("weaklabel", parents=[common], help="split-and-match weak labeling")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ontology", required=True)
    p.add_argument("--stages", default="s1,s2,s3")
    p.add_argument("--embeddings", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_weaklabel)

    p = sub.add_parser("train-tagger", parents=[common], help="train the mention tagger")
    p.add_argument("--weak", default=None, help="weak annotation file")
    p.add_argument("--gold", default=None, help="gold annotation file")
    p.add_argument("--ontology", default=None, help="tightens weak spans to exact synonyms")
    p.add_argument("--strategy", choices=[s.value for s in TrainingStrategy], default="weak")
    p.add_argument("--augment-drop", type=float, default=None, help="overrides [Tagger] augment_drop_p")
    p.add_argument("--embeddings", default=None)
    p.add_argument("--conll", default=None, help="also export the training sequences")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_tagger)

    p = sub.add_parser("train-linker", parents=[common], help="train the concept linker")
    p.add_argument("--annotations", required=True)
    p.add_argument("--ontology", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_linker)

    p = sub.add_parser("extract", parents=[common], help="tag mentions with a trained tagger")
    p.add_argument("--corpus", required=True)
    p.add_argument("--tagger", required=True)
    p.add_argument("--ontology", default=None)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--mode", choices=["none", "s1", "s1s2"], default="none")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("link", parents=[common], help="link extracted mentions to concepts")
    p.add_argument("--mentions", required=True)
    p.add_argument("--ontology", required=True)
    p.add_argument("--linker", default=None)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--mode", choices=[m.value for m in LinkMode], default="ensemble")
    p.add_argument("--out", required=True)
    p.add_argument("--pred-out", default=None, help="also write predictions in annotation format")
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("pipeline", parents=[common], help="weak labels to linked concepts end to end")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ontology", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--stages", default="s1,s2,s3")
    p.add_argument("--strategy", choices=[s.value for s in TrainingStrategy], default="weak")
    p.add_argument("--augment-drop", type=float, default=None)
    p.add_argument("--refine", choices=["none", "s1", "s1s2"], default="none")
    p.add_argument("--mode", choices=[m.value for m in LinkMode], default="ensemble")
    p.add_argument("--gold", default=None, help="score the linked output against this file")
    p.add_argument("--train-gold", default=None, help="gold data for supervised/finetune")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against gold")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--subset", choices=[s.value for s in Subset], default="all")
    p.add_argument(
        "--modes",
        default=None,
        help="comma list of partial,exact,type (default: type only when every span has a concept)",
    )
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )
    started = time.perf_counter()
    try:
        cm = ConfigManager(args.config)
        cm.apply_overrides(
            {
                ("General", "seed"): args.seed,
                ("General", "workers"): args.workers,
                ("Tagger", "augment_drop_p"): getattr(args, "augment_drop", None),
            }
        )
        summary = args.func(args, cm)
    except PipelineError as e:
        logger.error("%s", e)
        return e.exit_code
    summary = {"command": args.command, **summary}
    summary.setdefault("seconds", round(time.perf_counter() - started, 3))
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n")
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
