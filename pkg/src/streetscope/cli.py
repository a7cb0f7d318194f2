"""Command-line interface.

One executable, ``streetscope``, wires the whole flow: sample road
networks, build locatability weights, score and curate profiles, clean
clue corpora, export tuning corpora, drive a vision-language endpoint,
and evaluate predictions.  ``run-all --config <ini>`` executes the full
stage DAG with incremental skipping.

Exit codes: 0 success, 2 validation error, 3 stage failure, 4 endpoint
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import clues as clues_mod
from . import evaluation, gateway, locatability, pipeline, sampling
from .errors import (
    EndpointError,
    ParseError,
    StreetscopeError,
    TaggerUnavailableError,
    ValidationError,
)
from .gazetteer import load_gazetteer
from .roads import parse_road_network
from .tagging import EndpointTagger, GazetteerTagger

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE = 3
EXIT_ENDPOINT = 4


def _load_config(args: argparse.Namespace) -> pipeline.PipelineConfig:
    if not args.config:
        raise ValidationError("this command needs --config <ini>")
    config = pipeline.load_config(args.config)
    if args.out:
        config.out_dir = Path(args.out)
    if args.seed is not None:
        config.seed = args.seed
    return config


def _cmd_sample(args: argparse.Namespace) -> None:
    network = parse_road_network(args.roads)
    samples = sampling.sample_points(network, args.interval_m)
    seed = args.seed if args.seed is not None else 0
    samples = [sampling.select_views(s, seed) for s in samples]
    sampling.export_samples_csv(samples, args.out)
    print(
        f"wrote {len(samples)} samples from {len(network.polylines)} polylines "
        f"to {args.out} (skipped {network.skipped} non-line features)"
    )


def _split_embeddings(path: str) -> tuple[list, list]:
    clue_vecs, label_vecs = locatability.load_embeddings_jsonl(path)
    return clue_vecs, label_vecs


def _cmd_weights(args: argparse.Namespace) -> None:
    clue_vecs, _ = _split_embeddings(args.clues)
    _, label_vecs = _split_embeddings(args.labels)
    if not clue_vecs:
        raise ValidationError(f"{args.clues}: no kind=clue vectors")
    if not label_vecs:
        raise ValidationError(f"{args.labels}: no kind=label vectors")
    schema_id = args.schema_id or "labels-v1"
    weights = locatability.build_weights(
        [v for _, v in clue_vecs],
        [v for _, v in label_vecs],
        tau=args.tau,
        label_schema_id=schema_id,
        corpus_id=str(args.clues),
    )
    locatability.save_weights_json(weights, args.out)
    schema = locatability.LabelSchema(id=schema_id, labels=tuple(n for n, _ in label_vecs))
    schema_path = Path(args.out).with_name("labels.json")
    locatability.save_schema_json(schema, schema_path)
    print(f"wrote weights for {len(label_vecs)} labels to {args.out} (schema: {schema_path})")


def _cmd_score(args: argparse.Namespace) -> None:
    profiles = locatability.load_profiles_jsonl(args.profiles)
    weights = locatability.load_weights_json(args.weights)
    scores = locatability.score_profiles(profiles, weights)
    locatability.save_scores_jsonl(scores, args.out)
    print(f"scored {len(scores)} profiles to {args.out}")


def _cmd_curate(args: argparse.Namespace) -> None:
    scores = locatability.load_scores_jsonl(args.scores)
    high, low = locatability.partition_scores(scores, args.threshold)
    payload = {"threshold": args.threshold, "high": high, "low": low}
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(f"high={len(high)} low={len(low)} at threshold {args.threshold}")


def _make_tagger(spec: str, gazetteer_path: str | None):
    if spec == "gazetteer":
        return GazetteerTagger(load_gazetteer(gazetteer_path))
    if spec.startswith("endpoint:"):
        return EndpointTagger(spec.split(":", 1)[1])
    raise ValidationError(f"unknown tagger {spec!r} (use gazetteer or endpoint:<url>)")


def _cmd_clues(args: argparse.Namespace) -> None:
    if args.clues_cmd == "ingest":
        records, report = clues_mod.ingest_clues(args.infile)
        print(
            f"loaded {report.loaded} records from {report.total_lines} lines "
            f"(duplicates={report.duplicates}, rejected={len(report.rejected)})"
        )
        for line_no, reason in report.rejected:
            print(f"  line {line_no}: {reason}")
    elif args.clues_cmd == "filter":
        records, _ = clues_mod.ingest_clues(args.infile)
        tagger = _make_tagger(args.tagger, args.gazetteer)
        kept, dropped = clues_mod.filter_geo_entities(records, tagger)
        with open(args.out, "w", encoding="utf-8") as handle:
            for record in kept:
                handle.write(
                    json.dumps(
                        {
                            "id": record.id,
                            "text": record.text,
                            "image_ref": record.image_ref,
                            "country": record.country,
                            "city": record.city,
                            "entities": list(record.entities),
                            "embedding_ref": record.embedding_ref,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        print(f"kept {len(kept)}, dropped {len(dropped)} -> {args.out}")
    elif args.clues_cmd == "export-stage1":
        records, _ = clues_mod.ingest_clues(args.infile)
        report = clues_mod.export_reasoning_corpus(records, args.out)
        print(f"exported {report.exported}, skipped {len(report.skipped)} -> {args.out}")
    elif args.clues_cmd == "export-stage2":
        curated = json.loads(Path(args.curated).read_text(encoding="utf-8"))
        truth = {t.image_id: t for t in evaluation.load_truth_jsonl(args.truth)}
        rows = []
        for image_id in curated["high"]:
            tagged = truth.get(image_id)
            rows.append(
                (image_id, tagged.country if tagged else "", tagged.city if tagged else None)
            )
        report = clues_mod.export_location_corpus(rows, args.out)
        print(f"exported {report.exported}, skipped {len(report.skipped)} -> {args.out}")


def _cmd_infer(args: argparse.Namespace) -> None:
    config = _load_config(args)
    endpoint = config.endpoints.get(args.endpoint)
    if endpoint is None:
        raise ValidationError(f"no [endpoint:{args.endpoint}] section in the config")
    manifest = gateway.read_manifest(args.manifest)
    records = gateway.batch_infer(manifest, endpoint, args.checkpoint)
    if args.out:
        gateway.write_predictions_jsonl(records, args.out, include_latency=False)
    effective = sum(1 for r in records if r.effective)
    print(f"{len(records)} predictions ({effective} effective); checkpoint: {args.checkpoint}")


def _cmd_eval(args: argparse.Namespace) -> None:
    preds = gateway.read_predictions_jsonl(args.preds)
    truth = evaluation.load_truth_jsonl(args.truth)
    gaz = load_gazetteer(args.gazetteer)
    thresholds = tuple(float(v) for v in args.thresholds.split(","))
    report = evaluation.build_report(preds, truth, gaz, thresholds)
    if args.out_json:
        Path(args.out_json).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    print(evaluation.report_text(report), end="")


def _cmd_stage(name: str):
    def _run(args: argparse.Namespace) -> None:
        config = _load_config(args)
        entry = pipeline.run_stage(name, config, force=args.force)
        print(f"stage {name}: {entry['status']}")

    return _run


def _cmd_run_all(args: argparse.Namespace) -> None:
    config = _load_config(args)
    report = pipeline.run_all(config)
    print(evaluation.report_text(report), end="")
    print(f"artifacts: {config.out_dir}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streetscope", description=__doc__)
    parser.add_argument("--config", help="pipeline INI config")
    parser.add_argument("--out", help="override the config's out_dir")
    parser.add_argument("--seed", type=int, default=None, help="override the config's seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="emit street-view sampling points from a road network")
    p.add_argument("--roads", required=True)
    p.add_argument("--interval-m", type=float, default=4000.0)
    p.add_argument("--out", required=True, dest="out")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("weights", help="build locatability weights from embeddings")
    p.add_argument("--clues", required=True, help="embeddings JSONL holding kind=clue vectors")
    p.add_argument("--labels", required=True, help="embeddings JSONL holding kind=label vectors")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--schema-id", default=None)
    p.add_argument("--out", required=True, dest="out")
    p.set_defaults(func=_cmd_weights)

    p = sub.add_parser("score", help="score segmentation profiles")
    p.add_argument("--profiles", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True, dest="out")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("curate", help="partition scores at the locatability threshold")
    p.add_argument("--scores", required=True)
    p.add_argument("--threshold", type=float, default=0.4)
    p.add_argument("--out", dest="out")
    p.set_defaults(func=_cmd_curate)

    p = sub.add_parser("clues", help="clue corpus operations")
    clues_sub = p.add_subparsers(dest="clues_cmd", required=True)
    q = clues_sub.add_parser("ingest")
    q.add_argument("--in", dest="infile", required=True)
    q.set_defaults(func=_cmd_clues)
    q = clues_sub.add_parser("filter")
    q.add_argument("--in", dest="infile", required=True)
    q.add_argument("--tagger", default="gazetteer", help="gazetteer or endpoint:<url>")
    q.add_argument("--gazetteer", default=None)
    q.add_argument("--out", required=True, dest="out")
    q.set_defaults(func=_cmd_clues)
    q = clues_sub.add_parser("export-stage1")
    q.add_argument("--in", dest="infile", required=True)
    q.add_argument("--out", required=True, dest="out")
    q.set_defaults(func=_cmd_clues)
    q = clues_sub.add_parser("export-stage2")
    q.add_argument("--curated", required=True)
    q.add_argument("--truth", required=True)
    q.add_argument("--out", required=True, dest="out")
    q.set_defaults(func=_cmd_clues)

    p = sub.add_parser("export-train", help="export both tuning corpora (config-driven)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_stage("export-train"))

    p = sub.add_parser("infer", help="run the evaluation prompt over an image manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--endpoint", required=True, help="endpoint name from the config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", dest="out")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--preds", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--gazetteer", default=None)
    p.add_argument("--thresholds", default="1,25,750")
    p.add_argument("--out-json", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="render report artifacts (config-driven)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_stage("report"))

    p = sub.add_parser("run-all", help="execute the full pipeline DAG")
    p.set_defaults(func=_cmd_run_all)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (ValidationError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (EndpointError, TaggerUnavailableError) as exc:
        print(f"endpoint error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except StreetscopeError as exc:
        print(f"stage error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
