"""End-to-end pipeline: config, stage DAG, and hash-chained run manifest.

Stages write their artifacts under the configured output directory and
record input hashes, parameters, and output hashes in
``run_manifest.json``.  A stage is skipped when its recorded signature
still matches, so editing one input re-runs exactly its descendants.
With mock endpoints and a fixed seed the whole pipeline is
deterministic: artifacts are byte-identical across runs.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import clues as clues_mod
from . import evaluation, gateway, locatability, sampling
from .errors import StageError, ValidationError
from .gazetteer import load_gazetteer
from .roads import parse_road_network
from .tagging import EndpointTagger, GazetteerTagger

STAGE_ORDER = [
    "sample",
    "weights",
    "score",
    "curate",
    "clues",
    "export-train",
    "infer",
    "eval",
    "report",
]

_INPUT_PATHS = ("roads", "profiles", "clues", "embeddings", "gazetteer", "truth", "manifest")


@dataclass
class PipelineConfig:
    out_dir: Path
    paths: dict[str, Path | None] = field(default_factory=dict)
    interval_m: float = 4000.0
    tau: float = 0.5
    locatability_threshold: float = 0.4
    thresholds_km: tuple[float, ...] = (1.0, 25.0, 750.0)
    seed: int = 0
    label_schema_id: str = "labels-v1"
    curve_label: str | None = None
    tagger: str = "gazetteer"  # "gazetteer" or "endpoint:<url>"
    endpoints: dict[str, gateway.EndpointConfig] = field(default_factory=dict)
    infer_endpoint: str = ""

    def path(self, name: str) -> Path | None:
        return self.paths.get(name)

    def require_path(self, name: str, stage: str) -> Path:
        value = self.paths.get(name)
        if value is None:
            raise ValidationError(f"stage {stage!r} needs [paths] {name} in the config")
        return value

    def missing_paths(self) -> list[str]:
        return [name for name in _INPUT_PATHS if name != "gazetteer" and not self.paths.get(name)]


def load_config(path: str | Path) -> PipelineConfig:
    """Parse the INI config; ${VAR} in values is expanded from the environment."""
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path, encoding="utf-8")
    if not read:
        raise ValidationError(f"config file not found: {path}")

    def get(section: str, option: str, default: str | None = None) -> str | None:
        if parser.has_option(section, option):
            value = os.path.expandvars(parser.get(section, option)).strip()
            return value if value else default
        return default

    paths: dict[str, Path | None] = {}
    for name in _INPUT_PATHS:
        value = get("paths", name)
        paths[name] = Path(value) if value else None
    out_dir = get("paths", "out_dir")
    if not out_dir:
        raise ValidationError("config is missing [paths] out_dir")

    thresholds_raw = get("params", "thresholds_km", "1,25,750")
    try:
        thresholds = tuple(float(v) for v in thresholds_raw.split(",") if v.strip())
    except ValueError:
        raise ValidationError(f"bad thresholds_km: {thresholds_raw!r}") from None

    endpoints: dict[str, gateway.EndpointConfig] = {}
    for section in parser.sections():
        if not section.startswith("endpoint:"):
            continue
        name = section.split(":", 1)[1]
        base_url = get(section, "base_url")
        if not base_url:
            raise ValidationError(f"[{section}] needs base_url")
        endpoints[name] = gateway.EndpointConfig(
            base_url=base_url,
            model=get(section, "model", "") or "",
            token_env=get(section, "token_env", "") or "",
            timeout_s=float(get(section, "timeout_s", "30")),
            max_retries=int(get(section, "max_retries", "3")),
            max_parallel=int(get(section, "max_parallel", "4")),
            rpm=int(get(section, "rpm", "0")),
        )

    return PipelineConfig(
        out_dir=Path(out_dir),
        paths=paths,
        interval_m=float(get("params", "interval_m", "4000")),
        tau=float(get("params", "tau", "0.5")),
        locatability_threshold=float(get("params", "locatability_threshold", "0.4")),
        thresholds_km=thresholds,
        seed=int(get("params", "seed", "0")),
        label_schema_id=get("params", "label_schema_id", "labels-v1") or "labels-v1",
        curve_label=get("params", "curve_label"),
        tagger=get("params", "tagger", "gazetteer") or "gazetteer",
        endpoints=endpoints,
        infer_endpoint=get("infer", "endpoint", "") or "",
    )


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _make_tagger(config: PipelineConfig):
    if config.tagger == "gazetteer":
        return GazetteerTagger(load_gazetteer(config.path("gazetteer")))
    if config.tagger.startswith("endpoint:"):
        return EndpointTagger(config.tagger.split(":", 1)[1])
    raise ValidationError(f"unknown tagger {config.tagger!r} (use gazetteer or endpoint:<url>)")


# --- stage bodies -----------------------------------------------------------
# Each returns the list of artifact paths it wrote (relative to out_dir).


def _stage_sample(config: PipelineConfig) -> list[str]:
    network = parse_road_network(config.require_path("roads", "sample"))
    samples = sampling.sample_points(network, config.interval_m)
    samples = [sampling.select_views(s, config.seed) for s in samples]
    sampling.export_samples_csv(samples, config.out_dir / "samples.csv")
    return ["samples.csv"]


def _stage_weights(config: PipelineConfig) -> list[str]:
    clue_vecs, label_vecs = locatability.load_embeddings_jsonl(
        config.require_path("embeddings", "weights")
    )
    if not clue_vecs or not label_vecs:
        raise StageError("embeddings file must contain both clue and label vectors")
    schema = locatability.LabelSchema(
        id=config.label_schema_id, labels=tuple(name for name, _ in label_vecs)
    )
    weights = locatability.build_weights(
        [v for _, v in clue_vecs],
        [v for _, v in label_vecs],
        tau=config.tau,
        label_schema_id=schema.id,
        corpus_id=str(config.path("embeddings")),
    )
    locatability.save_weights_json(weights, config.out_dir / "weights.json")
    locatability.save_schema_json(schema, config.out_dir / "labels.json")
    return ["weights.json", "labels.json"]


def _stage_score(config: PipelineConfig) -> list[str]:
    profiles = locatability.load_profiles_jsonl(config.require_path("profiles", "score"))
    weights = locatability.load_weights_json(config.out_dir / "weights.json")
    scores = locatability.score_profiles(profiles, weights)
    locatability.save_scores_jsonl(scores, config.out_dir / "scores.jsonl")
    return ["scores.jsonl"]


def _stage_curate(config: PipelineConfig) -> list[str]:
    scores = locatability.load_scores_jsonl(config.out_dir / "scores.jsonl")
    high, low = locatability.partition_scores(scores, config.locatability_threshold)
    payload = {"threshold": config.locatability_threshold, "high": high, "low": low}
    (config.out_dir / "curated.json").write_text(
        json.dumps(payload, indent=2) + "\n", encoding="utf-8"
    )
    return ["curated.json"]


def _stage_clues(config: PipelineConfig) -> list[str]:
    records, ingest_report = clues_mod.ingest_clues(config.require_path("clues", "clues"))
    kept, dropped = clues_mod.filter_geo_entities(records, _make_tagger(config))
    with open(config.out_dir / "clues_clean.jsonl", "w", encoding="utf-8") as handle:
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
    report = {
        "ingest": {
            "total_lines": ingest_report.total_lines,
            "loaded": ingest_report.loaded,
            "duplicates": ingest_report.duplicates,
            "rejected": [[line, reason] for line, reason in ingest_report.rejected],
        },
        "kept": len(kept),
        "dropped": [[record.id, cause] for record, cause in dropped],
    }
    (config.out_dir / "clues_report.json").write_text(
        json.dumps(report, indent=2) + "\n", encoding="utf-8"
    )
    return ["clues_clean.jsonl", "clues_report.json"]


def _load_clean_clues(path: Path) -> list[clues_mod.ClueRecord]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            obj = json.loads(line)
            records.append(
                clues_mod.ClueRecord(
                    id=obj["id"],
                    text=obj["text"],
                    image_ref=obj["image_ref"],
                    country=obj["country"],
                    city=obj.get("city"),
                    entities=tuple(obj.get("entities", [])),
                    embedding_ref=obj.get("embedding_ref"),
                )
            )
    return records


def _stage_export_train(config: PipelineConfig) -> list[str]:
    kept = _load_clean_clues(config.out_dir / "clues_clean.jsonl")
    stage1 = clues_mod.export_reasoning_corpus(kept, config.out_dir / "corpus_stage1.jsonl")

    curated = json.loads((config.out_dir / "curated.json").read_text(encoding="utf-8"))
    truth = evaluation.load_truth_jsonl(config.require_path("truth", "export-train"))
    truth_by_id = {t.image_id: t for t in truth}
    refs = {
        e.image_id: e.image_ref
        for e in gateway.read_manifest(config.require_path("manifest", "export-train"))
    }
    rows: list[tuple[str, str, str | None]] = []
    for image_id in curated["high"]:
        tagged = truth_by_id.get(image_id)
        if tagged is None:
            rows.append((refs.get(image_id, image_id), "", None))  # skipped: no geo-tag
        else:
            rows.append(
                (refs.get(image_id, image_id), tagged.country, tagged.city)
            )
    stage2 = clues_mod.export_location_corpus(rows, config.out_dir / "corpus_stage2.jsonl")

    report = {
        "stage1": {"exported": stage1.exported, "skipped": stage1.skipped},
        "stage2": {"exported": stage2.exported, "skipped": stage2.skipped},
    }
    (config.out_dir / "corpus_report.json").write_text(
        json.dumps(report, indent=2) + "\n", encoding="utf-8"
    )
    return ["corpus_stage1.jsonl", "corpus_stage2.jsonl", "corpus_report.json"]


def _infer_endpoint(config: PipelineConfig) -> gateway.EndpointConfig:
    if not config.infer_endpoint:
        raise ValidationError("config is missing [infer] endpoint")
    endpoint = config.endpoints.get(config.infer_endpoint)
    if endpoint is None:
        raise ValidationError(
            f"[infer] endpoint {config.infer_endpoint!r} has no [endpoint:{config.infer_endpoint}] section"
        )
    return endpoint


def _stage_infer(config: PipelineConfig) -> list[str]:
    manifest = gateway.read_manifest(config.require_path("manifest", "infer"))
    work = config.out_dir / "work"
    work.mkdir(parents=True, exist_ok=True)
    records = gateway.batch_infer(
        manifest, _infer_endpoint(config), work / "predictions.ckpt.jsonl"
    )
    # latency is measured, not answered; the canonical artifact drops it so
    # two identical runs stay byte-identical.
    gateway.write_predictions_jsonl(
        records, config.out_dir / "predictions.jsonl", include_latency=False
    )
    return ["predictions.jsonl"]


def _stage_eval(config: PipelineConfig) -> list[str]:
    preds = gateway.read_predictions_jsonl(config.out_dir / "predictions.jsonl")
    truth = evaluation.load_truth_jsonl(config.require_path("truth", "eval"))
    gaz = load_gazetteer(config.path("gazetteer"))
    report = evaluation.build_report(preds, truth, gaz, config.thresholds_km)
    (config.out_dir / "eval_report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return ["eval_report.json"]


def _stage_report(config: PipelineConfig) -> list[str]:
    report = evaluation.EvalReport.from_dict(
        json.loads((config.out_dir / "eval_report.json").read_text(encoding="utf-8"))
    )
    (config.out_dir / "report.txt").write_text(
        evaluation.report_text(report), encoding="utf-8"
    )
    (config.out_dir / "report.csv").write_text(
        evaluation.report_csv(report), encoding="utf-8"
    )
    outputs = ["report.txt", "report.csv"]
    if config.curve_label:
        profiles = locatability.load_profiles_jsonl(config.require_path("profiles", "report"))
        scores = locatability.load_scores_jsonl(config.out_dir / "scores.jsonl")
        schema = locatability.load_schema_json(config.out_dir / "labels.json")
        curve = locatability.class_proportion_curve(
            profiles,
            {s.image_id: s.score for s in scores},
            schema,
            config.curve_label,
        )
        name = f"curve_{config.curve_label}.csv"
        (config.out_dir / name).write_text(
            evaluation.curve_csv(curve, ["bin_center", "mean_locatability", "count"]),
            encoding="utf-8",
        )
        outputs.append(name)
    return outputs


@dataclass(frozen=True)
class _StageSpec:
    name: str
    run: callable
    # logical name -> (path resolver, producing stage or None for external)
    inputs: tuple[tuple[str, str | None], ...]
    params: tuple[str, ...]


def _stage_specs() -> dict[str, _StageSpec]:
    return {
        spec.name: spec
        for spec in [
            _StageSpec("sample", _stage_sample, (("roads", None),), ("interval_m", "seed")),
            _StageSpec("weights", _stage_weights, (("embeddings", None),), ("tau", "label_schema_id")),
            _StageSpec("score", _stage_score, (("profiles", None), ("weights.json", "weights")), ()),
            _StageSpec("curate", _stage_curate, (("scores.jsonl", "score"),), ("locatability_threshold",)),
            _StageSpec("clues", _stage_clues, (("clues", None),), ("tagger",)),
            _StageSpec(
                "export-train",
                _stage_export_train,
                (
                    ("clues_clean.jsonl", "clues"),
                    ("curated.json", "curate"),
                    ("truth", None),
                    ("manifest", None),
                ),
                (),
            ),
            _StageSpec("infer", _stage_infer, (("manifest", None),), ("endpoint",)),
            _StageSpec(
                "eval",
                _stage_eval,
                (("predictions.jsonl", "infer"), ("truth", None)),
                ("thresholds_km",),
            ),
            _StageSpec(
                "report",
                _stage_report,
                (
                    ("eval_report.json", "eval"),
                    ("scores.jsonl", "score"),
                    ("labels.json", "weights"),
                    ("profiles", None),
                ),
                ("curve_label",),
            ),
        ]
    }


def _input_path(config: PipelineConfig, logical: str, producer: str | None) -> Path | None:
    if producer is None:
        return config.path(logical)
    return config.out_dir / logical


def _stage_params(config: PipelineConfig, spec: _StageSpec) -> dict:
    values: dict = {}
    for name in spec.params:
        if name == "endpoint":
            endpoint = _infer_endpoint(config)
            values["endpoint"] = {
                "name": config.infer_endpoint,
                "base_url": endpoint.base_url,
                "model": endpoint.model,
            }
        elif name == "thresholds_km":
            values[name] = list(config.thresholds_km)
        else:
            values[name] = getattr(config, name.replace("-", "_"))
    return values


def _manifest_path(config: PipelineConfig) -> Path:
    return config.out_dir / "run_manifest.json"


def _load_manifest(config: PipelineConfig) -> dict:
    path = _manifest_path(config)
    if path.exists():
        return json.loads(path.read_text(encoding="utf-8"))
    return {"stages": {}}


def _save_manifest(config: PipelineConfig, manifest: dict) -> None:
    _manifest_path(config).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _stage_signature(config: PipelineConfig, spec: _StageSpec) -> dict:
    inputs: dict[str, str] = {}
    for logical, producer in spec.inputs:
        path = _input_path(config, logical, producer)
        if path is None or not path.exists():
            if producer is not None:
                raise StageError(
                    f"stage {spec.name!r} is missing input {logical!r} — "
                    f"run stage {producer!r} first"
                )
            raise StageError(
                f"stage {spec.name!r} is missing external input {logical!r} "
                f"({path if path else 'not configured'})"
            )
        inputs[logical] = _sha256(path)
    # The gazetteer is an optional external input for tagging and geocoding;
    # when a custom file is configured its content joins the signature.
    if spec.name in ("clues", "eval") and config.path("gazetteer"):
        inputs["gazetteer"] = _sha256(config.path("gazetteer"))
    return {"inputs": inputs, "params": _stage_params(config, spec)}


def run_stage(name: str, config: PipelineConfig, force: bool = False) -> dict:
    """Run (or skip) one stage; returns its manifest entry."""
    specs = _stage_specs()
    if name not in specs:
        raise ValidationError(f"unknown stage {name!r}; stages: {', '.join(STAGE_ORDER)}")
    spec = specs[name]
    config.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _load_manifest(config)
    signature = _stage_signature(config, spec)

    previous = manifest["stages"].get(name)
    if previous is not None and not force:
        unchanged = (
            previous.get("inputs") == signature["inputs"]
            and previous.get("params") == signature["params"]
        )
        outputs_ok = all(
            (config.out_dir / rel).exists() and _sha256(config.out_dir / rel) == digest
            for rel, digest in previous.get("outputs", {}).items()
        )
        if unchanged and outputs_ok:
            entry = dict(previous)
            entry["status"] = "skipped"
            manifest["stages"][name] = entry
            _save_manifest(config, manifest)
            return entry

    outputs = spec.run(config)
    entry = {
        "status": "run",
        "inputs": signature["inputs"],
        "params": signature["params"],
        "outputs": {rel: _sha256(config.out_dir / rel) for rel in outputs},
    }
    manifest["stages"][name] = entry
    _save_manifest(config, manifest)
    return entry


def run_all(config: PipelineConfig) -> evaluation.EvalReport:
    """Execute the full stage DAG and return the final evaluation report.

    Stages whose inputs and parameters are unchanged are skipped; the
    first failing stage aborts the run with its own error.
    """
    missing = config.missing_paths()
    if missing:
        raise ValidationError(
            "config is missing required [paths] entries: " + ", ".join(sorted(missing))
        )
    for name in STAGE_ORDER:
        run_stage(name, config)
    return evaluation.EvalReport.from_dict(
        json.loads((config.out_dir / "eval_report.json").read_text(encoding="utf-8"))
    )
