"""Operator-facing command line: the pipeline as composable subcommands.

Every subcommand reads and writes only the files named by its flags, echoes
the resolved config digest for provenance, and never prints a bare stack
trace. Exit codes: 0 success, 2 usage, 3 input validation, 4 internal.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import evaluate as evaluate_mod
from . import features as features_mod
from . import fuzz as fuzz_mod
from . import metrics as metrics_mod
from . import trainer as trainer_mod
from . import warnings as warn_mod
from .env import RewardSpec, TriageEnv
from .errors import (
    DigestMismatch,
    EmptyInput,
    EmptySplit,
    FeatureValidationError,
    LengthMismatch,
    MissingRecording,
    RatioError,
    SchemaError,
    SnippetTooLarge,
    TriageError,
    UnlabeledRecordError,
)
from .features import MANIFEST, Mode, extract_features, manifest_export, package_of
from .fuzz import ExternalBackend, RecordedBackend, SimOracleConfig, SimulatedBackend, load_templates
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train
from .warnings import Dataset, Split

_VALIDATION_ERRORS = (
    SchemaError,
    DigestMismatch,
    RatioError,
    UnlabeledRecordError,
    MissingRecording,
    FeatureValidationError,
    EmptyInput,
    EmptySplit,
    SnippetTooLarge,
    LengthMismatch,
    FileNotFoundError,
)


@dataclass
class RunConfig:
    """Resolved run settings: defaults, overlaid by config file, then flags."""

    seed: int = 0
    cluster_radius: int = 10
    backend: str = "simulated"
    recorded_path: str = ""
    external_command: str = "cargo-fuzz-triage"
    fuzz_budget: float = 45.0
    templates_dir: str = ""
    jobs: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    reward: RewardSpec = field(default_factory=RewardSpec)
    sim: SimOracleConfig = field(default_factory=SimOracleConfig)


def parse_config_file(text: str) -> dict[str, str]:
    """Flat `key = value` lines; '#' starts a comment; blank lines ignored."""
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"config line {n}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _coerce(current, raw: str):
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def build_run_config(file_values: dict[str, str], overrides: dict[str, str]) -> RunConfig:
    cfg = RunConfig()
    merged = dict(file_values)
    merged.update(overrides)
    for key, raw in merged.items():
        if "." in key:
            section, name = key.split(".", 1)
            target = getattr(cfg, section, None)
            if target is None or not hasattr(target, name):
                raise SchemaError(f"unknown config key {key!r}")
            setattr(target, name, _coerce(getattr(target, name), raw))
        else:
            if not hasattr(cfg, key):
                raise SchemaError(f"unknown config key {key!r}")
            setattr(cfg, key, _coerce(getattr(cfg, key), raw))
    # Re-run the dataclass validators on the merged values.
    cfg.train = TrainConfig(**asdict(cfg.train))
    cfg.sim = SimOracleConfig(**asdict(cfg.sim))
    return cfg


def config_digest(cfg: RunConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _load_config(args) -> RunConfig:
    file_values = {}
    if getattr(args, "config", None):
        file_values = parse_config_file(_read_text(args.config))
    overrides: dict[str, str] = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "backend", None):
        overrides["backend"] = args.backend
    if getattr(args, "recorded", None):
        overrides["recorded_path"] = args.recorded
    if getattr(args, "templates", None):
        overrides["templates_dir"] = args.templates
    if getattr(args, "jobs", None):
        overrides["jobs"] = str(args.jobs)
    cfg = build_run_config(file_values, overrides)
    print(f"config-digest {config_digest(cfg)}")
    return cfg


def _read_bytes(path: str) -> bytes:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"input file does not exist: {path}")
    return p.read_bytes()


def _read_text(path: str) -> str:
    return _read_bytes(path).decode("utf-8")


def _write(path: str, data: bytes) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(data)
    print(f"wrote {path}")


def _make_backend(cfg: RunConfig):
    if cfg.backend == "simulated":
        return SimulatedBackend(cfg.sim)
    if cfg.backend == "recorded":
        if not cfg.recorded_path:
            raise SchemaError("backend 'recorded' needs recorded_path (or --recorded)")
        return RecordedBackend.from_file(cfg.recorded_path)
    if cfg.backend == "external":
        templates = load_templates(cfg.templates_dir) if cfg.templates_dir else load_templates()
        return ExternalBackend(cfg.external_command, templates=templates)
    raise SchemaError(f"unknown backend {cfg.backend!r} (simulated/recorded/external)")


def _featurize_records(records, metadata, radius):
    clusters = warn_mod.cluster_warnings(records, radius)
    sizes = warn_mod.cluster_sizes(clusters)
    vectors = {}
    for r in records:
        meta = metadata.get(package_of(r)) if metadata else None
        vectors[r.id] = extract_features(r, meta, cluster_size=sizes.get(r.id, 1))
    return vectors


def _load_dataset(args, cfg) -> tuple[Dataset, dict]:
    records = warn_mod.read_warning_store(_read_bytes(args.warnings))
    labels = warn_mod.read_label_sidecar(_read_bytes(args.labels))
    records = warn_mod.apply_labels(records, labels)
    assignment, seed, _ = warn_mod.read_split_file(_read_bytes(args.splits))
    records = [r for r in records if r.id in assignment]
    vectors = features_mod.read_feature_sidecar(_read_bytes(args.features))
    return Dataset(records, assignment, seed), vectors


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    _load_config(args)
    records = warn_mod.parse_report(_read_bytes(args.report))
    _write(args.out, warn_mod.write_warning_store(records))
    print(f"ingested {len(records)} warnings")
    return 0


def cmd_split(args) -> int:
    cfg = _load_config(args)
    records = warn_mod.read_warning_store(_read_bytes(args.warnings))
    labels = warn_mod.read_label_sidecar(_read_bytes(args.labels))
    records = warn_mod.apply_labels(records, labels)
    labeled = [r for r in records if r.label is not None]
    ratios = tuple(float(x) for x in args.ratios.split(","))
    assignment = warn_mod.stratified_split(labeled, ratios, cfg.seed)
    _write(args.out, warn_mod.write_split_file(assignment, cfg.seed, ratios))
    return 0


def cmd_featurize(args) -> int:
    cfg = _load_config(args)
    records = warn_mod.read_warning_store(_read_bytes(args.warnings))
    metadata = (
        features_mod.read_package_metadata(_read_bytes(args.meta)) if args.meta else {}
    )
    if args.mode == "precomputed":
        if not args.sidecar:
            print("usage error: --mode precomputed needs --sidecar", file=sys.stderr)
            return 2
        sidecar = features_mod.read_feature_sidecar(_read_bytes(args.sidecar))
        vectors = {}
        for r in records:
            if r.id not in sidecar:
                raise FeatureValidationError(f"sidecar has no vector for warning {r.id}")
            vectors[r.id] = extract_features(r, sidecar=sidecar[r.id], mode=Mode.PRECOMPUTED)
    else:
        vectors = _featurize_records(records, metadata, cfg.cluster_radius)
    _write(args.out, features_mod.write_feature_sidecar([vectors[r.id] for r in records]))
    if args.export_manifest:
        _write(args.export_manifest, manifest_export().encode("utf-8"))
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    dataset, vectors = _load_dataset(args, cfg)
    backend = _make_backend(cfg)
    log_lines: list[str] = []
    checkpoint = train(dataset, vectors, cfg.train, backend, cfg.reward, log_lines=log_lines)
    _write(args.out, save_checkpoint(checkpoint))
    if args.log:
        _write(args.log, ("\n".join(log_lines) + "\n").encode("utf-8"))
    best = max((h["val_f1"] for h in checkpoint.history), default=0.0)
    print(f"trained {len(checkpoint.history)} epochs, best val F1 {best:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    checkpoint = load_checkpoint(_read_bytes(args.checkpoint))
    dataset, vectors = _load_dataset(args, cfg)
    records = dataset.split_records(Split(args.split))
    if not records:
        raise EmptySplit(f"split {args.split!r} has no records")
    backend = _make_backend(cfg)
    report, predictions = evaluate_mod.evaluate_checkpoint(
        checkpoint, records, vectors, backend, mask_fuzz=args.mask_fuzz
    )
    _write(args.out, metrics_mod.write_report(report))
    if args.verdicts:
        _write(args.verdicts, metrics_mod.write_verdicts(predictions))
    return 0


def cmd_triage(args) -> int:
    cfg = _load_config(args)
    records = warn_mod.parse_report(_read_bytes(args.report))
    checkpoint = load_checkpoint(_read_bytes(args.checkpoint))
    metadata = (
        features_mod.read_package_metadata(_read_bytes(args.meta)) if args.meta else {}
    )
    vectors = _featurize_records(records, metadata, cfg.cluster_radius)
    backend = _make_backend(cfg)
    env = TriageEnv(feature_dim=len(MANIFEST), reward_spec=checkpoint.reward_spec)
    episodes = [
        (r, features_mod.normalize(vectors[r.id], checkpoint.normalizer).values)
        for r in records
    ]

    def play(ep):
        rec, feats = ep
        return trainer_mod.play_episode(
            checkpoint.params, env, rec, feats, backend, mask_fuzz=args.mask_fuzz
        )

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            predictions = list(pool.map(play, episodes))
    else:
        predictions = [play(ep) for ep in episodes]
    _write(args.out, metrics_mod.write_verdicts(predictions))
    return 0


def cmd_fuzz_validate(args) -> int:
    cfg = _load_config(args)
    records = warn_mod.read_warning_store(_read_bytes(args.warnings))
    labels = (
        warn_mod.read_label_sidecar(_read_bytes(args.labels)) if args.labels else {}
    )
    by_id = {r.id: r for r in records}
    ids = args.ids.split(",") if args.ids else list(by_id)
    missing = [w for w in ids if w not in by_id]
    if missing:
        raise MissingRecording(f"warnings not in store: {', '.join(missing)}")
    backend = _make_backend(cfg)
    outcomes = {
        wid: fuzz_mod.run_fuzz(backend, by_id[wid], labels.get(wid), cfg.fuzz_budget)
        for wid in ids
    }
    _write(args.out, fuzz_mod.write_recorded_outcomes(outcomes))
    return 0


def cmd_importance(args) -> int:
    cfg = _load_config(args)
    checkpoint = load_checkpoint(_read_bytes(args.checkpoint))
    dataset, vectors = _load_dataset(args, cfg)
    records = dataset.split_records(Split(args.split))
    if not records:
        raise EmptySplit(f"split {args.split!r} has no records")
    results = evaluate_mod.permutation_importance(
        checkpoint, records, vectors, repeats=args.repeats, seed=cfg.seed
    )
    _write(args.out, evaluate_mod.write_importance(results))
    return 0


def cmd_report(args) -> int:
    _load_config(args)
    predictions = metrics_mod.read_verdicts(_read_bytes(args.verdicts))
    labels = warn_mod.read_label_sidecar(_read_bytes(args.labels))
    report = metrics_mod.compute_metrics(predictions, labels)
    _write(args.out, metrics_mod.write_report(report))
    return 0


# ---------------------------------------------------------------------------
# Parser.
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, help="overrides config seed")
    p.add_argument("--backend", choices=["simulated", "recorded", "external"])
    p.add_argument("--recorded", help="recorded outcomes file for the recorded backend")
    p.add_argument("--templates", help="harness template directory")
    p.add_argument("--jobs", type=int, help="worker fan-out cap")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="triagerl",
        description="Learned triage of static memory-safety warnings with budgeted fuzzing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a report file into the warning store")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)
    _add_common(p)

    p = sub.add_parser("split", help="stratified train/val/test assignment")
    p.add_argument("--warnings", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--ratios", default="0.70,0.15,0.15")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)
    _add_common(p)

    p = sub.add_parser("featurize", help="compute or validate feature vectors")
    p.add_argument("--warnings", required=True)
    p.add_argument("--meta", help="package metadata JSON")
    p.add_argument("--mode", choices=["heuristic", "precomputed"], default="heuristic")
    p.add_argument("--sidecar", help="precomputed feature sidecar")
    p.add_argument("--out", required=True)
    p.add_argument("--export-manifest", help="also write the manifest audit listing")
    p.set_defaults(func=cmd_featurize)
    _add_common(p)

    p = sub.add_parser("train", help="train a policy checkpoint")
    p.add_argument("--warnings", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="training log file (one line per epoch)")
    p.set_defaults(func=cmd_train)
    _add_common(p)

    p = sub.add_parser("evaluate", help="score a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--warnings", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--mask-fuzz", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--verdicts", help="also persist per-warning verdicts")
    p.set_defaults(func=cmd_evaluate)
    _add_common(p)

    p = sub.add_parser("triage", help="classify a raw report with a checkpoint")
    p.add_argument("--report", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--meta", help="package metadata JSON")
    p.add_argument("--mask-fuzz", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_triage)
    _add_common(p)

    p = sub.add_parser("fuzz-validate", help="run the fuzz backend on listed warnings")
    p.add_argument("--warnings", required=True)
    p.add_argument("--ids", help="comma-separated warning ids (default: all)")
    p.add_argument("--labels", help="label sidecar (needed by the simulated backend)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuzz_validate)
    _add_common(p)

    p = sub.add_parser("importance", help="permutation feature importance")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--warnings", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_importance)
    _add_common(p)

    p = sub.add_parser("report", help="recompute metrics from persisted verdicts")
    p.add_argument("--verdicts", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    _add_common(p)

    return parser


def run_cli(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 3
    except TriageError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # noqa: BLE001 - contract: no bare stack traces
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


def main() -> int:
    return run_cli(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
