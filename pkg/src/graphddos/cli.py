"""Command-line entry points for training, replay, and the analyst API."""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from typing import List, Optional, Tuple

from .errors import ConfigurationError, GraphDDoSError
from .ingest import (
    LABEL_POLICIES,
    POLICY_SUSPICIOUS_AS_ATTACK,
    UNLABELED,
    FlowRecord,
    Standardizer,
    apply_label_policy,
    load_schema,
    parse_flow_file,
    read_canonical_jsonl,
    write_canonical_jsonl,
)
from .model import HGUNet, ModelConfig
from .service import (
    DecisionConfig,
    DecisionThresholds,
    create_app,
    export_feedback,
    run_pipeline,
    verify_forensic_log,
)
from .synthetic import cloud_corpus, learnable_corpus, stratified_subsample
from .training import (
    evaluate,
    make_folds,
    metrics_from_dump,
    run_crossval,
    run_fold,
    build_window_graphs,
    time_sorted,
)
from .windows import WindowConfig


def _eprint(*parts) -> None:
    print(*parts, file=sys.stderr)


def load_records(path: str, schema_name: Optional[str],
                 policy: str = POLICY_SUSPICIOUS_AS_ATTACK,
                 keep_unlabeled: bool = False) -> List[FlowRecord]:
    """Read a canonical .jsonl dump or a raw flow-meter CSV (schema
    required), then apply the label policy. Records the policy maps to
    None and unlabeled rows (unless kept) are dropped."""
    if policy not in LABEL_POLICIES:
        raise ConfigurationError(
            f"unknown label policy {policy!r}; choose from {LABEL_POLICIES}")
    if path.endswith(".jsonl") or path.endswith(".json"):
        records = read_canonical_jsonl(path)
    else:
        if not schema_name:
            raise ConfigurationError(
                "raw flow files need --schema (e.g. cicflowmeter)")
        schema = load_schema(schema_name)
        records, stats = parse_flow_file(path, schema)
        _eprint(f"parsed {path}: {json.dumps(stats.as_dict())}")
    out = []
    dropped = 0
    for r in records:
        label = r.label
        if label == UNLABELED or label is None:
            if keep_unlabeled:
                out.append(replace(r, label=None))
            else:
                dropped += 1
            continue
        mapped = apply_label_policy(label, policy)
        if mapped is None:
            dropped += 1
            continue
        out.append(replace(r, label=mapped))
    if dropped:
        _eprint(f"dropped {dropped} records under policy {policy!r}")
    return out


def _model_config(args, flow_width: int) -> ModelConfig:
    if getattr(args, "model_config", None):
        with open(args.model_config) as fh:
            doc = json.load(fh)
        doc.setdefault("flow_width", flow_width)
        return ModelConfig.from_json_dict(doc)
    return ModelConfig(flow_width=flow_width)


def _window_config(args) -> WindowConfig:
    return WindowConfig(delta_t=args.delta_t, max_flows=args.max_flows,
                        skew_tolerance=getattr(args, "skew_tolerance", 0.0))


def _load_model_bundle(checkpoint: str,
                       standardizer: Optional[str]) -> Tuple[HGUNet, Standardizer]:
    model = HGUNet.load(checkpoint)
    std_path = standardizer or os.path.join(os.path.dirname(checkpoint),
                                            "standardizer.json")
    if not os.path.exists(std_path):
        raise ConfigurationError(
            f"no standardizer at {std_path!r}; pass --standardizer")
    with open(std_path) as fh:
        std = Standardizer.from_json(json.load(fh))
    return model, std


# --------------------------------------------------------------------- train


def cmd_train(args) -> int:
    records = load_records(args.data, args.schema, args.policy)
    if args.subsample:
        records = stratified_subsample(records, args.subsample, seed=args.seed)
    labels = [r.label for r in records]
    plan = make_folds(labels, k=args.folds, seed=args.seed)
    cfg = _model_config(args, len(records[0].feature_names))
    wcfg = _window_config(args)
    fold_ids = list(range(args.folds)) if args.fold == "all" else [int(args.fold)]
    for f in fold_ids:
        report = run_fold(records, plan.folds[f], f, model_config=cfg,
                          wcfg=wcfg, epochs=args.epochs, lr=args.lr,
                          patience=args.patience, seed=args.seed,
                          out_dir=args.out)
        print(json.dumps({"fold": f, **report.metrics.as_dict(),
                          "best_epoch": report.train_result.best_epoch,
                          "epochs_run": report.train_result.epochs_run},
                         sort_keys=True))
    return 0


def cmd_crossval(args) -> int:
    records = load_records(args.data, args.schema, args.policy)
    if args.subsample:
        records = stratified_subsample(records, args.subsample, seed=args.seed)
    cfg = _model_config(args, len(records[0].feature_names))
    report = run_crossval(records, k=args.folds, seed=args.seed,
                          model_config=cfg, wcfg=_window_config(args),
                          epochs=args.epochs, lr=args.lr,
                          patience=args.patience, out_dir=args.out)
    print(report.markdown())
    return 0


def cmd_evaluate(args) -> int:
    model, std = _load_model_bundle(args.checkpoint, args.standardizer)
    records = load_records(args.data, args.schema, args.policy)
    graphs = build_window_graphs(time_sorted(std.transform(records)),
                                 _window_config(args),
                                 d_h=model.config.host_width)
    metrics, rows = evaluate(model, graphs, threshold=args.threshold)
    if metrics_from_dump(rows, args.threshold) != metrics:
        raise ConfigurationError("prediction dump recount mismatch")
    if args.dump:
        with open(args.dump, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row.as_dict(), sort_keys=True) + "\n")
    print(json.dumps(metrics.as_dict(), sort_keys=True, indent=2))
    return 0


# --------------------------------------------------------------------- service


def _merged(args, config_doc: dict, section: str, key: str, flag_value,
            default):
    """Precedence: explicit CLI flag > config file > default."""
    if flag_value is not None:
        return flag_value
    return config_doc.get(section, {}).get(key, default)


def cmd_replay(args) -> int:
    doc = {}
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
    checkpoint = args.checkpoint or doc.get("model")
    if not checkpoint:
        raise ConfigurationError("need --checkpoint or a config 'model' entry")
    standardizer = args.standardizer or doc.get("standardizer")
    model, std = _load_model_bundle(checkpoint, standardizer)
    wcfg = WindowConfig(
        delta_t=_merged(args, doc, "window", "delta_t", args.delta_t, 30.0),
        max_flows=int(_merged(args, doc, "window", "max_flows",
                              args.max_flows, 64)),
        skew_tolerance=_merged(args, doc, "window", "skew_tolerance",
                               None, 0.0))
    dcfg = DecisionConfig(
        thresholds=DecisionThresholds(
            tau_analyst=_merged(args, doc, "thresholds", "tau_analyst",
                                args.tau_analyst, 0.5),
            tau_auto=_merged(args, doc, "thresholds", "tau_auto",
                             args.tau_auto, 0.9)),
        notify_floor=_merged(args, doc, "thresholds", "notify_floor",
                             args.notify_floor, 0.2),
        grey_zone_rate_limit=not args.no_grey_rate_limit
        if args.no_grey_rate_limit is not None
        else doc.get("thresholds", {}).get("grey_zone_rate_limit", True))
    memory = doc.get("memory", {})
    records = load_records(args.input, args.schema, args.policy,
                           keep_unlabeled=True)
    summary = run_pipeline(
        records, model, std, wcfg, dcfg, args.out,
        schema_name=args.schema or "canonical", run_id=args.run_id,
        speed=args.speed,
        per_host_cap=int(memory.get("per_host_cap", 8)),
        global_cap=int(memory.get("global_cap", 4096)))
    print(json.dumps(summary.as_dict(), sort_keys=True, indent=2))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    static = args.static
    if static is None:
        candidate = os.path.join(os.getcwd(), "frontend", "dist")
        static = candidate if os.path.isdir(candidate) else None
    app = create_app(args.run_dir, static_dir=static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_verify_log(args) -> int:
    ok, seq = verify_forensic_log(args.path)
    if ok:
        print("ok")
        return 0
    print(f"corrupt at seq {seq}")
    return 1


def cmd_export_feedback(args) -> int:
    records, skipped = export_feedback(args.run_dir, args.out)
    print(json.dumps({"exported": len(records), "skipped": skipped,
                      "out": args.out}, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    if args.kind == "learnable":
        records = learnable_corpus(n_flows=args.flows, seed=args.seed)
    else:
        records = cloud_corpus(n_flows=args.flows, seed=args.seed)
    n = write_canonical_jsonl(records, args.out)
    print(json.dumps({"written": n, "out": args.out, "kind": args.kind},
                     sort_keys=True))
    return 0


# --------------------------------------------------------------------- parser


def _add_data_args(p, with_subsample=False):
    p.add_argument("--data", required=True, help="canonical .jsonl or raw CSV")
    p.add_argument("--schema", default=None,
                   help="schema name or path for raw CSVs "
                        "(cicflowmeter, ntlflowlyzer)")
    p.add_argument("--policy", default=POLICY_SUSPICIOUS_AS_ATTACK,
                   choices=list(LABEL_POLICIES))
    if with_subsample:
        p.add_argument("--subsample", type=int, default=None,
                       help="stratified subsample size before training")


def _add_window_args(p, delta_t=30.0, max_flows=64):
    p.add_argument("--delta-t", type=float, default=delta_t,
                   help="window span in seconds")
    p.add_argument("--max-flows", type=int, default=max_flows,
                   help="window capacity in flows")


def _add_train_args(p):
    p.add_argument("--model-config", default=None,
                   help="JSON file of model hyperparameters")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphddos",
        description="Flow-graph DDoS detector: training, replay, triage API.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one fold (or each fold) of the "
                                     "stratified protocol")
    _add_data_args(p, with_subsample=True)
    _add_train_args(p)
    _add_window_args(p)
    p.add_argument("--fold", default="0", help="fold index or 'all'")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("crossval", help="full k-fold protocol with the "
                                        "aggregate report")
    _add_data_args(p, with_subsample=True)
    _add_train_args(p)
    _add_window_args(p)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("evaluate", help="score a dataset with a checkpoint")
    _add_data_args(p)
    _add_window_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--standardizer", default=None)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--dump", default=None, help="write per-flow predictions")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("replay", help="replay a flow log through the "
                                      "detection pipeline")
    p.add_argument("--input", required=True)
    p.add_argument("--schema", default=None)
    p.add_argument("--policy", default=POLICY_SUSPICIOUS_AS_ATTACK,
                   choices=list(LABEL_POLICIES))
    p.add_argument("--config", default=None,
                   help="declarative run config (window, thresholds, "
                        "memory caps, model path)")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--standardizer", default=None)
    p.add_argument("--delta-t", type=float, default=None)
    p.add_argument("--max-flows", type=int, default=None)
    p.add_argument("--tau-analyst", type=float, default=None)
    p.add_argument("--tau-auto", type=float, default=None)
    p.add_argument("--notify-floor", type=float, default=None)
    p.add_argument("--no-grey-rate-limit", action="store_const", const=True,
                   default=None, help="tag grey-zone flows instead of "
                                      "rate-limiting them")
    p.add_argument("--speed", type=float, default=None,
                   help="replay time scaling (e.g. 10 = 10x real time); "
                        "default: as fast as possible")
    p.add_argument("--run-id", default="run")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("serve", help="serve the analyst API for a run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--static", default=None,
                   help="static console assets (default: ./frontend/dist "
                        "when present)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("verify-log", help="check a forensic log's hash chain")
    p.add_argument("path")
    p.set_defaults(func=cmd_verify_log)

    p = sub.add_parser("export-feedback", help="turn analyst verdicts into "
                                               "labeled training records")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export_feedback)

    p = sub.add_parser("synth", help="generate a synthetic flow corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--flows", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=("learnable", "cloud"),
                   default="learnable")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GraphDDoSError, OSError) as err:
        _eprint(f"error: {err}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
