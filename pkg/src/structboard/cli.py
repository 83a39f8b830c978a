"""Command-line pipeline: gate, learn, serialize, run, report.

Exit codes: 0 success, 2 prosocial gate denied, 3 invalid configuration,
4 runtime failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .agents import AgentProfile, nsf_assess, rag_retrieve, sf_assess
from .config import ConfigError, RunConfig, load_config
from .dataset import Dataset, load_csv, prevalence, stratified_split, synth_generate
from .evaluation import (
    MetricRow,
    build_report,
    confusion_counts,
    metric_table_csv,
    precision_recall,
)
from .mar import MarStore, MarWriter, fixed_clock
from .notes import serialize
from .prosocial import gate
from .rounds import RoundState, run_rounds, stop_metric_value
from .structure import (
    MAX_INTERACTION_DUMMIES,
    StructureTemplate,
    fit_reference_model,
    rank_features,
    render_template,
    sample_background,
    schema_dummies,
    shapley_interactions,
)

EXIT_OK = 0
EXIT_GATE_DENIED = 2
EXIT_CONFIG = 3
EXIT_RUNTIME = 4
EXIT_USAGE = 64

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: A003 - argparse API
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_dataset(cfg: RunConfig) -> Dataset:
    if cfg.csv_path is not None:
        ds = load_csv(str(cfg.csv_path), cfg.schema)
    else:
        ds = synth_generate(
            cfg.schema, cfg.synth.n, cfg.synth.planted, cfg.synth.intercept, cfg.synth.seed
        )
    return stratified_split(ds, cfg.split_ratios, cfg.split_seed)


def _learn_structure(cfg: RunConfig, ds: Dataset):
    train = ds.subset("train")
    valid = ds.subset("valid")
    model = fit_reference_model(
        Dataset(schema=cfg.schema, records=train),
        epochs=cfg.structure.epochs,
        learning_rate=cfg.structure.learning_rate,
        seed=cfg.structure.model_seed,
    )
    background = sample_background(
        train, cfg.structure.background_size, cfg.structure.background_seed
    )
    ranking = rank_features(model, valid, background, cfg.structure.k)
    template = render_template(ranking, cfg.schema, cfg.outcome_name)
    return model, background, ranking, template


def _template_document(cfg: RunConfig, model, background, ranking, template) -> dict:
    doc = template.to_json_dict()
    doc["ranking"] = [
        {
            "feature": e.dummy[0],
            "bin": e.dummy[1],
            "mean_abs_phi": e.mean_abs_phi,
            "mean_signed_phi": e.mean_signed_phi,
            "rank": e.rank,
        }
        for e in ranking.entries
    ]
    d = len(schema_dummies(cfg.schema))
    if cfg.structure.interactions and d <= MAX_INTERACTION_DUMMIES and background:
        # mean |interaction| over a small deterministic probe sample
        import numpy as np

        probe = background[: min(16, len(background))]
        acc = None
        for rec in probe:
            mat = shapley_interactions(model, rec, background).values
            acc = np.abs(mat) if acc is None else acc + np.abs(mat)
        doc["interactions"] = {
            "dummies": [list(dummy) for dummy in model.dummies],
            "mean_abs": (acc / len(probe)).tolist(),
        }
    return doc


def _validation_weights(
    cfg: RunConfig, ds: Dataset, template: StructureTemplate
) -> list[AgentProfile]:
    """Fill in missing vote weights from each mock agent's validation run."""
    valid = ds.subset("valid")
    train_records = ds.subset("train")
    train_for_rag = Dataset(schema=cfg.schema, records=train_records)
    train_prev = prevalence(train_records)
    profiles = []
    for profile in cfg.agents:
        if (
            profile.kind == "remote"
            or (profile.valid_precision is not None and profile.valid_recall is not None)
            or not valid
        ):
            profiles.append(profile)
            continue
        decisions = []
        labels = []
        for rec in valid:
            note = serialize(rec, cfg.schema)
            rag = rag_retrieve(rec, train_for_rag) if profile.uses_rag else None
            if profile.kind == "sf_mock":
                a = sf_assess(
                    profile, rec, note, template, rag=rag,
                    lam=cfg.rounds.lam, mu=cfg.rounds.mu,
                    threshold=cfg.rounds.decision_threshold,
                )
            else:
                a = nsf_assess(
                    profile, rec, note, train_prev, rag=rag,
                    lam=cfg.rounds.lam, mu=cfg.rounds.mu, seed=cfg.rounds.agent_seed,
                    threshold=cfg.rounds.decision_threshold, outcome_name=cfg.outcome_name,
                )
            decisions.append(a.decision)
            labels.append(int(rec.label))
        tp, fp, _, fn = confusion_counts(decisions, labels)
        p, r = precision_recall(tp, fp, fn)
        profiles.append(
            dataclasses.replace(
                profile,
                valid_precision=profile.valid_precision if profile.valid_precision is not None else p,
                valid_recall=profile.valid_recall if profile.valid_recall is not None else r,
            )
        )
    return profiles


def _vote_doc(vote) -> dict:
    return {
        "decision_score": vote.decision_score,
        "risk_score": vote.risk_score,
        "decision": vote.decision,
        "threshold": vote.threshold_used,
    }


def _round_document(state: RoundState) -> dict:
    return {
        "round": state.round,
        "labels": state.labels,
        "votes": {
            rule: {case: _vote_doc(v) for case, v in sorted(case_votes.items())}
            for rule, case_votes in state.votes.items()
        },
        "metrics": [
            {
                "subject": subject,
                **{
                    k: getattr(state.metrics[subject], k)
                    for k in (
                        "auc", "auc_degenerate", "ap", "precision", "recall",
                        "tp", "fp", "tn", "fn",
                    )
                },
            }
            for subject in state.metric_order
        ],
        "failed": [list(pair) for pair in state.failed],
    }


def _state_from_document(doc: dict) -> RoundState:
    metrics = {}
    order = []
    for row in doc["metrics"]:
        subject = row["subject"]
        metrics[subject] = MetricRow(
            subject=subject,
            round=doc["round"],
            auc=row["auc"],
            auc_degenerate=row["auc_degenerate"],
            ap=row["ap"],
            precision=row["precision"],
            recall=row["recall"],
            tp=row["tp"],
            fp=row["fp"],
            tn=row["tn"],
            fn=row["fn"],
        )
        order.append(subject)
    return RoundState(
        round=doc["round"],
        assessments={},
        votes={},
        metrics=metrics,
        metric_order=tuple(order),
        labels={k: int(v) for k, v in doc["labels"].items()},
        failed=tuple(tuple(pair) for pair in doc.get("failed", [])),
    )


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _clock(cfg: RunConfig):
    if cfg.timestamp_mode == "fixed":
        return fixed_clock(cfg.timestamp_start)
    from datetime import datetime, timezone

    return lambda: datetime.now(timezone.utc)


def cmd_gate(cfg: RunConfig) -> int:
    decision = gate(cfg.flags, cfg.gate_threshold)
    verdict = "permitted" if decision.permitted else "denied"
    print(f"pscore {decision.display_score()} threshold {decision.threshold:g} -> {verdict}")
    return EXIT_OK if decision.permitted else EXIT_GATE_DENIED


def cmd_learn(cfg: RunConfig) -> int:
    ds = _build_dataset(cfg)
    model, background, ranking, template = _learn_structure(cfg, ds)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.output_dir / "template.json"
    _write_json(out, _template_document(cfg, model, background, ranking, template))
    print(template.rendered_text)
    print(f"template written to {out}")
    return EXIT_OK


def cmd_serialize(cfg: RunConfig, limit: int | None) -> int:
    ds = _build_dataset(cfg)
    shown = ds.records[: limit if limit is not None else cfg.serialize_limit]
    for rec in shown:
        note = serialize(rec, cfg.schema)
        print(f"{rec.id}\t{note.token_count} tokens\t{note.text}")
    return EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    decision = gate(cfg.flags, cfg.gate_threshold)
    verdict = "permitted" if decision.permitted else "denied"
    print(f"pscore {decision.display_score()} threshold {decision.threshold:g} -> {verdict}")
    if not decision.permitted:
        return EXIT_GATE_DENIED

    ds = _build_dataset(cfg)
    if cfg.structure.template_path is not None:
        template_doc = json.loads(cfg.structure.template_path.read_text(encoding="utf-8"))
        template = StructureTemplate.from_json_dict(template_doc)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        _write_json(cfg.output_dir / "template.json", template_doc)
        print(f"structure template with {len(template.clauses)} clauses loaded")
    else:
        model, background, ranking, template = _learn_structure(cfg, ds)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        _write_json(
            cfg.output_dir / "template.json",
            _template_document(cfg, model, background, ranking, template),
        )
        print(f"structure template with {len(template.clauses)} clauses learned")

    profiles = _validation_weights(cfg, ds, template)
    for p in profiles:
        logger.info(
            "agent %s weights: precision=%s recall=%s", p.id, p.valid_precision, p.valid_recall
        )

    mar_path = cfg.output_dir / "mar.jsonl"
    if mar_path.exists():
        mar_path.unlink()  # a run owns its log; reruns must reproduce it exactly
    writer = MarWriter(MarStore(mar_path, sync=False), cfg.run_id, _clock(cfg))

    train = Dataset(schema=cfg.schema, records=ds.subset("train"))
    test = Dataset(schema=cfg.schema, records=ds.subset("test"))
    states = run_rounds(profiles, test, template, train, cfg.rounds, mar=writer)
    for state in states:
        _write_json(cfg.output_dir / f"round_{state.round}.json", _round_document(state))

    run_meta = {"run_id": cfg.run_id, "rounds": len(states), "q": cfg.rounds.q, "stop_metric": cfg.rounds.stop_metric}
    if len(states) > 1:
        p_val = stop_metric_value(states[-1], cfg.rounds.stop_metric)
        o_val = stop_metric_value(states[-2], cfg.rounds.stop_metric)
        run_meta["final_gain"] = p_val - o_val
        run_meta["early_stopped"] = p_val - o_val < cfg.rounds.q
    report = build_report(states, writer.store.read_all(), cfg.report, run_meta=run_meta)
    _write_json(cfg.output_dir / "report.json", report)
    (cfg.output_dir / "metrics.csv").write_text(metric_table_csv(report), encoding="utf-8")
    print(f"{len(states)} rounds -> {cfg.output_dir}")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    round_files = sorted(cfg.output_dir.glob("round_*.json"), key=lambda p: int(p.stem.split("_")[1]))
    if not round_files:
        raise FileNotFoundError(f"no round files found in {cfg.output_dir}")
    states = [
        _state_from_document(json.loads(p.read_text(encoding="utf-8"))) for p in round_files
    ]
    store = MarStore(cfg.output_dir / "mar.jsonl")
    entries = store.read_all()
    if not entries:
        raise FileNotFoundError(f"no records found at {store.path}")
    report = build_report(states, entries, cfg.report, run_meta={"run_id": cfg.run_id, "rounds": len(states)})
    _write_json(cfg.output_dir / "report.json", report)
    (cfg.output_dir / "metrics.csv").write_text(metric_table_csv(report), encoding="utf-8")
    print(f"report rebuilt from {len(states)} round files -> {cfg.output_dir / 'report.json'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="structboard", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_common(p):
        p.add_argument("--config", required=True, help="path to the run configuration JSON")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a scalar config field by dotted path (repeatable)",
        )
        p.add_argument("--output-dir", help="override the configured output directory")
        p.add_argument("--jobs", type=int, help="worker cap for per-round fan-out")

    for name, help_text in (
        ("gate", "evaluate the prosocial score only"),
        ("learn", "fit the reference model and write the structure template"),
        ("serialize", "preview dataset records as notes"),
        ("run", "full pipeline: gate, learn, rounds, records, report"),
        ("report", "recompute the report from existing round files and records"),
    ):
        p = sub.add_parser(name, help=help_text)
        add_common(p)
        if name == "serialize":
            p.add_argument("--limit", type=int, help="number of records to preview")

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)

    overrides = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            parser.error(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key] = value
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    if getattr(args, "jobs", None):
        overrides["rounds.jobs"] = str(args.jobs)

    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "gate":
            return cmd_gate(cfg)
        if args.command == "learn":
            return cmd_learn(cfg)
        if args.command == "serialize":
            return cmd_serialize(cfg, args.limit)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "report":
            return cmd_report(cfg)
    except Exception as exc:  # runtime failures map to a dedicated exit code
        logger.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
