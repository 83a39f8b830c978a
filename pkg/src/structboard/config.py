"""Run configuration: one JSON file describes a full experiment.

Everything random flows from named seeds in the file, and every numeric
range is validated up front so a bad configuration fails before any work
starts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .agents import AgentProfile, EndpointConfig
from .dataset import FeatureSpec
from .evaluation import BcrSpec, ReportConfig
from .prosocial import DEFAULT_THRESHOLD, IssueFlag
from .rounds import RoundsConfig


class ConfigError(ValueError):
    """The configuration file is missing, malformed, or out of range."""


@dataclass(frozen=True)
class SynthSpec:
    n: int
    planted: dict[tuple[str, int], float]
    intercept: float
    seed: int


@dataclass(frozen=True)
class StructureParams:
    k: int = 10
    background_size: int = 64
    background_seed: int = 0
    epochs: int = 300
    learning_rate: float = 0.5
    model_seed: int = 0
    interactions: bool = True
    template_path: Path | None = None  # load a saved template instead of fitting


@dataclass(frozen=True)
class RunConfig:
    run_id: str
    output_dir: Path
    outcome_name: str
    schema: list[FeatureSpec]
    csv_path: Path | None
    synth: SynthSpec | None
    split_ratios: tuple[float, float, float]
    split_seed: int
    structure: StructureParams
    flags: list[IssueFlag]
    gate_threshold: float
    agents: list[AgentProfile]
    rounds: RoundsConfig
    report: ReportConfig
    timestamp_mode: str = "fixed"  # "fixed" keeps reruns byte-identical
    timestamp_start: datetime = field(
        default_factory=lambda: datetime(2000, 1, 1, tzinfo=timezone.utc)
    )
    serialize_limit: int = 5


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return doc[key]


def _in_unit(value: float, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must be in [0, 1], got {value}")
    return value


def _parse_schema(doc: list) -> list[FeatureSpec]:
    if not isinstance(doc, list) or not doc:
        raise ConfigError("schema must be a non-empty list of features")
    specs = []
    for item in doc:
        try:
            specs.append(
                FeatureSpec(
                    name=_require(item, "name", "schema"),
                    bin_count=int(_require(item, "bins", "schema")),
                    display_name=item.get("display_name", ""),
                )
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return specs


def _parse_synth(doc: dict, schema: list[FeatureSpec]) -> SynthSpec:
    names = {f.name: f for f in schema}
    planted: dict[tuple[str, int], float] = {}
    for item in doc.get("planted", []):
        fname = _require(item, "feature", "dataset.synth.planted")
        b = int(_require(item, "bin", "dataset.synth.planted"))
        if fname not in names or not 1 <= b <= names[fname].bin_count:
            raise ConfigError(f"planted weight references unknown dummy ({fname!r}, {b})")
        planted[(fname, b)] = float(_require(item, "weight", "dataset.synth.planted"))
    n = int(_require(doc, "n", "dataset.synth"))
    if n < 1:
        raise ConfigError("dataset.synth.n must be >= 1")
    return SynthSpec(
        n=n,
        planted=planted,
        intercept=float(doc.get("intercept", 0.0)),
        seed=int(doc.get("seed", 0)),
    )


def _parse_agents(doc: list) -> list[AgentProfile]:
    if not isinstance(doc, list) or not doc:
        raise ConfigError("agents must be a non-empty list")
    profiles = []
    for item in doc:
        endpoint = None
        if "endpoint" in item:
            ep = item["endpoint"]
            endpoint = EndpointConfig(
                url=_require(ep, "url", "agents.endpoint"),
                model=_require(ep, "model", "agents.endpoint"),
                api_key_env=ep.get("api_key_env", ""),
                timeout=float(ep.get("timeout", 30.0)),
                retries=int(ep.get("retries", 2)),
                retry_wait=float(ep.get("retry_wait", 1.0)),
                temperature=float(ep.get("temperature", 0.0)),
                concurrency=int(ep.get("concurrency", 4)),
            )
        try:
            profiles.append(
                AgentProfile(
                    id=_require(item, "id", "agents"),
                    agent_name=item.get("name", item["id"]),
                    kind=_require(item, "kind", "agents"),
                    uses_rag=bool(item.get("uses_rag", False)),
                    bias=float(item.get("bias", 0.0)),
                    gain=float(item.get("gain", 4.0)),
                    noise=float(item.get("noise", 0.1)),
                    valid_precision=item.get("valid_precision"),
                    valid_recall=item.get("valid_recall"),
                    endpoint=endpoint,
                )
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    ids = [p.id for p in profiles]
    if len(set(ids)) != len(ids):
        raise ConfigError("agent ids must be unique")
    names = [p.agent_name for p in profiles]
    if len(set(names)) != len(names):
        raise ConfigError("agent names must be unique (records are keyed by name)")
    return profiles


def _parse_flags(doc: list) -> list[IssueFlag]:
    if not isinstance(doc, list) or not doc:
        raise ConfigError("prosocial.flags must be a non-empty list")
    try:
        return [
            IssueFlag(
                name=_require(item, "name", "prosocial.flags"),
                asserted=bool(_require(item, "asserted", "prosocial.flags")),
                weight=float(_require(item, "weight", "prosocial.flags")),
            )
            for item in doc
        ]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path, overrides: dict[str, str] | None = None) -> RunConfig:
    """Parse and validate a run configuration file.

    `overrides` maps dotted scalar paths (e.g. "rounds.max_rounds") to raw
    string values taken from command-line flags.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if overrides:
        for dotted, raw in overrides.items():
            _apply_override(doc, dotted, raw)

    schema = _parse_schema(_require(doc, "schema", "config"))

    dataset_doc = _require(doc, "dataset", "config")
    csv_path = None
    synth = None
    if "csv" in dataset_doc:
        csv_path = Path(dataset_doc["csv"])
        if not csv_path.is_absolute():
            csv_path = path.parent / csv_path
        if not csv_path.exists():
            raise ConfigError(f"dataset csv not found: {csv_path}")
    elif "synth" in dataset_doc:
        synth = _parse_synth(dataset_doc["synth"], schema)
    else:
        raise ConfigError("dataset must specify either 'csv' or 'synth'")

    split_doc = doc.get("split", {})
    ratios = tuple(float(r) for r in split_doc.get("ratios", (0.7, 0.15, 0.15)))
    if len(ratios) != 3:
        raise ConfigError("split.ratios must have exactly three entries")
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split.ratios must be non-negative and sum to 1, got {ratios}")

    structure_doc = doc.get("structure", {})
    template_path = None
    if structure_doc.get("template_path"):
        template_path = Path(structure_doc["template_path"])
        if not template_path.is_absolute():
            template_path = path.parent / template_path
        if not template_path.exists():
            raise ConfigError(f"structure.template_path not found: {template_path}")
    structure = StructureParams(
        k=int(structure_doc.get("k", 10)),
        background_size=int(structure_doc.get("background", 64)),
        background_seed=int(structure_doc.get("background_seed", 0)),
        epochs=int(structure_doc.get("epochs", 300)),
        learning_rate=float(structure_doc.get("learning_rate", 0.5)),
        model_seed=int(structure_doc.get("model_seed", 0)),
        interactions=bool(structure_doc.get("interactions", True)),
        template_path=template_path,
    )
    if structure.k < 1:
        raise ConfigError("structure.k must be >= 1")
    if structure.background_size < 1:
        raise ConfigError("structure.background must be >= 1")
    if structure.epochs < 1 or structure.learning_rate <= 0:
        raise ConfigError("structure.epochs must be >= 1 and learning_rate > 0")

    prosocial_doc = _require(doc, "prosocial", "config")
    flags = _parse_flags(_require(prosocial_doc, "flags", "prosocial"))
    gate_threshold = _in_unit(prosocial_doc.get("threshold", DEFAULT_THRESHOLD), "prosocial.threshold")

    agents = _parse_agents(_require(doc, "agents", "config"))

    rounds_doc = doc.get("rounds", {})
    votes_doc = doc.get("votes", {})
    try:
        rounds_cfg = RoundsConfig(
            q=float(rounds_doc.get("q", 0.040)),
            max_rounds=int(rounds_doc.get("max_rounds", 2)),
            stop_metric=rounds_doc.get("stop_metric", "bprv:ap"),
            lam=_in_unit(rounds_doc.get("lambda", 0.5), "rounds.lambda"),
            mu=_in_unit(rounds_doc.get("mu", 0.25), "rounds.mu"),
            decision_threshold=_in_unit(rounds_doc.get("decision_threshold", 0.5), "rounds.decision_threshold"),
            agent_seed=int(rounds_doc.get("agent_seed", 0)),
            interaction_graph=rounds_doc.get("graph"),
            majority_threshold=_in_unit(votes_doc.get("majority", 0.5), "votes.majority"),
            precision_threshold=_in_unit(votes_doc.get("precision_weighted", 0.75), "votes.precision_weighted"),
            recall_threshold=_in_unit(votes_doc.get("recall_weighted", 0.25), "votes.recall_weighted"),
            bprv_threshold=_in_unit(votes_doc.get("bprv", 0.5), "votes.bprv"),
            jobs=int(rounds_doc.get("jobs", 1)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    report_doc = doc.get("report", {})
    names = {p.id: p.agent_name for p in agents}
    default_reference = agents[1].agent_name if len(agents) > 1 else agents[0].agent_name
    reference = report_doc.get("reference_agent", default_reference)
    reference = names.get(reference, reference)  # accept agent id or name
    if reference not in names.values():
        raise ConfigError(f"report.reference_agent {reference!r} is not a configured agent")
    bcr_specs = []
    for item in report_doc.get("bcr", []):
        candidate = _require(item, "agent", "report.bcr")
        candidate = names.get(candidate, candidate)
        if candidate not in names.values():
            raise ConfigError(f"report.bcr agent {candidate!r} is not a configured agent")
        alpha = _in_unit(item.get("alpha", 0.5), "report.bcr.alpha")
        beta = _in_unit(item.get("beta", 0.5), "report.bcr.beta")
        if abs(alpha + beta - 1.0) > 1e-9:
            raise ConfigError("report.bcr alpha + beta must sum to 1")
        a_subject, _, a_metric = item.get("a", "bprv:ap").partition(":")
        bcr_specs.append(
            BcrSpec(
                candidate=candidate,
                case_type=item.get("case_type", "FN"),
                a_subject=a_subject,
                a_metric=a_metric or "ap",
                alpha=alpha,
                beta=beta,
            )
        )
    report_cfg = ReportConfig(reference_agent=reference, bcr_specs=tuple(bcr_specs))

    ts_doc = doc.get("timestamps", {})
    mode = ts_doc.get("mode", "fixed")
    if mode not in ("fixed", "system"):
        raise ConfigError(f"timestamps.mode must be 'fixed' or 'system', got {mode!r}")
    start_raw = ts_doc.get("start", "2000-01-01T00:00:00+00:00")
    try:
        start = datetime.fromisoformat(start_raw.replace("Z", "+00:00"))
    except ValueError as exc:
        raise ConfigError(f"timestamps.start is not ISO-8601: {start_raw!r}") from exc
    if start.tzinfo is None:
        start = start.replace(tzinfo=timezone.utc)

    output_dir = Path(doc.get("output_dir", "out"))
    if not output_dir.is_absolute():
        output_dir = path.parent / output_dir

    return RunConfig(
        run_id=doc.get("run_id", "run"),
        output_dir=output_dir,
        outcome_name=doc.get("outcome_name", "the outcome"),
        schema=schema,
        csv_path=csv_path,
        synth=synth,
        split_ratios=ratios,  # type: ignore[arg-type]
        split_seed=int(split_doc.get("seed", 0)),
        structure=structure,
        flags=flags,
        gate_threshold=gate_threshold,
        agents=agents,
        rounds=rounds_cfg,
        report=report_cfg,
        timestamp_mode=mode,
        timestamp_start=start,
        serialize_limit=int(doc.get("serialize_limit", 5)),
    )


def _apply_override(doc: dict, dotted: str, raw: str) -> None:
    """Set a scalar config field from a --set key=value flag."""
    parts = dotted.split(".")
    node = doc
    for part in parts[:-1]:
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override {dotted!r}: {part!r} is not an object")
        node = node.setdefault(part, {})
    if not isinstance(node, dict):
        raise ConfigError(f"cannot override {dotted!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings stay strings
    node[parts[-1]] = value
