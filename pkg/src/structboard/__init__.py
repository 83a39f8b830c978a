"""Structure-following diagnostic boards over binned tabular data.

The pipeline learns a global feature-importance structure from a fitted
reference model, renders it as a prose template, gates execution on a
prosocial score, runs multi-round multiagent diagnosis with consensus
voting and early stopping, persists append-only multiagent records, and
evaluates classification and reasoning-alignment performance.
"""

__version__ = "0.1.0"

from .agents import (
    AgentAssessment,
    AgentProfile,
    EndpointConfig,
    PeerContext,
    bin_confidence,
    nsf_assess,
    peer_update,
    rag_retrieve,
    remote_assess,
    sf_assess,
)
from .dataset import Dataset, FeatureSpec, PatientRecord, load_csv, stratified_split, synth_generate
from .evaluation import (
    AlignmentScore,
    MetricRow,
    alignment_score,
    auc_roc,
    average_precision,
    bcr_score,
    build_report,
    confusion_counts,
)
from .mar import MAREntry, MarStore, MarWriter, burden_stats, confidence_breakdown, map_code
from .notes import Note, parse, serialize, token_count
from .prosocial import IssueFlag, ProsocialDecision, gate, pscore
from .rounds import RoundsConfig, RoundState, early_stop, run_rounds
from .structure import (
    Attribution,
    GlobalRanking,
    InteractionMatrix,
    ReferenceModel,
    StructureTemplate,
    exact_shapley,
    fit_reference_model,
    rank_features,
    render_template,
    shapley_interactions,
)
from .voting import VoteResult, bprv, majority, weighted_vote

__all__ = [
    "AgentAssessment",
    "AgentProfile",
    "AlignmentScore",
    "Attribution",
    "Dataset",
    "EndpointConfig",
    "FeatureSpec",
    "GlobalRanking",
    "InteractionMatrix",
    "IssueFlag",
    "MAREntry",
    "MarStore",
    "MarWriter",
    "MetricRow",
    "Note",
    "PatientRecord",
    "PeerContext",
    "ProsocialDecision",
    "ReferenceModel",
    "RoundState",
    "RoundsConfig",
    "StructureTemplate",
    "VoteResult",
    "alignment_score",
    "auc_roc",
    "average_precision",
    "bcr_score",
    "bin_confidence",
    "bprv",
    "build_report",
    "burden_stats",
    "confidence_breakdown",
    "confusion_counts",
    "early_stop",
    "exact_shapley",
    "fit_reference_model",
    "gate",
    "load_csv",
    "majority",
    "map_code",
    "nsf_assess",
    "parse",
    "peer_update",
    "pscore",
    "rag_retrieve",
    "rank_features",
    "remote_assess",
    "render_template",
    "run_rounds",
    "serialize",
    "sf_assess",
    "shapley_interactions",
    "stratified_split",
    "synth_generate",
    "token_count",
    "weighted_vote",
]
