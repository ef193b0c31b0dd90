"""hopforge: multi-hop question synthesis over an encyclopedia corpus.

The pipeline grows typed, evidence-bearing entity graphs around seed pages,
reverse-constructs hardened questions from them, and filters the output
through a structured quality gate.
"""

from .config import PipelineConfig
from .expand import EvidenceGraph, ExpansionStrategy, GraphExpander, ScoreWeights, export_graph
from .forge import ProbeResult, QuestionDraft, QuestionForge
from .gateway import EndpointConfig, HttpGateway, MockGateway, MockScript
from .nodes import CandidateEntity, NodeBuilder
from .pipeline import evaluate_only, export_run, run_pipeline
from .quality import QualityGate, QualityReport, StructuredPredicate
from .relations import RelationEngine, RelationJudgment, RelationType
from .store import CorpusStore, PageRecord

__version__ = "0.1.0"

__all__ = [
    "CandidateEntity",
    "CorpusStore",
    "EndpointConfig",
    "EvidenceGraph",
    "ExpansionStrategy",
    "GraphExpander",
    "HttpGateway",
    "MockGateway",
    "MockScript",
    "NodeBuilder",
    "PageRecord",
    "PipelineConfig",
    "ProbeResult",
    "QualityGate",
    "QualityReport",
    "QuestionDraft",
    "QuestionForge",
    "RelationEngine",
    "RelationJudgment",
    "RelationType",
    "ScoreWeights",
    "StructuredPredicate",
    "evaluate_only",
    "export_graph",
    "export_run",
    "run_pipeline",
]
