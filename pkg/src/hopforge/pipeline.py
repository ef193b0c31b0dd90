"""End-to-end driver: ingest, node construction, expansion, forging, gating.

Every intermediate artifact is persisted under ``run_dir/run_id`` so a run
can be audited or resumed; the manifest alone names every file. Artifacts
contain no timestamps or absolute paths, so a run with a fixed config, seed,
and mock script is reproducible byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .config import PipelineConfig
from .errors import ConfigError, HopforgeError, RunNotFoundError
from .expand import EvidenceGraph, GraphExpander, embedding_similarity, export_graph
from .forge import STATUS_ACCEPTED, STATUS_REJECTED, QuestionDraft, QuestionForge
from .gateway import EndpointConfig, HttpGateway, MockGateway, MockScript, ModelGateway, canonical_payload
from .nodes import NodeBuilder
from .quality import QualityGate
from .relations import RelationEngine
from .store import CorpusStore
from .textutil import canonical_key

logger = logging.getLogger(__name__)

STAGES = ("nodes", "expand", "forge", "gate")


def seed_slug(title: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", canonical_key(title)).strip("_") or "seed"


def derive_run_id(config: PipelineConfig) -> str:
    digest = hashlib.sha256(canonical_payload(config.to_json_obj()).encode()).hexdigest()
    return f"run-{digest[:12]}"


def build_gateway(config: PipelineConfig) -> ModelGateway:
    if config.mock_script is not None:
        return MockGateway(MockScript.load(config.mock_script))
    endpoint = EndpointConfig(
        base_url=config.gateway_url or "",
        timeout_ms=config.gateway_timeout_ms,
        max_retries=config.gateway_max_retries,
        api_key_env=config.api_key_env,
    )
    return HttpGateway(endpoint)


def _write_json(path: Path, obj: object) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n", "utf-8")


def _write_ndjson(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(r, sort_keys=True, ensure_ascii=False) for r in rows]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), "utf-8")


@dataclass
class RunManifest:
    run_id: str
    config: dict
    ingest: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    accepted: int = 0
    rejected: int = 0

    def artifact_index(self, root: Path) -> list[str]:
        files = [
            str(p.relative_to(root))
            for p in root.rglob("*")
            if p.is_file() and p.name != "manifest.json"
        ]
        return sorted(files)

    def to_json_obj(self, root: Path | None = None) -> dict:
        return {
            "run_id": self.run_id,
            "config": self.config,
            "ingest": self.ingest,
            "seeds": self.seeds,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "artifacts": self.artifact_index(root) if root else [],
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "RunManifest":
        return cls(
            run_id=obj["run_id"],
            config=obj["config"],
            ingest=obj.get("ingest", {}),
            seeds=obj.get("seeds", {}),
            accepted=obj.get("accepted", 0),
            rejected=obj.get("rejected", 0),
        )


class PipelineRunner:
    def __init__(
        self,
        config: PipelineConfig,
        run_id: str | None = None,
        gateway: ModelGateway | None = None,
    ) -> None:
        config.validate()
        self.config = config
        self.run_id = run_id or derive_run_id(config)
        self.root = Path(config.run_dir) / self.run_id
        self.gateway = gateway or build_gateway(config)
        self.store = CorpusStore(config.store_path)
        self.manifest = self._load_or_create_manifest()

    def _load_or_create_manifest(self) -> RunManifest:
        path = self.root / "manifest.json"
        snapshot = self.config.to_json_obj()
        if path.exists():
            manifest = RunManifest.from_json_obj(json.loads(path.read_text("utf-8")))
            if manifest.config != snapshot:
                raise ConfigError(
                    f"run {self.run_id} already exists with a different config; pick a new run id"
                )
            return manifest
        return RunManifest(run_id=self.run_id, config=snapshot)

    def _save_manifest(self) -> None:
        _write_json(self.root / "manifest.json", self.manifest.to_json_obj(self.root))

    # -- stages ------------------------------------------------------------

    def ingest(self) -> None:
        if self.manifest.ingest.get("status") == "done" and self.store.page_count() > 0:
            return
        with open(self.config.corpus_path, "r", encoding="utf-8") as stream:
            result = self.store.ingest_corpus(stream)
        self.manifest.ingest = {
            "status": "done",
            "count": result.count,
            "errors": [{"line": e.line, "message": e.message} for e in result.errors],
        }

    def _components(self) -> tuple[NodeBuilder, GraphExpander, QuestionForge, QualityGate]:
        builder = NodeBuilder(
            self.store,
            self.gateway,
            ner_threshold=self.config.ner_threshold,
            coref_enabled=self.config.coref_enabled,
        )
        engine = RelationEngine(self.gateway, nli_threshold=self.config.nli_threshold)
        similarity = (
            embedding_similarity(self.gateway)
            if self.config.title_similarity == "embedding"
            else None
        )
        expander = GraphExpander(
            self.store,
            builder,
            engine,
            weights=self.config.score_weights(),
            pool_factor=self.config.pool_factor,
            similarity_fn=similarity,
        )
        forge = QuestionForge(
            self.store,
            self.gateway,
            n_deep=self.config.n_deep,
            max_words=self.config.max_words,
            probe_runs=self.config.probe_runs,
            max_rounds=self.config.max_rounds,
            retry_limit=self.config.retry_limit,
            rewrite_retries=self.config.rewrite_retries,
        )
        gate = QualityGate(
            self.store,
            self.gateway,
            thresholds=(self.config.alpha, self.config.beta, self.config.gamma),
            vote_runs=self.config.probe_runs,
            retry_limit=self.config.retry_limit,
        )
        return builder, expander, forge, gate

    def _seed_state(self, seed: str) -> dict:
        return self.manifest.seeds.setdefault(seed, {"stages": {}, "error": None, "decision": None})

    def _stage_done(self, seed: str, stage: str, artifact: Path) -> bool:
        state = self._seed_state(seed)
        return state["stages"].get(stage) == "done" and artifact.exists()

    def run_seed(self, seed: str) -> None:
        """All four stages for one seed; failures are recorded, not raised."""
        state = self._seed_state(seed)
        slug = seed_slug(seed)
        builder, expander, forge, gate = self._components()
        try:
            graph = self._stage_expand(seed, slug, builder, expander)
            draft = self._stage_forge(seed, slug, forge, graph)
            if draft.status == STATUS_REJECTED:
                state["decision"] = "rejected_at_forge"
                return
            report_obj = self._stage_gate(seed, slug, gate, draft)
            state["decision"] = report_obj["decision"]
        except HopforgeError as exc:
            logger.error("seed %r failed: %s", seed, exc)
            state["error"] = str(exc)

    def _stage_expand(
        self, seed: str, slug: str, builder: NodeBuilder, expander: GraphExpander
    ) -> EvidenceGraph:
        state = self._seed_state(seed)
        candidates_path = self.root / "nodes" / slug / "candidates.json"
        graph_path = self.root / "expand" / slug / "graph.json"
        judgments_path = self.root / "expand" / slug / "judgments.ndjson"
        if self._stage_done(seed, "expand", graph_path):
            return EvidenceGraph.from_json_obj(json.loads(graph_path.read_text("utf-8")))
        page = self.store.get_page(seed)
        candidates = expander.candidates_for(page)
        _write_json(
            candidates_path,
            [
                {
                    "title": c.title,
                    "entity_label": c.entity_label,
                    "ner_score": c.ner_score,
                    "mention_frequency": c.mention_frequency,
                    "anchor_text": c.anchor_text,
                    "evidence": {
                        "source_title": c.evidence.source_title,
                        "paragraph_index": c.evidence.paragraph_index,
                        "text": c.evidence.text,
                    },
                }
                for c in candidates
            ],
        )
        state["stages"]["nodes"] = "done"
        graph = expander.expand(
            seed, self.config.expansion_strategy(), self.config.rng_seed
        )
        graph_path.parent.mkdir(parents=True, exist_ok=True)
        graph_path.write_bytes(export_graph(graph, "json"))
        _write_ndjson(judgments_path, expander.judgment_log)
        state["stages"]["expand"] = "done"
        return graph

    def _stage_forge(
        self, seed: str, slug: str, forge: QuestionForge, graph: EvidenceGraph
    ) -> QuestionDraft:
        state = self._seed_state(seed)
        final_path = self.root / "forge" / slug / "final_draft.json"
        if self._stage_done(seed, "forge", final_path):
            return QuestionDraft.from_json_obj(json.loads(final_path.read_text("utf-8")))
        forge_dir = self.root / "forge" / slug
        sink_counters: dict[str, int] = {}

        def sink(name: str, payload: dict) -> None:
            sink_counters[name] = sink_counters.get(name, 0) + 1
            _write_json(forge_dir / f"{name}_{sink_counters[name]:02d}.json", payload)

        forge.artifact_sink = sink
        clues = forge.build_clues(graph)
        draft = forge.compose_question(clues, graph)
        _write_json(forge_dir / "draft_composed.json", draft.to_json_obj())
        draft = forge.obfuscate(draft)
        _write_json(forge_dir / "draft_obfuscated.json", draft.to_json_obj())
        draft = forge.refine_loop(draft, graph)
        _write_json(final_path, draft.to_json_obj())
        state["stages"]["forge"] = "done"
        return draft

    def _stage_gate(self, seed: str, slug: str, gate: QualityGate, draft: QuestionDraft) -> dict:
        state = self._seed_state(seed)
        report_path = self.root / "gate" / slug / "report.json"
        if self._stage_done(seed, "gate", report_path):
            return json.loads(report_path.read_text("utf-8"))
        report = gate.evaluate(draft.text, draft.seed_answer)
        draft.status = STATUS_ACCEPTED if report.accepted else STATUS_REJECTED
        obj = report.to_json_obj()
        _write_json(report_path, obj)
        state["stages"]["gate"] = "done"
        return obj

    # -- whole run -----------------------------------------------------------

    def run(self) -> RunManifest:
        self.root.mkdir(parents=True, exist_ok=True)
        self.ingest()
        workers = self.config.max_parallel_seeds or os.cpu_count() or 1
        if workers > 1 and len(self.config.seeds) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(self.run_seed, self.config.seeds))
        else:
            for seed in self.config.seeds:
                self.run_seed(seed)
        self._emit_dataset()
        self._save_manifest()
        return self.manifest

    def _emit_dataset(self) -> None:
        rows = []
        accepted = rejected = 0
        for seed in self.config.seeds:
            state = self._seed_state(seed)
            slug = seed_slug(seed)
            report_path = self.root / "gate" / slug / "report.json"
            if not report_path.exists():
                if state["error"] is None and state["decision"] == "rejected_at_forge":
                    rejected += 1
                continue
            report = json.loads(report_path.read_text("utf-8"))
            if report["decision"].startswith("accepted"):
                accepted += 1
                rows.append(
                    {
                        "question": report["question"],
                        "answer": report["answer"],
                        "graph_ref": f"expand/{slug}/graph.json",
                        "report_ref": f"gate/{slug}/report.json",
                    }
                )
            else:
                rejected += 1
        self.manifest.accepted = accepted
        self.manifest.rejected = rejected
        _write_ndjson(self.root / "dataset.ndjson", rows)


def run_pipeline(
    config: PipelineConfig, run_id: str | None = None, gateway: ModelGateway | None = None
) -> RunManifest:
    return PipelineRunner(config, run_id=run_id, gateway=gateway).run()


def evaluate_only(
    questions_path: str | Path,
    config: PipelineConfig,
    run_id: str | None = None,
    gateway: ModelGateway | None = None,
) -> list[dict]:
    """Quality-gate external line-delimited questions; emits one report per record."""
    config.validate()
    gateway = gateway or build_gateway(config)
    store = CorpusStore(config.store_path)
    if store.page_count() == 0:
        with open(config.corpus_path, "r", encoding="utf-8") as stream:
            store.ingest_corpus(stream)
    gate = QualityGate(
        store,
        gateway,
        thresholds=(config.alpha, config.beta, config.gamma),
        vote_runs=config.probe_runs,
        retry_limit=config.retry_limit,
    )
    run_id = run_id or derive_run_id(config)
    out_dir = Path(config.run_dir) / run_id / "evaluate"
    reports: list[dict] = []
    with open(questions_path, "r", encoding="utf-8") as stream:
        for line_no, raw in enumerate(stream, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
                question, answer = record["question"], record["answer"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                logger.error("record %d malformed: %s", line_no, exc)
                reports.append({"record": line_no, "error": f"malformed record: {exc}"})
                continue
            report = gate.evaluate(
                question, answer, extra_candidates=record.get("candidates", [])
            )
            obj = report.to_json_obj()
            obj["record"] = line_no
            _write_json(out_dir / f"report_{line_no:04d}.json", obj)
            reports.append(obj)
    return reports


def export_run(
    config: PipelineConfig, run_id: str, what: str, fmt: str = "json"
) -> list[Path]:
    """Write graphs (json/dot, one file per seed) or the accepted dataset."""
    root = Path(config.run_dir) / run_id
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise RunNotFoundError(f"no run {run_id!r} under {config.run_dir}")
    out_dir = root / "export"
    written: list[Path] = []
    if what == "graph":
        if fmt not in ("json", "dot"):
            raise ValueError(f"unknown graph format {fmt!r}")
        for graph_path in sorted(root.glob("expand/*/graph.json")):
            graph = EvidenceGraph.from_json_obj(json.loads(graph_path.read_text("utf-8")))
            target = out_dir / f"{graph_path.parent.name}.{fmt}"
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(export_graph(graph, fmt))
            written.append(target)
        return written
    if what == "dataset":
        source = root / "dataset.ndjson"
        target = out_dir / "dataset.ndjson"
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(source.read_text("utf-8") if source.exists() else "", "utf-8")
        return [target]
    raise ValueError(f"unknown export target {what!r}; expected graph or dataset")
