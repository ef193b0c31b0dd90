"""Pipeline configuration: one JSON file holding every tunable knob.

Environment overrides are honored for gateway endpoints and keys only
(HOPFORGE_GATEWAY_URL, plus whatever api_key_env names).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError
from .expand import ExpansionStrategy, ScoreWeights


@dataclass
class PipelineConfig:
    corpus_path: str
    store_path: str
    seeds: list[str]
    run_dir: str = "runs"
    strategy: list[int] = field(default_factory=lambda: [4, 2, 2])
    weights: dict[str, float] = field(
        default_factory=lambda: {"w_conf": 0.6, "w_rel": 0.2, "w_sem": 0.15, "w_par": 0.05}
    )
    nli_threshold: float = 0.45
    ner_threshold: float = 0.5
    alpha: int = 3
    beta: int = 5
    gamma: int = 3
    n_deep: int = 2
    max_words: int = 120
    probe_runs: int = 5
    max_rounds: int = 3
    retry_limit: int = 3
    rewrite_retries: int = 3
    pool_factor: int = 3
    rng_seed: int = 0
    coref_enabled: bool = False
    title_similarity: str = "trigram"
    gateway_url: str | None = None
    gateway_timeout_ms: int = 30_000
    gateway_max_retries: int = 2
    api_key_env: str | None = None
    mock_script: str | None = None
    max_parallel_seeds: int = 0  # 0 means CPU count

    def expansion_strategy(self) -> ExpansionStrategy:
        return ExpansionStrategy.of(self.strategy)

    def score_weights(self) -> ScoreWeights:
        return ScoreWeights(**self.weights)

    def validate(self) -> None:
        problems = []
        if not self.corpus_path:
            problems.append("corpus_path is required")
        if not self.store_path:
            problems.append("store_path is required")
        if not self.seeds:
            problems.append("at least one seed is required")
        try:
            self.expansion_strategy()
        except ValueError as exc:
            problems.append(f"strategy: {exc}")
        try:
            self.score_weights()
        except (TypeError, ValueError) as exc:
            problems.append(f"weights: {exc}")
        if not 0.0 <= self.nli_threshold <= 1.0:
            problems.append("nli_threshold must be in [0, 1]")
        if not 0.0 <= self.ner_threshold <= 1.0:
            problems.append("ner_threshold must be in [0, 1]")
        for name in ("alpha", "beta", "gamma", "n_deep", "max_words", "retry_limit", "rewrite_retries"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        if self.probe_runs < 3 or self.probe_runs % 2 == 0:
            problems.append("probe_runs must be an odd number >= 3")
        if self.max_rounds < 0:
            problems.append("max_rounds must be >= 0")
        if self.pool_factor < 1:
            problems.append("pool_factor must be >= 1")
        if self.title_similarity not in ("trigram", "embedding"):
            problems.append("title_similarity must be trigram or embedding")
        if self.gateway_url is None and self.mock_script is None:
            problems.append("either gateway_url or mock_script is required")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_json_obj(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_obj(cls, obj: dict) -> "PipelineConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"corpus_path", "store_path", "seeds"} - set(obj)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        config = cls(**obj)
        env_url = os.environ.get("HOPFORGE_GATEWAY_URL")
        if env_url:
            config.gateway_url = env_url
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        try:
            obj = json.loads(Path(path).read_text("utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_json_obj(obj)
