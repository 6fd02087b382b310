"""
Configuration models and config-file loading.

Precedence is CLI flag > environment variable > config file > default. The CLI gets the first
three from click (command line, ``envvar``, ``default_map``); this module supplies the defaults,
the validation and the file -> ``default_map`` translation.
"""

import tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError

ValueMode = Literal["risk_value", "uniform", "llm_verifier"]
EvalMode = Literal["arise", "vanilla_rag", "mcts_uniform", "mcts_verifier"]

MODE_VALUE_MODES: Dict[str, Optional[str]] = {
    "arise": "risk_value",
    "vanilla_rag": None,
    "mcts_uniform": "uniform",
    "mcts_verifier": "llm_verifier",
}


class SearchConfig(BaseModel):
    iterations: int = Field(200, ge=1)
    exploration_weight: float = Field(1.4, ge=0.0)
    max_depth: int = Field(4, ge=1)
    width_schedule: List[int] = Field(default_factory=lambda: [5, 4, 3, 2])
    rollout_samples: int = Field(2, ge=1)
    temperature: float = Field(0.7, ge=0.0)
    top_k_docs: int = Field(2, ge=1)
    value_mode: ValueMode = "risk_value"
    seed: int = 0
    max_tokens: int = Field(256, ge=1)
    trace_every: int = Field(0, ge=0)

    @field_validator("width_schedule")
    @classmethod
    def _widths_positive(cls, widths: List[int]) -> List[int]:
        if any(w < 1 for w in widths):
            raise ValueError("all widths must be >= 1")
        return widths

    @model_validator(mode="after")
    def _schedule_matches_depth(self) -> "SearchConfig":
        if len(self.width_schedule) != self.max_depth:
            raise ValueError(
                f"width_schedule has {len(self.width_schedule)} entries, max_depth is {self.max_depth}"
            )
        return self

    def width_at(self, child_depth: int) -> int:
        """Maximum number of children a node at ``child_depth - 1`` may spawn."""
        return self.width_schedule[child_depth - 1]


class RiskParams(BaseModel):
    alpha: float = Field(1.0, gt=0.0)
    beta: float = 2.0
    paper_literal_sigmoid: bool = False
    scoring_fallback: Optional[Literal["uniform", "llm_verifier"]] = None


class Bm25Params(BaseModel):
    k1: float = Field(1.2, ge=0.0)
    b: float = Field(0.75, ge=0.0, le=1.0)


class BackendConfig(BaseModel):
    kind: Literal["http", "mock"] = "http"
    endpoint_url: str = "http://127.0.0.1:1234"
    model: str = "qwen2.5-14b-instruct"
    scoring_endpoint_url: Optional[str] = None
    scoring_model: Optional[str] = None
    api_key_env: str = "RISKRAG_API_KEY"
    request_timeout: float = Field(60.0, gt=0.0)
    world: Optional[Path] = None

    @model_validator(mode="after")
    def _mock_needs_world(self) -> "BackendConfig":
        if self.kind == "mock" and self.world is None:
            raise ValueError("the mock backend needs a world file (--world)")
        if self.world is not None and not self.world.exists():
            raise ValueError(f"world file not found: {self.world}")
        return self


class DatasetConfig(BaseModel):
    path: Optional[Path] = None
    sample_n: int = Field(200, ge=1)
    seed: int = 0

    @field_validator("path")
    @classmethod
    def _path_exists(cls, path: Optional[Path]) -> Optional[Path]:
        if path is not None and not path.exists():
            raise ValueError(f"dataset not found: {path}")
        return path


class EvalConfig(BaseModel):
    mode: EvalMode = "arise"
    answer_f1: bool = False
    record_timing: bool = True
    workers: int = Field(1, ge=1)
    output_dir: Path = Path("runs")
    trace: bool = False


class AppConfig(BaseModel):
    search: SearchConfig = Field(default_factory=SearchConfig)
    risk: RiskParams = Field(default_factory=RiskParams)
    retrieval: Bm25Params = Field(default_factory=Bm25Params)
    backend: BackendConfig = Field(default_factory=BackendConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    def search_for_mode(self) -> SearchConfig:
        """Search config with the value mode implied by the eval mode."""
        value_mode = MODE_VALUE_MODES[self.eval.mode]
        if value_mode is None or value_mode == self.search.value_mode:
            return self.search
        return self.search.model_copy(update={"value_mode": value_mode})


# (section, file key) -> flat option name shared by the CLI.
FILE_KEYS: Dict[Tuple[str, str], str] = {
    ("search", "iterations"): "iterations",
    ("search", "exploration_weight"): "exploration_weight",
    ("search", "max_depth"): "max_depth",
    ("search", "width_schedule"): "width_schedule",
    ("search", "rollout_samples"): "rollout_samples",
    ("search", "temperature"): "temperature",
    ("search", "top_k_docs"): "top_k_docs",
    ("search", "value_mode"): "value_mode",
    ("search", "seed"): "seed",
    ("search", "max_tokens"): "max_tokens",
    ("search", "trace_every"): "trace_every",
    ("risk", "alpha"): "alpha",
    ("risk", "beta"): "beta",
    ("risk", "paper_literal_sigmoid"): "paper_literal_sigmoid",
    ("risk", "scoring_fallback"): "scoring_fallback",
    ("retrieval", "k1"): "k1",
    ("retrieval", "b"): "b",
    ("backend", "kind"): "backend",
    ("backend", "endpoint_url"): "endpoint_url",
    ("backend", "model"): "model",
    ("backend", "scoring_endpoint_url"): "scoring_endpoint_url",
    ("backend", "scoring_model"): "scoring_model",
    ("backend", "api_key_env"): "api_key_env",
    ("backend", "request_timeout"): "request_timeout",
    ("backend", "world"): "world",
    ("dataset", "path"): "dataset",
    ("dataset", "sample_n"): "sample_n",
    ("dataset", "seed"): "dataset_seed",
    ("eval", "mode"): "mode",
    ("eval", "answer_f1"): "answer_f1",
    ("eval", "record_timing"): "record_timing",
    ("eval", "workers"): "workers",
    ("eval", "output_dir"): "output_dir",
    ("eval", "trace"): "trace",
}

OPTION_SECTIONS: Dict[str, Tuple[str, str]] = {
    option: (section, key) for (section, key), option in FILE_KEYS.items()
}


def parse_width_schedule(value: Any) -> List[int]:
    """Accept "5,4,3,2" or a list of ints."""
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    try:
        return [int(part) for part in str(value).split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"invalid width schedule {value!r}") from e


def load_config_file(path: Path) -> Dict[str, Any]:
    """Read a TOML config file into flat option-name -> value pairs."""
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e

    flat: Dict[str, Any] = {}
    for section, values in raw.items():
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: top-level key {section!r} must be a [section]")
        for key, value in values.items():
            option = FILE_KEYS.get((section, key))
            if option is None:
                raise ConfigError(f"{path}: unknown key {key!r} in section [{section}]")
            if option == "width_schedule":
                value = ",".join(str(v) for v in parse_width_schedule(value))
            flat[option] = value
    return flat


def build_app_config(options: Dict[str, Any]) -> AppConfig:
    """Validate flat option values (as produced by the CLI) into an AppConfig."""
    sections: Dict[str, Dict[str, Any]] = {}
    for option, value in options.items():
        if option not in OPTION_SECTIONS or value is None:
            continue
        section, key = OPTION_SECTIONS[option]
        if option == "width_schedule":
            value = parse_width_schedule(value)
        sections.setdefault(section, {})[key] = value
    try:
        return AppConfig(**sections)
    except ValidationError as e:
        raise ConfigError(_format_validation_error(e)) from e


def _format_validation_error(error: ValidationError) -> str:
    lines = []
    for issue in error.errors():
        location = ".".join(str(part) for part in issue["loc"])
        lines.append(f"{location}: {issue['msg']}" if location else issue["msg"])
    return "invalid configuration: " + "; ".join(lines)
