"""
Policy backends: the HTTP adapter for real models and the synthetic-world mock.
"""

from ..config import BackendConfig
from .base import (
    Backends,
    GenerationRequest,
    MeteredBackend,
    MeteredBackends,
    PolicyBackend,
    ScoreRequest,
    ScoreResponse,
)
from .http_backend import HttpPolicyBackend
from .mock_backend import MockPolicyBackend
from .mock_world import SyntheticWorld, generate_world, load_world, save_world


def build_backends(config: BackendConfig, seed: int = 0) -> Backends:
    """Construct the generation and scoring backends named by ``config``."""
    if config.kind == "mock":
        return Backends(policy=MockPolicyBackend(load_world(config.world), seed=seed))

    policy = HttpPolicyBackend.from_config(config, seed=seed)
    if config.scoring_endpoint_url is None and config.scoring_model is None:
        return Backends(policy=policy)
    return Backends(policy=policy, scorer=HttpPolicyBackend.from_config(config, scoring=True, seed=seed))


__all__ = [
    "Backends",
    "GenerationRequest",
    "HttpPolicyBackend",
    "MeteredBackend",
    "MeteredBackends",
    "MockPolicyBackend",
    "PolicyBackend",
    "ScoreRequest",
    "ScoreResponse",
    "SyntheticWorld",
    "build_backends",
    "generate_world",
    "load_world",
    "save_world",
]
