"""Shared fixtures: synthetic worlds, mock backends and scripted fake backends."""

from typing import Callable, Dict, List, Optional, Sequence

import pytest

from riskrag.backends import Backends, MockPolicyBackend, generate_world
from riskrag.backends.base import GenerationRequest, PolicyBackend, ScoreRequest, ScoreResponse
from riskrag.config import SearchConfig


class FakeBackend(PolicyBackend):
    """Backend driven by a reply function and fixed score logprobs; records every request."""

    name = "fake-backend"

    def __init__(
        self,
        reply: Optional[Callable[[GenerationRequest, int], str]] = None,
        replies: Optional[Sequence[str]] = None,
        logprobs: Optional[List[float]] = None,
        score_error: Optional[Exception] = None,
    ):
        self._reply = reply
        self._replies = list(replies or [])
        self.logprobs = logprobs if logprobs is not None else [-1.0]
        self.score_error = score_error
        self.requests: List[GenerationRequest] = []
        self.score_requests: List[ScoreRequest] = []

    async def generate(self, req: GenerationRequest) -> List[str]:
        self.requests.append(req)
        out = []
        for j in range(req.n_samples):
            if self._reply is not None:
                out.append(self._reply(req, j))
            else:
                out.append(self._replies.pop(0))
        return out

    async def score_sequence(self, req: ScoreRequest) -> ScoreResponse:
        self.score_requests.append(req)
        if self.score_error is not None:
            raise self.score_error
        return ScoreResponse(token_logprobs=list(self.logprobs))


@pytest.fixture
def fake_backend_cls():
    return FakeBackend


@pytest.fixture
def make_world():
    def factory(hops: int = 2, n_questions: int = 5, error_rate: float = 0.0, seed: int = 7):
        return generate_world(hops, n_questions, error_rate=error_rate, seed=seed)
    return factory


@pytest.fixture
def mock_backends():
    def factory(world, seed: int = 0) -> Backends:
        return Backends(policy=MockPolicyBackend(world, seed=seed))
    return factory


@pytest.fixture
def search_config():
    def factory(**overrides) -> SearchConfig:
        values: Dict = {
            "iterations": 20,
            "max_depth": 2,
            "width_schedule": [2, 2],
            "rollout_samples": 1,
        }
        values.update(overrides)
        return SearchConfig(**values)
    return factory
