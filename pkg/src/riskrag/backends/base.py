"""
The policy-backend boundary: text generation and per-token likelihood scoring.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List, Optional

from ..errors import InvalidArgumentError


@dataclass(frozen=True)
class GenerationRequest:
    """Represents a sampling request for one prompt."""
    prompt: str
    temperature: float = 0.7
    n_samples: int = 1
    max_tokens: int = 256
    stop: Optional[List[str]] = None

    def __post_init__(self):
        if not self.prompt:
            raise InvalidArgumentError("generation prompt must be non-empty")
        if self.n_samples < 1:
            raise InvalidArgumentError("n_samples must be >= 1")
        if self.temperature < 0:
            raise InvalidArgumentError("temperature must be >= 0")


@dataclass(frozen=True)
class ScoreRequest:
    """Represents a forced-decoding likelihood request for `target` given `context`."""
    context: str
    target: str

    def __post_init__(self):
        if not self.target:
            raise InvalidArgumentError("score target must be non-empty")


@dataclass(frozen=True)
class ScoreResponse:
    """Per-token log-likelihoods of the target, in target token order."""
    token_logprobs: List[float] = field(default_factory=list)

    @property
    def token_count(self) -> int:
        return len(self.token_logprobs)

    @property
    def mean_logprob(self) -> float:
        return sum(self.token_logprobs) / len(self.token_logprobs)


class PolicyBackend(ABC):
    """Abstract boundary to a language model."""

    name: str = "backend"

    @abstractmethod
    async def generate(self, req: GenerationRequest) -> List[str]:
        """Return exactly ``req.n_samples`` completions."""

    @abstractmethod
    async def score_sequence(self, req: ScoreRequest) -> ScoreResponse:
        """Return log p(target_t | target_<t, context) for every target token."""

    async def aclose(self) -> None:
        """Release transport resources."""


@dataclass
class Backends:
    """The generation backend and the (possibly distinct) scoring backend."""
    policy: PolicyBackend
    scorer: Optional[PolicyBackend] = None

    def __post_init__(self):
        if self.scorer is None:
            self.scorer = self.policy

    def metered(self) -> "MeteredBackends":
        return MeteredBackends(self.policy, self.scorer)

    async def aclose(self) -> None:
        await self.policy.aclose()
        if self.scorer is not self.policy:
            await self.scorer.aclose()


class MeteredBackend(PolicyBackend):
    """Counts generation calls and scored tokens on the way through."""

    def __init__(self, inner: PolicyBackend):
        self.inner = inner
        self.name = inner.name
        self.generation_calls = 0
        self.scored_tokens = 0

    async def generate(self, req: GenerationRequest) -> List[str]:
        self.generation_calls += 1
        return await self.inner.generate(req)

    async def score_sequence(self, req: ScoreRequest) -> ScoreResponse:
        response = await self.inner.score_sequence(req)
        self.scored_tokens += response.token_count
        return response


class MeteredBackends(Backends):
    """Per-question usage view over a shared pair of backends."""

    def __init__(self, policy: PolicyBackend, scorer: PolicyBackend):
        metered_policy = MeteredBackend(policy)
        metered_scorer = metered_policy if scorer is policy else MeteredBackend(scorer)
        super().__init__(policy=metered_policy, scorer=metered_scorer)

    @property
    def generation_calls(self) -> int:
        calls = self.policy.generation_calls
        if self.scorer is not self.policy:
            calls += self.scorer.generation_calls
        return calls

    @property
    def scored_tokens(self) -> int:
        tokens = self.policy.scored_tokens
        if self.scorer is not self.policy:
            tokens += self.scorer.scored_tokens
        return tokens

    async def aclose(self) -> None:
        """Shared backends are closed by their owner."""
