"""
Risk-value estimation for search nodes.

The risk of a state is the mean negative log-likelihood of reconstructing the original question
from it; a decreasing sigmoid maps risk to a node value in (0, 1).
"""

import logging
import math
from typing import Optional, Sequence

from .backends.base import Backends, GenerationRequest, ScoreRequest
from .config import RiskParams
from .errors import CapabilityError, InvalidArgumentError, ParseError
from .models import Question, ReasoningState
from .prompts import (
    ORIGINAL_QUESTION,
    REASONING_STATE,
    SUB_QUESTIONS,
    PromptLibrary,
    default_library,
    parse_verifier_score,
)

log = logging.getLogger(__name__)

UNIFORM_VALUE = 0.5
VERIFIER_ATTEMPTS = 2


def risk_context(question: Question, state: ReasoningState, library: Optional[PromptLibrary] = None) -> str:
    """Reconstruction prompt over the state; the root falls back to the question text."""
    library = library or default_library()
    rendered = state.render() or question.text
    return library.render("risk_reconstruct", {REASONING_STATE: rendered})


async def compute_risk(
    question: Question,
    state: ReasoningState,
    backends: Backends,
    library: Optional[PromptLibrary] = None,
) -> float:
    """-(1/|q|) * sum_t log p(q_t | q_<t, state)."""
    response = await backends.scorer.score_sequence(
        ScoreRequest(context=risk_context(question, state, library), target=question.text)
    )
    if response.token_count == 0:
        raise InvalidArgumentError("scorer returned no token logprobs")
    return -response.mean_logprob


def risk_to_value(risk: float, params: RiskParams) -> float:
    """Decreasing sigmoid; ``paper_literal_sigmoid`` flips it to 1 - sigmoid."""
    exponent = params.alpha * (risk - params.beta)
    # Overflow-safe logistic.
    if exponent >= 0:
        z = math.exp(-exponent)
        value = z / (1.0 + z)
    else:
        value = 1.0 / (1.0 + math.exp(exponent))
    return 1.0 - value if params.paper_literal_sigmoid else value


async def verifier_value(
    question: Question,
    state: ReasoningState,
    sub_questions: Sequence[str],
    backends: Backends,
    library: Optional[PromptLibrary] = None,
    max_tokens: int = 16,
) -> float:
    """Consistency score from the verifier prompt; 0.5 when the reply never parses."""
    library = library or default_library()
    prompt = library.render("verifier", {
        ORIGINAL_QUESTION: question.text,
        SUB_QUESTIONS: " ".join(sub_questions),
        REASONING_STATE: state.render(),
    })
    raw = ""
    for _ in range(VERIFIER_ATTEMPTS):
        raw = (await backends.policy.generate(
            GenerationRequest(prompt=prompt, temperature=0.0, n_samples=1, max_tokens=max_tokens)
        ))[0]
        try:
            return parse_verifier_score(raw)
        except ParseError:
            continue
    log.warning(f"[risk] Verifier reply {raw!r} has no score, using {UNIFORM_VALUE}")
    return UNIFORM_VALUE


async def node_value(
    question: Question,
    state: ReasoningState,
    sub_questions: Sequence[str],
    backends: Backends,
    mode: str,
    params: RiskParams,
    library: Optional[PromptLibrary] = None,
) -> float:
    """Value of a node's state under ``mode`` (risk_value, uniform or llm_verifier)."""
    if mode == "uniform":
        return UNIFORM_VALUE
    if mode == "llm_verifier":
        return await verifier_value(question, state, sub_questions, backends, library)
    if mode != "risk_value":
        raise InvalidArgumentError(f"unknown value mode {mode!r}")

    try:
        risk = await compute_risk(question, state, backends, library)
    except CapabilityError:
        if params.scoring_fallback is None:
            raise
        log.warning(f"[risk] Scorer cannot score sequences, falling back to {params.scoring_fallback}")
        return await node_value(question, state, sub_questions, backends, params.scoring_fallback, params, library)
    return risk_to_value(risk, params)
