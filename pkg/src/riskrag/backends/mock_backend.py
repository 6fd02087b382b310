"""
Deterministic policy backend over a synthetic world.

The mock recognises the five prompt templates by their opening instruction and answers the way a
well-behaved instruction model would, except that with probability ``error_rate`` an intermediate
answer names a wrong entity. All randomness is derived from (world seed, backend seed, sample
index, prompt).
"""

import hashlib
import logging
import random
import re
from typing import Dict, List, Optional, Tuple

from ..prompts import NO_FACTS_SENTINEL
from .base import GenerationRequest, PolicyBackend, ScoreRequest, ScoreResponse
from .mock_world import PHRASINGS, RELATIONS, HopChain, SyntheticWorld, fact_sentence, phrase_sub_question

log = logging.getLogger(__name__)

HIGH_AFFINITY_LOGPROB = -0.1
LOW_AFFINITY_LOGPROB = -3.0

_DECOMPOSE = "Your task is to decompose"
_INTERMEDIATE = "Your task is to answer the following question using provided supporting facts"
_FINAL = "Your task is to answer the original question based on the intermediate answers"
_VERIFIER = "Given a question, your task is to determine the consistency score"

_CLAIM = re.compile(r"The (\w+) of (\w+) is (\w+)\.")
_WORD = re.compile(r"\w+")
_ORIGINAL_QUESTION = re.compile(r"^Original question: (.*)$", re.MULTILINE)
_STATE = re.compile(r"Intermediate answers: (.*?)\n\n(?:Observation|Output|The original)", re.DOTALL)
_SUB_QUESTION = re.compile(r"^Question: (.*)$", re.MULTILINE)
_SUPPORTING_FACTS = re.compile(r"Supporting facts: (.*?)\n\nOutput:", re.DOTALL)


def _claims(text: str) -> Dict[Tuple[str, str], str]:
    """(relation, subject) -> object for every fact sentence; the first claim wins."""
    claims: Dict[Tuple[str, str], str] = {}
    for relation, subject, obj in _CLAIM.findall(text):
        claims.setdefault((relation, subject), obj)
    return claims


def follow_chain(chain: HopChain, text: str) -> List[str]:
    """Entities reached by following the chain's relations through the claims in ``text``."""
    claims = _claims(text)
    reached = [chain.entities[0]]
    for relation in chain.relations:
        obj = claims.get((relation, reached[-1]))
        if obj is None:
            break
        reached.append(obj)
    return reached


def entity_coverage(chain: HopChain, context: str) -> float:
    """Fraction of the chain's entities present as whole words in ``context``."""
    words = set(_WORD.findall(context))
    present = sum(1 for entity in chain.entities if entity in words)
    return present / len(chain.entities)


class MockPolicyBackend(PolicyBackend):
    """Synthetic-world stand-in for an instruction-tuned model."""

    name = "mock-backend"

    def __init__(self, world: SyntheticWorld, seed: int = 0):
        self.world = world
        self.seed = seed

    def _rng(self, prompt: str, sample: int) -> random.Random:
        digest = hashlib.sha256(f"{self.world.seed}:{self.seed}:{sample}:{prompt}".encode("utf-8")).digest()
        return random.Random(int.from_bytes(digest[:8], "big"))

    async def generate(self, req: GenerationRequest) -> List[str]:
        return [self._complete(req, j) for j in range(req.n_samples)]

    def _complete(self, req: GenerationRequest, sample: int) -> str:
        prompt = req.prompt
        if prompt.startswith(_DECOMPOSE):
            return self._decompose(prompt, req.temperature, sample)
        if prompt.startswith(_INTERMEDIATE):
            return self._intermediate_answer(prompt, sample)
        if prompt.startswith(_FINAL):
            return self._final_answer(prompt)
        if prompt.startswith(_VERIFIER):
            return self._verify(prompt)
        log.debug(f"[{self.name}] Unrecognised prompt, answering 'Unknown'")
        return "Unknown"

    def _chain_and_state(self, prompt: str) -> Tuple[Optional[HopChain], str]:
        question = _ORIGINAL_QUESTION.search(prompt)
        state = _STATE.search(prompt)
        chain = self.world.chain_for_question(question.group(1)) if question else None
        return chain, state.group(1) if state else ""

    def _decompose(self, prompt: str, temperature: float, sample: int) -> str:
        chain, state = self._chain_and_state(prompt)
        if chain is None:
            question = _ORIGINAL_QUESTION.search(prompt)
            text = question.group(1) if question else "What is being asked?"
            return f"Thought: The question has to be answered directly.\nSub-question: {text}"

        reached = follow_chain(chain, state)
        hop = min(len(reached) - 1, chain.hops - 1)
        relation, entity = chain.relations[hop], reached[hop]

        phrasing = 0
        if sample > 0 and temperature > 0:
            phrasing = self._rng(prompt, sample).randrange(len(PHRASINGS))
        return (
            f"Thought: To answer the question I need the {relation} of {entity}.\n"
            f"Sub-question: {phrase_sub_question(relation, entity, phrasing)}"
        )

    def _parse_sub_question(self, text: str) -> Tuple[Optional[str], Optional[str]]:
        relation = entity = None
        for word in _WORD.findall(text):
            if relation is None and word in RELATIONS:
                relation = word
            elif entity is None and self.world.is_entity(word):
                entity = word
        return relation, entity

    def _intermediate_answer(self, prompt: str, sample: int) -> str:
        sub_question = _SUB_QUESTION.search(prompt)
        facts = _SUPPORTING_FACTS.search(prompt)
        if sub_question is None or facts is None or not facts.group(1).strip():
            return NO_FACTS_SENTINEL

        relation, entity = self._parse_sub_question(sub_question.group(1))
        if relation is None or entity is None:
            return NO_FACTS_SENTINEL
        obj = _claims(facts.group(1)).get((relation, entity))
        if obj is None:
            return NO_FACTS_SENTINEL

        rng = self._rng(prompt, sample)
        if rng.random() < self.world.error_rate:
            wrong = [e for e in self.world.entities if e != obj]
            if wrong:
                obj = rng.choice(wrong)
        return fact_sentence(entity, relation, obj)

    def _final_answer(self, prompt: str) -> str:
        chain, state = self._chain_and_state(prompt)
        if chain is None:
            claims = _CLAIM.findall(state)
            return claims[-1][2] if claims else "Unknown"
        reached = follow_chain(chain, state)
        return reached[-1] if len(reached) > 1 else "Unknown"

    def _verify(self, prompt: str) -> str:
        chain, state = self._chain_and_state(prompt)
        if chain is None:
            return "0"
        return str(round(10 * entity_coverage(chain, state)))

    async def score_sequence(self, req: ScoreRequest) -> ScoreResponse:
        chain = self.world.chain_for_question(req.target)
        f = entity_coverage(chain, req.context) if chain is not None else 0.0
        logprob = HIGH_AFFINITY_LOGPROB * f + LOW_AFFINITY_LOGPROB * (1.0 - f)
        n_tokens = max(len(req.target.split()), 1)
        return ScoreResponse(token_logprobs=[logprob] * n_tokens)
