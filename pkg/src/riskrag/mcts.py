"""
Monte Carlo tree search over decompose / retrieve-then-reason steps.

Each iteration selects a node by UCT, expands it with freshly sampled sub-questions, rolls the
first new child out greedily to the depth cap and backs the rollout value up the tree.
"""

import asyncio
import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Coroutine, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

from .backends.base import Backends, GenerationRequest
from .config import Bm25Params, RiskParams, SearchConfig
from .errors import BackendError, ExpansionError, InvalidArgumentError, ParseError, SearchError
from .metrics import covered_em
from .models import (
    Action,
    Question,
    ReasoningState,
    SearchNode,
    SearchTree,
    Trajectory,
    append_result,
)
from .prompts import (
    NO_FACTS_SENTINEL,
    ORIGINAL_QUESTION,
    REASONING_STATE,
    RETRIEVED_DOCUMENTS,
    SUB_QUESTION,
    PromptLibrary,
    default_library,
    format_documents,
    is_no_facts,
    parse_decomposition,
)
from .retrieval import Bm25Retriever, Retriever
from .risk import node_value

log = logging.getLogger(__name__)

TraceCallback = Callable[[SearchTree, int], None]

FINAL_ANSWER_MAX_TOKENS = 64

T = TypeVar("T")


@dataclass
class PassResult:
    """Pass@1 / Pass@N outcome of a finished tree; None when there is no gold answer."""
    pass_1: Optional[bool]
    pass_n: Optional[bool]
    best: Trajectory


async def run_together(steps: Iterable[Coroutine[Any, Any, T]]) -> List[T]:
    """Run steps concurrently; the first failure cancels its siblings and is re-raised."""
    try:
        async with asyncio.TaskGroup() as group:
            tasks = [group.create_task(step) for step in steps]
    except ExceptionGroup as failure:
        raise failure.exceptions[0]
    return [task.result() for task in tasks]


def uct(child: SearchNode, parent_visits: int, w: float) -> float:
    """Q + w * sqrt(ln N(parent) / N(child)); unvisited children score +inf."""
    if parent_visits < 1:
        raise InvalidArgumentError(f"parent_visits must be >= 1, got {parent_visits}")
    if child.visits == 0:
        return math.inf
    return child.q_value + w * math.sqrt(math.log(parent_visits) / child.visits)


def is_fully_expanded(node: SearchNode, config: SearchConfig) -> bool:
    if node.depth >= config.max_depth:
        return True
    return node.exhausted or len(node.children) >= config.width_at(node.depth + 1)


def best_uct_child(node: SearchNode, w: float) -> SearchNode:
    """Argmax UCT; ties go to the earliest-created child."""
    best, best_score = node.children[0], uct(node.children[0], node.visits, w)
    for child in node.children[1:]:
        score = uct(child, node.visits, w)
        if score > best_score:
            best, best_score = child, score
    return best


def select(tree: SearchTree, config: SearchConfig) -> SearchNode:
    node = tree.root
    while True:
        if node.terminal or node.depth >= config.max_depth or not node.children:
            return node
        if not is_fully_expanded(node, config):
            return node
        node = best_uct_child(node, config.exploration_weight)


def aggregate_children(node: SearchNode) -> float:
    """Visit-weighted mean of the children's values."""
    total_visits = sum(child.visits for child in node.children)
    if total_visits == 0:
        return node.q_value
    return sum(child.q_value * child.visits for child in node.children) / total_visits


def backpropagate(leaf: SearchNode, rollout_value: float) -> None:
    """Update ``leaf`` with the rollout value, then re-aggregate every ancestor bottom-up."""
    if leaf.children:
        leaf.visits += 1
        leaf.q_value = aggregate_children(leaf)
    else:
        leaf.q_value = (leaf.q_value * leaf.visits + rollout_value) / (leaf.visits + 1)
        leaf.visits += 1

    node = leaf.parent
    while node is not None:
        node.visits += 1
        node.q_value = aggregate_children(node)
        node = node.parent


def greedy_chain_config(config: SearchConfig) -> SearchConfig:
    """One child per level and one expansion per level: a plain decompose-retrieve-reason chain."""
    return config.model_copy(update={
        "width_schedule": [1] * config.max_depth,
        "iterations": config.max_depth,
    })


class TreeSearch:
    """Search state for one question: tree, retriever, value cache and answer cache."""

    def __init__(
        self,
        question: Question,
        backends: Backends,
        config: SearchConfig,
        risk_params: Optional[RiskParams] = None,
        retriever: Optional[Retriever] = None,
        bm25_params: Optional[Bm25Params] = None,
        library: Optional[PromptLibrary] = None,
        trace_callback: Optional[TraceCallback] = None,
    ):
        self.question = question
        self.backends = backends
        self.config = config
        self.risk_params = risk_params or RiskParams()
        self.bm25_params = bm25_params
        self.library = library or default_library()
        self.trace_callback = trace_callback
        self._retriever = retriever
        self._values: Dict[Tuple[Tuple[str, ...], Tuple[str, ...]], float] = {}
        self._answers: Dict[str, str] = {}
        self.tree: Optional[SearchTree] = None

    @classmethod
    def from_tree(
        cls, tree: SearchTree, backends: Backends, library: Optional[PromptLibrary] = None
    ) -> "TreeSearch":
        """Re-attach a finished (or loaded) tree for path extraction."""
        snapshot = tree.config_snapshot or {}
        search = cls(
            tree.question,
            backends,
            SearchConfig(**snapshot.get("search", {})),
            risk_params=RiskParams(**snapshot.get("risk", {})),
            library=library,
        )
        search.tree = tree
        return search

    @property
    def retriever(self) -> Retriever:
        if self._retriever is None:
            self._retriever = Bm25Retriever(self.question.corpus, self.bm25_params)
        return self._retriever

    async def value(self, state: ReasoningState, sub_questions: Sequence[str]) -> float:
        key = (state.results, tuple(sub_questions))
        if key not in self._values:
            self._values[key] = await node_value(
                self.question, state, sub_questions, self.backends,
                self.config.value_mode, self.risk_params, self.library,
            )
        return self._values[key]

    async def initialize(self) -> SearchTree:
        root = SearchNode(state=ReasoningState(), visits=1)
        self.tree = SearchTree(
            root=root,
            question=self.question,
            config_snapshot={
                "search": self.config.model_dump(mode="json"),
                "risk": self.risk_params.model_dump(mode="json"),
            },
            rng_seed=self.config.seed,
        )
        root.q_value = await self.value(root.state, [])
        return self.tree

    def _decompose_prompt(self, state: ReasoningState, action: Optional[Action]) -> str:
        docs = self.question.documents(list(action.retrieved_ids)) if action is not None else []
        return self.library.render("decompose", {
            ORIGINAL_QUESTION: self.question.text,
            REASONING_STATE: state.render(),
            RETRIEVED_DOCUMENTS: format_documents(docs),
        })

    async def _sample_sub_questions(
        self, state: ReasoningState, action: Optional[Action], n_samples: int
    ) -> List[Tuple[str, str]]:
        """Sampled (thought, sub_question) pairs, unparseable samples dropped."""
        completions = await self.backends.policy.generate(GenerationRequest(
            prompt=self._decompose_prompt(state, action),
            temperature=self.config.temperature,
            n_samples=n_samples,
            max_tokens=self.config.max_tokens,
        ))
        parsed = []
        for raw in completions:
            try:
                parsed.append(parse_decomposition(raw))
            except ParseError as e:
                log.debug(f"[mcts] Discarding decomposition sample: {e}")
        return parsed

    async def _reason(
        self, state: ReasoningState, path_sub_questions: Sequence[str], thought: str, sub_question: str
    ) -> Tuple[Action, ReasoningState, float]:
        """Retrieve for one sub-question, answer it and value the resulting state."""
        docs = self.retriever.retrieve(sub_question, self.config.top_k_docs)
        prompt = self.library.render("intermediate_answer", {
            SUB_QUESTION: sub_question,
            RETRIEVED_DOCUMENTS: format_documents(docs),
        })
        result = (await self.backends.policy.generate(GenerationRequest(
            prompt=prompt,
            temperature=self.config.temperature,
            n_samples=1,
            max_tokens=self.config.max_tokens,
        )))[0].strip() or NO_FACTS_SENTINEL

        action = Action(
            sub_question=sub_question,
            intermediate_result=result,
            retrieved_ids=tuple(doc.id for doc in docs),
            thought=thought,
            empty_evidence=is_no_facts(result),
        )
        new_state = append_result(state, result)
        value = await self.value(new_state, [*path_sub_questions, sub_question])
        return action, new_state, value

    async def expand(self, node: SearchNode) -> List[SearchNode]:
        if node.depth >= self.config.max_depth:
            raise InvalidArgumentError(f"cannot expand node {node.node_id} at max depth {node.depth}")
        if is_fully_expanded(node, self.config):
            raise InvalidArgumentError(f"node {node.node_id} is already fully expanded")

        requested = self.config.width_at(node.depth + 1) - len(node.children)
        parsed = await self._sample_sub_questions(node.state, node.action, requested)
        if not parsed:
            node.terminal = True
            raise ExpansionError(f"no parseable decomposition for node {node.node_id}")

        seen = {child.action.sub_question for child in node.children}
        novel: List[Tuple[str, str]] = []
        for thought, sub_question in parsed:
            if sub_question not in seen:
                seen.add(sub_question)
                novel.append((thought, sub_question))
        if len(novel) < requested:
            node.exhausted = True

        path_sub_questions = node.sub_questions()
        steps = await run_together(
            self._reason(node.state, path_sub_questions, thought, sub_question)
            for thought, sub_question in novel
        )

        children = []
        for action, state, value in steps:
            child = SearchNode(state=state, action=action, q_value=value, visits=1)
            children.append(self.tree.add_child(node, child))
        log.debug(f"[mcts] Expanded node {node.node_id} with {len(children)} children")
        return children

    async def simulate(self, node: SearchNode) -> float:
        """Greedy imagined rollout to the depth cap; the tree is not touched."""
        state = node.state
        action = node.action
        path_sub_questions = node.sub_questions()
        current_value = await self.value(state, path_sub_questions)

        for _ in range(node.depth, self.config.max_depth):
            parsed = await self._sample_sub_questions(state, action, self.config.rollout_samples)
            candidates: Dict[str, str] = {}
            for thought, sub_question in parsed:
                candidates.setdefault(sub_question, thought)
            if not candidates:
                break
            steps = await run_together(
                self._reason(state, path_sub_questions, thought, sub_question)
                for sub_question, thought in candidates.items()
            )
            best = max(range(len(steps)), key=lambda i: (steps[i][2], -i))
            action, state, current_value = steps[best]
            path_sub_questions = [*path_sub_questions, action.sub_question]
        return current_value

    async def iterate(self) -> None:
        node = select(self.tree, self.config)
        new_children: List[SearchNode] = []
        if not node.terminal and not is_fully_expanded(node, self.config):
            try:
                new_children = await self.expand(node)
            except ExpansionError as e:
                log.warning(f"[mcts] {e}")

        if new_children:
            leaf = new_children[0]
            rollout_value = await self.simulate(leaf)
        else:
            leaf = node
            if node.children or node.terminal:
                rollout_value = node.q_value
            else:
                rollout_value = await self.simulate(node)
        backpropagate(leaf, rollout_value)

    async def run(self) -> SearchTree:
        if self.tree is None:
            try:
                await self.initialize()
            except BackendError as e:
                raise SearchError(f"root evaluation failed: {e}", self.tree) from e

        for iteration in range(1, self.config.iterations + 1):
            try:
                await self.iterate()
            except BackendError as e:
                self.tree.error = f"iteration {iteration}: {e}"
                log.warning(f"[mcts] Search for {self.question.id} aborted at {self.tree.error}")
                raise SearchError(str(e), self.tree) from e

            log.debug(
                f"[mcts] Iteration {iteration}/{self.config.iterations}: "
                f"root Q={self.tree.root.q_value:.4f} N={self.tree.root.visits}"
            )
            if self.trace_callback and self.config.trace_every and iteration % self.config.trace_every == 0:
                self.trace_callback(self.tree, iteration)
        return self.tree

    async def final_answer(self, state: ReasoningState) -> str:
        """Answer from the final-answer prompt, cached per rendered state."""
        rendered = state.render()
        if rendered not in self._answers:
            prompt = self.library.render("final_answer", {
                ORIGINAL_QUESTION: self.question.text,
                REASONING_STATE: rendered,
            })
            completions = await self.backends.policy.generate(GenerationRequest(
                prompt=prompt, temperature=0.0, n_samples=1, max_tokens=FINAL_ANSWER_MAX_TOKENS,
            ))
            self._answers[rendered] = completions[0].strip()
        return self._answers[rendered]

    def greedy_nodes(self) -> List[SearchNode]:
        """Root-to-leaf path stepping to the max-Q child (earliest child on ties)."""
        node = self.tree.root
        nodes = [node]
        while node.children and node.depth < self.config.max_depth:
            best = node.children[0]
            for child in node.children[1:]:
                if child.q_value > best.q_value:
                    best = child
            node = best
            nodes.append(node)
        return nodes

    async def best_path(self) -> Trajectory:
        nodes = self.greedy_nodes()
        if nodes[-1].depth < self.config.max_depth:
            log.debug(f"[mcts] Best path for {self.question.id} ends early at depth {nodes[-1].depth}")
        return Trajectory(nodes=nodes, final_answer=await self.final_answer(nodes[-1].state))

    async def pass_at_n(self) -> PassResult:
        best = await self.best_path()
        if not self.question.gold_answer:
            return PassResult(pass_1=None, pass_n=None, best=best)

        gold = self.question.gold_answer
        pass_1 = covered_em(best.final_answer, gold)
        pass_n = pass_1
        for node in self.tree.nodes():
            if pass_n:
                break
            if node.depth == self.config.max_depth:
                pass_n = covered_em(await self.final_answer(node.state), gold)
        return PassResult(pass_1=pass_1, pass_n=pass_n, best=best)


async def run_search(
    question: Question,
    backends: Backends,
    config: SearchConfig,
    risk_params: Optional[RiskParams] = None,
    bm25_params: Optional[Bm25Params] = None,
    library: Optional[PromptLibrary] = None,
    trace_callback: Optional[TraceCallback] = None,
) -> SearchTree:
    """Run ``config.iterations`` select/expand/simulate/backpropagate loops for one question."""
    search = TreeSearch(
        question, backends, config,
        risk_params=risk_params,
        bm25_params=bm25_params,
        library=library,
        trace_callback=trace_callback,
    )
    return await search.run()


async def best_path(tree: SearchTree, backends: Backends, library: Optional[PromptLibrary] = None) -> Trajectory:
    return await TreeSearch.from_tree(tree, backends, library).best_path()


async def pass_at_n(tree: SearchTree, backends: Backends, library: Optional[PromptLibrary] = None) -> PassResult:
    return await TreeSearch.from_tree(tree, backends, library).pass_at_n()
