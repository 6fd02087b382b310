"""
Data models for the risk-guided search system.
"""

from dataclasses import dataclass, field
from typing import Dict, Any, Optional, List, Set, Tuple, Iterator

from .errors import InvalidArgumentError

STATE_SEPARATOR = " "


@dataclass(frozen=True)
class Document:
    """Represents one document of a question's private corpus."""
    id: str
    title: str
    text: str

    def __post_init__(self):
        if not self.text:
            raise InvalidArgumentError(f"document {self.id!r} has empty text")


@dataclass
class Question:
    """Represents one benchmark instance together with its knowledge base."""
    id: str
    text: str
    gold_answer: str
    corpus: List[Document] = field(default_factory=list)
    gold_support_ids: Set[str] = field(default_factory=set)

    def __post_init__(self):
        if not self.text:
            raise InvalidArgumentError(f"question {self.id!r} has empty text")
        corpus_ids = [doc.id for doc in self.corpus]
        if len(set(corpus_ids)) != len(corpus_ids):
            raise InvalidArgumentError(f"question {self.id!r} has duplicate document ids")
        missing = self.gold_support_ids - set(corpus_ids)
        if missing:
            raise InvalidArgumentError(
                f"question {self.id!r} supporting ids not in corpus: {sorted(missing)}"
            )

    def documents(self, ids: List[str]) -> List[Document]:
        """Look up corpus documents by id, keeping the given order."""
        by_id = {doc.id: doc for doc in self.corpus}
        return [by_id[doc_id] for doc_id in ids if doc_id in by_id]


@dataclass(frozen=True)
class Action:
    """Represents one decompose + retrieve-then-reason step."""
    sub_question: str
    intermediate_result: str
    retrieved_ids: Tuple[str, ...] = ()
    thought: str = ""
    empty_evidence: bool = False

    def __post_init__(self):
        if not self.sub_question:
            raise InvalidArgumentError("action sub_question must be non-empty")


@dataclass(frozen=True)
class ReasoningState:
    """Ordered intermediate results; rendered by joining them with a single space."""
    results: Tuple[str, ...] = ()

    def render(self) -> str:
        return render_state(self)

    def __len__(self) -> int:
        return len(self.results)


def append_result(state: ReasoningState, result: str) -> ReasoningState:
    """Return a new state with `result` appended; `state` is left untouched."""
    if not result:
        raise InvalidArgumentError("cannot append an empty intermediate result")
    return ReasoningState(results=state.results + (result,))


def render_state(state: ReasoningState) -> str:
    """Render a reasoning state as prompt text."""
    return STATE_SEPARATOR.join(state.results)


@dataclass(eq=False)
class SearchNode:
    """One (state, action) pair of the search tree."""
    state: ReasoningState
    action: Optional[Action] = None
    q_value: float = 0.0
    visits: int = 0
    depth: int = 0
    children: List["SearchNode"] = field(default_factory=list)
    parent: Optional["SearchNode"] = None
    node_id: int = 0
    terminal: bool = False
    exhausted: bool = False

    @property
    def is_root(self) -> bool:
        return self.parent is None

    def path(self) -> List["SearchNode"]:
        """Nodes from the root down to this node."""
        nodes = []
        node: Optional[SearchNode] = self
        while node is not None:
            nodes.append(node)
            node = node.parent
        nodes.reverse()
        return nodes

    def sub_questions(self) -> List[str]:
        """Sub-questions asked along the path to this node."""
        return [n.action.sub_question for n in self.path() if n.action is not None]

    def iter_subtree(self) -> Iterator["SearchNode"]:
        """Depth-first walk in child creation order."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


@dataclass
class SearchTree:
    """A search tree grown for one question."""
    root: SearchNode
    question: Question
    config_snapshot: Any
    rng_seed: int
    error: Optional[str] = None
    next_node_id: int = 1

    def add_child(self, parent: SearchNode, child: SearchNode) -> SearchNode:
        """Attach `child` under `parent`, assigning its creation index."""
        child.parent = parent
        child.depth = parent.depth + 1
        child.node_id = self.next_node_id
        self.next_node_id += 1
        parent.children.append(child)
        return child

    def nodes(self) -> List[SearchNode]:
        """All nodes ordered by creation index."""
        return sorted(self.root.iter_subtree(), key=lambda n: n.node_id)


@dataclass
class Trajectory:
    """A root-to-leaf path and the answer generated from its final state."""
    nodes: List[SearchNode]
    final_answer: str

    @property
    def state(self) -> ReasoningState:
        return self.nodes[-1].state if self.nodes else ReasoningState()

    def steps(self) -> List[Dict[str, str]]:
        return [
            {
                'sub_question': node.action.sub_question,
                'intermediate_result': node.action.intermediate_result,
            }
            for node in self.nodes
            if node.action is not None
        ]


@dataclass
class RunRecord:
    """Represents the outcome of one question under one evaluation mode."""
    question_id: str
    mode: str
    final_answer: str = ""
    em: bool = False
    f1: float = 0.0
    pass_1: Optional[bool] = None
    pass_n: Optional[bool] = None
    wall_time: float = 0.0
    generation_calls: int = 0
    scored_tokens: int = 0
    trajectory: List[Dict[str, str]] = field(default_factory=list)
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'question_id': self.question_id,
            'mode': self.mode,
            'final_answer': self.final_answer,
            'em': self.em,
            'f1': self.f1,
            'pass_1': self.pass_1,
            'pass_n': self.pass_n,
            'wall_time': self.wall_time,
            'generation_calls': self.generation_calls,
            'scored_tokens': self.scored_tokens,
            'trajectory': self.trajectory,
            'error': self.error,
        }
