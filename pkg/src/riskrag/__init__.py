"""
riskrag

Risk-guided Monte Carlo tree search over decompose / retrieve-then-reason steps for multi-hop
retrieval-augmented question answering.
"""

__version__ = "0.1.0"

from .models import Action, Document, Question, ReasoningState, RunRecord, SearchNode, SearchTree, Trajectory
from .mcts import TreeSearch, best_path, pass_at_n, run_search
from .retrieval import Bm25Retriever

__all__ = [
    "Action",
    "Bm25Retriever",
    "Document",
    "Question",
    "ReasoningState",
    "RunRecord",
    "SearchNode",
    "SearchTree",
    "Trajectory",
    "TreeSearch",
    "best_path",
    "pass_at_n",
    "run_search",
]
