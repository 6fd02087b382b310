"""
JSON and DOT serialization of search trees.

Dump layout::

    {"question_id", "question", "seed", "config", "error",
     "nodes": [{"id", "parent_id", "depth", "sub_question", "intermediate_result",
                "retrieved_ids", "thought", "empty_evidence", "q_value", "visits",
                "terminal", "exhausted"}, ...]}

Nodes are listed in creation order; ``load_tree`` followed by ``dump_tree`` reproduces the input.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional

from .errors import IngestError
from .models import Action, Question, ReasoningState, SearchNode, SearchTree, append_result


def node_to_dict(node: SearchNode) -> Dict[str, Any]:
    action = node.action
    return {
        'id': node.node_id,
        'parent_id': node.parent.node_id if node.parent is not None else None,
        'depth': node.depth,
        'sub_question': action.sub_question if action else None,
        'intermediate_result': action.intermediate_result if action else None,
        'retrieved_ids': list(action.retrieved_ids) if action else [],
        'thought': action.thought if action else None,
        'empty_evidence': action.empty_evidence if action else False,
        'q_value': node.q_value,
        'visits': node.visits,
        'terminal': node.terminal,
        'exhausted': node.exhausted,
    }


def tree_to_dict(tree: SearchTree) -> Dict[str, Any]:
    return {
        'question_id': tree.question.id,
        'question': tree.question.text,
        'seed': tree.rng_seed,
        'config': tree.config_snapshot,
        'error': tree.error,
        'nodes': [node_to_dict(node) for node in tree.nodes()],
    }


def dump_tree(tree: SearchTree) -> str:
    return json.dumps(tree_to_dict(tree), indent=2) + "\n"


def write_tree(tree: SearchTree, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_tree(tree), encoding="utf-8")
    return path


def load_tree(text: str, question: Optional[Question] = None) -> SearchTree:
    """Rebuild a tree from its JSON dump.

    Without ``question`` a corpus-less stand-in is built from the dumped id and text.
    """
    try:
        data = json.loads(text)
        if question is None:
            question = Question(id=data['question_id'], text=data['question'], gold_answer="")
        records: List[Dict[str, Any]] = sorted(data['nodes'], key=lambda n: n['id'])
        if not records or records[0]['parent_id'] is not None:
            raise IngestError("tree dump has no root node")

        nodes: Dict[int, SearchNode] = {}
        root = None
        for record in records:
            parent = nodes.get(record['parent_id']) if record['parent_id'] is not None else None
            if record['parent_id'] is not None and parent is None:
                raise IngestError(f"node {record['id']} references unknown parent {record['parent_id']}")

            action = None
            state = ReasoningState()
            if parent is not None:
                action = Action(
                    sub_question=record['sub_question'],
                    intermediate_result=record['intermediate_result'],
                    retrieved_ids=tuple(record['retrieved_ids']),
                    thought=record.get('thought') or "",
                    empty_evidence=bool(record.get('empty_evidence', False)),
                )
                state = append_result(parent.state, action.intermediate_result)

            node = SearchNode(
                state=state,
                action=action,
                q_value=float(record['q_value']),
                visits=int(record['visits']),
                depth=int(record['depth']),
                parent=parent,
                node_id=int(record['id']),
                terminal=bool(record.get('terminal', False)),
                exhausted=bool(record.get('exhausted', False)),
            )
            if parent is None:
                if root is not None:
                    raise IngestError("tree dump has more than one root")
                root = node
            else:
                parent.children.append(node)
            nodes[node.node_id] = node

        return SearchTree(
            root=root,
            question=question,
            config_snapshot=data.get('config'),
            rng_seed=int(data['seed']),
            error=data.get('error'),
            next_node_id=max(nodes) + 1,
        )
    except IngestError:
        raise
    except (ValueError, KeyError, TypeError) as e:
        raise IngestError(f"malformed tree dump: {e}") from e


def read_tree(path: Path, question: Optional[Question] = None) -> SearchTree:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IngestError(f"cannot read tree dump {path}: {e}") from e
    return load_tree(text, question)


def tree_to_dot(tree: SearchTree) -> str:
    """Graphviz rendering; one box per node labelled with depth, Q and N."""
    lines = ["digraph search_tree {", "  node [shape=box];"]
    nodes = tree.nodes()
    for node in nodes:
        label = f"depth={node.depth}\\nQ={node.q_value:.4f}\\nN={node.visits}"
        lines.append(f'  n{node.node_id} [label="{label}"];')
    for node in nodes:
        if node.parent is not None:
            lines.append(f"  n{node.parent.node_id} -> n{node.node_id};")
    lines.append("}")
    return "\n".join(lines) + "\n"
