"""
Prompt templates: loading, rendering and parsing of structured model output.

Templates ship as text assets in ``riskrag/templates`` and can be overridden one file at a time
from a prompts directory (``<name>.txt``).
"""

import logging
import re
from importlib import resources
from pathlib import Path
from string import Formatter
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .errors import ParseError, TemplateError
from .models import Document

log = logging.getLogger(__name__)

TEMPLATE_NAMES = ("decompose", "intermediate_answer", "final_answer", "risk_reconstruct", "verifier")

NO_FACTS_SENTINEL = "No directly relevant facts found."

ORIGINAL_QUESTION = "original question"
REASONING_STATE = "reasoning state"
RETRIEVED_DOCUMENTS = "retrieved documents"
SUB_QUESTION = "sub-question"
SUB_QUESTIONS = "sub-questions"

_SUB_QUESTION_MARKER = re.compile(r"sub-?\s?question\s*:", re.IGNORECASE)
_THOUGHT_MARKER = re.compile(r"thought\s*:", re.IGNORECASE)
_NUMBER = re.compile(r"[-+]?(?:\d+(?:\.\d+)?|\.\d+)")


class PromptTemplate:
    """Template with ``{placeholder}`` fields; placeholder names may contain spaces and dashes."""

    def __init__(self, name: str, body: str):
        self.name = name
        self.body = body
        self._formatter = Formatter()

    def get_fields(self) -> List[str]:
        fields = []
        for _, field_name, _, _ in self._formatter.parse(self.body):
            if field_name is not None and field_name not in fields:
                fields.append(field_name)
        return fields

    def render(self, bindings: Mapping[str, str]) -> str:
        for field_name in self.get_fields():
            if field_name not in bindings:
                raise TemplateError(field_name, self.name)
        return self.body.format_map(dict(bindings))


class PromptLibrary:
    """The five templates, from the embedded assets or an override directory."""

    def __init__(self, prompts_dir: Optional[Path] = None):
        self.templates: Dict[str, PromptTemplate] = {}
        for name in TEMPLATE_NAMES:
            body = self._load_body(name, prompts_dir)
            self.templates[name] = PromptTemplate(name, body)

    @staticmethod
    def _load_body(name: str, prompts_dir: Optional[Path]) -> str:
        if prompts_dir is not None:
            override = Path(prompts_dir) / f"{name}.txt"
            if override.exists():
                log.info(f"[prompts] Using override template {override}")
                return override.read_text(encoding="utf-8").rstrip("\n")
        asset = resources.files("riskrag") / "templates" / f"{name}.txt"
        return asset.read_text(encoding="utf-8").rstrip("\n")

    def render(self, template_name: str, bindings: Mapping[str, str]) -> str:
        template = self.templates.get(template_name)
        if template is None:
            raise TemplateError(template_name, template_name)
        return template.render(bindings)


_default_library: Optional[PromptLibrary] = None


def default_library() -> PromptLibrary:
    global _default_library
    if _default_library is None:
        _default_library = PromptLibrary()
    return _default_library


def render(template_name: str, bindings: Mapping[str, str]) -> str:
    """Render one of the embedded templates."""
    return default_library().render(template_name, bindings)


def format_documents(docs: Sequence[Document]) -> str:
    """Numbered list, one ``N. title: text`` line per document."""
    lines = []
    for i, doc in enumerate(docs, start=1):
        lines.append(f"{i}. {doc.title}: {doc.text}" if doc.title else f"{i}. {doc.text}")
    return "\n".join(lines)


def parse_decomposition(raw: str) -> Tuple[str, str]:
    """Return (thought, sub_question) from a decomposition completion.

    The last ``Sub-question:`` marker wins; the sub-question is the rest of that line, or the
    next non-empty line when the marker ends its line.
    """
    markers = list(_SUB_QUESTION_MARKER.finditer(raw))
    if not markers:
        raise ParseError("no 'Sub-question:' marker in decomposition output")
    last = markers[-1]

    sub_question = ""
    for line in raw[last.end():].splitlines():
        if line.strip():
            sub_question = line.strip()
            break
    if not sub_question:
        raise ParseError("empty sub-question in decomposition output")

    thought = ""
    thought_match = _THOUGHT_MARKER.search(raw)
    if thought_match and thought_match.start() < last.start():
        end = markers[0].start() if markers[0].start() > thought_match.end() else last.start()
        thought = raw[thought_match.end():end].strip()
    return thought, sub_question


def parse_verifier_score(raw: str) -> float:
    """First number in the reply, clamped to [0, 10] and scaled to [0, 1]."""
    match = _NUMBER.search(raw)
    if match is None:
        raise ParseError(f"no numeric score in verifier output {raw!r}")
    score = min(max(float(match.group()), 0.0), 10.0)
    return score / 10.0


def is_no_facts(result: str) -> bool:
    return result.strip() == NO_FACTS_SENTINEL
