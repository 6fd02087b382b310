"""
Dataset ingestion: the JSON-lines benchmark format and converters from native benchmark files.

One record per line::

    {"id": ..., "question": ..., "answer": ...,
     "contexts": [{"id": ..., "title": ..., "text": ...}, ...],
     "supporting_ids": [...]}
"""

import json
import logging
import random
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Literal

from pydantic import BaseModel, Field, ValidationError

from .errors import IngestError, InvalidArgumentError
from .models import Document, Question

log = logging.getLogger(__name__)

SourceFormat = Literal["hotpotqa", "2wiki", "musique"]


class ContextRecord(BaseModel):
    id: str
    title: str = ""
    text: str = Field(min_length=1)


class QuestionRecord(BaseModel):
    id: str
    question: str = Field(min_length=1)
    answer: str
    contexts: List[ContextRecord] = Field(min_length=1)
    supporting_ids: List[str] = Field(default_factory=list)

    def to_question(self) -> Question:
        return Question(
            id=self.id,
            text=self.question,
            gold_answer=self.answer,
            corpus=[Document(id=c.id, title=c.title, text=c.text) for c in self.contexts],
            gold_support_ids=set(self.supporting_ids),
        )


def _first_error(error: ValidationError) -> str:
    issue = error.errors()[0]
    location = ".".join(str(part) for part in issue["loc"])
    return f"{location}: {issue['msg']}" if location else issue["msg"]


def read_questions(path: Path) -> List[Question]:
    """Parse every record of a dataset file, in file order."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise IngestError(f"cannot read dataset {path}: {e}") from e

    questions: List[Question] = []
    seen_ids = set()
    for line_number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = QuestionRecord.model_validate_json(line)
        except ValidationError as e:
            raise IngestError(_first_error(e), line_number) from e
        try:
            question = record.to_question()
        except InvalidArgumentError as e:
            raise IngestError(str(e), line_number) from e
        if question.id in seen_ids:
            raise IngestError(f"duplicate question id {question.id!r}", line_number)
        seen_ids.add(question.id)
        questions.append(question)
    return questions


def load_dataset(path: Path, sample_n: int, seed: int = 0) -> List[Question]:
    """Seeded uniform sample without replacement of ``sample_n`` questions (all when fewer)."""
    if sample_n <= 0:
        raise InvalidArgumentError(f"sample_n must be >= 1, got {sample_n}")
    questions = read_questions(path)
    sample = random.Random(seed).sample(questions, min(sample_n, len(questions)))
    log.info(f"[ingest] Sampled {len(sample)} of {len(questions)} questions from {path}")
    return sample


def _hotpot_style(items: Iterable[Dict[str, Any]]) -> Iterator[Dict[str, Any]]:
    """HotpotQA / 2WikiMultihopQA: context is [[title, [sentences]]], support is [[title, idx]]."""
    for item in items:
        qid = str(item['_id'])
        supporting_titles = {title for title, _ in item.get('supporting_facts', [])}
        contexts, supporting_ids = [], []
        for i, (title, sentences) in enumerate(item['context']):
            text = "".join(sentences).strip()
            if not text:
                continue
            doc_id = f"{qid}-{i}"
            contexts.append({'id': doc_id, 'title': title, 'text': text})
            if title in supporting_titles:
                supporting_ids.append(doc_id)
        yield {
            'id': qid,
            'question': item['question'],
            'answer': item['answer'],
            'contexts': contexts,
            'supporting_ids': supporting_ids,
        }


def _musique(items: Iterable[Dict[str, Any]]) -> Iterator[Dict[str, Any]]:
    for item in items:
        qid = str(item['id'])
        contexts, supporting_ids = [], []
        for paragraph in item['paragraphs']:
            text = paragraph['paragraph_text'].strip()
            if not text:
                continue
            doc_id = f"{qid}-{paragraph['idx']}"
            contexts.append({'id': doc_id, 'title': paragraph.get('title', ''), 'text': text})
            if paragraph.get('is_supporting'):
                supporting_ids.append(doc_id)
        yield {
            'id': qid,
            'question': item['question'],
            'answer': item['answer'],
            'contexts': contexts,
            'supporting_ids': supporting_ids,
        }


def _read_native(path: Path, source: SourceFormat) -> List[Dict[str, Any]]:
    text = Path(path).read_text(encoding="utf-8")
    if source == "musique":
        items = []
        for line_number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                items.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise IngestError(f"invalid JSON: {e}", line_number) from e
        return items
    try:
        items = json.loads(text)
    except json.JSONDecodeError as e:
        raise IngestError(f"invalid JSON in {path}: {e}") from e
    if not isinstance(items, list):
        raise IngestError(f"{path}: expected a JSON array of questions")
    return items


def convert_dataset(source_path: Path, source: SourceFormat, out_path: Path) -> int:
    """Convert a native benchmark file into the dataset JSON-lines format; returns the record count."""
    try:
        items = _read_native(source_path, source)
    except OSError as e:
        raise IngestError(f"cannot read {source_path}: {e}") from e

    converter = _musique if source == "musique" else _hotpot_style
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    try:
        with open(out_path, "w", encoding="utf-8") as f:
            for record in converter(items):
                f.write(json.dumps(record) + "\n")
                count += 1
    except (KeyError, TypeError, ValueError) as e:
        raise IngestError(f"record {count + 1} of {source_path} is not valid {source}: {e}") from e
    log.info(f"[ingest] Converted {count} {source} records to {out_path}")
    return count
