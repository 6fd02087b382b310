"""
Synthetic multi-hop worlds for desk-scale runs of the search.

A world is a set of functional facts ``(subject, relation) -> object`` over pseudo-word entities
plus a list of k-hop chains. Every chain becomes one benchmark question with its own corpus of
one-sentence documents: the gold hop facts plus distractors.
"""

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

from ..errors import IngestError, InvalidArgumentError
from ..models import Document, Question

log = logging.getLogger(__name__)

RELATIONS = (
    "founder", "birthplace", "mentor", "employer", "spouse",
    "headquarters", "author", "director", "capital", "sibling",
)

PHRASINGS = (
    "What is the {rel} of {ent}?",
    "Who or what is the {rel} of {ent}?",
    "Which entity is recorded as the {rel} of {ent}?",
    "Identify the {rel} of {ent}.",
    "According to the records, what is {ent}'s {rel}?",
)

_CONSONANTS = "bdfghklmnprstvz"
_VOWELS = "aeiou"


def fact_sentence(subject: str, relation: str, obj: str) -> str:
    return f"The {relation} of {subject} is {obj}."


def phrase_sub_question(relation: str, entity: str, phrasing: int = 0) -> str:
    return PHRASINGS[phrasing].format(rel=relation, ent=entity)


def chain_question_text(entities: List[str], relations: List[str]) -> str:
    """'What is the r_k of the r_(k-1) of ... the r_1 of e_0?'"""
    text = entities[0]
    for relation in relations:
        text = f"the {relation} of {text}"
    return f"What is {text}?"


@dataclass
class HopChain:
    """One generated k-hop question with its gold decomposition and corpus."""
    id: str
    question: str
    entities: List[str]
    relations: List[str]
    corpus: List[Document] = field(default_factory=list)
    supporting_ids: List[str] = field(default_factory=list)

    @property
    def hops(self) -> int:
        return len(self.relations)

    @property
    def answer(self) -> str:
        return self.entities[-1]

    @property
    def sub_questions(self) -> List[str]:
        return [
            phrase_sub_question(relation, self.entities[i])
            for i, relation in enumerate(self.relations)
        ]

    def to_question(self) -> Question:
        return Question(
            id=self.id,
            text=self.question,
            gold_answer=self.answer,
            corpus=list(self.corpus),
            gold_support_ids=set(self.supporting_ids),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'id': self.id,
            'question': self.question,
            'answer': self.answer,
            'entities': self.entities,
            'relations': self.relations,
            'sub_questions': self.sub_questions,
            'contexts': [{'id': d.id, 'title': d.title, 'text': d.text} for d in self.corpus],
            'supporting_ids': self.supporting_ids,
        }

    def to_record(self) -> Dict[str, Any]:
        """Dataset JSON-lines record."""
        return {
            'id': self.id,
            'question': self.question,
            'answer': self.answer,
            'contexts': [{'id': d.id, 'title': d.title, 'text': d.text} for d in self.corpus],
            'supporting_ids': self.supporting_ids,
        }


@dataclass
class SyntheticWorld:
    """Facts, chains and the per-step error rate of the mock policy."""
    facts: Dict[Tuple[str, str], str]
    chains: List[HopChain]
    error_rate: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.error_rate <= 1.0:
            raise InvalidArgumentError(f"error_rate must be in [0, 1], got {self.error_rate}")
        self._by_question = {chain.question: chain for chain in self.chains}
        entities = {subject for subject, _ in self.facts} | set(self.facts.values())
        self.entities: List[str] = sorted(entities)
        self._entity_set = set(self.entities)

    def chain_for_question(self, text: str) -> Optional[HopChain]:
        return self._by_question.get(text.strip())

    def is_entity(self, token: str) -> bool:
        return token in self._entity_set

    def questions(self) -> List[Question]:
        return [chain.to_question() for chain in self.chains]

    def verify(self) -> None:
        """Check that every chain is answerable by following the facts."""
        for chain in self.chains:
            current = chain.entities[0]
            for i, relation in enumerate(chain.relations):
                obj = self.facts.get((current, relation))
                if obj != chain.entities[i + 1]:
                    raise InvalidArgumentError(
                        f"chain {chain.id}: hop {i + 1} ({relation} of {current}) does not resolve"
                    )
                current = obj
            corpus_text = {doc.id: doc.text for doc in chain.corpus}
            for i, doc_id in enumerate(chain.supporting_ids):
                expected = fact_sentence(chain.entities[i], chain.relations[i], chain.entities[i + 1])
                if corpus_text.get(doc_id) != expected:
                    raise InvalidArgumentError(f"chain {chain.id}: supporting document {doc_id} is wrong")
            if chain.question != chain_question_text(chain.entities, chain.relations):
                raise InvalidArgumentError(f"chain {chain.id}: question text does not match its chain")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'seed': self.seed,
            'error_rate': self.error_rate,
            'facts': [[s, r, o] for (s, r), o in sorted(self.facts.items())],
            'chains': [chain.to_dict() for chain in self.chains],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SyntheticWorld":
        try:
            facts = {(s, r): o for s, r, o in data['facts']}
            chains = [
                HopChain(
                    id=c['id'],
                    question=c['question'],
                    entities=list(c['entities']),
                    relations=list(c['relations']),
                    corpus=[Document(d['id'], d.get('title', ''), d['text']) for d in c['contexts']],
                    supporting_ids=list(c['supporting_ids']),
                )
                for c in data['chains']
            ]
            return cls(facts=facts, chains=chains, error_rate=float(data['error_rate']), seed=int(data['seed']))
        except (KeyError, TypeError, ValueError) as e:
            raise IngestError(f"malformed world file: {e}") from e


def _entity_names(rng: random.Random) -> Iterable[str]:
    """Endless stream of unique, capitalised 6-letter pseudo-words."""
    seen = set()
    while True:
        name = "".join(rng.choice(_CONSONANTS) + rng.choice(_VOWELS) for _ in range(3))
        if name not in seen:
            seen.add(name)
            yield name.capitalize()


def generate_world(
    hops: int,
    n_questions: int,
    error_rate: float = 0.0,
    seed: int = 0,
    distractors_per_hop: int = 1,
) -> SyntheticWorld:
    """Generate ``n_questions`` independent ``hops``-hop chains with distractor facts."""
    if hops < 1:
        raise InvalidArgumentError(f"hops must be >= 1, got {hops}")
    if n_questions < 0:
        raise InvalidArgumentError(f"n_questions must be >= 0, got {n_questions}")
    if not 1 <= distractors_per_hop < len(RELATIONS):
        raise InvalidArgumentError(f"distractors_per_hop must be in [1, {len(RELATIONS) - 1}]")

    rng = random.Random(seed)
    names = iter(_entity_names(rng))
    facts: Dict[Tuple[str, str], str] = {}
    chains: List[HopChain] = []

    for q in range(n_questions):
        qid = f"q{q:03d}"
        entities = [next(names) for _ in range(hops + 1)]
        relations = [rng.choice(RELATIONS) for _ in range(hops)]
        triples: List[Tuple[str, str, str]] = []

        for i, relation in enumerate(relations):
            triples.append((entities[i], relation, entities[i + 1]))
        n_gold = len(triples)

        for i, relation in enumerate(relations):
            others = rng.sample([r for r in RELATIONS if r != relation], distractors_per_hop)
            for other in others:
                # same relation, unrelated subject
                triples.append((next(names), relation, next(names)))
                # chain entity, other relation
                triples.append((entities[i], other, next(names)))

        for subject, relation, obj in triples:
            facts[(subject, relation)] = obj

        order = list(range(len(triples)))
        rng.shuffle(order)
        corpus: List[Document] = []
        gold_ids: Dict[int, str] = {}
        for position, triple_index in enumerate(order):
            subject, relation, obj = triples[triple_index]
            doc_id = f"{qid}-d{position:02d}"
            corpus.append(Document(id=doc_id, title=subject, text=fact_sentence(subject, relation, obj)))
            if triple_index < n_gold:
                gold_ids[triple_index] = doc_id

        chains.append(HopChain(
            id=qid,
            question=chain_question_text(entities, relations),
            entities=entities,
            relations=relations,
            corpus=corpus,
            supporting_ids=[gold_ids[i] for i in range(n_gold)],
        ))

    world = SyntheticWorld(facts=facts, chains=chains, error_rate=error_rate, seed=seed)
    world.verify()
    log.info(f"[mock-world] Generated {n_questions} {hops}-hop chains over {len(world.entities)} entities")
    return world


def save_world(world: SyntheticWorld, path: Path) -> Path:
    """Write the world JSON and the companion dataset file (same stem, ``.jsonl``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(world.to_dict(), indent=2) + "\n", encoding="utf-8")
    dataset_path = path.with_suffix(".jsonl")
    with open(dataset_path, "w", encoding="utf-8") as f:
        for chain in world.chains:
            f.write(json.dumps(chain.to_record()) + "\n")
    return dataset_path


def load_world(path: Path) -> SyntheticWorld:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise IngestError(f"cannot read world file {path}: {e}") from e
    return SyntheticWorld.from_dict(data)
