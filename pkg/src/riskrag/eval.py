"""
Evaluation: metrics over finished searches, the vanilla RAG baseline and the experiment runner.
"""

import asyncio
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from rich.console import Console
from rich.table import Table

from .backends.base import Backends, GenerationRequest, MeteredBackends
from .config import AppConfig
from .errors import ConfigError, RiskRagError, SearchError
from .ingest import load_dataset
from .mcts import FINAL_ANSWER_MAX_TOKENS, TreeSearch
from .metrics import answer_f1, covered_em, set_f1
from .models import Question, ReasoningState, RunRecord, SearchTree
from .prompts import ORIGINAL_QUESTION, REASONING_STATE, PromptLibrary, default_library
from .retrieval import Bm25Retriever, Retriever
from .tree_io import tree_to_dot, write_tree

log = logging.getLogger(__name__)

PATH_F1_K = 2

__all__ = [
    "Aggregate",
    "ExperimentResult",
    "ExperimentRunner",
    "aggregate_records",
    "covered_em",
    "load_dataset",
    "path_f1",
    "run_experiment",
    "run_vanilla_rag",
]


def path_f1(question: Question, state: ReasoningState, retriever: Retriever, k: int = PATH_F1_K) -> float:
    """Document F1 of a retrieval over the question plus the whole reasoning state."""
    query = f"{question.text} {state.render()}".strip()
    retrieved = [doc_id for doc_id, _ in retriever.search(query, k)]
    return set_f1(retrieved, question.gold_support_ids)


async def run_vanilla_rag(
    question: Question,
    backends: Backends,
    retriever: Retriever,
    k: int = 2,
    library: Optional[PromptLibrary] = None,
    use_answer_f1: bool = False,
) -> RunRecord:
    """One retrieval with the question, one answer generated over the retrieved documents."""
    library = library or default_library()
    docs = retriever.retrieve(question.text, k)
    prompt = library.render("final_answer", {
        ORIGINAL_QUESTION: question.text,
        REASONING_STATE: " ".join(doc.text for doc in docs),
    })
    answer = (await backends.policy.generate(GenerationRequest(
        prompt=prompt, temperature=0.0, n_samples=1, max_tokens=FINAL_ANSWER_MAX_TOKENS,
    )))[0].strip()

    record = RunRecord(question_id=question.id, mode="vanilla_rag", final_answer=answer)
    if question.gold_answer:
        record.em = covered_em(answer, question.gold_answer)
        if use_answer_f1:
            record.f1 = answer_f1(answer, question.gold_answer)
        else:
            record.f1 = set_f1([doc.id for doc in docs], question.gold_support_ids)
    return record


@dataclass
class Aggregate:
    """Run-level summary; percentages in [0, 100], wall time in minutes."""
    mode: str
    n_questions: int = 0
    n_failed: int = 0
    em_pct: float = 0.0
    f1_pct: float = 0.0
    pass_1_pct: Optional[float] = None
    pass_n_pct: Optional[float] = None
    mean_wall_time: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'mode': self.mode,
            'n_questions': self.n_questions,
            'n_failed': self.n_failed,
            'em_pct': self.em_pct,
            'f1_pct': self.f1_pct,
            'pass_1_pct': self.pass_1_pct,
            'pass_n_pct': self.pass_n_pct,
            'mean_wall_time': self.mean_wall_time,
        }


def _pct(values: List[bool]) -> Optional[float]:
    if not values:
        return None
    return 100.0 * sum(1 for v in values if v) / len(values)


def aggregate_records(records: List[RunRecord], mode: str) -> Aggregate:
    if not records:
        return Aggregate(mode=mode)
    n = len(records)
    return Aggregate(
        mode=mode,
        n_questions=n,
        n_failed=sum(1 for r in records if r.error is not None),
        em_pct=100.0 * sum(1 for r in records if r.em) / n,
        f1_pct=100.0 * sum(r.f1 for r in records) / n,
        pass_1_pct=_pct([r.pass_1 for r in records if r.pass_1 is not None]),
        pass_n_pct=_pct([r.pass_n for r in records if r.pass_n is not None]),
        mean_wall_time=sum(r.wall_time for r in records) / n / 60.0,
    )


def summary_table(aggregate: Aggregate) -> Table:
    def fmt(value: Optional[float]) -> str:
        return "-" if value is None else f"{value:.2f}"

    table = Table(show_header=True, header_style="bold blue", title="Experiment summary")
    table.add_column("Mode", style="bold")
    table.add_column("Questions", justify="right")
    table.add_column("Failed", justify="right")
    table.add_column("EM %", justify="right")
    table.add_column("F1 %", justify="right")
    table.add_column("Pass@1 %", justify="right")
    table.add_column("Pass@N %", justify="right")
    table.add_column("Time (min)", justify="right")
    table.add_row(
        aggregate.mode,
        str(aggregate.n_questions),
        str(aggregate.n_failed),
        fmt(aggregate.em_pct),
        fmt(aggregate.f1_pct),
        fmt(aggregate.pass_1_pct),
        fmt(aggregate.pass_n_pct),
        f"{aggregate.mean_wall_time:.4f}",
    )
    return table


def render_summary_text(aggregate: Aggregate, width: int = 100) -> str:
    """Fixed-width plain-text rendering of the summary table."""
    buffer = io.StringIO()
    console = Console(file=buffer, width=width, color_system=None, force_terminal=False)
    console.print(summary_table(aggregate))
    return buffer.getvalue()


@dataclass
class ExperimentResult:
    records: List[RunRecord] = field(default_factory=list)
    aggregate: Optional[Aggregate] = None

    @property
    def failed(self) -> bool:
        return any(r.error is not None for r in self.records)


class ExperimentRunner:
    """Runs one evaluation mode over a list of questions with a bounded worker pool."""

    def __init__(
        self,
        config: AppConfig,
        backends: Backends,
        output_dir: Optional[Path] = None,
        library: Optional[PromptLibrary] = None,
        clock: Callable[[], float] = time.perf_counter,
    ):
        self.config = config
        self.backends = backends
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.library = library or default_library()
        self.clock = clock
        self.mode = config.eval.mode
        self.search_config = config.search_for_mode()
        # Mock runs must stay byte-identical across repeats.
        self.record_timing = config.eval.record_timing and config.backend.kind != "mock"

    @property
    def tree_dir(self) -> Optional[Path]:
        if self.output_dir is None or self.mode == "vanilla_rag":
            return None
        return self.output_dir / "trees"

    def _trace_callback(self, question: Question):
        if not self.config.eval.trace or self.tree_dir is None:
            return None
        trace_dir = self.tree_dir / "trace"

        def checkpoint(tree: SearchTree, iteration: int) -> None:
            write_tree(tree, trace_dir / f"{question.id}-{iteration:04d}.json")

        return checkpoint

    def _write_tree(self, tree: SearchTree, question: Question) -> None:
        if self.tree_dir is None or tree is None:
            return
        write_tree(tree, self.tree_dir / f"{question.id}.json")
        if self.config.eval.trace:
            (self.tree_dir / f"{question.id}.dot").write_text(tree_to_dot(tree), encoding="utf-8")

    async def _search_question(self, question: Question, backends: Backends, retriever: Retriever) -> RunRecord:
        search = TreeSearch(
            question, backends, self.search_config,
            risk_params=self.config.risk,
            retriever=retriever,
            library=self.library,
            trace_callback=self._trace_callback(question),
        )
        try:
            tree = await search.run()
        except SearchError as e:
            self._write_tree(e.tree, question)
            raise
        self._write_tree(tree, question)

        result = await search.pass_at_n()
        best = result.best
        record = RunRecord(
            question_id=question.id,
            mode=self.mode,
            final_answer=best.final_answer,
            pass_1=result.pass_1,
            pass_n=result.pass_n,
            trajectory=best.steps(),
        )
        if question.gold_answer:
            record.em = covered_em(best.final_answer, question.gold_answer)
            if self.config.eval.answer_f1:
                record.f1 = answer_f1(best.final_answer, question.gold_answer)
            else:
                record.f1 = path_f1(question, best.state, retriever)
        return record

    async def run_question(self, question: Question) -> RunRecord:
        """Evaluate one question; failures become an error record."""
        metered: MeteredBackends = self.backends.metered()
        start = self.clock()
        try:
            retriever = Bm25Retriever(question.corpus, self.config.retrieval)
            if self.mode == "vanilla_rag":
                record = await run_vanilla_rag(
                    question, metered, retriever,
                    k=self.search_config.top_k_docs,
                    library=self.library,
                    use_answer_f1=self.config.eval.answer_f1,
                )
            else:
                record = await self._search_question(question, metered, retriever)
        except RiskRagError as e:
            log.warning(f"[runner] Question {question.id} failed: {e}")
            record = RunRecord(question_id=question.id, mode=self.mode, error=str(e))

        record.wall_time = self.clock() - start if self.record_timing else 0.0
        record.generation_calls = metered.generation_calls
        record.scored_tokens = metered.scored_tokens
        return record

    async def run(self, questions: List[Question]) -> ExperimentResult:
        semaphore = asyncio.Semaphore(self.config.eval.workers)
        records: List[Optional[RunRecord]] = [None] * len(questions)
        records_file = None
        next_to_flush = 0

        if self.output_dir is not None:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            records_file = open(self.output_dir / "records.jsonl", "w", encoding="utf-8")

        def flush_ready() -> None:
            nonlocal next_to_flush
            while next_to_flush < len(records) and records[next_to_flush] is not None:
                if records_file is not None:
                    records_file.write(json.dumps(records[next_to_flush].to_dict()) + "\n")
                    records_file.flush()
                next_to_flush += 1

        async def worker(index: int, question: Question) -> None:
            async with semaphore:
                log.info(f"[runner] Question {index + 1}/{len(questions)}: {question.id}")
                records[index] = await self.run_question(question)
            flush_ready()

        try:
            await asyncio.gather(*(worker(i, q) for i, q in enumerate(questions)))
        finally:
            if records_file is not None:
                records_file.close()

        result = ExperimentResult(records=list(records))
        result.aggregate = aggregate_records(result.records, self.mode)
        if self.output_dir is not None:
            (self.output_dir / "summary.json").write_text(
                json.dumps(result.aggregate.to_dict(), indent=2) + "\n", encoding="utf-8"
            )
            (self.output_dir / "summary.txt").write_text(
                render_summary_text(result.aggregate), encoding="utf-8"
            )
        return result


async def run_experiment(
    config: AppConfig,
    backends: Backends,
    questions: Optional[List[Question]] = None,
    output_dir: Optional[Path] = None,
    clock: Callable[[], float] = time.perf_counter,
) -> ExperimentResult:
    """Run ``config.eval.mode`` over the dataset (or the given questions)."""
    if questions is None:
        if config.dataset.path is None:
            raise ConfigError("no dataset configured (--dataset)")
        questions = load_dataset(config.dataset.path, config.dataset.sample_n, config.dataset.seed)
    runner = ExperimentRunner(config, backends, output_dir=output_dir, clock=clock)
    return await runner.run(questions)
