#!/usr/bin/env python3
"""
riskrag command line: single-question searches, experiments, mock worlds and tree inspection.

Exit codes: 0 success, 2 usage/config/input errors, 3 backend failures, 4 experiment finished with
per-question failures.
"""

import asyncio
import functools
import os
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import click
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from . import __version__
from .backends import build_backends, generate_world, save_world
from .config import (
    AppConfig,
    Bm25Params,
    BackendConfig,
    DatasetConfig,
    EvalConfig,
    RiskParams,
    SearchConfig,
    build_app_config,
    load_config_file,
)
from .errors import ConfigError, RiskRagError
from .eval import ExperimentRunner, run_vanilla_rag, summary_table
from .ingest import convert_dataset, load_dataset, read_questions
from .logging_setup import configure_logging
from .mcts import TreeSearch
from .metrics import covered_em
from .models import Document, Question
from .prompts import PromptLibrary
from .retrieval import Bm25Retriever
from .tree_io import dump_tree, read_tree, tree_to_dot, write_tree

console = Console()
err_console = Console(stderr=True)

EXIT_PARTIAL_FAILURE = 4
ENV_PREFIX = "RISKRAG_"


def _default(model, name: str) -> Any:
    return model.model_fields[name].get_default(call_default_factory=True)


def _env(name: str) -> str:
    return f"{ENV_PREFIX}{name.upper()}"


def _option(*decls: str, name: str, **kwargs) -> Callable:
    return click.option(*decls, name, envvar=_env(name), show_default=True, show_envvar=True, **kwargs)


PATH = click.Path(path_type=Path)

SEARCH_OPTIONS = [
    _option("--iterations", name="iterations", type=int, default=_default(SearchConfig, "iterations"),
            help="Search iterations per question."),
    _option("--exploration-weight", name="exploration_weight", type=float,
            default=_default(SearchConfig, "exploration_weight"), help="UCT exploration weight w."),
    _option("--max-depth", name="max_depth", type=int, default=_default(SearchConfig, "max_depth"),
            help="Search depth (decomposition steps)."),
    _option("--width-schedule", name="width_schedule", type=str,
            default=",".join(str(w) for w in _default(SearchConfig, "width_schedule")),
            help="Maximum children per node, one entry per depth."),
    _option("--rollout-samples", name="rollout_samples", type=int,
            default=_default(SearchConfig, "rollout_samples"), help="Candidates sampled per rollout step."),
    _option("--temperature", name="temperature", type=float, default=_default(SearchConfig, "temperature"),
            help="Sampling temperature."),
    _option("--top-k-docs", name="top_k_docs", type=int, default=_default(SearchConfig, "top_k_docs"),
            help="Documents retrieved per sub-question."),
    _option("--value-mode", name="value_mode", type=click.Choice(["risk_value", "uniform", "llm_verifier"]),
            default=_default(SearchConfig, "value_mode"), help="Node value estimator (overridden by --mode)."),
    _option("--seed", name="seed", type=int, default=_default(SearchConfig, "seed"), help="Search seed."),
    _option("--max-tokens", name="max_tokens", type=int, default=_default(SearchConfig, "max_tokens"),
            help="Generation token limit."),
    _option("--trace-every", name="trace_every", type=int, default=_default(SearchConfig, "trace_every"),
            help="Write a tree checkpoint every N iterations (with --trace)."),
    _option("--alpha", name="alpha", type=float, default=_default(RiskParams, "alpha"),
            help="Risk sigmoid scale."),
    _option("--beta", name="beta", type=float, default=_default(RiskParams, "beta"),
            help="Risk sigmoid midpoint."),
    _option("--paper-literal-sigmoid/--no-paper-literal-sigmoid", name="paper_literal_sigmoid",
            default=_default(RiskParams, "paper_literal_sigmoid"),
            help="Use the increasing 1 - sigmoid form of the risk-value map."),
    _option("--scoring-fallback", name="scoring_fallback", type=click.Choice(["uniform", "llm_verifier"]),
            default=None, help="Value mode used when the scorer cannot return logprobs."),
    _option("--k1", name="k1", type=float, default=_default(Bm25Params, "k1"), help="BM25 k1."),
    _option("--b", name="b", type=float, default=_default(Bm25Params, "b"), help="BM25 b."),
    _option("--backend", name="backend", type=click.Choice(["http", "mock"]),
            default=_default(BackendConfig, "kind"), help="Policy backend."),
    _option("--endpoint-url", name="endpoint_url", type=str, default=_default(BackendConfig, "endpoint_url"),
            help="OpenAI-compatible server URL."),
    _option("--model", name="model", type=str, default=_default(BackendConfig, "model"), help="Policy model."),
    _option("--scoring-endpoint-url", name="scoring_endpoint_url", type=str, default=None,
            help="Separate scoring server URL."),
    _option("--scoring-model", name="scoring_model", type=str, default=None, help="Separate scoring model."),
    _option("--api-key-env", name="api_key_env", type=str, default=_default(BackendConfig, "api_key_env"),
            help="Environment variable holding the API key."),
    _option("--request-timeout", name="request_timeout", type=float,
            default=_default(BackendConfig, "request_timeout"), help="HTTP timeout in seconds."),
    _option("--world", name="world", type=PATH, default=None, help="Synthetic world file for --backend mock."),
    _option("--dataset", name="dataset", type=PATH, default=None, help="Dataset JSON-lines file."),
    _option("--mode", name="mode", type=click.Choice(["arise", "vanilla_rag", "mcts_uniform", "mcts_verifier"]),
            default=_default(EvalConfig, "mode"), help="Evaluation mode."),
    _option("--output-dir", name="output_dir", type=PATH, default=_default(EvalConfig, "output_dir"),
            help="Directory for records, summaries and tree dumps."),
    _option("--trace/--no-trace", name="trace", default=_default(EvalConfig, "trace"),
            help="Also write DOT renderings and periodic tree checkpoints."),
    click.option("--prompts-dir", type=click.Path(exists=True, file_okay=False, path_type=Path), default=None,
                 help="Directory of <template>.txt prompt overrides."),
]

EVAL_OPTIONS = [
    _option("--sample-n", name="sample_n", type=int, default=_default(DatasetConfig, "sample_n"),
            help="Questions sampled from the dataset."),
    _option("--dataset-seed", name="dataset_seed", type=int, default=_default(DatasetConfig, "seed"),
            help="Sampling seed."),
    _option("--answer-f1/--no-answer-f1", name="answer_f1", default=_default(EvalConfig, "answer_f1"),
            help="Report answer-token F1 instead of retrieval F1."),
    _option("--record-timing/--no-record-timing", name="record_timing",
            default=_default(EvalConfig, "record_timing"),
            help="Record wall time per question (never with --backend mock)."),
    _option("--workers", name="workers", type=int, default=os.cpu_count() or 1,
            help="Questions evaluated concurrently."),
]


def apply_options(options: List[Callable]) -> Callable:
    def decorator(f: Callable) -> Callable:
        for option in reversed(options):
            f = option(f)
        return f
    return decorator


def handle_errors(f: Callable) -> Callable:
    """Map package errors to their exit codes."""
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except RiskRagError as e:
            err_console.print(f"error: {e}", style="bold red", markup=False, highlight=False)
            raise click.exceptions.Exit(e.exit_code)
    return wrapper


@click.group()
@click.version_option(__version__, prog_name="riskrag")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              envvar="RISKRAG_CONFIG", help="TOML config file ([search], [risk], [retrieval], [backend], [dataset], [eval]).")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
              default=None, help="Explicit log level.")
@click.pass_context
def cli(ctx: click.Context, config_path: Optional[Path], verbose: bool, log_level: Optional[str]):
    """Risk-guided tree search for multi-hop retrieval-augmented question answering."""
    configure_logging(verbose=verbose, level=log_level)
    if config_path is not None:
        try:
            file_options = load_config_file(config_path)
        except ConfigError as e:
            raise click.BadParameter(str(e), param_hint="--config")
        ctx.default_map = {name: dict(file_options) for name in ("run", "eval", "validate-config")}


def _library(prompts_dir: Optional[Path]) -> Optional[PromptLibrary]:
    return PromptLibrary(prompts_dir) if prompts_dir is not None else None


def _find_question(questions: List[Question], question_id: Optional[str], text: Optional[str]) -> Question:
    if question_id is not None:
        for question in questions:
            if question.id == question_id:
                return question
        raise ConfigError(f"question id {question_id!r} not found in dataset")
    for question in questions:
        if question.text == text:
            return question
    # Free text: search every corpus, no gold answer.
    corpus: Dict[str, Document] = {}
    for question in questions:
        for doc in question.corpus:
            corpus.setdefault(doc.id, doc)
    return Question(id="adhoc", text=text, gold_answer="", corpus=list(corpus.values()))


def _print_trajectory(question: Question, steps: List[Dict[str, str]], answer: str) -> None:
    console.print(Panel(question.text, title=f"Question {question.id}", border_style="blue"))
    table = Table(show_header=True, header_style="bold blue")
    table.add_column("#", justify="right")
    table.add_column("Sub-question", style="bold")
    table.add_column("Intermediate result")
    for i, step in enumerate(steps, start=1):
        table.add_row(str(i), step['sub_question'], step['intermediate_result'])
    if steps:
        console.print(table)
    console.print(f"Answer: {answer}", markup=False, highlight=False)


async def _run_one(config: AppConfig, question: Question, library: Optional[PromptLibrary]) -> None:
    backends = build_backends(config.backend, seed=config.search.seed)
    try:
        retriever = Bm25Retriever(question.corpus, config.retrieval)
        if config.eval.mode == "vanilla_rag":
            record = await run_vanilla_rag(
                question, backends, retriever, k=config.search.top_k_docs, library=library,
            )
            _print_trajectory(question, [], record.final_answer)
            if question.gold_answer:
                console.print(f"Covered EM: {record.em}", markup=False, highlight=False)
            return

        search = TreeSearch(
            question, backends, config.search_for_mode(),
            risk_params=config.risk, retriever=retriever, library=library,
        )
        tree = await search.run()
        result = await search.pass_at_n()
        tree_path = write_tree(tree, config.eval.output_dir / "trees" / f"{question.id}.json")
        if config.eval.trace:
            tree_path.with_suffix(".dot").write_text(tree_to_dot(tree), encoding="utf-8")

        _print_trajectory(question, result.best.steps(), result.best.final_answer)
        if question.gold_answer:
            console.print(
                f"Covered EM: {covered_em(result.best.final_answer, question.gold_answer)}  "
                f"Pass@1: {result.pass_1}  Pass@N: {result.pass_n}",
                markup=False, highlight=False,
            )
    finally:
        await backends.aclose()


@cli.command()
@apply_options(SEARCH_OPTIONS)
@click.option("--question-id", type=str, default=None, help="Dataset question id.")
@click.option("--question", "question_text", type=str, default=None, help="Question text.")
@handle_errors
def run(question_id: Optional[str], question_text: Optional[str], prompts_dir: Optional[Path], **options):
    """Search one question and print its best trajectory and answer."""
    if (question_id is None) == (question_text is None):
        raise click.UsageError("give exactly one of --question-id or --question")
    config = build_app_config(options)
    if config.dataset.path is None:
        raise ConfigError("run needs a dataset (--dataset)")
    question = _find_question(read_questions(config.dataset.path), question_id, question_text)
    asyncio.run(_run_one(config, question, _library(prompts_dir)))


@cli.command(name="eval")
@apply_options(SEARCH_OPTIONS + EVAL_OPTIONS)
@handle_errors
def eval_command(prompts_dir: Optional[Path], **options):
    """Run an experiment over a sampled dataset and print the summary table."""
    config = build_app_config(options)
    if config.dataset.path is None:
        raise ConfigError("eval needs a dataset (--dataset)")

    async def _run():
        questions = load_dataset(config.dataset.path, config.dataset.sample_n, config.dataset.seed)
        backends = build_backends(config.backend, seed=config.search.seed)
        try:
            runner = ExperimentRunner(config, backends, output_dir=config.eval.output_dir,
                                      library=_library(prompts_dir))
            return await runner.run(questions)
        finally:
            await backends.aclose()

    result = asyncio.run(_run())
    console.print(summary_table(result.aggregate))
    if result.failed:
        raise click.exceptions.Exit(EXIT_PARTIAL_FAILURE)


@cli.command()
@click.option("--hops", type=int, required=True, help="Hops per question.")
@click.option("--n-questions", type=int, default=20, show_default=True, help="Questions to generate.")
@click.option("--error-rate", type=click.FloatRange(0.0, 1.0), default=0.0, show_default=True,
              help="Probability that the mock states a wrong intermediate answer.")
@click.option("--seed", type=int, default=0, show_default=True, help="Generator seed.")
@click.option("--distractors", type=int, default=1, show_default=True,
              help="Distractor facts of each kind per hop.")
@click.option("--max-depth", type=int, default=_default(SearchConfig, "max_depth"), show_default=True,
              envvar=_env("max_depth"), help="Search depth the world must fit in.")
@click.option("--out", "out_path", type=PATH, required=True, help="World JSON path; the dataset goes next to it.")
@handle_errors
def mockgen(hops: int, n_questions: int, error_rate: float, seed: int, distractors: int,
            max_depth: int, out_path: Path):
    """Generate a synthetic multi-hop world and its dataset file."""
    if not 1 <= hops <= max_depth:
        raise click.BadParameter(f"hops must be between 1 and max depth {max_depth}", param_hint="--hops")
    world = generate_world(hops, n_questions, error_rate=error_rate, seed=seed, distractors_per_hop=distractors)
    dataset_path = save_world(world, out_path)
    console.print(f"World: {out_path}", markup=False, highlight=False)
    console.print(f"Dataset: {dataset_path}", markup=False, highlight=False)


@cli.command()
@click.argument("tree_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--format", "output_format", type=click.Choice(["json", "dot"]), default="json", show_default=True)
@handle_errors
def inspect(tree_path: Path, output_format: str):
    """Print a tree dump as JSON or Graphviz DOT."""
    tree = read_tree(tree_path)
    click.echo(dump_tree(tree) if output_format == "json" else tree_to_dot(tree), nl=False)


@cli.command(name="validate-config")
@apply_options(SEARCH_OPTIONS + EVAL_OPTIONS)
@handle_errors
def validate_config(prompts_dir: Optional[Path], **options):
    """Resolve flags, environment and config file, validate, and print the result."""
    config = build_app_config(options)
    if prompts_dir is not None:
        PromptLibrary(prompts_dir)
    click.echo(config.model_dump_json(indent=2))


@cli.command()
@click.argument("source_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--format", "source_format", type=click.Choice(["hotpotqa", "2wiki", "musique"]), required=True)
@click.option("--out", "out_path", type=PATH, required=True)
@handle_errors
def convert(source_path: Path, source_format: str, out_path: Path):
    """Convert a native benchmark file into the dataset JSON-lines format."""
    count = convert_dataset(source_path, source_format, out_path)
    console.print(f"Wrote {count} records to {out_path}", markup=False, highlight=False)


def main():
    cli(prog_name="riskrag")


if __name__ == "__main__":
    main()
