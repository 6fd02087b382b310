import asyncio
import math

import pytest

from riskrag.backends import Backends, MockPolicyBackend
from riskrag.errors import BackendError, ExpansionError, InvalidArgumentError, SearchError
from riskrag.mcts import (
    TreeSearch,
    aggregate_children,
    backpropagate,
    greedy_chain_config,
    is_fully_expanded,
    pass_at_n,
    run_search,
    select,
    uct,
)
from riskrag.models import Action, Document, Question, ReasoningState, SearchNode, SearchTree
from riskrag.tree_io import dump_tree

QUESTION = Question(
    id="q",
    text="Who founded Acme?",
    gold_answer="Bob",
    corpus=[Document("d1", "Acme", "The founder of Acme is Bob."), Document("d2", "Zeta", "Zeta is a city.")],
    gold_support_ids={"d1"},
)
FACT = "The founder of Acme is Bob."
VALUE_AT_RISK_ONE = 1 / (1 + math.exp(-1.0))


def node(q_value, visits, children=()):
    parent = SearchNode(state=ReasoningState(), q_value=q_value, visits=visits)
    for child in children:
        child.parent = parent
        child.depth = parent.depth + 1
        parent.children.append(child)
    return parent


def scripted_search(fake_backend_cls, config, decompose=None, logprobs=None):
    """TreeSearch over QUESTION with a backend that answers every sub-question with FACT."""
    decompose = decompose or (lambda req, j: f"Thought: t\nSub-question: Q{j}?")

    def reply(req, j):
        if req.prompt.startswith("Your task is to decompose"):
            return decompose(req, j)
        if req.prompt.startswith("Your task is to answer the following"):
            return FACT
        return "Bob"

    backend = fake_backend_cls(reply=reply, logprobs=logprobs or [-1.0])
    search = TreeSearch(QUESTION, Backends(policy=backend), config)
    asyncio.run(search.initialize())
    return search, backend


def solve_rate(world, backends, config):
    solved = 0
    for question in world.questions():
        tree = asyncio.run(run_search(question, backends, config))
        result = asyncio.run(pass_at_n(tree, backends))
        assert result.pass_n or not result.pass_1
        solved += result.pass_1
    return solved


class TestUct:
    def test_formula(self):
        child = SearchNode(state=ReasoningState(), q_value=0.5, visits=2)
        assert uct(child, 8, 1.4) == pytest.approx(0.5 + 1.4 * math.sqrt(math.log(8) / 2), abs=1e-9)
        assert uct(child, 8, 1.4) == pytest.approx(1.9276, abs=1e-4)

    def test_unvisited_child_is_infinite(self):
        assert uct(SearchNode(state=ReasoningState()), 3, 1.4) == math.inf

    def test_zero_weight_is_pure_exploitation(self):
        child = SearchNode(state=ReasoningState(), q_value=0.3, visits=4)
        assert uct(child, 10, 0.0) == pytest.approx(0.3)

    def test_parent_visits_must_be_positive(self):
        with pytest.raises(InvalidArgumentError):
            uct(SearchNode(state=ReasoningState(), visits=1), 0, 1.4)


class TestBackpropagate:
    def test_weighted_mean_of_children(self):
        parent = node(0.0, 4, [SearchNode(ReasoningState(), q_value=0.8, visits=3),
                               SearchNode(ReasoningState(), q_value=0.2, visits=1)])
        assert aggregate_children(parent) == pytest.approx(0.65)

    def test_equal_children(self):
        parent = node(0.0, 3, [SearchNode(ReasoningState(), q_value=0.5, visits=1),
                               SearchNode(ReasoningState(), q_value=0.5, visits=1)])
        assert aggregate_children(parent) == pytest.approx(0.5)

    def test_childless_node_keeps_value(self):
        assert aggregate_children(node(0.7, 1)) == pytest.approx(0.7)

    def test_leaf_running_mean_and_ancestors(self):
        leaf = SearchNode(ReasoningState(), q_value=0.4, visits=1)
        sibling = SearchNode(ReasoningState(), q_value=0.9, visits=1)
        root = node(0.6, 2, [leaf, sibling])

        backpropagate(leaf, 0.8)

        assert (leaf.q_value, leaf.visits) == (pytest.approx(0.6), 2)
        assert root.visits == 3
        assert root.q_value == pytest.approx((0.6 * 2 + 0.9 * 1) / 3)


class TestSelect:
    def test_returns_best_child_when_root_fully_expanded(self, search_config):
        config = search_config(max_depth=1, width_schedule=[2])
        good = SearchNode(ReasoningState(("a",)), q_value=0.9, visits=1)
        bad = SearchNode(ReasoningState(("b",)), q_value=0.1, visits=1)
        root = node(0.5, 3, [bad, good])
        tree = SearchTree(root=root, question=QUESTION, config_snapshot={}, rng_seed=0)
        assert select(tree, config) is good

    def test_stops_at_partially_expanded_node(self, search_config):
        config = search_config()
        root = node(0.5, 2, [SearchNode(ReasoningState(("a",)), q_value=0.9, visits=1)])
        tree = SearchTree(root=root, question=QUESTION, config_snapshot={}, rng_seed=0)
        assert select(tree, config) is root

    def test_ties_go_to_first_child(self, search_config):
        config = search_config(max_depth=1, width_schedule=[2])
        first = SearchNode(ReasoningState(("a",)), q_value=0.5, visits=1)
        second = SearchNode(ReasoningState(("b",)), q_value=0.5, visits=1)
        tree = SearchTree(root=node(0.5, 3, [first, second]), question=QUESTION, config_snapshot={}, rng_seed=0)
        assert select(tree, config) is first

    def test_fresh_tree_selects_root(self, search_config):
        tree = SearchTree(root=node(0.5, 1), question=QUESTION, config_snapshot={}, rng_seed=0)
        assert select(tree, search_config()) is tree.root


class TestExpand:
    def test_children_carry_step_and_value(self, fake_backend_cls, search_config):
        search, _ = scripted_search(fake_backend_cls, search_config())
        children = asyncio.run(search.expand(search.tree.root))

        assert [c.action.sub_question for c in children] == ["Q0?", "Q1?"]
        for child in children:
            assert child.depth == 1 and child.visits == 1
            assert child.state.results == (FACT,)
            assert child.action.retrieved_ids[0] == "d1"
            assert child.q_value == pytest.approx(VALUE_AT_RISK_ONE)
        assert is_fully_expanded(search.tree.root, search.config)

    def test_gold_sub_question_in_mock_world(self, make_world, mock_backends, search_config):
        world = make_world(hops=2, n_questions=1)
        chain = world.chains[0]
        search = TreeSearch(chain.to_question(), mock_backends(world), search_config())
        asyncio.run(search.initialize())
        children = asyncio.run(search.expand(search.tree.root))
        assert children[0].action.sub_question == chain.sub_questions[0]
        assert children[0].action.intermediate_result == \
            f"The {chain.relations[0]} of {chain.entities[0]} is {chain.entities[1]}."

    def test_duplicate_sub_questions_collapse(self, fake_backend_cls, search_config):
        search, _ = scripted_search(
            fake_backend_cls, search_config(), decompose=lambda req, j: "Sub-question: Same?"
        )
        children = asyncio.run(search.expand(search.tree.root))
        assert len(children) == 1
        assert search.tree.root.exhausted
        assert is_fully_expanded(search.tree.root, search.config)

    def test_max_depth_node_cannot_expand(self, fake_backend_cls, search_config):
        search, _ = scripted_search(fake_backend_cls, search_config(max_depth=1, width_schedule=[2]))
        child = asyncio.run(search.expand(search.tree.root))[0]
        with pytest.raises(InvalidArgumentError):
            asyncio.run(search.expand(child))
        with pytest.raises(InvalidArgumentError):
            asyncio.run(search.expand(search.tree.root))

    def test_failed_sibling_cancels_the_others(self, fake_backend_cls, search_config):
        finished = []

        class SlowSecondAnswer(fake_backend_cls):
            async def generate(self, req):
                if "Question: Q0?" in req.prompt:
                    raise BackendError("connection reset")
                if "Question: Q1?" in req.prompt:
                    await asyncio.sleep(0.05)
                    finished.append(req.prompt)
                return await super().generate(req)

        def reply(req, j):
            return f"Sub-question: Q{j}?" if req.prompt.startswith("Your task is to decompose") else FACT

        search = TreeSearch(QUESTION, Backends(policy=SlowSecondAnswer(reply=reply)), search_config())

        async def expand_then_wait():
            await search.initialize()
            with pytest.raises(BackendError):
                await search.expand(search.tree.root)
            await asyncio.sleep(0.2)

        asyncio.run(expand_then_wait())
        assert finished == []
        assert search.tree.root.children == []

    def test_unparseable_output_marks_terminal(self, fake_backend_cls, search_config):
        search, _ = scripted_search(fake_backend_cls, search_config(), decompose=lambda req, j: "I do not know.")
        with pytest.raises(ExpansionError):
            asyncio.run(search.expand(search.tree.root))
        assert search.tree.root.terminal
        assert search.tree.root.children == []

    def test_terminal_root_still_counts_iterations(self, fake_backend_cls, search_config):
        search, _ = scripted_search(
            fake_backend_cls, search_config(iterations=3), decompose=lambda req, j: "no format"
        )
        tree = asyncio.run(search.run())
        assert tree.root.terminal
        assert tree.root.visits == 4


class TestSimulate:
    def test_rollout_reaches_full_chain_without_touching_tree(self, make_world, mock_backends, search_config):
        world = make_world(hops=2, n_questions=1)
        chain = world.chains[0]
        search = TreeSearch(chain.to_question(), mock_backends(world), search_config())
        asyncio.run(search.initialize())

        value = asyncio.run(search.simulate(search.tree.root))

        assert value == pytest.approx(1 / (1 + math.exp(-1.9)))
        assert search.tree.nodes() == [search.tree.root]

    def test_rollout_prefers_the_correct_candidate(self, make_world, search_config):
        world = make_world(hops=3, n_questions=1)
        chain = world.chains[0]
        chain_entities = {entity for c in world.chains for entity in c.entities}
        wrong_entity = next(entity for entity in world.entities if entity not in chain_entities)

        class FirstSampleCorrupted(MockPolicyBackend):
            """Sample 0 of each decomposition is answered with a wrong entity, sample 1 correctly."""

            def __init__(self, *args, **kwargs):
                super().__init__(*args, **kwargs)
                self.decompose_samples = []

            async def generate(self, req):
                if req.prompt.startswith("Your task is to decompose"):
                    self.decompose_samples.append(req.n_samples)
                return await super().generate(req)

            def _decompose(self, prompt, temperature, sample):
                reply = super()._decompose(prompt, 0.0, 0)
                if sample == 0:
                    reply = reply.replace("Sub-question: What is", "Sub-question: Identify").rstrip("?") + "."
                return reply

            def _intermediate_answer(self, prompt, sample):
                answer = super()._intermediate_answer(prompt, sample)
                if "Question: Identify" in prompt:
                    answer = f"{answer.rsplit(' is ', 1)[0]} is {wrong_entity}."
                return answer

        backend = FirstSampleCorrupted(world)
        config = search_config(max_depth=3, width_schedule=[2, 2, 2], rollout_samples=2)
        search = TreeSearch(chain.to_question(), Backends(policy=backend), config)
        asyncio.run(search.initialize())

        value = asyncio.run(search.simulate(search.tree.root))

        assert backend.decompose_samples == [2, 2, 2]
        assert value == pytest.approx(1 / (1 + math.exp(-1.9)))

    def test_value_at_depth_cap_is_node_value(self, fake_backend_cls, search_config):
        search, backend = scripted_search(fake_backend_cls, search_config(max_depth=1, width_schedule=[2]))
        child = asyncio.run(search.expand(search.tree.root))[0]
        calls = len(backend.requests)
        assert asyncio.run(search.simulate(child)) == pytest.approx(child.q_value)
        assert len(backend.requests) == calls


class TestRun:
    def test_single_iteration(self, fake_backend_cls, search_config):
        search, _ = scripted_search(fake_backend_cls, search_config(iterations=1))
        tree = asyncio.run(search.run())
        root = tree.root
        assert root.visits == 2
        assert len(root.children) == 2
        assert root.children[0].visits == 2
        assert root.q_value == pytest.approx(aggregate_children(root))

    def test_backend_failure_keeps_partial_tree(self, fake_backend_cls, search_config):
        def reply(req, j):
            if req.prompt.startswith("Your task is to decompose") and "Intermediate answers: \n" not in req.prompt:
                raise BackendError("connection reset")
            if req.prompt.startswith("Your task is to decompose"):
                return f"Sub-question: Q{j}?"
            return FACT

        search = TreeSearch(QUESTION, Backends(policy=fake_backend_cls(reply=reply)), search_config())
        with pytest.raises(SearchError) as excinfo:
            asyncio.run(search.run())
        tree = excinfo.value.tree
        assert tree.error.startswith("iteration 1:")
        assert len(tree.root.children) == 2

    def test_trace_callback(self, fake_backend_cls, search_config):
        seen = []
        search, _ = scripted_search(fake_backend_cls, search_config(iterations=5, trace_every=2))
        search.trace_callback = lambda tree, iteration: seen.append(iteration)
        asyncio.run(search.run())
        assert seen == [2, 4]

    def test_same_seed_same_tree(self, make_world, mock_backends, search_config):
        world = make_world(hops=2, n_questions=1, error_rate=0.3)
        question = world.questions()[0]
        dumps = [
            dump_tree(asyncio.run(run_search(question, mock_backends(world, seed=5), search_config(seed=5))))
            for _ in range(2)
        ]
        assert dumps[0] == dumps[1]

    @pytest.mark.parametrize("seed", range(50))
    def test_tree_invariants(self, make_world, mock_backends, search_config, seed):
        world = make_world(hops=2, n_questions=1, error_rate=0.3, seed=seed)
        config = search_config(iterations=12, seed=seed)
        tree = asyncio.run(run_search(world.questions()[0], mock_backends(world, seed=seed), config))

        assert tree.root.visits == config.iterations + 1
        for n in tree.nodes():
            assert 0.0 <= n.q_value <= 1.0
            assert n.depth <= config.max_depth
            assert n.path()[0] is tree.root
            if n.children:
                assert len(n.children) <= config.width_at(n.depth + 1)
                assert n.q_value == pytest.approx(aggregate_children(n), abs=1e-12)
                assert len({c.action.sub_question for c in n.children}) == len(n.children)


class TestPassAtN:
    def _tree(self, best_state, other_state):
        config = {"search": {"max_depth": 1, "width_schedule": [2]}, "risk": {}}
        root = SearchNode(state=ReasoningState(), visits=3, q_value=0.5)
        tree = SearchTree(root=root, question=Question(id="q", text="Capital of France?", gold_answer="Paris"),
                          config_snapshot=config, rng_seed=0)
        tree.add_child(root, SearchNode(state=ReasoningState((best_state,)), action=Action("A?", best_state),
                                        q_value=0.9, visits=1))
        tree.add_child(root, SearchNode(state=ReasoningState((other_state,)), action=Action("B?", other_state),
                                        q_value=0.1, visits=1))
        return tree

    def _backends(self, fake_backend_cls):
        return Backends(policy=fake_backend_cls(
            reply=lambda req, j: "Paris" if "Intermediate answers: right" in req.prompt else "London"
        ))

    def test_only_other_leaf_correct(self, fake_backend_cls):
        result = asyncio.run(pass_at_n(self._tree("wrong", "right"), self._backends(fake_backend_cls)))
        assert (result.pass_1, result.pass_n) == (False, True)
        assert result.best.final_answer == "London"

    def test_best_path_correct(self, fake_backend_cls):
        result = asyncio.run(pass_at_n(self._tree("right", "wrong"), self._backends(fake_backend_cls)))
        assert (result.pass_1, result.pass_n) == (True, True)
        assert [step["sub_question"] for step in result.best.steps()] == ["A?"]

    def test_no_gold_answer(self, fake_backend_cls):
        tree = self._tree("right", "wrong")
        tree.question = Question(id="q", text="Capital of France?", gold_answer="")
        result = asyncio.run(pass_at_n(tree, self._backends(fake_backend_cls)))
        assert result.pass_1 is None and result.pass_n is None


def test_greedy_chain_config(search_config):
    config = greedy_chain_config(search_config(max_depth=3, width_schedule=[5, 4, 3], iterations=200))
    assert config.width_schedule == [1, 1, 1]
    assert config.iterations == 3


@pytest.mark.parametrize("hops", [2, 3, 4])
def test_perfect_world_is_solved(make_world, mock_backends, search_config, hops):
    world = make_world(hops=hops, n_questions=3, seed=hops)
    config = search_config(max_depth=hops, width_schedule=[2] * hops, iterations=60)
    assert solve_rate(world, mock_backends(world), config) == 3


def test_risk_guided_search_recovers_from_step_errors(make_world, mock_backends, search_config):
    config = search_config(max_depth=3, width_schedule=[2, 2, 2], iterations=40)
    uniform_config = config.model_copy(update={"value_mode": "uniform"})
    risk_guided = greedy = uniform = 0
    for seed in range(20):
        world = make_world(hops=3, n_questions=20, error_rate=0.3, seed=seed)
        backends = mock_backends(world, seed=seed)
        risk_guided += solve_rate(world, backends, config)
        greedy += solve_rate(world, backends, greedy_chain_config(config))
        uniform += solve_rate(world, backends, uniform_config)

    assert risk_guided >= greedy
    assert risk_guided >= uniform
