import asyncio
import json

import httpx
import pytest

from riskrag.backends import (
    Backends,
    HttpPolicyBackend,
    MockPolicyBackend,
    build_backends,
    generate_world,
    load_world,
    save_world,
)
from riskrag.backends.base import GenerationRequest, ScoreRequest
from riskrag.backends.mock_backend import entity_coverage, follow_chain
from riskrag.config import BackendConfig
from riskrag.errors import BackendError, CapabilityError, IngestError, InvalidArgumentError, ProtocolError
from riskrag.prompts import NO_FACTS_SENTINEL, format_documents, parse_decomposition, render


def chat_response(*contents):
    return {"choices": [{"message": {"role": "assistant", "content": c}} for c in contents]}


def http_backend(handler, **kwargs):
    waits = []

    async def sleep(seconds):
        waits.append(seconds)

    backend = HttpPolicyBackend(
        "http://model.test", "test-model",
        transport=httpx.MockTransport(handler), sleep=sleep, **kwargs,
    )
    return backend, waits


class TestRequests:
    def test_generation_request_validation(self):
        with pytest.raises(InvalidArgumentError):
            GenerationRequest(prompt="")
        with pytest.raises(InvalidArgumentError):
            GenerationRequest(prompt="p", n_samples=0)

    def test_empty_score_target_rejected(self):
        with pytest.raises(InvalidArgumentError):
            ScoreRequest(context="c", target="")


class TestHttpGenerate:
    def test_returns_completions_verbatim(self):
        seen = []

        def handler(request):
            seen.append(json.loads(request.content))
            return httpx.Response(200, json=chat_response("  Thought: a\nSub-question: b  ", "x", "y"))

        backend, _ = http_backend(handler, api_key="secret", seed=5)
        out = asyncio.run(backend.generate(GenerationRequest(prompt="hello", n_samples=3, temperature=0.7)))
        assert out == ["  Thought: a\nSub-question: b  ", "x", "y"]
        payload = seen[0]
        assert payload["model"] == "test-model"
        assert payload["messages"] == [{"role": "user", "content": "hello"}]
        assert payload["n"] == 3
        assert payload["temperature"] == 0.7
        assert payload["seed"] == 5

    def test_sends_bearer_token(self):
        headers = []

        def handler(request):
            headers.append(request.headers.get("authorization"))
            return httpx.Response(200, json=chat_response("ok"))

        backend, _ = http_backend(handler, api_key="secret")
        asyncio.run(backend.generate(GenerationRequest(prompt="p")))
        assert headers == ["Bearer secret"]

    def test_tops_up_when_server_ignores_n(self):
        calls = []

        def handler(request):
            calls.append(json.loads(request.content)["n"])
            return httpx.Response(200, json=chat_response(f"c{len(calls)}"))

        backend, _ = http_backend(handler)
        out = asyncio.run(backend.generate(GenerationRequest(prompt="p", n_samples=3)))
        assert out == ["c1", "c2", "c3"]
        assert calls == [3, 2, 1]

    def test_retries_with_backoff(self):
        statuses = iter([503, 429, 200])

        def handler(request):
            status = next(statuses)
            if status != 200:
                return httpx.Response(status, text="busy")
            return httpx.Response(200, json=chat_response("done"))

        backend, waits = http_backend(handler)
        assert asyncio.run(backend.generate(GenerationRequest(prompt="p"))) == ["done"]
        assert waits == [1.0, 2.0]

    @pytest.mark.parametrize("error", [httpx.ConnectError, httpx.DecodingError, httpx.TooManyRedirects])
    def test_request_failure_exhausts_retries(self, error):
        def handler(request):
            raise error("broken", request=request)

        backend, waits = http_backend(handler)
        with pytest.raises(BackendError) as excinfo:
            asyncio.run(backend.generate(GenerationRequest(prompt="p")))
        assert excinfo.value.retryable
        assert len(waits) == 2

    def test_malformed_response(self):
        backend, _ = http_backend(lambda request: httpx.Response(200, json={"unexpected": True}))
        with pytest.raises(ProtocolError):
            asyncio.run(backend.generate(GenerationRequest(prompt="p")))


class TestHttpScore:
    def _logprobs_response(self):
        # prompt = "ctx\nWho won?" ; target starts at offset 4
        return {"choices": [{"text": "", "logprobs": {
            "tokens": ["ctx", "\n", "Who", " won", "?", " The"],
            "text_offset": [0, 3, 4, 7, 11, 12],
            "token_logprobs": [None, -0.5, -1.0, -2.0, -0.25, -9.0],
        }}]}

    def test_extracts_target_logprobs(self):
        seen = []

        def handler(request):
            seen.append(json.loads(request.content))
            return httpx.Response(200, json=self._logprobs_response())

        backend, _ = http_backend(handler)
        response = asyncio.run(backend.score_sequence(ScoreRequest(context="ctx", target="Who won?")))
        assert response.token_logprobs == [-1.0, -2.0, -0.25]
        assert response.token_count == 3
        assert seen[0]["prompt"] == "ctx\nWho won?"
        assert seen[0]["echo"] is True and seen[0]["logprobs"] == 1

    def test_unsupported_endpoint(self):
        backend, _ = http_backend(lambda request: httpx.Response(404, text="not found"))
        with pytest.raises(CapabilityError):
            asyncio.run(backend.score_sequence(ScoreRequest(context="c", target="t")))

    def test_missing_logprobs(self):
        backend, _ = http_backend(lambda request: httpx.Response(200, json={"choices": [{"text": "", "logprobs": None}]}))
        with pytest.raises(CapabilityError):
            asyncio.run(backend.score_sequence(ScoreRequest(context="c", target="t")))


class TestMockWorld:
    def test_generated_chains_verify(self):
        world = generate_world(hops=4, n_questions=20, seed=1)
        world.verify()
        assert len(world.chains) == 20
        assert all(len(chain.sub_questions) == 4 for chain in world.chains)

    def test_generation_is_deterministic(self):
        assert generate_world(3, 5, seed=3).to_dict() == generate_world(3, 5, seed=3).to_dict()
        assert generate_world(3, 5, seed=3).to_dict() != generate_world(3, 5, seed=4).to_dict()

    def test_entities_are_distinct_words(self):
        world = generate_world(2, 10, seed=0)
        for chain in world.chains:
            assert len(set(chain.entities)) == len(chain.entities)
        assert all(len(e) == 6 and e[0].isupper() for e in world.entities)

    def test_save_and_load(self, tmp_path):
        world = generate_world(2, 3, error_rate=0.25, seed=9)
        dataset_path = save_world(world, tmp_path / "world.json")
        loaded = load_world(tmp_path / "world.json")
        assert loaded.to_dict() == world.to_dict()
        lines = dataset_path.read_text().splitlines()
        assert len(lines) == 3
        assert json.loads(lines[0])["answer"] == world.chains[0].answer

    def test_corrupted_world_file(self, tmp_path):
        path = tmp_path / "world.json"
        path.write_text("{not json")
        with pytest.raises(IngestError):
            load_world(path)

    def test_hops_must_be_positive(self):
        with pytest.raises(InvalidArgumentError):
            generate_world(0, 3)


class TestMockBackend:
    def _decompose_prompt(self, chain, state=""):
        return render("decompose", {
            "original question": chain.question,
            "reasoning state": state,
            "retrieved documents": "",
        })

    def test_first_hop_is_gold_sub_question(self):
        world = generate_world(2, 3, seed=7)
        chain = world.chains[0]
        backend = MockPolicyBackend(world, seed=0)
        out = asyncio.run(backend.generate(GenerationRequest(prompt=self._decompose_prompt(chain), temperature=0.0)))
        assert parse_decomposition(out[0])[1] == chain.sub_questions[0]

    def test_second_hop_follows_state(self):
        world = generate_world(2, 3, seed=7)
        chain = world.chains[0]
        state = f"The {chain.relations[0]} of {chain.entities[0]} is {chain.entities[1]}."
        backend = MockPolicyBackend(world)
        out = asyncio.run(backend.generate(GenerationRequest(prompt=self._decompose_prompt(chain, state), temperature=0.0)))
        assert parse_decomposition(out[0])[1] == chain.sub_questions[1]

    def test_same_prompt_same_outputs(self):
        world = generate_world(2, 3, error_rate=0.5, seed=7)
        prompt = self._decompose_prompt(world.chains[1])
        req = GenerationRequest(prompt=prompt, n_samples=5, temperature=0.7)
        first = asyncio.run(MockPolicyBackend(world, seed=3).generate(req))
        second = asyncio.run(MockPolicyBackend(world, seed=3).generate(req))
        assert first == second
        assert len(first) == 5

    def test_intermediate_answer_states_fact(self):
        world = generate_world(1, 2, seed=2)
        chain = world.chains[0]
        gold_docs = chain.to_question().documents(chain.supporting_ids)
        prompt = render("intermediate_answer", {
            "sub-question": chain.sub_questions[0],
            "retrieved documents": format_documents(gold_docs),
        })
        out = asyncio.run(MockPolicyBackend(world).generate(GenerationRequest(prompt=prompt)))
        assert out == [f"The {chain.relations[0]} of {chain.entities[0]} is {chain.answer}."]

    def test_intermediate_answer_without_facts(self):
        world = generate_world(1, 2, seed=2)
        prompt = render("intermediate_answer", {
            "sub-question": world.chains[0].sub_questions[0], "retrieved documents": "",
        })
        assert asyncio.run(MockPolicyBackend(world).generate(GenerationRequest(prompt=prompt))) == [NO_FACTS_SENTINEL]

    def test_error_rate_one_always_wrong(self):
        world = generate_world(1, 2, error_rate=1.0, seed=2)
        chain = world.chains[0]
        prompt = render("intermediate_answer", {
            "sub-question": chain.sub_questions[0],
            "retrieved documents": format_documents(chain.to_question().documents(chain.supporting_ids)),
        })
        out = asyncio.run(MockPolicyBackend(world).generate(GenerationRequest(prompt=prompt)))[0]
        assert out.startswith(f"The {chain.relations[0]} of {chain.entities[0]} is ")
        assert chain.answer not in out

    def test_score_constants(self):
        world = generate_world(2, 2, seed=4)
        chain = world.chains[0]
        backend = MockPolicyBackend(world)
        full = " ".join(chain.entities)
        high = asyncio.run(backend.score_sequence(ScoreRequest(context=full, target=chain.question)))
        low = asyncio.run(backend.score_sequence(ScoreRequest(context="nothing relevant", target=chain.question)))
        assert all(lp == pytest.approx(-0.1) for lp in high.token_logprobs)
        assert all(lp == pytest.approx(-3.0) for lp in low.token_logprobs)
        assert high.token_count == len(chain.question.split())

    def test_scoring_is_monotone_in_entity_coverage(self):
        world = generate_world(3, 2, seed=4)
        chain = world.chains[0]
        backend = MockPolicyBackend(world)
        previous = None
        for n in range(len(chain.entities) + 1):
            context = " ".join(chain.entities[:n])
            mean = asyncio.run(backend.score_sequence(ScoreRequest(context=context, target=chain.question))).mean_logprob
            if previous is not None:
                assert mean >= previous
            previous = mean

    def test_verifier_reply(self):
        world = generate_world(1, 1, seed=4)
        chain = world.chains[0]
        prompt = render("verifier", {
            "original question": chain.question,
            "sub-questions": chain.sub_questions[0],
            "reasoning state": f"The {chain.relations[0]} of {chain.entities[0]} is {chain.answer}.",
        })
        assert asyncio.run(MockPolicyBackend(world).generate(GenerationRequest(prompt=prompt))) == ["10"]

    def test_follow_chain_and_coverage(self):
        world = generate_world(2, 1, seed=4)
        chain = world.chains[0]
        text = f"The {chain.relations[0]} of {chain.entities[0]} is {chain.entities[1]}."
        assert follow_chain(chain, text) == chain.entities[:2]
        assert entity_coverage(chain, text) == pytest.approx(2 / 3)


def test_build_backends_mock(tmp_path):
    world = generate_world(1, 1)
    save_world(world, tmp_path / "w.json")
    backends = build_backends(BackendConfig(kind="mock", world=tmp_path / "w.json"), seed=3)
    assert isinstance(backends.policy, MockPolicyBackend)
    assert backends.scorer is backends.policy


def test_build_backends_separate_scorer():
    backends = build_backends(BackendConfig(scoring_model="scorer-model"))
    assert backends.scorer is not backends.policy
    assert backends.scorer.model == "scorer-model"


def test_metered_backends_count_usage():
    world = generate_world(1, 1)
    chain = world.chains[0]
    metered = Backends(policy=MockPolicyBackend(world)).metered()

    async def use():
        await metered.policy.generate(GenerationRequest(prompt="unrelated prompt", n_samples=2))
        await metered.scorer.score_sequence(ScoreRequest(context="c", target=chain.question))

    asyncio.run(use())
    assert metered.generation_calls == 1
    assert metered.scored_tokens == len(chain.question.split())
