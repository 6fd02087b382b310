"""
HTTP policy backend speaking the OpenAI-compatible completions wire format.

Generation goes through ``POST /v1/chat/completions``; likelihood scoring goes through
``POST /v1/completions`` with ``echo`` + ``logprobs`` and keeps only the tokens overlapping
the target suffix. Model text is returned verbatim.
"""

import asyncio
import logging
import os
from typing import Any, Awaitable, Callable, Dict, List, Optional

import httpx

from ..config import BackendConfig
from ..errors import BackendError, CapabilityError, ProtocolError
from .base import GenerationRequest, PolicyBackend, ScoreRequest, ScoreResponse

log = logging.getLogger(__name__)

SCORE_SEPARATOR = "\n"
_CAPABILITY_STATUSES = {400, 404, 405, 422, 501}


class HttpPolicyBackend(PolicyBackend):
    """Chat-completions generation plus echo-logprobs scoring over httpx."""

    name = "http-backend"

    def __init__(
        self,
        endpoint_url: str,
        model: str,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff_base: float = 1.0,
        seed: Optional[int] = None,
        transport: Optional[httpx.AsyncBaseTransport] = None,
        sleep: Callable[[float], Awaitable[None]] = asyncio.sleep,
    ):
        self.endpoint_url = endpoint_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.seed = seed
        self._transport = transport
        self._sleep = sleep
        self._client: Optional[httpx.AsyncClient] = None

    @classmethod
    def from_config(cls, config: BackendConfig, scoring: bool = False, seed: Optional[int] = None) -> "HttpPolicyBackend":
        endpoint = config.endpoint_url
        model = config.model
        if scoring:
            endpoint = config.scoring_endpoint_url or endpoint
            model = config.scoring_model or model
        return cls(
            endpoint_url=endpoint,
            model=model,
            api_key=os.environ.get(config.api_key_env),
            timeout=config.request_timeout,
            seed=seed,
        )

    def _get_client(self) -> httpx.AsyncClient:
        if self._client is None:
            headers = {"Content-Type": "application/json"}
            if self.api_key:
                headers["Authorization"] = f"Bearer {self.api_key}"
            self._client = httpx.AsyncClient(
                timeout=self.timeout, headers=headers, transport=self._transport
            )
        return self._client

    async def aclose(self) -> None:
        if self._client is not None:
            await self._client.aclose()
            self._client = None

    async def _post(self, path: str, payload: Dict[str, Any]) -> httpx.Response:
        """POST with exponential backoff on request failures, 429 and 5xx."""
        url = f"{self.endpoint_url}{path}"
        last_error = ""
        for attempt in range(self.max_attempts):
            try:
                response = await self._get_client().post(url, json=payload)
            except httpx.RequestError as e:
                last_error = f"request failure: {e}"
            else:
                if response.status_code == 429 or response.status_code >= 500:
                    last_error = f"HTTP {response.status_code}"
                else:
                    return response

            if attempt + 1 < self.max_attempts:
                wait_time = self.backoff_base * (2 ** attempt)
                log.warning(f"[{self.name}] {path} {last_error}, retrying in {wait_time:.1f}s")
                await self._sleep(wait_time)

        raise BackendError(
            f"{path} failed after {self.max_attempts} attempts: {last_error}", retryable=True
        )

    async def generate(self, req: GenerationRequest) -> List[str]:
        completions: List[str] = []
        # Servers may ignore `n`; top up with further calls.
        for _ in range(req.n_samples):
            missing = req.n_samples - len(completions)
            if missing == 0:
                break
            payload: Dict[str, Any] = {
                "model": self.model,
                "messages": [{"role": "user", "content": req.prompt}],
                "temperature": req.temperature,
                "n": missing,
                "max_tokens": req.max_tokens,
            }
            if req.stop:
                payload["stop"] = req.stop
            if self.seed is not None:
                payload["seed"] = self.seed

            response = await self._post("/v1/chat/completions", payload)
            if response.status_code != 200:
                raise BackendError(f"generation failed: {response.status_code} - {response.text}")
            completions.extend(self._parse_choices(response)[:missing])

        if len(completions) != req.n_samples:
            raise ProtocolError(f"expected {req.n_samples} completions, got {len(completions)}")
        return completions

    @staticmethod
    def _parse_choices(response: httpx.Response) -> List[str]:
        try:
            result = response.json()
            choices = [choice['message']['content'] for choice in result['choices']]
        except (ValueError, KeyError, TypeError) as e:
            raise ProtocolError(f"malformed chat completion response: {e}") from e
        if not choices or any(not isinstance(text, str) for text in choices):
            raise ProtocolError("chat completion response carried no text choices")
        return choices

    async def score_sequence(self, req: ScoreRequest) -> ScoreResponse:
        prompt = f"{req.context}{SCORE_SEPARATOR}{req.target}"
        target_start = len(req.context) + len(SCORE_SEPARATOR)
        payload = {
            "model": self.model,
            "prompt": prompt,
            "max_tokens": 1,
            "temperature": 0,
            "echo": True,
            "logprobs": 1,
        }
        response = await self._post("/v1/completions", payload)
        if response.status_code in _CAPABILITY_STATUSES:
            raise CapabilityError(
                f"endpoint does not support echo logprobs scoring: {response.status_code} - {response.text}"
            )
        if response.status_code != 200:
            raise BackendError(f"scoring failed: {response.status_code} - {response.text}")

        try:
            logprobs = response.json()['choices'][0]['logprobs']
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise ProtocolError(f"malformed completion response: {e}") from e
        if not logprobs or not logprobs.get('token_logprobs') or not logprobs.get('text_offset'):
            raise CapabilityError("endpoint returned no prompt logprobs")

        return ScoreResponse(
            token_logprobs=self._target_logprobs(logprobs, target_start, len(prompt))
        )

    @staticmethod
    def _target_logprobs(logprobs: Dict[str, Any], target_start: int, prompt_end: int) -> List[float]:
        """Keep the logprobs of echoed tokens that overlap the target span."""
        tokens = logprobs.get('tokens') or []
        offsets = logprobs['text_offset']
        values = logprobs['token_logprobs']
        selected: List[float] = []
        for i, (offset, value) in enumerate(zip(offsets, values)):
            if offset >= prompt_end:
                break
            token_text = tokens[i] if i < len(tokens) else ""
            token_end = offset + max(len(token_text), 1)
            if token_end <= target_start:
                continue
            if value is None:
                raise ProtocolError(f"missing logprob for target token at offset {offset}")
            selected.append(float(value))
        if not selected:
            raise ProtocolError("no echoed tokens aligned with the score target")
        return selected
