"""Chat-completion HTTP oracle (OpenAI-compatible wire format).

Requests POST to ``<base_url>/chat/completions`` with deterministic
decoding settings (temperature 0, top_p 1.0, max_tokens 500).  Transport
and parse failures are retried with exponential backoff and jitter; an
unresolved decision surfaces as an error carrying agent, round, and
category — never a silently substituted option.  Batch queries run with a
bounded number of in-flight requests and results are committed in input
(agent-index) order, so stored decisions are independent of completion
interleaving.
"""

from __future__ import annotations

import json
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor

import httpx

from .errors import ConfigurationError, DecisionParseError, OracleError
from .oracle import (SYSTEM_PROMPT, Decision, Oracle, PromptContext,
                     PromptTemplate, parse_decision, render_prompt)

DEFAULT_API_KEY_ENV = "PROTOSIM_API_KEY"


class HttpOracle(Oracle):
    def __init__(self, base_url: str, model: str, *,
                 api_key_env: str = DEFAULT_API_KEY_ENV,
                 template: PromptTemplate | None = None,
                 timeout_s: float = 120.0, retries: int = 3,
                 max_in_flight: int = 16,
                 temperature: float = 0.0, top_p: float = 1.0,
                 max_tokens: int = 500,
                 backoff_base_s: float = 1.0, backoff_cap_s: float = 30.0,
                 transcript_path=None,
                 transport: httpx.BaseTransport | None = None,
                 sleeper=time.sleep):
        super().__init__()
        api_key = os.environ.get(api_key_env)
        if not api_key:
            raise ConfigurationError(f"API key environment variable {api_key_env} is not set")
        if max_in_flight < 1:
            raise ConfigurationError("max_in_flight must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.template = template or PromptTemplate()
        self.retries = retries
        self.max_in_flight = max_in_flight
        self.temperature = temperature
        self.top_p = top_p
        self.max_tokens = max_tokens
        self.backoff_base_s = backoff_base_s
        self.backoff_cap_s = backoff_cap_s
        self.transcript_path = transcript_path
        self._sleep = sleeper
        self._jitter = random.Random(0)
        self._headers = {"Authorization": f"Bearer {api_key}",
                         "Content-Type": "application/json"}
        self._client = httpx.Client(transport=transport, timeout=timeout_s)

    def close(self) -> None:
        self._client.close()

    def _request_body(self, prompt: str) -> dict:
        return {
            "model": self.model,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": prompt},
            ],
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
        }

    def _backoff(self, attempt: int) -> None:
        delay = min(self.backoff_cap_s, self.backoff_base_s * (2 ** attempt))
        self._sleep(delay * self._jitter.uniform(0.5, 1.5))

    def _log_transcript(self, record: dict) -> None:
        if self.transcript_path is None:
            return
        with open(self.transcript_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")

    def _decide(self, context: PromptContext, category: str) -> Decision:
        prompt = render_prompt(context, self.template)
        body = self._request_body(prompt)
        url = f"{self.base_url}/chat/completions"
        attempts = 0
        last_error = "no attempts made"
        while attempts <= self.retries:
            if attempts > 0:
                self._backoff(attempts - 1)
                self.ledger.note_retry()
            attempts += 1
            try:
                response = self._client.post(url, headers=self._headers, json=body)
                response.raise_for_status()
                content = response.json()["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, json.JSONDecodeError) as exc:
                last_error = f"transport failure: {exc}"
                continue
            try:
                option = parse_decision(content, len(context.options))
            except DecisionParseError as exc:
                self.ledger.note_parse_failure()
                last_error = f"parse failure: {exc}"
                continue
            self._log_transcript({"agent": context.agent_id, "round": context.round_index,
                                  "category": category, "request": body,
                                  "response": content, "attempts": attempts})
            return Decision(option_index=option, raw_text=content,
                            attempts=attempts, category=category)
        raise OracleError(f"unresolved decision after {attempts} attempts: {last_error}",
                          agent_id=context.agent_id, round_index=context.round_index,
                          category=category)

    def query_batch(self, contexts: list[PromptContext], category: str) -> list[Decision]:
        if len(contexts) <= 1 or self.max_in_flight == 1:
            return [self.query(c, category) for c in contexts]
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            futures = [pool.submit(self.query, c, category) for c in contexts]
            return [f.result() for f in futures]
