"""Model access: the HTTP wire protocol, retrying clients and scripted mocks.

Requests are chat-completion style JSON: a message list where the newest
user message carries the query text plus the frame as base64 PNG. Perturbed
annotation requests add three fields (noise_level, dropout_rate,
ensemble_seed) on top of the same shape. Mocks implement the same call
surfaces in process so the whole pipeline runs without a network.
"""

from __future__ import annotations

import base64
import json
import os
import time
from dataclasses import dataclass

import numpy as np
import requests

from .imaging import Image, encode_png
from .refine import InferenceRun
from .seeds import child_seed


class ModelRequestError(RuntimeError):
    """The endpoint rejected the request or retries were exhausted."""

    def __init__(self, message: str, status: int | None = None, body: str = ""):
        detail = f" (status {status})" if status is not None else ""
        super().__init__(f"{message}{detail}{': ' + body[:500] if body else ''}")
        self.status = status
        self.body = body


@dataclass(frozen=True)
class ModelEndpoint:
    """Where and how to reach a model over HTTP.

    ``auth_env`` names an environment variable holding the bearer token; the
    token itself is read at request time and never written to run records.
    """

    base_url: str
    model: str
    auth_env: str | None = None
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.25

    def __post_init__(self) -> None:
        if not self.base_url:
            raise ValueError("base_url must be non-empty")
        if self.timeout <= 0:
            raise ValueError(f"timeout must be > 0, got {self.timeout}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.backoff_base < 0:
            raise ValueError(f"backoff_base must be >= 0, got {self.backoff_base}")


def canonical_json(obj) -> bytes:
    """Stable JSON bytes: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def build_chat_request(
    model: str,
    query: str,
    image_png: bytes,
    context=(),
    temperature: float = 0.0,
    seed: int | None = None,
    extra=None,
) -> dict:
    """Assemble the chat-style request body.

    ``context`` is prior (query, answer) pairs, sent as alternating
    user/assistant text messages; only the current user message carries the
    frame image.
    """
    messages = []
    for past_query, past_answer in context:
        messages.append({"role": "user", "content": [{"type": "text", "text": past_query}]})
        messages.append({"role": "assistant", "content": [{"type": "text", "text": past_answer}]})
    messages.append(
        {
            "role": "user",
            "content": [
                {"type": "text", "text": query},
                {"type": "image", "data": base64.b64encode(image_png).decode("ascii")},
            ],
        }
    )
    body = {"model": model, "messages": messages, "temperature": temperature}
    if seed is not None:
        body["seed"] = seed
    if extra:
        body.update(extra)
    return body


def build_perturbable_request(
    model: str,
    query: str,
    image_png: bytes,
    noise_level: float,
    dropout_rate: float,
    ensemble_seed: int,
    temperature: float = 0.0,
) -> dict:
    """Chat request plus the three perturbation fields for annotation runs."""
    return build_chat_request(
        model,
        query,
        image_png,
        temperature=temperature,
        extra={
            "noise_level": float(noise_level),
            "dropout_rate": float(dropout_rate),
            "ensemble_seed": int(ensemble_seed),
        },
    )


def parse_chat_response(payload) -> str:
    """Pull the first choice's text content out of a response body."""
    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ModelRequestError(f"malformed model response: {exc}") from exc
    if isinstance(content, str):
        return content
    if isinstance(content, list):
        return "".join(part.get("text", "") for part in content if isinstance(part, dict))
    raise ModelRequestError(f"unsupported content payload of type {type(content).__name__}")


class HttpModelClient:
    """Chat client with bounded exponential-backoff retries.

    Client errors (4xx) fail immediately with the response body attached;
    server errors and timeouts are retried up to ``max_retries`` extra
    attempts with exponentially growing sleeps.
    """

    def __init__(self, endpoint: ModelEndpoint, session=None, sleep=time.sleep):
        self.endpoint = endpoint
        self._session = session or requests.Session()
        self._sleep = sleep

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.endpoint.auth_env:
            token = os.environ.get(self.endpoint.auth_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def post_body(self, body: dict) -> dict:
        last_error = None
        for attempt in range(self.endpoint.max_retries + 1):
            try:
                response = self._session.post(
                    self.endpoint.base_url,
                    data=canonical_json(body),
                    headers=self._headers(),
                    timeout=self.endpoint.timeout,
                )
            except requests.RequestException as exc:
                last_error = ModelRequestError(f"request failed: {exc}")
            else:
                if 200 <= response.status_code < 300:
                    try:
                        return response.json()
                    except ValueError as exc:
                        raise ModelRequestError(f"non-JSON response body: {exc}") from exc
                if 400 <= response.status_code < 500:
                    raise ModelRequestError(
                        "endpoint rejected request",
                        status=response.status_code,
                        body=response.text,
                    )
                last_error = ModelRequestError(
                    "server error", status=response.status_code, body=response.text
                )
            if attempt < self.endpoint.max_retries:
                self._sleep(self.endpoint.backoff_base * (2**attempt))
        raise last_error

    def query(
        self,
        image: Image,
        query: str,
        context=(),
        temperature: float = 0.0,
        seed: int | None = None,
    ) -> str:
        body = build_chat_request(
            self.endpoint.model, query, encode_png(image), context, temperature, seed
        )
        return parse_chat_response(self.post_body(body))


class PerturbableHttpClient(HttpModelClient):
    """HTTP flavor of the perturbable interface used for pseudo-labeling."""

    def infer(self, image: Image, query: str, *, noise_level, dropout_rate, seed) -> InferenceRun:
        body = build_perturbable_request(
            self.endpoint.model, query, encode_png(image), noise_level, dropout_rate, seed
        )
        payload = self.post_body(body)
        answer = parse_chat_response(payload)
        try:
            dist = payload["distribution"]
            features = np.asarray(payload["features"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelRequestError(f"missing distribution/features: {exc}") from exc
        return InferenceRun(
            answer=answer,
            dist=dist,
            features=features,
            noise_level=noise_level,
            dropout_rate=dropout_rate,
            seed=seed,
        )


# ---------------------------------------------------------------------------
# Scripted in-process mocks for the closed-loop harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TurnContext:
    """Everything a scripted mock may condition on for one turn."""

    frame: int
    query: str
    answer_key: str
    corrupted: bool
    kind: str
    history: tuple = ()


def wrong_answer_for(answer_key: str) -> str:
    """A deterministic answer guaranteed to be judged invalid for the key."""
    head = answer_key.strip().lower().split(",")[0].split()
    if head and head[0] == "yes":
        return "no"
    if head and head[0] == "no":
        return "yes"
    return "something else entirely"


class EchoMock:
    """Always answers the key: a perfectly grounded model."""

    def respond(self, ctx: TurnContext) -> str:
        return ctx.answer_key


class WrongOnCorruptedMock:
    """Wrong exactly on corrupted frames, grounded everywhere else."""

    def respond(self, ctx: TurnContext) -> str:
        return wrong_answer_for(ctx.answer_key) if ctx.corrupted else ctx.answer_key


class StickyWrongMock:
    """Wrong on corrupted frames, and the wrong belief persists.

    After the last corrupted frame the mock keeps giving the wrong answer
    for ``persist`` further turns before snapping back to the key. This is
    the canonical stress case for the recovery metric: errors outlive the
    degradation that caused them.
    """

    def __init__(self, persist: int = 2):
        if persist < 0:
            raise ValueError(f"persist must be >= 0, got {persist}")
        self.persist = persist
        self._remaining = 0

    def respond(self, ctx: TurnContext) -> str:
        if ctx.corrupted:
            self._remaining = self.persist
            return wrong_answer_for(ctx.answer_key)
        if self._remaining > 0:
            self._remaining -= 1
            return wrong_answer_for(ctx.answer_key)
        return ctx.answer_key


class ScriptedMock:
    """Plays back a fixed list of answers, one per judged turn."""

    def __init__(self, answers):
        answers = list(answers)
        if not answers:
            raise ValueError("scripted mock needs at least one answer")
        self._answers = answers
        self._cursor = 0

    def respond(self, ctx: TurnContext) -> str:
        if self._cursor >= len(self._answers):
            raise ValueError(f"scripted mock exhausted after {len(self._answers)} answers")
        answer = self._answers[self._cursor]
        self._cursor += 1
        return answer


def make_mock(spec: str):
    """Build a harness mock from its config string.

    Recognized forms: "echo", "wrong_on_corrupted", "sticky" or
    "sticky:<persist>", or a path to a JSON file holding a list of answers
    (or {"answers": [...]}).
    """
    if spec == "echo":
        return EchoMock()
    if spec == "wrong_on_corrupted":
        return WrongOnCorruptedMock()
    if spec == "sticky" or spec.startswith("sticky:"):
        persist = int(spec.split(":", 1)[1]) if ":" in spec else 2
        return StickyWrongMock(persist)
    if spec.endswith(".json"):
        with open(spec, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        answers = payload["answers"] if isinstance(payload, dict) else payload
        return ScriptedMock(answers)
    raise ValueError(f"unknown mock spec {spec!r}")


# ---------------------------------------------------------------------------
# Perturbable mocks for the annotation/refinement path
# ---------------------------------------------------------------------------


def stable_embedding(text: str, dim: int = 8) -> np.ndarray:
    """Deterministic pseudo-embedding of an answer string."""
    rng = np.random.default_rng(child_seed(0, "embedding", text))
    return rng.normal(size=dim)


def _one_hot(answer: str) -> dict:
    return {answer: 1.0}


class StablePerturbableMock:
    """Identical output under every perturbation: maximal self-agreement."""

    def __init__(self, respond):
        # respond: fixed string or callable(query) -> answer
        self._respond = respond

    def infer(self, image, query, *, noise_level, dropout_rate, seed) -> InferenceRun:
        answer = self._respond(query) if callable(self._respond) else self._respond
        return InferenceRun(
            answer=answer,
            dist=_one_hot(answer),
            features=stable_embedding(answer),
            noise_level=noise_level,
            dropout_rate=dropout_rate,
            seed=seed,
        )


class DisagreeThenAgreeMock:
    """Scatters for a fixed number of rounds, then converges on one answer."""

    def __init__(self, runs_per_round: int, disagree_rounds: int, answer: str = "consensus"):
        self._runs_per_round = runs_per_round
        self._disagree_rounds = disagree_rounds
        self._answer = answer
        self._calls = 0

    def infer(self, image, query, *, noise_level, dropout_rate, seed) -> InferenceRun:
        round_index = self._calls // self._runs_per_round
        run_index = self._calls % self._runs_per_round
        self._calls += 1
        if round_index < self._disagree_rounds:
            answer = f"variant {run_index}"
        else:
            answer = self._answer
        return InferenceRun(
            answer=answer,
            dist=_one_hot(answer),
            features=stable_embedding(answer),
            noise_level=noise_level,
            dropout_rate=dropout_rate,
            seed=seed,
        )


class SplitAnswerMock:
    """Permanently split between two answers: irreducible disagreement."""

    def __init__(self, first: str = "yes", second: str = "no"):
        self._answers = (first, second)
        self._calls = 0

    def infer(self, image, query, *, noise_level, dropout_rate, seed) -> InferenceRun:
        answer = self._answers[self._calls % 2]
        self._calls += 1
        return InferenceRun(
            answer=answer,
            dist=_one_hot(answer),
            features=stable_embedding(answer),
            noise_level=noise_level,
            dropout_rate=dropout_rate,
            seed=seed,
        )


class PlantedTruthMock:
    """Synthetic annotator with known ground truth per query.

    Easy queries get a single confident answer from every run: correct with
    probability ``p_correct_easy`` (decided once per query from the master
    seed), so their ensembles carry no disagreement. Hard queries scatter
    across invented answers run by run, modeling a hallucinating annotator.
    """

    def __init__(self, truths: dict, hard: set, p_correct_easy: float = 0.8, master_seed: int = 0):
        self._truths = dict(truths)
        self._hard = set(hard)
        self._p = p_correct_easy
        self._master = master_seed

    def infer(self, image, query, *, noise_level, dropout_rate, seed) -> InferenceRun:
        truth = self._truths[query]
        if query in self._hard:
            rng = np.random.default_rng(child_seed(self._master, "hard", query, seed))
            answer = f"phantom {int(rng.integers(3))}"
        else:
            rng = np.random.default_rng(child_seed(self._master, "easy", query))
            answer = truth if rng.random() < self._p else "phantom 0"
        return InferenceRun(
            answer=answer,
            dist=_one_hot(answer),
            features=stable_embedding(answer),
            noise_level=noise_level,
            dropout_rate=dropout_rate,
            seed=seed,
        )


class FailingPerturbableMock:
    """Raises on a chosen call index; exercises ensemble error propagation."""

    def __init__(self, fail_at: int = 0):
        self._fail_at = fail_at
        self._calls = 0

    def infer(self, image, query, *, noise_level, dropout_rate, seed) -> InferenceRun:
        index = self._calls
        self._calls += 1
        if index == self._fail_at:
            raise RuntimeError(f"synthetic model failure at call {index}")
        answer = "ok"
        return InferenceRun(
            answer=answer,
            dist=_one_hot(answer),
            features=stable_embedding(answer),
            noise_level=noise_level,
            dropout_rate=dropout_rate,
            seed=seed,
        )


def make_perturbable_mock(spec: str):
    """Build an annotation mock from its config string.

    Forms: "stable" or "stable:<answer>" (default answer "object"),
    "split" or "split:<a>:<b>".
    """
    if spec == "stable" or spec.startswith("stable:"):
        answer = spec.split(":", 1)[1] if ":" in spec else "object"
        return StablePerturbableMock(answer)
    if spec == "split" or spec.startswith("split:"):
        parts = spec.split(":")
        if len(parts) == 3:
            return SplitAnswerMock(parts[1], parts[2])
        return SplitAnswerMock()
    raise ValueError(f"unknown perturbable mock spec {spec!r}")
