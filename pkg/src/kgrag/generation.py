"""Prompt assembly from retrieved context and answer-generation providers."""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import httpx

from kgrag.errors import ArgumentError, ProviderError, RetryableError, UnprocessableError
from kgrag.ingest import tokenize
from kgrag.retrieval import SubgraphResult
from kgrag.store import EntityNode, ImageNode

PROMPT_VERSION = "prompt-v1"
MCQ_INSTRUCTION = "Answer with the letter(s) of the correct option(s) only, separated by commas."

_VIDEO_EXT = (".mp4", ".mov", ".avi", ".mkv", ".webm")


@dataclass
class GenerationRequest:
    question: str
    options: list[tuple[str, str]] | None = None
    media: list[str] = field(default_factory=list)
    context: SubgraphResult | None = None
    mode: str = "open"
    trace: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("mcq", "open"):
            raise ArgumentError(f"unknown mode {self.mode!r}")
        if not self.question.strip():
            raise ArgumentError("question is empty")
        if self.mode == "mcq":
            if not self.options:
                raise ArgumentError("mcq request needs options")
            labels = [label for label, _ in self.options]
            if len(set(labels)) != len(labels):
                raise ArgumentError("option labels must be unique")
            if any(len(label) != 1 or not label.isupper() or not label.isalpha() for label in labels):
                raise ArgumentError("option labels must be single capital letters")


# -- prompt assembly -----------------------------------------------------

@dataclass
class _Parts:
    entities: list[tuple[str, str | None]]
    images: list[tuple[str, str | None]]
    chunks: list[tuple[float, str]]


def _parts_from(ctx: SubgraphResult | None) -> _Parts:
    if ctx is None:
        return _Parts([], [], [])
    ents = []
    for c in ctx.entities:
        node = ctx.nodes.get(c.id)
        if isinstance(node, EntityNode):
            ents.append((node.name, node.description or None))
        elif isinstance(node, ImageNode):
            ents.append((f"[image] {node.uri}", node.caption or None))
        else:
            ents.append((c.id, None))
    images = [(img.uri, img.caption or None) for img in ctx.images]
    chunks = [(score, chunk.text) for chunk, score in ctx.chunks]
    return _Parts(ents, images, chunks)


def _render(req: GenerationRequest, parts: _Parts) -> str:
    out: list[str] = []
    if parts.entities:
        out.append("ENTITIES:")
        for i, (name, desc) in enumerate(parts.entities, 1):
            out.append(f"{i}. {name}" + (f" — {desc}" if desc else ""))
        out.append("")
    if parts.images:
        out.append("IMAGES:")
        for uri, caption in parts.images:
            out.append(f"- {uri}" + (f": {caption}" if caption else ""))
        out.append("")
    if parts.chunks:
        out.append("CONTEXT CHUNKS:")
        for i, (score, text) in enumerate(parts.chunks, 1):
            out.append(f"[{i}] (score {score:.4f}) {text}")
        out.append("")
    out.append("QUESTION:")
    out.append(req.question.strip())
    if req.mode == "mcq":
        out.append("")
        out.append("OPTIONS:")
        for label, text in req.options:
            out.append(f"{label}. {text}")
        out.append("")
        out.append(MCQ_INSTRUCTION)
    return "\n".join(out) + "\n"


def _trim_steps(parts: _Parts):
    """Yield (label, mutate) steps in trimming order."""
    for i in range(len(parts.chunks) - 1, -1, -1):
        yield f"drop chunk {i + 1}", lambda i=i: parts.chunks.pop(i)
    for i in range(len(parts.entities) - 1, -1, -1):
        if parts.entities[i][1]:
            yield f"drop description of entity {i + 1}", lambda i=i: parts.entities.__setitem__(i, (parts.entities[i][0], None))
    for i in range(len(parts.images) - 1, -1, -1):
        if parts.images[i][1]:
            yield f"drop caption of image {i + 1}", lambda i=i: parts.images.__setitem__(i, (parts.images[i][0], None))
    for i in range(len(parts.entities) - 1, -1, -1):
        yield f"drop entity {i + 1}", lambda i=i: parts.entities.pop(i)
    for i in range(len(parts.images) - 1, -1, -1):
        yield f"drop image {i + 1}", lambda i=i: parts.images.pop(i)


def assemble_prompt(req: GenerationRequest, max_tokens: int | None = None, tokenizer_id: str = "ws-v1") -> str:
    """Render the versioned prompt template for ``req``.

    When ``max_tokens`` is set and the estimate exceeds it, context is
    trimmed: lowest-ranked chunks first, then entity descriptions, then
    image captions (and, as a last resort, whole entities and images).
    Each step is appended to ``req.trace["trimmed"]``.
    """
    parts = _parts_from(req.context)
    prompt = _render(req, parts)
    if max_tokens is None:
        return prompt

    def n_tokens(text):
        return len(tokenize(text, tokenizer_id))

    bare = _render(req, _Parts([], [], []))
    if n_tokens(bare) > max_tokens:
        raise UnprocessableError(f"question and options alone exceed the {max_tokens}-token budget")
    trimmed: list[str] = []
    steps = _trim_steps(parts)
    while n_tokens(prompt) > max_tokens:
        label, apply = next(steps)
        apply()
        trimmed.append(label)
        prompt = _render(req, parts)
    if trimmed:
        req.trace["trimmed"] = trimmed
    return prompt


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


# -- providers -------------------------------------------------------------

class GenerationProvider(Protocol):
    provider_id: str
    max_context_tokens: int

    def complete(self, prompt: str, media: Sequence[str] = ()) -> str: ...


CANNED_ANSWERS = (
    "Slow down, keep a safe distance and follow the traffic signs.",
    "Stop the vehicle safely and turn on the hazard lights.",
    "Yield to pedestrians and proceed with caution.",
    "Do not enter; choose another route and report the hazard.",
)


class EchoProvider:
    """Offline provider for tests and dry runs.

    ``answers`` maps a question text or a prompt sha256 to a scripted
    reply. Anything else gets a canned answer chosen by the prompt hash.
    """

    provider_id = "echo"

    def __init__(self, answers: Mapping[str, str] | None = None, max_context_tokens: int = 8192):
        self.answers = dict(answers or {})
        self.max_context_tokens = max_context_tokens
        self.calls: list[str] = []

    def complete(self, prompt: str, media: Sequence[str] = (), question: str | None = None) -> str:
        self.calls.append(prompt)
        h = prompt_hash(prompt)
        if h in self.answers:
            return self.answers[h]
        if question is not None and question in self.answers:
            return self.answers[question]
        return CANNED_ANSWERS[int(h[:8], 16) % len(CANNED_ANSWERS)]


class ChatCompletionsProvider:
    """OpenAI-compatible ``POST /chat/completions`` client with retries.

    Transport failures and timeouts are retried with exponential backoff;
    a non-2xx response fails immediately. ``attempt_log`` keeps the number
    of attempts used by each call.
    """

    provider_id = "openai-compatible"

    def __init__(
        self,
        endpoint: str | None = None,
        model_name: str = "gpt-4o-mini",
        api_key: str | None = None,
        timeout: float = 60.0,
        max_context_tokens: int = 8192,
        max_attempts: int = 3,
        temperature: float = 0.0,
        transport: httpx.BaseTransport | None = None,
        sleep=time.sleep,
    ):
        base = endpoint or os.environ.get("LLM_API_URL")
        if not base:
            raise ArgumentError("no generation endpoint configured (LLM_API_URL)")
        base = base.rstrip("/")
        self.endpoint = base if base.endswith("/chat/completions") else base + "/chat/completions"
        self.model_name = model_name
        self.api_key = api_key if api_key is not None else os.environ.get("LLM_API_KEY", "")
        self.timeout = timeout
        self.max_context_tokens = max_context_tokens
        self.max_attempts = max_attempts
        self.temperature = temperature
        self._transport = transport
        self._sleep = sleep
        self.attempt_log: list[int] = []

    def payload(self, prompt: str, media: Sequence[str] = ()) -> dict:
        content: list[dict] = [{"type": "text", "text": prompt}]
        for uri in media:
            if uri.lower().endswith(_VIDEO_EXT):
                content.append({"type": "video_url", "video_url": {"url": uri}})
            else:
                content.append({"type": "image_url", "image_url": {"url": uri}})
        return {
            "model": self.model_name,
            "messages": [{"role": "user", "content": content if media else prompt}],
            "temperature": self.temperature,
        }

    def complete(self, prompt: str, media: Sequence[str] = (), question: str | None = None) -> str:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        body = self.payload(prompt, media)
        for attempt in range(1, self.max_attempts + 1):
            try:
                with httpx.Client(transport=self._transport, timeout=self.timeout) as client:
                    resp = client.post(self.endpoint, json=body, headers=headers)
            except (httpx.TransportError, httpx.TimeoutException) as exc:
                if attempt == self.max_attempts:
                    self.attempt_log.append(attempt)
                    raise RetryableError(f"generation request failed: {exc}", attempts=attempt) from exc
                self._sleep(min(2 ** (attempt - 1), 8))
                continue
            self.attempt_log.append(attempt)
            if resp.status_code // 100 != 2:
                raise ProviderError(f"generation endpoint returned {resp.status_code}", resp.status_code, resp.text)
            try:
                return resp.json()["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError):
                raise ProviderError("unexpected chat completion payload", resp.status_code, resp.text) from None
        raise AssertionError("unreachable")


def generate(provider: GenerationProvider, req: GenerationRequest) -> str:
    """Assemble the prompt within the provider's budget and return raw model text."""
    prompt = assemble_prompt(req, max_tokens=provider.max_context_tokens)
    return provider.complete(prompt, req.media, question=req.question)
