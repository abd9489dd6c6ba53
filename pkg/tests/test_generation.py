import json

import httpx
import pytest

from kgrag.errors import ArgumentError, ProviderError, RetryableError, UnprocessableError
from kgrag.generation import (
    MCQ_INSTRUCTION,
    ChatCompletionsProvider,
    EchoProvider,
    GenerationRequest,
    assemble_prompt,
    generate,
    prompt_hash,
)
from kgrag.retrieval import CandidateEntity, SubgraphResult
from kgrag.store import ChunkNode, EntityNode, ImageNode

OPTIONS = [("A", "Stop"), ("B", "Go")]


def _fixture_context():
    e1 = EntityNode("ent:1", "stop sign", "term", "red octagon", ["c1"])
    e2 = EntityNode("ent:2", "stop line", "term", "white line", ["c2"])
    img = ImageNode("img:1", "fig/stop.png", "stop sign at dusk", "c1")
    c1 = ChunkNode("c1", "Stop fully at every stop sign.", "d", (0, 6), 6)
    c2 = ChunkNode("c2", "Wait behind the stop line.", "d", (6, 11), 5)
    return SubgraphResult(
        entities=[CandidateEntity("ent:1", 0, 0.9), CandidateEntity("ent:2", 1, 0.4)],
        nodes={"ent:1": e1, "ent:2": e2},
        images=[img],
        chunks=[(c1, 0.75), (c2, 0.5)],
    )


FULL_PROMPT = """\
ENTITIES:
1. stop sign — red octagon
2. stop line — white line

IMAGES:
- fig/stop.png: stop sign at dusk

CONTEXT CHUNKS:
[1] (score 0.7500) Stop fully at every stop sign.
[2] (score 0.5000) Wait behind the stop line.

QUESTION:
What do you do at a stop sign?

OPTIONS:
A. Stop
B. Go

""" + MCQ_INSTRUCTION + "\n"


def test_request_validation():
    with pytest.raises(ArgumentError):
        GenerationRequest("q", mode="mcq")
    with pytest.raises(ArgumentError):
        GenerationRequest("q", options=[("A", "x"), ("A", "y")], mode="mcq")
    with pytest.raises(ArgumentError):
        GenerationRequest("q", mode="chat")


def test_no_rag_prompt_has_only_question_and_options():
    p = assemble_prompt(GenerationRequest("Is it safe?", context=None))
    assert p == "QUESTION:\nIs it safe?\n"
    p = assemble_prompt(GenerationRequest("Is it safe?", options=OPTIONS, mode="mcq", context=SubgraphResult()))
    assert p == "QUESTION:\nIs it safe?\n\nOPTIONS:\nA. Stop\nB. Go\n\n" + MCQ_INSTRUCTION + "\n"


def test_full_template_deterministic():
    req = GenerationRequest("What do you do at a stop sign?", options=OPTIONS, mode="mcq", context=_fixture_context())
    assert assemble_prompt(req) == FULL_PROMPT
    assert assemble_prompt(req) == assemble_prompt(req)


def test_trimming_drops_lowest_chunk_first():
    req = GenerationRequest("What do you do at a stop sign?", options=OPTIONS, mode="mcq", context=_fixture_context())
    n_full = len(FULL_PROMPT.split())
    dropped_chunk_tokens = len("[2] (score 0.5000) Wait behind the stop line.".split())
    budget = n_full - 1
    prompt = assemble_prompt(req, max_tokens=budget)
    expected = FULL_PROMPT.replace("[2] (score 0.5000) Wait behind the stop line.\n", "")
    assert prompt == expected
    assert len(prompt.split()) == n_full - dropped_chunk_tokens
    assert req.trace["trimmed"] == ["drop chunk 2"]


def test_trimming_order_and_floor():
    req = GenerationRequest("What do you do at a stop sign?", options=OPTIONS, mode="mcq", context=_fixture_context())
    bare = assemble_prompt(GenerationRequest("What do you do at a stop sign?", options=OPTIONS, mode="mcq"))
    prompt = assemble_prompt(req, max_tokens=len(bare.split()) + 9)
    assert req.trace["trimmed"][:4] == ["drop chunk 2", "drop chunk 1", "drop description of entity 2", "drop description of entity 1"]
    assert "QUESTION:\nWhat do you do at a stop sign?" in prompt and "A. Stop" in prompt
    with pytest.raises(UnprocessableError):
        assemble_prompt(req, max_tokens=3)


def test_echo_provider():
    echo = EchoProvider()
    req = GenerationRequest("Is fog dangerous?")
    a = generate(echo, req)
    assert a == generate(EchoProvider(), req)
    scripted = EchoProvider({"Pick one": "A"})
    assert generate(scripted, GenerationRequest("Pick one", options=OPTIONS, mode="mcq")) == "A"
    prompt = assemble_prompt(req)
    assert EchoProvider({prompt_hash(prompt): "by hash"}).complete(prompt) == "by hash"


def _chat_ok(text):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


def test_chat_provider_retries_then_succeeds():
    seen = []

    def handler(request):
        seen.append(request)
        if len(seen) <= 2:
            raise httpx.ConnectError("connection reset")
        return _chat_ok("B")

    p = ChatCompletionsProvider("http://llm.local/v1", model_name="m", api_key="secret",
                                transport=httpx.MockTransport(handler), sleep=lambda s: None)
    req = GenerationRequest("q?", options=OPTIONS, mode="mcq", media=["http://x/a.jpg", "http://x/v.mp4"])
    assert generate(p, req) == "B"
    assert len(seen) == 3 and p.attempt_log == [3]
    body = json.loads(seen[-1].content)
    assert str(seen[-1].url) == "http://llm.local/v1/chat/completions"
    assert seen[-1].headers["authorization"] == "Bearer secret"
    parts = body["messages"][0]["content"]
    assert parts[0]["type"] == "text"
    assert parts[1] == {"type": "image_url", "image_url": {"url": "http://x/a.jpg"}}
    assert parts[2] == {"type": "video_url", "video_url": {"url": "http://x/v.mp4"}}


def test_chat_provider_exhausts_retries():
    def handler(request):
        raise httpx.ReadTimeout("slow")

    p = ChatCompletionsProvider("http://llm.local", transport=httpx.MockTransport(handler), sleep=lambda s: None)
    with pytest.raises(RetryableError) as err:
        p.complete("hi")
    assert err.value.attempts == 3


def test_chat_provider_http_error_carries_body():
    p = ChatCompletionsProvider("http://llm.local", transport=httpx.MockTransport(lambda r: httpx.Response(503, text="overloaded")))
    with pytest.raises(ProviderError) as err:
        p.complete("hi")
    assert err.value.status == 503 and err.value.body == "overloaded"
    assert not isinstance(err.value, RetryableError)


def test_chat_provider_env(monkeypatch):
    monkeypatch.setenv("LLM_API_URL", "http://env.local/v1/")
    monkeypatch.setenv("LLM_API_KEY", "k")
    p = ChatCompletionsProvider()
    assert p.endpoint == "http://env.local/v1/chat/completions" and p.api_key == "k"
    monkeypatch.delenv("LLM_API_URL")
    with pytest.raises(ArgumentError):
        ChatCompletionsProvider()
