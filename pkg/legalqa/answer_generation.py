"""
Turn a question and the retrieved chunks into an answer.

Generative providers receive a rendered prompt, extractive providers
receive the question and the assembled context and answer with a span
into that context.

Remote generation contract::

    POST {"model", "prompt", "max_output_tokens", "temperature"}
    → {"text": "...", "usage": {"total_tokens": 123}}

Remote extractive contract::

    POST {"question", "context"} → {"start": 0, "end": 42}
"""

import math
import re
import threading
from abc import ABC
from collections.abc import Sequence
from typing import Any, Literal, Optional

from pydantic.dataclasses import dataclass

from legalqa.bm25_index import tokenize
from legalqa.config import Config, GenerationProviderSpec
from legalqa.exceptions import (
    LegalqaConfigException,
    LegalqaPreconditionException,
    LegalqaRequestException,
    LegalqaSpanException,
)
from legalqa.log import logger
from legalqa.object_types import Answer, Chunk
from legalqa.request_handler import RequestHandler

TemplateId = Literal["davinci_legal", "flan_stepwise", "none"]

ABSTENTION_PHRASE = "sorry, i don't know"

CHUNK_SEPARATOR = "\n\n"
"""Chunks are joined by one blank line."""

_slot_pattern = re.compile(r"\{(context|question)\}")


@dataclass(frozen=True)
class PromptTemplate:
    id: TemplateId

    text: str
    """Contains the slots ``{context}`` and ``{question}`` exactly once."""


DAVINCI_LEGAL = PromptTemplate(
    id="davinci_legal",
    text=(
        "Your task is to answer a question as a legal assistant to the best of "
        "your abilities, using the context given in the document. If the country "
        "is not mentioned in the question, your response should be related to "
        "India. You have knowledge of all laws and legal judgments of India. Be "
        "detailed in your answer, provide relevant sections and case laws in your "
        "answer only if you are confident that they are correct.\n"
        "Note that if you do not know the answer, it is acceptable to say Sorry, "
        "I don't know.\n"
        "Context:{context}\n"
        "Question:{question}"
    ),
)

FLAN_STEPWISE = PromptTemplate(
    id="flan_stepwise",
    text=(
        "Answer the following question using the context by reasoning step by "
        "step. If you don't know the answer, just say Sorry, I don't know:\n"
        "Context:{context}\n"
        "Question:{question}"
    ),
)

NO_TEMPLATE = PromptTemplate(id="none", text="{question}")
"""The question is sent as is, without context."""

templates: dict[TemplateId, PromptTemplate] = {
    "davinci_legal": DAVINCI_LEGAL,
    "flan_stepwise": FLAN_STEPWISE,
    "none": NO_TEMPLATE,
}


def get_template(template_id: TemplateId) -> PromptTemplate:
    if template_id not in templates:
        raise LegalqaConfigException(f"Unknown prompt template: {template_id}")
    return templates[template_id]


def estimate_tokens(text: str) -> int:
    """``ceil(chars / 4)``"""
    return math.ceil(len(text) / 4)


def is_abstention(text: str) -> bool:
    """Case and whitespace insensitive search for “Sorry, I don't know”."""
    normalized = " ".join(text.replace("’", "'").split()).lower()
    return ABSTENTION_PHRASE in normalized


@dataclass
class AssembledContext:
    text: str

    chunk_ids: list[str]
    """The chunks that made it into the context, in rank order."""

    truncated: bool
    """``True`` if a chunk was cut or left out."""


def assemble_context(
    chunks: Sequence[Chunk],
    budget_tokens: int,
    template_overhead_tokens: int = 0,
    question: str = "",
) -> AssembledContext:
    """
    Pack the ranked chunks greedily into the token budget.

    The first chunk is always included, cut at a character boundary if it
    alone exceeds the budget. A budget without room for any context is an
    error.

    :param chunks: The retrieved chunks in rank order.
    :param budget_tokens: The token budget of the provider.
    :param template_overhead_tokens: Tokens used by the prompt template and
        reserved for the completion.
    :param question: The question, its estimate is subtracted as well.
    """
    if not chunks:
        raise LegalqaPreconditionException("Cannot assemble a context without chunks!")
    if budget_tokens <= template_overhead_tokens:
        raise LegalqaPreconditionException(
            f"The budget ({budget_tokens}) must exceed the overhead ({template_overhead_tokens})!"
        )
    available = budget_tokens - template_overhead_tokens - estimate_tokens(question)
    if available <= 0:
        raise LegalqaPreconditionException(
            f"The question and the overhead ({template_overhead_tokens}) leave no room "
            f"for context in the budget ({budget_tokens})!"
        )

    first = chunks[0]
    if estimate_tokens(first.text) > available:
        text = first.text[: available * 4]
        return AssembledContext(text=text, chunk_ids=[first.chunk_id], truncated=True)

    text = first.text
    chunk_ids = [first.chunk_id]
    for chunk in chunks[1:]:
        candidate = text + CHUNK_SEPARATOR + chunk.text
        if estimate_tokens(candidate) > available:
            return AssembledContext(text=text, chunk_ids=chunk_ids, truncated=True)
        text = candidate
        chunk_ids.append(chunk.chunk_id)
    return AssembledContext(text=text, chunk_ids=chunk_ids, truncated=False)


def render_prompt(template: PromptTemplate, context: str, question: str) -> str:
    """
    Substitute both slots in one pass, inserted text is never substituted
    again.
    """
    if not question.strip():
        raise LegalqaPreconditionException("The question must not be empty!")
    slots = {"context": context, "question": question}
    return _slot_pattern.sub(lambda match: slots[match.group(1)], template.text)


@dataclass
class Generation:
    text: str

    token_usage: Optional[int] = None


@dataclass
class Span:
    start: int

    end: int


class GenerationProvider(ABC):
    spec: GenerationProviderSpec

    calls: int

    seed: Optional[int]
    """Sent along with every generation request if set."""

    def __init__(self, spec: GenerationProviderSpec) -> None:
        self.spec = spec
        self.calls = 0
        self.seed = None
        self.__lock = threading.Lock()

    @property
    def name(self) -> str:
        return self.spec.name or "unnamed"

    @property
    def mode(self) -> Literal["generative", "extractive"]:
        return self.spec.mode

    def _count(self) -> None:
        with self.__lock:
            self.calls += 1

    def generate(self, prompt: str) -> Generation:
        if self.mode != "generative":
            raise LegalqaConfigException(f"Provider {self.name} is not generative!")
        self._count()
        return self._generate(prompt)

    def extract(self, question: str, context: str) -> Span:
        if self.mode != "extractive":
            raise LegalqaConfigException(f"Provider {self.name} is not extractive!")
        self._count()
        return self._extract(question, context)

    def _generate(self, prompt: str) -> Generation:
        raise NotImplementedError

    def _extract(self, question: str, context: str) -> Span:
        raise NotImplementedError


_sentence_pattern = re.compile(r"[^.]*[^\s.][^.]*(?:\.|$)")


def _sentences(text: str) -> list[tuple[int, int]]:
    """Spans of the sentences of ``text`` without surrounding whitespace."""
    spans: list[tuple[int, int]] = []
    for match in _sentence_pattern.finditer(text):
        start, end = match.span()
        while start < end and text[start].isspace():
            start += 1
        while end > start and text[end - 1].isspace():
            end -= 1
        if end > start:
            spans.append((start, end))
    return spans


class MockGenerationProvider(GenerationProvider):
    """
    Offline generative provider.

    ``echo`` answers with the first sentence of the context found in the
    prompt, or with the prompt itself if the prompt has no context.
    ``abstain`` always answers “Sorry, I don't know.”
    """

    def _generate(self, prompt: str) -> Generation:
        if self.spec.mock_behavior == "abstain":
            return Generation(text="Sorry, I don't know.")
        marker = prompt.find("Context:")
        if marker < 0:
            return Generation(text=prompt)
        context = prompt[marker + len("Context:") :]
        context = context.rsplit("\nQuestion:", 1)[0]
        sentences = _sentences(context)
        if not sentences:
            return Generation(text="Sorry, I don't know.")
        start, end = sentences[0]
        return Generation(text=context[start:end])


class MockExtractiveProvider(GenerationProvider):
    """
    Offline extractive provider: the span of the first sentence sharing a
    token with the question, else the first sentence.
    """

    def _extract(self, question: str, context: str) -> Span:
        sentences = _sentences(context)
        if not sentences:
            return Span(start=0, end=0)
        keywords = set(tokenize(question))
        for start, end in sentences:
            if keywords & set(tokenize(context[start:end])):
                return Span(start=start, end=end)
        start, end = sentences[0]
        return Span(start=start, end=end)


class RemoteGenerationProvider(GenerationProvider, RequestHandler):
    def __init__(self, spec: GenerationProviderSpec) -> None:
        GenerationProvider.__init__(self, spec)
        RequestHandler.__init__(
            self,
            name=spec.name or "unnamed",
            endpoint=spec.endpoint,
            auth_env=spec.auth_env,
            timeout=spec.timeout,
            max_attempts=spec.max_attempts,
            backoff_base=spec.backoff_base,
        )

    def _generate(self, prompt: str) -> Generation:
        request: dict[str, Any] = {
            "model": self.spec.model,
            "prompt": prompt,
            "max_output_tokens": self.spec.max_output_tokens,
            "temperature": self.spec.temperature,
        }
        if self.seed is not None:
            request["seed"] = self.seed
        response = self._request(request)
        payload: Any = response.payload
        if not isinstance(payload, dict) or not isinstance(payload.get("text"), str):
            raise LegalqaRequestException(
                f"Provider {self.name} returned no text", payload
            )
        usage = payload.get("usage") or {}
        return Generation(text=payload["text"], token_usage=usage.get("total_tokens"))

    def _extract(self, question: str, context: str) -> Span:
        response = self._request({"question": question, "context": context})
        payload: Any = response.payload
        try:
            return Span(start=payload["start"], end=payload["end"])
        except (TypeError, KeyError, ValueError) as e:
            raise LegalqaRequestException(
                f"Provider {self.name} returned no span: {e}", payload
            )


def get_generation_provider(name: str, config: Config) -> GenerationProvider:
    """
    :param name: The name of the provider, for example ``davinci``,
        ``flan-ul2``, ``longformer`` or ``mock-echo``.
    :param config: The configuration that holds the provider specs.
    """
    spec = config.get_generation_provider_spec(name)
    if spec.kind == "remote":
        return RemoteGenerationProvider(spec)
    if spec.mode == "extractive":
        return MockExtractiveProvider(spec)
    return MockGenerationProvider(spec)


def template_overhead(provider: GenerationProvider, template: PromptTemplate) -> int:
    """Tokens of the empty template plus the reserved completion tokens."""
    return (
        estimate_tokens(_slot_pattern.sub("", template.text))
        + provider.spec.max_output_tokens
    )


def generate_answer(
    provider: GenerationProvider,
    template: PromptTemplate,
    question: str,
    chunks: Sequence[Chunk],
) -> Answer:
    """
    Retrieval augmented generation: pack the chunks, render the prompt and
    call the provider.
    """
    if provider.mode != "generative":
        raise LegalqaConfigException(f"Provider {provider.name} is not generative!")
    if template.id == "none":
        raise LegalqaConfigException(
            "The template none cannot be used with retrieved context!"
        )
    context = assemble_context(
        chunks,
        provider.spec.token_budget,
        template_overhead(provider, template),
        question,
    )
    prompt = render_prompt(template, context.text, question)
    logger.verbose("Prompt for %s: %s", provider.name, prompt)
    generation = provider.generate(prompt)
    return Answer(
        text=generation.text,
        mode="generative",
        abstained=is_abstention(generation.text),
        context_chunk_ids=context.chunk_ids,
        truncated_context=context.truncated,
        token_usage=generation.token_usage,
    )


def extract_answer(
    provider: GenerationProvider, question: str, chunks: Sequence[Chunk]
) -> Answer:
    """
    Extractive question answering: the answer is exactly
    ``context[start:end]`` of the span returned by the provider.
    """
    if provider.mode != "extractive":
        raise LegalqaConfigException(f"Provider {provider.name} is not extractive!")
    if not question.strip():
        raise LegalqaPreconditionException("The question must not be empty!")
    context = assemble_context(
        chunks, provider.spec.token_budget, 0, question
    )
    span = provider.extract(question, context.text)
    if span.end <= span.start:
        raise LegalqaSpanException(f"empty span ({span.start}, {span.end})")
    if span.start < 0 or span.end > len(context.text):
        raise LegalqaSpanException(
            f"span ({span.start}, {span.end}) out of bounds of a context of {len(context.text)} characters"
        )
    text = context.text[span.start : span.end]
    return Answer(
        text=text,
        mode="extractive",
        abstained=is_abstention(text),
        context_chunk_ids=context.chunk_ids,
        truncated_context=context.truncated,
    )


def direct_answer(provider: GenerationProvider, question: str) -> Answer:
    """Send the bare question without retrieval."""
    if provider.mode != "generative":
        raise LegalqaConfigException(f"Provider {provider.name} is not generative!")
    prompt = render_prompt(NO_TEMPLATE, "", question)
    generation = provider.generate(prompt)
    return Answer(
        text=generation.text,
        mode="generative",
        abstained=is_abstention(generation.text),
        context_chunk_ids=[],
        token_usage=generation.token_usage,
    )
