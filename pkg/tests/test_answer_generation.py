import random
from typing import Any

import pytest

from legalqa.answer_generation import (
    DAVINCI_LEGAL,
    FLAN_STEPWISE,
    NO_TEMPLATE,
    GenerationProvider,
    MockExtractiveProvider,
    MockGenerationProvider,
    RemoteGenerationProvider,
    Span,
    assemble_context,
    direct_answer,
    estimate_tokens,
    extract_answer,
    generate_answer,
    get_generation_provider,
    get_template,
    is_abstention,
    render_prompt,
    template_overhead,
)
from legalqa.config import Config, GenerationProviderSpec
from legalqa.exceptions import (
    LegalqaConfigException,
    LegalqaPreconditionException,
    LegalqaRequestException,
    LegalqaSpanException,
)
from legalqa.object_types import Chunk
from tests.conftest import FakeResponse, FakeServer


def chunk(text: str, id: str = "d#0") -> Chunk:
    return Chunk(chunk_id=id, doc_id=id.split("#")[0], seq=0, text=text)


def ranked(*texts: str) -> list[Chunk]:
    return [chunk(text, f"c#{i}") for i, text in enumerate(texts)]


class FixedSpanProvider(GenerationProvider):
    def __init__(self, span: Span, token_budget: int = 4096) -> None:
        super().__init__(
            GenerationProviderSpec(
                token_budget=token_budget, kind="mock", mode="extractive", name="fixed"
            )
        )
        self.span = span

    def _extract(self, question: str, context: str) -> Span:
        return self.span


@pytest.fixture
def echo(config: Config) -> GenerationProvider:
    return get_generation_provider("mock-echo", config)


@pytest.fixture
def extractor(config: Config) -> GenerationProvider:
    return get_generation_provider("mock-extractive", config)


class TestTemplates:
    def test_davinci_preamble(self) -> None:
        assert DAVINCI_LEGAL.text.startswith(
            "Your task is to answer a question as a legal assistant"
        )
        assert "it is acceptable to say Sorry, I don't know." in DAVINCI_LEGAL.text

    def test_flan_preamble(self) -> None:
        assert FLAN_STEPWISE.text.startswith(
            "Answer the following question using the context by reasoning step by step."
        )

    def test_get_template(self) -> None:
        assert get_template("flan_stepwise") is FLAN_STEPWISE
        with pytest.raises(LegalqaConfigException, match="Unknown prompt template"):
            get_template("t5")  # type: ignore


class TestRenderPrompt:
    def test_davinci(self) -> None:
        prompt = render_prompt(DAVINCI_LEGAL, "C", "Q")
        assert prompt == DAVINCI_LEGAL.text.replace("{context}", "C").replace(
            "{question}", "Q"
        )
        assert prompt.endswith("Context:C\nQuestion:Q")

    def test_empty_context(self) -> None:
        assert render_prompt(FLAN_STEPWISE, "", "Q").endswith("Context:\nQuestion:Q")

    def test_byte_stable(self) -> None:
        assert render_prompt(FLAN_STEPWISE, "C", "Q") == render_prompt(FLAN_STEPWISE, "C", "Q")

    def test_slot_markers_in_input(self) -> None:
        prompt = render_prompt(DAVINCI_LEGAL, "{question}", "Q")
        assert prompt.endswith("Context:{question}\nQuestion:Q")

    def test_injective(self) -> None:
        rng = random.Random(5)
        seen: dict[str, tuple[str, str]] = {}
        for _ in range(200):
            pair = (
                "".join(rng.choice("ab \n") for _ in range(rng.randint(0, 5))),
                "".join(rng.choice("ab?") for _ in range(rng.randint(1, 5))),
            )
            prompt = render_prompt(DAVINCI_LEGAL, *pair)
            assert seen.setdefault(prompt, pair) == pair

    def test_empty_question(self) -> None:
        with pytest.raises(LegalqaPreconditionException, match="question must not be empty"):
            render_prompt(DAVINCI_LEGAL, "C", " ")

    def test_no_template(self) -> None:
        assert render_prompt(NO_TEMPLATE, "", "What is bail?") == "What is bail?"


class TestAssembleContext:
    def test_estimate(self) -> None:
        assert [estimate_tokens("x" * n) for n in (0, 1, 4, 5, 8)] == [0, 1, 1, 2, 2]

    def test_tiny_chunk(self) -> None:
        context = assemble_context([chunk("Bail is a right.")], 4097)
        assert context.text == "Bail is a right."
        assert context.chunk_ids == ["d#0"]
        assert not context.truncated

    def test_only_first_chunk(self) -> None:
        context = assemble_context(ranked(*["x" * 4000] * 4), 2048, 300)
        assert context.chunk_ids == ["c#0"]
        assert context.truncated
        assert len(context.text) == 4000

    def test_first_chunk_cut(self) -> None:
        context = assemble_context(ranked("y" * 10000, "z"), 2048, 300)
        assert context.truncated
        assert context.text == "y" * ((2048 - 300) * 4)
        assert estimate_tokens(context.text) <= 2048 - 300

    def test_exact_fit(self) -> None:
        # 4 + 2 + 4 + 2 + 4 = 16 characters, 4 tokens
        context = assemble_context(ranked("aaaa", "bbbb", "cccc"), 6, 2)
        assert context.text == "aaaa\n\nbbbb\n\ncccc"
        assert not context.truncated

    def test_question_counts(self) -> None:
        context = assemble_context(ranked("aaaa", "bbbb", "cccc"), 6, 2, question="Why?")
        assert context.chunk_ids == ["c#0", "c#1"]
        assert context.truncated

    def test_never_exceeds_budget(self) -> None:
        rng = random.Random(11)
        for _ in range(300):
            chunks = ranked(*["w" * rng.randint(1, 400) for _ in range(rng.randint(1, 6))])
            budget = rng.randint(10, 300)
            overhead = rng.randint(0, budget - 1)
            context = assemble_context(chunks, budget, overhead)
            assert estimate_tokens(context.text) <= budget - overhead
            assert context.chunk_ids[0] == "c#0"

    def test_no_chunks(self) -> None:
        with pytest.raises(LegalqaPreconditionException, match="without chunks"):
            assemble_context([], 100)

    def test_overhead_too_large(self) -> None:
        with pytest.raises(LegalqaPreconditionException, match="must exceed the overhead"):
            assemble_context([chunk("a")], 100, 100)

    def test_question_uses_up_budget(self) -> None:
        with pytest.raises(LegalqaPreconditionException, match="leave no room for context"):
            assemble_context([chunk("a")], 100, 90, question="q" * 40)
        context = assemble_context([chunk("abcdefgh")], 100, 90, question="q" * 36)
        assert context.text == "abcd"
        assert context.truncated


class TestAbstention:
    @pytest.mark.parametrize(
        "text",
        [
            "Sorry, I don't know",
            "sorry, i don't know.",
            "  SORRY,   I DON'T\nKNOW ",
            "I looked it up. Sorry, I don’t know the answer.",
        ],
    )
    def test_abstained(self, text: str) -> None:
        assert is_abstention(text)

    @pytest.mark.parametrize(
        "text", ["", "Sorry, the answer is section 302.", "I don't know the sorry state"]
    )
    def test_answered(self, text: str) -> None:
        assert not is_abstention(text)


class TestGenerateAnswer:
    def test_echo_first_sentence(self, echo: GenerationProvider) -> None:
        chunks = ranked("Theft is punished under section 379. It carries three years.", "Other.")
        answer = generate_answer(echo, DAVINCI_LEGAL, "What is theft?", chunks)
        assert answer.text == "Theft is punished under section 379."
        assert not answer.abstained
        assert answer.mode == "generative"
        assert answer.context_chunk_ids == ["c#0", "c#1"]
        assert echo.calls == 1

    def test_abstain(self, config: Config) -> None:
        provider = get_generation_provider("mock-abstain", config)
        answer = generate_answer(provider, FLAN_STEPWISE, "Q?", ranked("Context."))
        assert answer.abstained
        assert answer.text == "Sorry, I don't know."

    def test_empty_retrieval(self, echo: GenerationProvider) -> None:
        with pytest.raises(LegalqaPreconditionException, match="without chunks"):
            generate_answer(echo, DAVINCI_LEGAL, "Q?", [])
        assert echo.calls == 0

    def test_template_none(self, echo: GenerationProvider) -> None:
        with pytest.raises(LegalqaConfigException, match="template none"):
            generate_answer(echo, NO_TEMPLATE, "Q?", ranked("C."))

    def test_extractive_provider(self, extractor: GenerationProvider) -> None:
        with pytest.raises(LegalqaConfigException, match="is not generative"):
            generate_answer(extractor, DAVINCI_LEGAL, "Q?", ranked("C."))

    def test_budget(self, config: Config) -> None:
        provider = get_generation_provider("mock-tiny", config)
        chunks = ranked(*["word " * 200] * 4)
        answer = generate_answer(provider, FLAN_STEPWISE, "Q?", chunks)
        assert answer.truncated_context
        assert template_overhead(provider, FLAN_STEPWISE) > 64

    def test_remote(self, config: Config) -> None:
        server = FakeServer(FakeResponse(200, {"text": "Life imprisonment.", "usage": {"total_tokens": 42}}))
        provider = get_generation_provider("davinci", config)
        assert isinstance(provider, RemoteGenerationProvider)
        provider.session_factory = server.session  # type: ignore
        provider.seed = 3
        answer = generate_answer(provider, DAVINCI_LEGAL, "Punishment for murder?", ranked("C."))
        assert answer.text == "Life imprisonment."
        assert answer.token_usage == 42
        request: dict[str, Any] = server.requests[0]
        assert request["model"] == "text-davinci-003"
        assert request["seed"] == 3
        assert request["temperature"] == 0.0
        assert request["prompt"].endswith("Context:C.\nQuestion:Punishment for murder?")

    def test_remote_without_text(self, config: Config) -> None:
        server = FakeServer(FakeResponse(200, {"choices": []}))
        provider = get_generation_provider("davinci", config)
        provider.session_factory = server.session  # type: ignore
        with pytest.raises(LegalqaRequestException, match="returned no text"):
            generate_answer(provider, DAVINCI_LEGAL, "Q?", ranked("C."))


class TestExtractAnswer:
    def test_keyword_sentence(self, extractor: GenerationProvider) -> None:
        chunks = ranked("Bail is a right. Theft is punishable with three years.")
        answer = extract_answer(extractor, "What about theft?", chunks)
        assert answer.text == "Theft is punishable with three years."
        assert answer.mode == "extractive"
        assert isinstance(extractor, MockExtractiveProvider)

    def test_substring_property(self) -> None:
        rng = random.Random(13)
        context_text = "Section 378 defines theft. Section 379 punishes it."
        for _ in range(300):
            start = rng.randint(-3, len(context_text) + 3)
            end = rng.randint(-3, len(context_text) + 3)
            provider = FixedSpanProvider(Span(start=start, end=end))
            try:
                answer = extract_answer(provider, "Q?", [chunk(context_text)])
            except LegalqaSpanException:
                assert end <= start or start < 0 or end > len(context_text)
                continue
            assert answer.text == context_text[start:end]
            assert answer.text in context_text

    def test_empty_span(self) -> None:
        with pytest.raises(LegalqaSpanException, match=r"empty span \(0, 0\)"):
            extract_answer(FixedSpanProvider(Span(start=0, end=0)), "Q?", [chunk("abc")])

    def test_out_of_bounds(self) -> None:
        with pytest.raises(LegalqaSpanException, match="out of bounds"):
            extract_answer(FixedSpanProvider(Span(start=0, end=4)), "Q?", [chunk("abc")])

    def test_generative_provider(self, echo: GenerationProvider) -> None:
        with pytest.raises(LegalqaConfigException, match="is not extractive"):
            extract_answer(echo, "Q?", [chunk("abc")])

    def test_remote_span(self, config: Config) -> None:
        spec = GenerationProviderSpec(
            token_budget=4096,
            mode="extractive",
            name="qa",
            endpoint="http://localhost:8089/v1/extract",
        )
        provider = RemoteGenerationProvider(spec)
        server = FakeServer(FakeResponse(200, {"start": 4, "end": 7}))
        provider.session_factory = server.session  # type: ignore
        answer = extract_answer(provider, "Which?", [chunk("The IPC.")])
        assert answer.text == "IPC"
        assert server.requests == [{"question": "Which?", "context": "The IPC."}]


class TestDirectAnswer:
    def test_echo(self, echo: GenerationProvider) -> None:
        answer = direct_answer(echo, "What is an FIR?")
        assert answer.text == "What is an FIR?"
        assert answer.context_chunk_ids == []

    def test_abstain(self, config: Config) -> None:
        assert direct_answer(get_generation_provider("mock-abstain", config), "Q?").abstained

    def test_empty_question(self, echo: GenerationProvider) -> None:
        with pytest.raises(LegalqaPreconditionException, match="question must not be empty"):
            direct_answer(echo, "")
        assert isinstance(echo, MockGenerationProvider)
