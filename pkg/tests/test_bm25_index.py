import math
import random
from pathlib import Path

import pytest

from legalqa.bm25_index import Bm25Index, TokenizerConfig, build_index, tokenize
from legalqa.exceptions import (
    LegalqaConfigException,
    LegalqaDataException,
    LegalqaPreconditionException,
)
from legalqa.object_types import Chunk


def make_chunks(*texts: str) -> list[Chunk]:
    return [
        Chunk(chunk_id=f"d{i}", doc_id=f"d{i}", seq=0, text=text)
        for i, text in enumerate(texts, start=1)
    ]


def naive_score(
    texts: dict[str, str], query: str, chunk_id: str, k1: float = 1.5, b: float = 0.75
) -> float:
    docs = {cid: tokenize(text) for cid, text in texts.items()}
    N = len(docs)
    avgdl = sum(len(tokens) for tokens in docs.values()) / N
    doc = docs[chunk_id]
    norm = 1 - b + b * len(doc) / avgdl
    weights = []
    for term in set(tokenize(query)):
        tf = doc.count(term)
        if tf == 0:
            continue
        n_t = sum(1 for tokens in docs.values() if term in tokens)
        idf = math.log(1 + (N - n_t + 0.5) / (n_t + 0.5))
        weights.append(idf * (tf * (k1 + 1)) / (tf + k1 * norm))
    return math.fsum(weights)


@pytest.fixture
def small_index() -> Bm25Index:
    return build_index(make_chunks("a b a", "b c", "c c c"))


class TestTokenize:
    def test_alphanumeric_runs(self) -> None:
        assert tokenize("Section 302, IPC: murder_case") == [
            "section",
            "302",
            "ipc",
            "murder",
            "case",
        ]

    def test_case(self) -> None:
        assert tokenize("A a", TokenizerConfig(lowercase=False)) == ["A", "a"]


class TestBuildIndex:
    def test_empty(self) -> None:
        index = build_index([])
        assert index.N == 0
        assert index.postings == {}
        assert index.retrieve_top_k("a") == []

    def test_statistics(self, small_index: Bm25Index) -> None:
        assert small_index.N == 3
        assert small_index.avgdl == pytest.approx(8 / 3)
        assert [(p.chunk_id, p.tf) for p in small_index.postings["a"]] == [("d1", 2)]
        assert [p.chunk_id for p in small_index.postings["c"]] == ["d2", "d3"]

    def test_lowercase(self) -> None:
        index = build_index(make_chunks("A a"))
        assert index.postings["a"][0].tf == 2

    def test_duplicate(self) -> None:
        chunk = make_chunks("a")[0]
        with pytest.raises(LegalqaDataException, match="Duplicate chunk id: d1"):
            build_index([chunk, chunk])

    @pytest.mark.parametrize("k1,b", [(0, 0.75), (1.5, -0.1), (1.5, 1.1)])
    def test_parameters(self, k1: float, b: float) -> None:
        with pytest.raises(LegalqaConfigException):
            build_index([], k1=k1, b=b)


class TestScore:
    def test_hand_evaluated(self, small_index: Bm25Index) -> None:
        assert small_index.score("a", "d1") == pytest.approx(1.3470, abs=1e-4)

    def test_absent_term(self, small_index: Bm25Index) -> None:
        assert small_index.score("zebra", "d1") == 0.0

    def test_repetition_and_order(self, small_index: Bm25Index) -> None:
        assert small_index.score("a a", "d1") == small_index.score("a", "d1")
        assert small_index.score("a b", "d1") == small_index.score("b a", "d1")

    def test_tokens(self, small_index: Bm25Index) -> None:
        assert small_index.score(["a"], "d1") == small_index.score("a", "d1")

    def test_unknown_chunk(self, small_index: Bm25Index) -> None:
        with pytest.raises(LegalqaPreconditionException, match="Unknown chunk id"):
            small_index.score("a", "d9")

    def test_monotonic_in_tf(self) -> None:
        previous = 0.0
        for tf in range(1, 8):
            index = build_index(make_chunks(" ".join(["a"] * tf + ["x"] * (8 - tf)), "y " * 8))
            score = index.score("a", "d1")
            assert score > previous
            previous = score

    def test_idf_positive(self) -> None:
        index = build_index(make_chunks("a", "a", "a"))
        assert index.idf("a") > 0
        assert index.idf("missing") > 0


class TestRetrieveTopK:
    def test_order(self, small_index: Bm25Index) -> None:
        assert [r.chunk_id for r in small_index.retrieve_top_k("c", k=2)] == ["d3", "d2"]

    def test_padding(self, small_index: Bm25Index) -> None:
        result = small_index.retrieve_top_k("a", k=3)
        assert [r.chunk_id for r in result] == ["d1", "d2", "d3"]
        assert [r.score for r in result][1:] == [0.0, 0.0]

    def test_tie_independent_of_term_order(self) -> None:
        index = build_index(make_chunks("bail fir court", "court fir bail", "act"))
        for query in ("bail fir court", "court bail fir", "fir court bail"):
            result = index.retrieve_top_k(query, k=2)
            assert [r.chunk_id for r in result] == ["d1", "d2"]
            assert result[0].score == result[1].score

    def test_k_larger_than_n(self, small_index: Bm25Index) -> None:
        assert len(small_index.retrieve_top_k("b", k=10)) == 3

    def test_invalid_k(self, small_index: Bm25Index) -> None:
        with pytest.raises(LegalqaPreconditionException, match="k must be at least 1"):
            small_index.retrieve_top_k("a", k=0)

    def test_oracle(self) -> None:
        rng = random.Random(3)
        vocabulary = ["ipc", "theft", "murder", "bail", "fir", "court", "act", "302", "379"]
        for _ in range(50):
            texts = {
                f"c{i:03d}": " ".join(
                    rng.choice(vocabulary) for _ in range(rng.randint(0, 12))
                )
                for i in range(rng.randint(1, 100))
            }
            index = build_index(
                [Chunk(chunk_id=cid, doc_id="d", seq=0, text=text) for cid, text in texts.items()]
            )
            if index.avgdl == 0:
                continue
            for _ in range(20):
                query = " ".join(rng.choice(vocabulary) for _ in range(rng.randint(1, 4)))
                k = rng.randint(1, 10)
                expected = sorted(
                    ((naive_score(texts, query, cid), cid) for cid in texts),
                    key=lambda item: (-item[0], item[1]),
                )[:k]
                result = index.retrieve_top_k(query, k)
                assert [r.chunk_id for r in result] == [cid for _, cid in expected]
                for r, (score, _) in zip(result, expected):
                    assert r.score == pytest.approx(score, rel=1e-9, abs=1e-12)


class TestPersistence:
    def test_save_and_load(self, tmp_path: Path, small_index: Bm25Index) -> None:
        small_index.save(tmp_path / "bm25.json")
        loaded = Bm25Index.load(tmp_path / "bm25.json")
        for query in ("a", "c", "b c", "zebra"):
            assert loaded.retrieve_top_k(query, 3) == small_index.retrieve_top_k(query, 3)

    def test_not_an_index(self, tmp_path: Path) -> None:
        path = tmp_path / "bm25.json"
        path.write_text('{"format": "something"}')
        with pytest.raises(LegalqaDataException, match="is not a BM25 index file"):
            Bm25Index.load(path)

    def test_version(self, tmp_path: Path) -> None:
        path = tmp_path / "bm25.json"
        path.write_text('{"format": "legalqa-bm25", "version": 99}')
        with pytest.raises(LegalqaDataException, match="Unsupported BM25 index version 99"):
            Bm25Index.load(path)

    def test_corrupt(self, tmp_path: Path) -> None:
        path = tmp_path / "bm25.json"
        path.write_text("{")
        with pytest.raises(LegalqaDataException, match="Unable to read the BM25 index"):
            Bm25Index.load(path)
