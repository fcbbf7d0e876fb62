"""Corpus ingestion, in-process BM25 search, and a remote retriever client."""

from __future__ import annotations

import json
import logging
import math
import re
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Protocol, Sequence

import httpx

from .errors import (
    DuplicateDocId,
    EmptyIndex,
    MalformedRecord,
    MalformedResponse,
    RetrieverUnavailable,
)

log = logging.getLogger(__name__)

DEFAULT_TOP_K = 5
BM25_K1 = 1.2
BM25_B = 0.75

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric characters."""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    text: str
    score: float | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"id": self.doc_id, "title": self.title, "contents": self.text}
        if self.score is not None:
            out["score"] = self.score
        return out


@dataclass
class CorpusIndex:
    documents: list[Document]
    postings: dict[str, list[tuple[int, int]]] = field(default_factory=dict)
    doc_lengths: list[int] = field(default_factory=list)
    avg_doc_len: float = 0.0

    @classmethod
    def build(cls, documents: Iterable[Document]) -> "CorpusIndex":
        docs = list(documents)
        postings: dict[str, list[tuple[int, int]]] = {}
        lengths = []
        for i, doc in enumerate(docs):
            tokens = tokenize(doc.text)
            lengths.append(len(tokens))
            for term, tf in Counter(tokens).items():
                postings.setdefault(term, []).append((i, tf))
        avg = sum(lengths) / len(lengths) if lengths else 0.0
        return cls(docs, postings, lengths, avg)

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def token_count(self) -> int:
        return sum(self.doc_lengths)

    def stats(self) -> dict[str, Any]:
        return {
            "documents": len(self.documents),
            "tokens": self.token_count,
            "vocabulary": len(self.postings),
            "avg_doc_len": self.avg_doc_len,
        }

    def save(self, path: str | Path) -> None:
        payload = {
            "format": "reap-index/1",
            "documents": [d.to_dict() for d in self.documents],
            "doc_lengths": self.doc_lengths,
            "avg_doc_len": self.avg_doc_len,
            "postings": {t: [list(p) for p in ps] for t, ps in self.postings.items()},
        }
        Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CorpusIndex":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != "reap-index/1":
            raise ValueError(f"{path}: not a saved corpus index")
        docs = [Document(d["id"], d.get("title", ""), d["contents"]) for d in payload["documents"]]
        postings = {t: [(int(i), int(tf)) for i, tf in ps] for t, ps in payload["postings"].items()}
        return cls(docs, postings, list(payload["doc_lengths"]), float(payload["avg_doc_len"]))

    # BM25 -----------------------------------------------------------------

    def idf(self, term: str) -> float:
        n = len(self.postings.get(term, ()))
        big_n = len(self.documents)
        return math.log(1.0 + (big_n - n + 0.5) / (n + 0.5))

    def scores(self, query: str, k1: float = BM25_K1, b: float = BM25_B) -> dict[int, float]:
        """BM25 score for every document sharing at least one query term.

        Repeated query tokens contribute once per occurrence.
        """
        acc: dict[int, float] = {}
        for term in tokenize(query):
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for i, tf in plist:
                norm = k1 * (1.0 - b + b * self.doc_lengths[i] / self.avg_doc_len)
                acc[i] = acc.get(i, 0.0) + idf * tf * (k1 + 1.0) / (tf + norm)
        return acc


def ingest_corpus(path: str | Path) -> CorpusIndex:
    """Read line-delimited ``{id, title, contents}`` records into an index."""
    docs: list[Document] = []
    first_seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(rec, dict):
                raise MalformedRecord("record is not an object", lineno)
            for key in ("id", "contents"):
                if key not in rec:
                    raise MalformedRecord(f"missing field {key!r}", lineno)
            contents = rec["contents"]
            if not isinstance(contents, str) or not contents.strip():
                raise MalformedRecord("contents must be a non-empty string", lineno)
            doc_id = str(rec["id"])
            if doc_id in first_seen:
                raise DuplicateDocId(doc_id, first_seen[doc_id], lineno)
            first_seen[doc_id] = lineno
            docs.append(Document(doc_id, str(rec.get("title", "")), contents))
    index = CorpusIndex.build(docs)
    log.info("ingested %d documents (%d tokens)", len(index), index.token_count)
    return index


def lexical_search(index: CorpusIndex, query: str, k: int = DEFAULT_TOP_K) -> list[Document]:
    """Top-k documents by BM25, best first; ties go to the smaller doc_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not index.documents:
        raise EmptyIndex("search on an empty index")
    scored = index.scores(query)
    order = sorted(scored, key=lambda i: (-scored[i], index.documents[i].doc_id))
    return [replace(index.documents[i], score=scored[i]) for i in order[:k]]


def remote_search(
    endpoint: str,
    query: str,
    k: int = DEFAULT_TOP_K,
    *,
    retries: int = 2,
    timeout: float = 30.0,
    backoff: float = 0.5,
    client: httpx.Client | None = None,
) -> list[Document]:
    """POST ``{query, top_k}`` and map ``results[]`` into documents, in server order."""
    owned = client is None
    client = client or httpx.Client(timeout=timeout)
    last: str = ""
    try:
        for attempt in range(retries + 1):
            if attempt:
                time.sleep(backoff * attempt)
            try:
                resp = client.post(endpoint, json={"query": query, "top_k": k})
            except httpx.HTTPError as exc:
                last = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code >= 500 or resp.status_code == 429:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise RetrieverUnavailable(f"retriever rejected request: HTTP {resp.status_code}")
            return _parse_results(resp, k)
    finally:
        if owned:
            client.close()
    raise RetrieverUnavailable(f"retriever at {endpoint} unavailable after {retries + 1} attempts ({last})")


def _parse_results(resp: httpx.Response, k: int) -> list[Document]:
    try:
        payload = resp.json()
        results = payload["results"]
        docs = []
        for r in results[:k]:
            score = r.get("score")
            docs.append(
                Document(
                    doc_id=str(r["id"]),
                    title=str(r.get("title", "")),
                    text=str(r["contents"]),
                    score=None if score is None else float(score),
                )
            )
        return docs
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise MalformedResponse(f"bad retriever response: {exc!r}") from None


class Retriever(Protocol):
    def search(self, query: str, k: int) -> list[Document]: ...


class LexicalRetriever:
    def __init__(self, index: CorpusIndex):
        self.index = index

    def search(self, query: str, k: int = DEFAULT_TOP_K) -> list[Document]:
        return lexical_search(self.index, query, k)


class RemoteRetriever:
    def __init__(self, endpoint: str, retries: int = 2, timeout: float = 30.0,
                 client: httpx.Client | None = None):
        self.endpoint = endpoint
        self.retries = retries
        self.timeout = timeout
        self.client = client

    def search(self, query: str, k: int = DEFAULT_TOP_K) -> list[Document]:
        return remote_search(self.endpoint, query, k, retries=self.retries,
                             timeout=self.timeout, client=self.client)


class StaticRetriever:
    """Returns fixed documents per query; for tests and offline replay."""

    def __init__(self, results: dict[str, Sequence[Document]] | None = None,
                 default: Sequence[Document] = ()):
        self.results = dict(results or {})
        self.default = list(default)

    def search(self, query: str, k: int = DEFAULT_TOP_K) -> list[Document]:
        return list(self.results.get(query, self.default))[:k]
