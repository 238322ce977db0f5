"""Text retrieval over a user's social neighborhood.

The dialog model asks for memories through an inline marker on its text
channel: ``<retr>:`` followed by a relation group and a keyword group on
separate lines, closed by ``<answer>``. Relation words drive a BM25 pass over
neighbor memory documents; keyword words rerank the survivors by embedding
distance. The final top-k is cut greedily under a fixed token budget so the
result always fits the retrieval context window.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Literal, Sequence

from .verification import Embedding, cosine_distance

if TYPE_CHECKING:  # pragma: no cover
    from .store import MemoryStore

QUERY_OPEN = "<retr>:"
QUERY_CLOSE = "<answer>"

BM25_K1 = 1.2
BM25_B = 0.75

DEFAULT_TOKEN_BUDGET = 256
DEFAULT_TOP_K = 5

_WORD_RE = re.compile(r"\w+")
_FORBIDDEN_IN_WORDS = (",", "\n", QUERY_OPEN, QUERY_CLOSE)

TextEncoder = Callable[[str], Embedding]


class RetrievalError(Exception):
    pass


class MalformedQueryError(RetrievalError):
    """A query marker was opened but never closed with <answer>."""


class EncoderFailure(RetrievalError):
    """The text encoder backend failed while embedding a document."""

    def __init__(self, message: str, document_text: str | None = None):
        super().__init__(message)
        self.document_text = document_text


@dataclass(frozen=True)
class QueryGroups:
    """Parsed relation and keyword groups from one query marker."""

    relations: tuple[str, ...] = ()
    keywords: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for word in (*self.relations, *self.keywords):
            if not word:
                raise RetrievalError("query words must be non-empty")
            if any(tok in word for tok in _FORBIDDEN_IN_WORDS):
                raise RetrievalError(f"query word {word!r} contains protocol separators")

    @property
    def empty(self) -> bool:
        return not self.relations and not self.keywords


@dataclass(frozen=True)
class DocumentSource:
    user_id: str | None
    kind: Literal["fact", "summary", "aux"]
    index: int


@dataclass(frozen=True)
class RetrievalDocument:
    text: str
    source: DocumentSource
    token_cost: int = field(default=-1)

    def __post_init__(self) -> None:
        cost = token_cost(self.text)
        if self.token_cost == -1:
            object.__setattr__(self, "token_cost", cost)
        elif self.token_cost != cost:
            raise RetrievalError(
                f"token_cost {self.token_cost} does not match tokenized length {cost}"
            )


@dataclass(frozen=True)
class ScoredDocument:
    document: RetrievalDocument
    score: float


@dataclass(frozen=True)
class RetrievalResult:
    documents: tuple[ScoredDocument, ...]
    token_budget: int = DEFAULT_TOKEN_BUDGET

    def __post_init__(self) -> None:
        scores = [d.score for d in self.documents]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise RetrievalError("result documents must be in descending score order")
        if self.rendered_cost > self.token_budget:
            raise RetrievalError("result exceeds its token budget")

    @property
    def rendered_cost(self) -> int:
        if not self.documents:
            return 0
        costs = sum(d.document.token_cost for d in self.documents)
        return costs + (len(self.documents) - 1)  # newline separators

    def render_text(self) -> str:
        return "\n".join(d.document.text for d in self.documents)


def token_cost(text: str) -> int:
    """Length of the text under the harness byte-level vocabulary."""
    return len(text.encode("utf-8"))


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens. Punctuation is dropped, so the comma-separated
    document records match bare query words."""
    return _WORD_RE.findall(text.lower())


def format_query_protocol(groups: QueryGroups) -> str:
    return (
        f"{QUERY_OPEN}\n{','.join(groups.relations)}\n{','.join(groups.keywords)}{QUERY_CLOSE}"
    )


def parse_query_protocol(text: str) -> QueryGroups | None:
    """Extract the last query marker from a monologue text.

    Returns None when no marker is present. A marker that is opened but not
    closed, or whose body does not hold exactly two newline-separated groups,
    raises MalformedQueryError.
    """
    start = text.rfind(QUERY_OPEN)
    if start == -1:
        return None
    rest = text[start + len(QUERY_OPEN):]
    end = rest.find(QUERY_CLOSE)
    if end == -1:
        raise MalformedQueryError("query marker opened without a closing <answer>")
    body = rest[:end]
    parts = body.split("\n")
    if len(parts) != 3 or parts[0] != "":
        raise MalformedQueryError("query marker body must hold two newline-separated groups")
    relations = tuple(w.strip() for w in parts[1].split(",") if w.strip())
    keywords = tuple(w.strip() for w in parts[2].split(",") if w.strip())
    return QueryGroups(relations, keywords)


def build_documents(store: "MemoryStore", current_user: str) -> list[RetrievalDocument]:
    """One document per (neighbor, memory item), plus auxiliary documents.

    Document text is the neighbor's name, the relation label, and the item's
    timestamp and text, comma-separated. Order is deterministic: neighbors
    sorted by user id, facts before dialog summaries, items by index.
    """
    docs: list[RetrievalDocument] = []
    for neighbor_id, relation in store.connected_users(current_user):
        profile = store.lookup_user(neighbor_id)
        for kind, items in (("fact", profile.facts), ("summary", profile.dialog_summaries)):
            for index, item in enumerate(items):
                text = f"{profile.name}, {relation}, {item.timestamp}, {item.text}"
                docs.append(
                    RetrievalDocument(text, DocumentSource(neighbor_id, kind, index))  # type: ignore[arg-type]
                )
    for index, text in enumerate(store.aux_documents):
        docs.append(RetrievalDocument(text, DocumentSource(None, "aux", index)))
    return docs


def bm25_rank(
    query_words: Sequence[str], documents: Sequence[RetrievalDocument]
) -> list[ScoredDocument]:
    """Okapi BM25 with k1=1.2, b=0.75 and +1-smoothed idf.

    Documents scoring zero are dropped. Ties keep document order (stable sort
    on descending score).
    """
    if not query_words:
        raise RetrievalError("bm25_rank needs at least one query word")
    if not documents:
        return []
    doc_tokens = [tokenize(d.text) for d in documents]
    n_docs = len(documents)
    avgdl = sum(len(toks) for toks in doc_tokens) / n_docs
    if avgdl == 0:
        return []

    query_terms = [w.lower() for w in query_words]
    df: dict[str, int] = {}
    for term in set(query_terms):
        df[term] = sum(1 for toks in doc_tokens if term in toks)

    scored: list[ScoredDocument] = []
    for doc, toks in zip(documents, doc_tokens):
        score = 0.0
        dl = len(toks)
        for term in query_terms:
            tf = toks.count(term)
            if tf == 0:
                continue
            idf = math.log(1.0 + (n_docs - df[term] + 0.5) / (df[term] + 0.5))
            score += idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl))
        if score > 0.0:
            scored.append(ScoredDocument(doc, score))
    scored.sort(key=lambda sd: -sd.score)  # stable: ties stay in document order
    return scored


def rerank_by_keywords(
    documents: Sequence[RetrievalDocument],
    keywords: Sequence[str],
    encoder: TextEncoder,
) -> list[ScoredDocument]:
    """Order documents by ascending cosine distance to the joined keywords.

    All keywords are concatenated into one query string and embedded once.
    The sort is stable, so equal distances keep the incoming order. Scores on
    the result are cosine similarities (descending).
    """
    if not keywords:
        raise RetrievalError("rerank_by_keywords needs at least one keyword")
    query_text = " ".join(keywords)
    try:
        query_emb = encoder(query_text)
    except Exception as exc:  # noqa: BLE001 - propagate with context
        raise EncoderFailure(f"encoding keyword query failed: {exc}") from exc
    ranked: list[tuple[float, int]] = []
    for index, doc in enumerate(documents):
        try:
            doc_emb = encoder(doc.text)
        except Exception as exc:  # noqa: BLE001
            raise EncoderFailure(
                f"encoding document failed: {exc}", document_text=doc.text
            ) from exc
        ranked.append((cosine_distance(query_emb, doc_emb), index))
    ranked.sort(key=lambda pair: pair[0])
    return [ScoredDocument(documents[i], 1.0 - dist) for dist, i in ranked]


def retrieve_topk(
    groups: QueryGroups,
    store: "MemoryStore",
    current_user: str,
    encoder: TextEncoder | None = None,
    k: int = DEFAULT_TOP_K,
    token_budget: int = DEFAULT_TOKEN_BUDGET,
) -> RetrievalResult:
    """Two-stage retrieval: BM25 filter on relations, keyword rerank, then a
    greedy top-k prefix under the token budget.

    Empty relation group skips the BM25 stage (keywords rank all documents);
    empty keyword group returns the BM25 ranking as is; both groups empty
    yields an empty result. When the BM25 stage drops every document the
    result is empty, keywords notwithstanding.
    """
    if groups.empty:
        return RetrievalResult((), token_budget)
    documents = build_documents(store, current_user)
    if groups.relations:
        scored = bm25_rank(groups.relations, documents)
        if not scored:
            return RetrievalResult((), token_budget)
        candidates = scored
    else:
        candidates = [ScoredDocument(d, 0.0) for d in documents]
    if groups.keywords:
        if encoder is None:
            raise RetrievalError("keyword rerank requires a text encoder")
        candidates = rerank_by_keywords([sd.document for sd in candidates], groups.keywords, encoder)

    chosen: list[ScoredDocument] = []
    used = 0
    for sd in candidates:
        if len(chosen) == k:
            break
        cost = sd.document.token_cost + (1 if chosen else 0)
        if used + cost > token_budget:
            break
        chosen.append(sd)
        used += cost
    return RetrievalResult(tuple(chosen), token_budget)
