"""Local TF-IDF retrieval over stored publications.

Replaces a hosted search service for the generic-question path: titles,
keywords and abstracts are indexed per publication, and the top-k matches
for a query are rendered into the {context} slot of the answering prompt.

Weights: tf = raw count, idf = ln((1 + N) / (1 + df)) + 1; documents and
queries are compared by cosine similarity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .classifier import tokenize
from .store import Publication, PublicationStore


@dataclass(frozen=True)
class RetrievalHit:
    doc_id: str
    score: float
    snippet: str


class RetrievalIndex:
    def __init__(self):
        self._doc_ids: list[str] = []
        self._doc_weights: list[dict[str, float]] = []
        self._doc_norms: list[float] = []
        self._snippets: dict[str, str] = {}
        self._idf: dict[str, float] = {}

    @classmethod
    def build(cls, documents: list[tuple[str, str]], snippets: dict[str, str] | None = None) -> "RetrievalIndex":
        """Index (doc_id, text) pairs; optional per-doc snippet for context rendering."""
        index = cls()
        index._snippets = dict(snippets or {})
        counts = [tokenize(text) for _, text in documents]
        df: dict[str, int] = {}
        for count in counts:
            for token in count:
                df[token] = df.get(token, 0) + 1
        n = len(documents)
        index._idf = {
            token: math.log((1 + n) / (1 + d)) + 1.0 for token, d in df.items()
        }
        for (doc_id, _), count in zip(documents, counts):
            weights = {t: c * index._idf[t] for t, c in count.items()}
            norm = math.sqrt(sum(w * w for w in weights.values()))
            index._doc_ids.append(doc_id)
            index._doc_weights.append(weights)
            index._doc_norms.append(norm)
        return index

    def query(self, text: str, k: int = 5) -> list[RetrievalHit]:
        """Top-k documents by cosine similarity; ties break by doc id."""
        query_counts = tokenize(text)
        query_weights = {
            t: c * self._idf[t] for t, c in query_counts.items() if t in self._idf
        }
        query_norm = math.sqrt(sum(w * w for w in query_weights.values()))
        if not query_weights or query_norm == 0:
            return []

        scored = []
        for doc_id, weights, norm in zip(
            self._doc_ids, self._doc_weights, self._doc_norms
        ):
            if norm == 0:
                continue
            dot = sum(w * weights.get(t, 0.0) for t, w in query_weights.items())
            if dot > 0:
                scored.append(
                    RetrievalHit(doc_id, dot / (query_norm * norm), self._snippets.get(doc_id, ""))
                )
        scored.sort(key=lambda hit: (-hit.score, hit.doc_id))
        return scored[:k]

    def __len__(self) -> int:
        return len(self._doc_ids)


def _publication_text(pub: Publication) -> str:
    parts = [pub.title or "", pub.author_keywords or "", pub.index_keywords or "",
             pub.abstract or ""]
    return "\n".join(parts)


def _publication_snippet(pub: Publication) -> str:
    abstract = (pub.abstract or "").strip()
    if len(abstract) > 200:
        abstract = abstract[:197] + "..."
    keywords = "; ".join(
        p for p in ((pub.author_keywords or "").strip(), (pub.index_keywords or "").strip()) if p
    )
    bits = [f"{pub.title} ({pub.eid})"]
    if keywords:
        bits.append(f"keywords: {keywords}")
    if abstract:
        bits.append(abstract)
    return " | ".join(bits)


def build_publication_index(store: PublicationStore) -> RetrievalIndex:
    """Index every stored publication over title + keywords + abstract."""
    documents = []
    snippets = {}
    for pub in store.iter_publications():
        documents.append((pub.eid, _publication_text(pub)))
        snippets[pub.eid] = _publication_snippet(pub)
    return RetrievalIndex.build(documents, snippets)


def render_context(hits: list[RetrievalHit]) -> str:
    """Render retrieval hits for the {context} slot; empty string when none."""
    return "\n".join(f"- {hit.snippet}" for hit in hits)
