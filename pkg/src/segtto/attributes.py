"""Category attributes: prompt rendering, retrieval, caching, and mixing.

Attributes are short visual phrases elicited from a language model through a
fixed question/answer scaffold, embedded with the text encoder, aggregated by
cosine-weighted sum, and blended into the per-category text features.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .backends import Backend
from .errors import (
    AttributeParseError,
    AttributeRetrievalError,
    DegenerateAggregationError,
)
from .types import CategoryVocabulary

LLM_URL_ENV = "SEGTTO_LLM_URL"
LLM_MODEL_ENV = "SEGTTO_LLM_MODEL"
MAX_ATTRIBUTES = 15
TEMPLATE_WIDTH = 80

_QUESTION = (
    "Q: What are useful visual attributes for distinguishing a {category}"
    "{contrast} in a {image_type}?"
)
_ANSWER = (
    "A: There are several useful visual attributes to tell there is a "
    "{category} in a {image_type}:"
)


@dataclass
class LLMPrompt:
    text: str
    category: str
    others: list[str]
    image_type: str


@dataclass
class AttributeSet:
    category: str
    attributes: list[str]
    embeddings: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.attributes)


def build_llm_prompt(vocab: CategoryVocabulary, index: int) -> LLMPrompt:
    """Render the retrieval scaffold for one category.

    Descriptions substitute for category names everywhere they appear,
    including the comma-joined contrast list. A single-category vocabulary
    renders without the contrast clause.
    """
    if not 0 <= index < len(vocab):
        raise ValueError(f"category index {index} outside vocabulary of {len(vocab)}")
    category = vocab.prompt_text(index)
    others = [vocab.prompt_text(i) for i in range(len(vocab)) if i != index]
    contrast = f" from {','.join(others)}" if others else ""
    text = (
        _QUESTION.format(category=category, contrast=contrast, image_type=vocab.image_type)
        + "\n"
        + _ANSWER.format(category=category, image_type=vocab.image_type)
        + "\n-"
    )
    return LLMPrompt(text=text, category=vocab.names[index], others=others, image_type=vocab.image_type)


def prompt_fingerprint(prompt: LLMPrompt) -> str:
    return hashlib.sha256(prompt.text.encode("utf-8")).hexdigest()


def parse_attribute_lines(response: str) -> list[str]:
    """Leading-dash bullet lines, trimmed, deduplicated, empties dropped."""
    seen = set()
    out = []
    for raw in response.splitlines():
        line = raw.strip()
        if not line.startswith("-"):
            continue
        attr = line.lstrip("-").strip()
        if attr and attr not in seen:
            seen.add(attr)
            out.append(attr)
    return out


# -- clients ------------------------------------------------------------------

class LLMClient(Protocol):
    identifier: str

    def complete(self, prompt_text: str) -> str: ...


class OfflineClient:
    """Refuses every request; pair with a pre-populated cache."""

    identifier = "offline"

    def complete(self, prompt_text: str) -> str:
        raise AttributeRetrievalError("offline mode: network retrieval is disabled")


class HTTPChatClient:
    """Minimal chat-completion POST client (OpenAI-style JSON shape)."""

    def __init__(self, url: str | None = None, model: str | None = None, timeout: float = 60.0):
        self.url = url or os.environ.get(LLM_URL_ENV, "")
        self.model = model or os.environ.get(LLM_MODEL_ENV, "")
        self.timeout = timeout
        if not self.url:
            raise AttributeRetrievalError(f"no LLM endpoint; set {LLM_URL_ENV}")
        self.identifier = self.model or self.url

    def complete(self, prompt_text: str) -> str:
        import requests

        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt_text}],
        }
        try:
            resp = requests.post(self.url, json=payload, timeout=self.timeout)
            resp.raise_for_status()
            body = resp.json()
            return body["choices"][0]["message"]["content"]
        except Exception as exc:  # noqa: BLE001 - every transport failure maps the same
            raise AttributeRetrievalError(f"LLM request failed: {exc}") from exc


# -- cache --------------------------------------------------------------------

class AttributeCache:
    """(dataset id, category, prompt fingerprint) -> attribute strings.

    Backed by one JSON document per dataset; only strings and provenance
    metadata are persisted, embeddings are recomputed by the (deterministic)
    encoder on use. Saves go through a temp file and atomic replace.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[tuple[str, str, str], dict] = {}
        if self.path is not None and self.path.exists():
            self._load(self.path)

    def _load(self, path: Path) -> None:
        doc = json.loads(path.read_text(encoding="utf-8"))
        dataset = doc.get("dataset", "")
        for entry in doc.get("entries", []):
            key = (dataset, entry["category"], entry["fingerprint"])
            self._entries[key] = entry

    def get(self, dataset_id: str, category: str, fingerprint: str) -> list[str] | None:
        entry = self._entries.get((dataset_id, category, fingerprint))
        return list(entry["attributes"]) if entry else None

    def put(
        self,
        dataset_id: str,
        category: str,
        fingerprint: str,
        attributes: Sequence[str],
        llm_identifier: str = "",
    ) -> None:
        self._entries[(dataset_id, category, fingerprint)] = {
            "category": category,
            "fingerprint": fingerprint,
            "attributes": list(attributes),
            "llm": llm_identifier,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }

    def save(self, path: str | Path | None = None, dataset_id: str | None = None) -> None:
        path = Path(path) if path is not None else self.path
        if path is None:
            raise ValueError("no cache path to save to")
        datasets = {k[0] for k in self._entries}
        if dataset_id is None:
            if len(datasets) > 1:
                raise ValueError(f"cache holds several datasets {sorted(datasets)}; pick one")
            dataset_id = next(iter(datasets)) if datasets else ""
        entries = [
            self._entries[key]
            for key in sorted(self._entries)
            if key[0] == dataset_id
        ]
        doc = {"dataset": dataset_id, "entries": entries}
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                json.dump(doc, handle, indent=2, sort_keys=True)
                handle.write("\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


# -- retrieval and math -------------------------------------------------------

def _embed_attributes(
    attributes: Sequence[str], backend: Backend
) -> np.ndarray:
    rows = [backend.encode_text(attr).values for attr in attributes]
    return np.stack(rows)


def _cosine_weights(embeddings: np.ndarray, reference: np.ndarray) -> np.ndarray:
    ref = reference / max(float(np.linalg.norm(reference)), 1e-12)
    embs = embeddings / np.maximum(
        np.linalg.norm(embeddings, axis=1, keepdims=True), 1e-12
    )
    return embs @ ref


def fetch_attributes(
    prompt: LLMPrompt,
    client: LLMClient,
    cache: AttributeCache,
    backend: Backend,
    reference: np.ndarray,
    *,
    dataset_id: str,
    max_attributes: int = MAX_ATTRIBUTES,
) -> AttributeSet:
    """Serve from cache, otherwise query, parse, store, and return.

    A cache hit never touches the client. Parsed attributes are capped at
    max_attributes after deduplication. Weights are cosine similarities
    against the supplied reference embedding (callers reweight later against
    tuned embeddings via reweight()).
    """
    fingerprint = prompt_fingerprint(prompt)
    attributes = cache.get(dataset_id, prompt.category, fingerprint)
    if attributes is None:
        response = client.complete(prompt.text)
        attributes = parse_attribute_lines(response)
        if not attributes:
            raise AttributeParseError(
                f"no attributes parsed for {prompt.category!r}", raw_response=response
            )
        attributes = attributes[:max_attributes]
        cache.put(dataset_id, prompt.category, fingerprint, attributes, client.identifier)
    else:
        attributes = attributes[:max_attributes]
    embeddings = _embed_attributes(attributes, backend)
    weights = _cosine_weights(embeddings, reference)
    return AttributeSet(prompt.category, attributes, embeddings, weights)


def reweight(attrs: AttributeSet, reference: np.ndarray) -> AttributeSet:
    """New AttributeSet with weights recomputed against a reference vector."""
    if len(attrs) == 0:
        raise ValueError("cannot reweight an empty attribute set")
    return AttributeSet(
        attrs.category,
        list(attrs.attributes),
        attrs.embeddings.copy(),
        _cosine_weights(attrs.embeddings, reference),
    )


def aggregate_attributes(attrs: AttributeSet) -> np.ndarray:
    """Weighted sum of normalized attribute embeddings, renormalized to unit."""
    if len(attrs) == 0:
        raise ValueError("cannot aggregate an empty attribute set")
    embs = attrs.embeddings / np.maximum(
        np.linalg.norm(attrs.embeddings, axis=1, keepdims=True), 1e-12
    )
    combined = (attrs.weights[:, None] * embs).sum(axis=0)
    norm = float(np.linalg.norm(combined))
    if norm < 1e-8:
        raise DegenerateAggregationError(
            f"attribute sum for {attrs.category!r} collapsed (norm {norm:.3e})"
        )
    return combined / norm


def mix_text_embedding(
    tuned: np.ndarray, attribute_vector: np.ndarray, mix: float
) -> np.ndarray:
    """Blend the tuned prompt embeddings with the attribute aggregate.

    mix scales the prompt mean, (1 - mix) the attribute vector; mix = 1
    reduces to the plain prompt mean and mix = 0 to the attributes alone.
    """
    if not 0.0 <= mix <= 1.0:
        raise ValueError(f"mix must be in [0, 1], got {mix}")
    tuned = np.asarray(tuned, dtype=np.float64)
    if tuned.ndim != 2 or tuned.shape[0] < 1:
        raise ValueError(f"tuned embeddings must be (p, d), got {tuned.shape}")
    if attribute_vector.shape != (tuned.shape[1],):
        raise ValueError(
            f"attribute vector shape {attribute_vector.shape} does not match d={tuned.shape[1]}"
        )
    return (mix / tuned.shape[0]) * tuned.sum(axis=0) + (1.0 - mix) * attribute_vector


def concat_variant(
    tuned: np.ndarray,
    frozen: np.ndarray,
    attribute_templates: np.ndarray,
    mix: float,
) -> np.ndarray:
    """Fixed-width text bank: p tuned rows padded with frozen template rows.

    Both the prompt side (tuned stacked over frozen) and the attribute side
    must be exactly TEMPLATE_WIDTH rows; the blend is row-wise.
    """
    if not 0.0 <= mix <= 1.0:
        raise ValueError(f"mix must be in [0, 1], got {mix}")
    tuned = np.asarray(tuned, dtype=np.float64)
    frozen = np.asarray(frozen, dtype=np.float64)
    attribute_templates = np.asarray(attribute_templates, dtype=np.float64)
    if tuned.ndim != 2 or not 1 <= tuned.shape[0] <= TEMPLATE_WIDTH:
        raise ValueError(f"tuned rows must be in [1, {TEMPLATE_WIDTH}], got {tuned.shape}")
    pool = tuned.shape[0] + frozen.shape[0]
    if pool != TEMPLATE_WIDTH:
        raise ValueError(f"template pool must total {TEMPLATE_WIDTH} rows, got {pool}")
    if attribute_templates.shape != (TEMPLATE_WIDTH, tuned.shape[1]):
        raise ValueError(
            f"attribute side must be ({TEMPLATE_WIDTH}, {tuned.shape[1]}), "
            f"got {attribute_templates.shape}"
        )
    prompts = np.vstack([tuned, frozen]) if frozen.size else tuned
    return mix * prompts + (1.0 - mix) * attribute_templates


# -- pipeline glue ------------------------------------------------------------

class AttributeProvider:
    """Fetches and memoizes per-category attribute sets for a vocabulary."""

    def __init__(
        self,
        cache: AttributeCache,
        client: LLMClient,
        backend: Backend,
        dataset_id: str,
        max_attributes: int = MAX_ATTRIBUTES,
    ):
        self.cache = cache
        self.client = client
        self.backend = backend
        self.dataset_id = dataset_id
        self.max_attributes = max_attributes
        self._memo: dict[tuple[str, ...], list[AttributeSet]] = {}

    def sets_for(self, vocab: CategoryVocabulary) -> list[AttributeSet]:
        key = vocab.names
        if key not in self._memo:
            sets = []
            for j in range(len(vocab)):
                prompt = build_llm_prompt(vocab, j)
                reference = self.backend.encode_text(vocab.prompt_text(j)).values
                sets.append(
                    fetch_attributes(
                        prompt,
                        self.client,
                        self.cache,
                        self.backend,
                        reference,
                        dataset_id=self.dataset_id,
                        max_attributes=self.max_attributes,
                    )
                )
            self._memo[key] = sets
        return self._memo[key]
