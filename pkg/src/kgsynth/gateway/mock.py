"""Deterministic offline gateway for tests and --mock pipeline runs.

Chat routes through a keyword table loaded from a fixtures file: the first
entry whose keywords all appear in the prompt wins, otherwise the reply is a
digest echo.  Embeddings hash the text into a seed, draw D standard normals
and normalize, so identical texts embed identically and different texts are
nearly orthogonal while cosine geometry stays stable across runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..errors import AssetUnreadableError, FormatError
from .types import ChatRequest, ChatResponse, EmbeddingVector, GatewayBase

logger = logging.getLogger(__name__)

DEFAULT_EMBED_DIM = 64


@dataclass
class MockRule:
    keywords: List[str]
    response: str


def load_mock_rules(path) -> List[MockRule]:
    """Fixtures file: JSON array of {"keywords": [...], "response": "..."}."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError("mock fixtures file is not valid JSON", path=str(path),
                          line=exc.lineno, offset=exc.pos) from exc
    if not isinstance(data, list):
        raise FormatError("mock fixtures must be a JSON array", path=str(path))
    rules = []
    for i, item in enumerate(data):
        if not isinstance(item, dict) or "response" not in item:
            raise FormatError(f"fixture {i} must be an object with a response",
                              path=str(path), field=f"[{i}]")
        keywords = item.get("keywords", [])
        if not isinstance(keywords, list):
            raise FormatError(f"fixture {i} keywords must be a list",
                              path=str(path), field=f"[{i}].keywords")
        rules.append(MockRule([str(k) for k in keywords], str(item["response"])))
    return rules


def mock_embedding(text: str, dim: int = DEFAULT_EMBED_DIM) -> EmbeddingVector:
    """The documented mock embedding: sha256(text) seeds an RNG whose ``dim``
    standard-normal draws are normalized to a unit vector."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "big")
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(dim)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        vec = np.ones(dim)
        norm = float(np.linalg.norm(vec))
    vec = vec / norm
    return EmbeddingVector(tuple(float(x) for x in vec))


class MockGateway(GatewayBase):
    def __init__(
        self,
        rules: Optional[Sequence[MockRule]] = None,
        fixtures_path=None,
        embed_dim: int = DEFAULT_EMBED_DIM,
        max_concurrency: int = 8,
    ):
        super().__init__(max_concurrency=max_concurrency)
        if rules is not None and fixtures_path is not None:
            raise ValueError("pass rules or fixtures_path, not both")
        if fixtures_path is not None:
            self.rules = load_mock_rules(fixtures_path)
        else:
            self.rules = list(rules or [])
        self.embed_dim = embed_dim

    def _chat(self, request: ChatRequest) -> ChatResponse:
        prompt = request.text()
        for rule in self.rules:
            if all(k in prompt for k in rule.keywords):
                return ChatResponse(text=rule.response)
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:12]
        return ChatResponse(text=json.dumps({"echo": digest}))

    def _describe_image(self, asset_path: str, context: str, instruction: str) -> str:
        try:
            blob = Path(asset_path).read_bytes()
        except OSError as exc:
            raise AssetUnreadableError(f"cannot read asset {asset_path}: {exc}") from exc
        h = hashlib.sha256()
        h.update(blob)
        h.update(b"\x1f")
        h.update(instruction.encode("utf-8"))
        tag = h.hexdigest()[:12]
        name = Path(asset_path).name
        return f"Deterministic description [{tag}] of asset {name}."

    def _embed(self, texts: List[str]) -> List[EmbeddingVector]:
        return [mock_embedding(t, self.embed_dim) for t in texts]


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity; identical vectors short-circuit to exactly 1.0 so
    byte-identical texts always collapse at threshold 1.0."""
    va = np.asarray(a.values)
    vb = np.asarray(b.values)
    if va.shape == vb.shape and np.array_equal(va, vb):
        return 1.0
    denom = float(np.linalg.norm(va) * np.linalg.norm(vb))
    if denom == 0.0:
        return 0.0
    return float(np.dot(va, vb) / denom)
