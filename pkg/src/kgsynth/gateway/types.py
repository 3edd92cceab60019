"""Gateway data types and the concurrency-bounding base class."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

CHAT = "chat"
VISION = "vision"
EMBEDDING = "embedding"

CAPABILITIES = (CHAT, VISION, EMBEDDING)


@dataclass(frozen=True)
class ProviderEndpoint:
    base_url: str
    model_name: str
    auth_token_ref: str = ""  # name of the env var holding the token
    capability: str = CHAT

    def __post_init__(self):
        if self.capability not in CAPABILITIES:
            raise ValueError(f"unknown capability: {self.capability}")


@dataclass
class ChatRequest:
    messages: List[Dict[str, object]]
    temperature: float = 0.0
    max_output_tokens: Optional[int] = None
    expects_structured: bool = False

    def text(self) -> str:
        """Concatenated textual content of all messages (for routing/digests)."""
        parts = []
        for m in self.messages:
            content = m.get("content", "")
            if isinstance(content, str):
                parts.append(content)
            elif isinstance(content, list):
                for piece in content:
                    if isinstance(piece, dict) and piece.get("type") == "text":
                        parts.append(str(piece.get("text", "")))
        return "\n".join(parts)


@dataclass
class ChatResponse:
    text: str
    finish_reason: str = "stop"
    usage: Dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple

    @property
    def dimension(self) -> int:
        return len(self.values)


def user_chat_request(prompt: str, temperature: float = 0.0,
                      expects_structured: bool = False) -> ChatRequest:
    return ChatRequest(
        messages=[{"role": "user", "content": prompt}],
        temperature=temperature,
        expects_structured=expects_structured,
    )


class GatewayBase:
    """Shared surface: chat / describe_image / embed under one in-flight bound.

    Subclasses implement the ``_chat`` / ``_describe_image`` / ``_embed``
    hooks; the public methods hold a semaphore so at most ``max_concurrency``
    requests run at once per gateway.
    """

    def __init__(self, max_concurrency: int = 8):
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        self.max_concurrency = max_concurrency
        self._sem = threading.BoundedSemaphore(max_concurrency)

    def chat(self, request: ChatRequest) -> ChatResponse:
        with self._sem:
            return self._chat(request)

    def describe_image(self, asset_path: str, context: str = "",
                       instruction: str = "") -> str:
        with self._sem:
            return self._describe_image(asset_path, context, instruction)

    def embed(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        if not texts:
            return []
        with self._sem:
            return self._embed(list(texts))

    def _chat(self, request: ChatRequest) -> ChatResponse:
        raise NotImplementedError

    def _describe_image(self, asset_path: str, context: str, instruction: str) -> str:
        raise NotImplementedError

    def _embed(self, texts: List[str]) -> List[EmbeddingVector]:
        raise NotImplementedError
