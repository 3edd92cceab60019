"""HTTP gateway over chat-completions-style and embeddings endpoints.

Each attempt picks one capable endpoint uniformly at random; failures back
off exponentially (delays never decrease) up to a bounded attempt count,
after which AllEndpointsFailed reports the last error per endpoint.
"""

from __future__ import annotations

import base64
import logging
import os
import random
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from ..errors import AllEndpointsFailedError, AssetUnreadableError, ConfigError
from .types import (
    CHAT,
    EMBEDDING,
    VISION,
    ChatRequest,
    ChatResponse,
    EmbeddingVector,
    GatewayBase,
    ProviderEndpoint,
)

logger = logging.getLogger(__name__)


def default_transport(url: str, headers: Dict[str, str], payload: Dict,
                      timeout: float) -> Dict:
    import requests

    resp = requests.post(url, headers=headers, json=payload, timeout=timeout)
    if resp.status_code >= 400:
        raise RuntimeError(f"HTTP {resp.status_code}: {resp.text[:200]}")
    return resp.json()


class HttpGateway(GatewayBase):
    def __init__(
        self,
        endpoints: Sequence[ProviderEndpoint],
        max_attempts: int = 4,
        backoff_base: float = 0.5,
        timeout: float = 60.0,
        max_concurrency: int = 8,
        rng: Optional[random.Random] = None,
        transport: Optional[Callable] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(max_concurrency=max_concurrency)
        if not endpoints:
            raise ConfigError("gateway.endpoints", "endpoint pool is empty")
        if max_attempts < 1:
            raise ConfigError("gateway.max_attempts", "must be >= 1")
        self.endpoints = list(endpoints)
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.timeout = timeout
        self._rng = rng or random.Random()
        self._transport = transport or default_transport
        self._sleep = sleep

    def _capable(self, capability: str) -> List[ProviderEndpoint]:
        found = [e for e in self.endpoints if e.capability == capability]
        if not found:
            raise ConfigError(
                "gateway.endpoints",
                f"no endpoint with capability {capability!r} configured",
            )
        return found

    def _headers(self, endpoint: ProviderEndpoint) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if endpoint.auth_token_ref:
            token = os.environ.get(endpoint.auth_token_ref, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _with_retries(self, capability: str, call: Callable[[ProviderEndpoint], object]):
        pool = self._capable(capability)
        last_errors: Dict[str, Exception] = {}
        delay = self.backoff_base
        for attempt in range(1, self.max_attempts + 1):
            endpoint = self._rng.choice(pool)
            try:
                return call(endpoint)
            except Exception as exc:  # transport/protocol failure: retry
                last_errors[f"{endpoint.base_url}/{endpoint.model_name}"] = exc
                logger.warning("attempt %d/%d via %s failed: %s",
                               attempt, self.max_attempts, endpoint.base_url, exc)
                if attempt < self.max_attempts:
                    self._sleep(delay)
                    delay *= 2  # non-decreasing backoff
        raise AllEndpointsFailedError(last_errors)

    # -- chat --

    def _chat(self, request: ChatRequest) -> ChatResponse:
        return self._with_retries(CHAT, lambda ep: self._chat_once(ep, request))

    def _chat_once(self, endpoint: ProviderEndpoint, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": endpoint.model_name,
            "messages": request.messages,
            "temperature": request.temperature,
        }
        if request.max_output_tokens is not None:
            payload["max_tokens"] = request.max_output_tokens
        url = endpoint.base_url.rstrip("/") + "/chat/completions"
        data = self._transport(url, self._headers(endpoint), payload, self.timeout)
        choice = data["choices"][0]
        return ChatResponse(
            text=choice["message"]["content"],
            finish_reason=choice.get("finish_reason", "stop"),
            usage=data.get("usage", {}),
        )

    # -- vision --

    def _describe_image(self, asset_path: str, context: str, instruction: str) -> str:
        try:
            blob = Path(asset_path).read_bytes()
        except OSError as exc:
            raise AssetUnreadableError(f"cannot read asset {asset_path}: {exc}") from exc
        encoded = base64.b64encode(blob).decode("ascii")
        suffix = Path(asset_path).suffix.lstrip(".").lower() or "png"
        text = instruction or "Describe this image precisely."
        if context:
            text += f"\n\nSurrounding text:\n{context}"
        request = ChatRequest(messages=[{
            "role": "user",
            "content": [
                {"type": "text", "text": text},
                {"type": "image_url",
                 "image_url": {"url": f"data:image/{suffix};base64,{encoded}"}},
            ],
        }])
        response = self._with_retries(VISION, lambda ep: self._chat_once(ep, request))
        return response.text

    # -- embeddings --

    def _embed(self, texts: List[str]) -> List[EmbeddingVector]:
        return self._with_retries(EMBEDDING, lambda ep: self._embed_once(ep, texts))

    def _embed_once(self, endpoint: ProviderEndpoint, texts: List[str]) -> List[EmbeddingVector]:
        url = endpoint.base_url.rstrip("/") + "/embeddings"
        payload = {"model": endpoint.model_name, "input": texts}
        data = self._transport(url, self._headers(endpoint), payload, self.timeout)
        rows = sorted(data["data"], key=lambda r: r.get("index", 0))
        vectors = [EmbeddingVector(tuple(float(x) for x in r["embedding"])) for r in rows]
        if len(vectors) != len(texts):
            raise RuntimeError(f"expected {len(texts)} embeddings, got {len(vectors)}")
        dims = {v.dimension for v in vectors}
        if len(dims) > 1:
            raise RuntimeError(f"inconsistent embedding dimensions: {sorted(dims)}")
        return vectors
