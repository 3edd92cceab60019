from .types import (
    CHAT,
    EMBEDDING,
    VISION,
    ChatRequest,
    ChatResponse,
    EmbeddingVector,
    GatewayBase,
    ProviderEndpoint,
    user_chat_request,
)
from .http import HttpGateway
from .mock import MockGateway, MockRule, cosine, load_mock_rules, mock_embedding

__all__ = [
    "CHAT",
    "EMBEDDING",
    "VISION",
    "ChatRequest",
    "ChatResponse",
    "EmbeddingVector",
    "GatewayBase",
    "HttpGateway",
    "MockGateway",
    "MockRule",
    "ProviderEndpoint",
    "cosine",
    "load_mock_rules",
    "mock_embedding",
    "user_chat_request",
]
