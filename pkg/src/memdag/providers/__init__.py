from .base import ChatExchange, Provider, ProviderStats, estimate_tokens, parse_structured, stats_delta
from .mock import MockProvider
from .openai_compat import OpenAICompatProvider

__all__ = [
    "ChatExchange",
    "MockProvider",
    "OpenAICompatProvider",
    "Provider",
    "ProviderStats",
    "estimate_tokens",
    "parse_structured",
    "stats_delta",
]
