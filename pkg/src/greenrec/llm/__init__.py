from .backend import (
    API_KEY_ENV,
    Backend,
    BackendConfig,
    ChatRequest,
    ChatResponse,
    HttpBackend,
    TracedBackend,
    build_backend,
)
from .mock import MockBackend, MockRule, MockScript, quality_ranking
from .parsing import extract_tagged, parse_numbered, parse_ranked_list, parse_variants

__all__ = [
    "API_KEY_ENV",
    "Backend",
    "BackendConfig",
    "ChatRequest",
    "ChatResponse",
    "HttpBackend",
    "MockBackend",
    "MockRule",
    "MockScript",
    "TracedBackend",
    "build_backend",
    "extract_tagged",
    "parse_numbered",
    "parse_ranked_list",
    "parse_variants",
    "quality_ranking",
]
