"""Session-based recommendation with a stage-1 reranker and bandit-driven prompt optimization."""

from .domain import (
    CandidateSet,
    Catalog,
    Item,
    Prompt,
    PromptStats,
    RankedList,
    Session,
    render_item,
)
from .errors import GreenRecError

__version__ = "0.1.0"

__all__ = [
    "CandidateSet",
    "Catalog",
    "GreenRecError",
    "Item",
    "Prompt",
    "PromptStats",
    "RankedList",
    "Session",
    "render_item",
]
