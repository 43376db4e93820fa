"""Core data types and item rendering."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping

ECO_TOKEN = "[ECO]"


@dataclass(frozen=True)
class Item:
    id: str
    title: str
    category: str = ""
    attributes: tuple[tuple[str, str], ...] = ()  # catalog record order
    sustainable: bool = False

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("item id must be non-empty")
        if not self.title:
            raise ValueError(f"item {self.id!r}: title must be non-empty")

    @classmethod
    def from_mapping(
        cls,
        id: str,
        title: str,
        category: str = "",
        attributes: Mapping[str, object] | None = None,
        sustainable: bool = False,
    ) -> Item:
        attrs = tuple((str(k), str(v)) for k, v in (attributes or {}).items())
        return cls(id=id, title=title, category=category, attributes=attrs, sustainable=sustainable)


def render_item(item: Item, include_green: bool = True) -> str:
    """Single-line text form used in prompts and by the lexical scorer.

    ``Bamboo Brush | Home | material=bamboo; size=M [ECO]``. Empty category
    and attribute segments are left out.
    """
    parts = [item.title]
    if item.category:
        parts.append(item.category)
    if item.attributes:
        parts.append("; ".join(f"{k}={v}" for k, v in item.attributes))
    text = " | ".join(parts)
    if include_green and item.sustainable:
        text += " " + ECO_TOKEN
    return text


class Catalog:
    """Ordered, id-indexed collection of items."""

    def __init__(self, items: Iterable[Item]) -> None:
        self._items: tuple[Item, ...] = tuple(items)
        self._index: dict[str, int] = {}
        for pos, item in enumerate(self._items):
            if item.id in self._index:
                raise ValueError(f"duplicate item id {item.id!r}")
            self._index[item.id] = pos

    @property
    def items(self) -> tuple[Item, ...]:
        return self._items

    @property
    def ids(self) -> list[str]:
        return [item.id for item in self._items]

    def position(self, item_id: str) -> int:
        return self._index[item_id]

    def __getitem__(self, item_id: str) -> Item:
        return self._items[self._index[item_id]]

    def __contains__(self, item_id: object) -> bool:
        return item_id in self._index

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[Item]:
        return iter(self._items)


@dataclass(frozen=True)
class Session:
    session_id: str
    interactions: tuple[str, ...]
    target: str

    def __post_init__(self) -> None:
        if not self.interactions:
            raise ValueError(f"session {self.session_id!r} has no interactions")


class CandidateKind(str, Enum):
    INITIAL = "initial"
    FILTERED = "filtered"


@dataclass(frozen=True)
class CandidateSet:
    session_id: str
    candidates: tuple[str, ...]
    kind: CandidateKind

    def __post_init__(self) -> None:
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError(f"candidate set for {self.session_id!r} has duplicates")

    def __len__(self) -> int:
        return len(self.candidates)

    def to_json(self) -> dict:
        return {"session_id": self.session_id, "candidates": list(self.candidates), "kind": self.kind.value}

    @classmethod
    def from_json(cls, obj: Mapping) -> CandidateSet:
        return cls(str(obj["session_id"]), tuple(obj["candidates"]), CandidateKind(obj["kind"]))


@dataclass(frozen=True)
class RankedList:
    session_id: str
    order: tuple[str, ...]
    repaired: bool = False

    def rank_of(self, item_id: str) -> int | None:
        """1-based position of ``item_id``, or None when absent."""
        try:
            return self.order.index(item_id) + 1
        except ValueError:
            return None


class PromptOrigin(str, Enum):
    SEED = "seed"
    REFINED = "refined"
    VARIANT = "variant"


@dataclass(frozen=True)
class Prompt:
    id: int
    text: str
    parent: int | None = None
    origin: PromptOrigin = PromptOrigin.SEED

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("prompt text must be non-empty")
        if self.origin is not PromptOrigin.SEED and self.parent is None:
            raise ValueError(f"{self.origin.value} prompt {self.id} needs a parent")

    def to_json(self) -> dict:
        return {"id": self.id, "parent": self.parent, "origin": self.origin.value, "text": self.text}

    @classmethod
    def from_json(cls, obj: Mapping) -> Prompt:
        return cls(int(obj["id"]), obj["text"], obj.get("parent"), PromptOrigin(obj["origin"]))


@dataclass(frozen=True)
class PromptStats:
    reward_sum: float = 0.0
    pull_count: int = 0

    def __post_init__(self) -> None:
        if self.pull_count < 0 or self.reward_sum < 0:
            raise ValueError("prompt stats must be non-negative")
        if self.pull_count == 0 and self.reward_sum != 0:
            raise ValueError("unpulled prompt cannot carry reward")
        if self.reward_sum > self.pull_count + 1e-9:
            raise ValueError("reward_sum exceeds pull_count")

    @property
    def mean(self) -> float:
        return self.reward_sum / self.pull_count if self.pull_count else 0.0

    def pulled(self, reward: float) -> PromptStats:
        return PromptStats(self.reward_sum + reward, self.pull_count + 1)


@dataclass(frozen=True)
class DatasetSplit:
    name: str  # "train" | "valid" | "test"
    sessions: tuple[Session, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.name not in ("train", "valid", "test"):
            raise ValueError(f"unknown split {self.name!r}")
        seen: set[str] = set()
        for s in self.sessions:
            if s.session_id in seen:
                raise ValueError(f"duplicate session id {s.session_id!r} in {self.name}")
            seen.add(s.session_id)
