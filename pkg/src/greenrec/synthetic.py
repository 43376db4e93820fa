"""Small synthetic catalog/session datasets plus a demo mock script.

``python -m greenrec.synthetic OUT_DIR`` writes a ready-to-run demo:
catalog.jsonl, train.jsonl, test.jsonl, mock_script.json and config.toml.
"""

from __future__ import annotations

import argparse
import json
import random
from pathlib import Path

from .domain import Catalog, Item, Session

CATEGORIES = {
    "Home": ["Brush", "Towel", "Lamp", "Mug", "Candle", "Basket", "Blanket", "Cushion"],
    "Games": ["Controller", "Headset", "Keyboard", "Mouse", "Puzzle", "Board Game", "Dice Set", "Card Deck"],
    "Clothing": ["T-Shirt", "Jacket", "Sneakers", "Socks", "Hoodie", "Jeans", "Scarf", "Cap"],
    "Food": ["Coffee", "Tea", "Granola", "Chocolate", "Honey", "Pasta", "Olive Oil", "Snack Bar"],
    "Electronics": ["Charger", "Cable", "Speaker", "Power Bank", "Earbuds", "Smart Plug", "Router", "Webcam"],
}
MATERIALS = ["Bamboo", "Cotton", "Ceramic", "Glass", "Steel", "Wool", "Recycled", "Organic", "Plastic", "Leather"]
GREEN_MATERIALS = {"Bamboo", "Recycled", "Organic"}
STYLES = ["Classic", "Compact", "Deluxe", "Everyday", "Travel", "Pro", "Mini", "Family"]
BRANDS = ["Acme", "Northwind", "Greenleaf", "Orbit", "Summit", "Tandem"]


def make_catalog(n_items: int = 150, seed: int = 0) -> Catalog:
    rng = random.Random(seed)
    names = list(CATEGORIES)
    items = []
    used: set[str] = set()
    for i in range(n_items):
        category = names[i % len(names)]
        while True:
            title = f"{rng.choice(STYLES)} {rng.choice(MATERIALS)} {rng.choice(CATEGORIES[category])}"
            if title not in used:
                break
            title = f"{title} {rng.randint(2, 99)}"
            if title not in used:
                break
        used.add(title)
        material = title.split()[1]
        sustainable = material in GREEN_MATERIALS or rng.random() < 0.1
        items.append(Item.from_mapping(f"i{i:04d}", title, category, {"brand": rng.choice(BRANDS)}, sustainable))
    return Catalog(items)


def make_sessions(catalog: Catalog, n_sessions: int, seed: int = 0, prefix: str = "s") -> list[Session]:
    """Sessions that mostly stay inside one category, with a same-category target."""
    rng = random.Random(seed)
    by_cat: dict[str, list[str]] = {}
    for item in catalog:
        by_cat.setdefault(item.category, []).append(item.id)
    cats = sorted(by_cat)
    sessions = []
    for n in range(n_sessions):
        pool = by_cat[rng.choice(cats)]
        length = rng.randint(2, 6)
        picked = rng.sample(pool, min(length + 1, len(pool)))
        interactions, target = picked[:-1], picked[-1]
        if rng.random() < 0.2:
            interactions.insert(rng.randrange(len(interactions) + 1), rng.choice(catalog.ids))
        sessions.append(Session(f"{prefix}{n:04d}", tuple(interactions), target))
    return sessions


def _prompt(body: str, q: float) -> str:
    return (f"{body} {{{{q={q}}}}}\n\nSession:\n{{session}}\n\nCandidates:\n{{candidates}}\n\n"
            "Answer with a JSON array of candidate numbers.")


def demo_mock_script(k_filter: int = 20) -> dict:
    """Mock behaviour for the demo: the seed prompt returns the reranker order
    unchanged, and refinement produces prompts the quality-biased mock ranks well."""
    return {
        "tags": {
            "evaluate": json.dumps(list(range(1, k_filter + 1))),
            "infer_reason": "1. The prompt did not stress the most recent interactions.\n"
                            "2. The prompt ignored the category the session focuses on.",
            "augment": "".join(
                f"<START>{_prompt(body, q)}<END>\n"
                for body, q in [
                    ("Rank the candidates by the user's latest intent.", 0.5),
                    ("Order products by how well they match the session's focus, recent items first.", 0.7),
                    ("Sort candidates by relevance to the session; prefer [ECO] items when equally relevant.", 0.4),
                ]
            ),
        },
        "rules": [
            {"tag": "refine_prompt", "contains": "{{q=0.6}}",
             "text": f"<START>{_prompt('Infer the intent from the last two items, then rank.', 0.65)}<END>"},
            {"tag": "refine_prompt",
             "text": f"<START>{_prompt('Focus on the category and recency of the session.', 0.6)}<END>"},
        ],
    }


DEMO_CONFIG = """\
[paths]
catalog = "catalog.jsonl"
train = "train.jsonl"
test = "test.jsonl"
runs_root = "runs"

[ingest]
n_initial = 100
seed = {seed}

[reranker]
k_filter = 20
scorer = "lexical"

[backend]
kind = "mock"
mock_script = "mock_script.json"

[optimizer]
max_trials = {max_trials}
batch_size = 8
seed = {seed}

[metrics]
cutoffs = [1, 5]
"""


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def session_row(s: Session) -> dict:
    return {"session_id": s.session_id, "items": list(s.interactions), "target": s.target}


def write_demo(out_dir: str | Path, n_items: int = 150, n_train: int = 40, n_test: int = 10,
               seed: int = 0, max_trials: int = 30) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    catalog = make_catalog(n_items, seed)
    sessions = make_sessions(catalog, n_train + n_test, seed + 1)
    _write_jsonl(out / "catalog.jsonl", (
        {"id": it.id, "title": it.title, "category": it.category,
         "attributes": dict(it.attributes), "sustainable": it.sustainable}
        for it in catalog
    ))
    _write_jsonl(out / "train.jsonl", map(session_row, sessions[:n_train]))
    _write_jsonl(out / "test.jsonl", map(session_row, sessions[n_train:]))
    (out / "mock_script.json").write_text(json.dumps(demo_mock_script(), indent=2) + "\n", encoding="utf-8")
    (out / "config.toml").write_text(DEMO_CONFIG.format(seed=seed, max_trials=max_trials), encoding="utf-8")
    return out


def main() -> None:
    parser = argparse.ArgumentParser(description="write a synthetic demo dataset")
    parser.add_argument("out_dir")
    parser.add_argument("--items", type=int, default=150)
    parser.add_argument("--train", type=int, default=40)
    parser.add_argument("--test", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    out = write_demo(args.out_dir, args.items, args.train, args.test, args.seed)
    print(f"demo dataset written to {out}")


if __name__ == "__main__":
    main()
