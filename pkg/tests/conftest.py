"""Shared fixtures: tiny handcrafted TSVs plus synthetic-signal datasets.

Synthetic click rows carry their engagement level as a question token
("level<e>"), so lexical models can learn it; everything is seeded.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

HEADER = [
    "query",
    "question",
    "option_1",
    "option_2",
    "option_3",
    "option_4",
    "option_5",
    "impression_level",
    "engagement_level",
]


def write_click_tsv(path: Path, rows: list[dict]) -> Path:
    lines = ["\t".join(HEADER)]
    for row in rows:
        answers = list(row.get("answers", []))
        options = answers + [""] * (5 - len(answers))
        lines.append(
            "\t".join(
                [
                    row["query"],
                    row.get("question", "what do you mean?"),
                    *options,
                    row.get("impression", "high"),
                    str(row.get("engagement", 0)),
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


_NOISE_WORDS = [f"noise{i}" for i in range(40)]
_TOPICS = ["jaguar", "python", "mercury", "apple", "kiwi", "delta", "tiger", "orion"]


def synth_click_rows(n: int, seed: int, signal: bool = True, low_share: float = 0.1) -> list[dict]:
    """Balanced engagement labels 0..10; the question text leaks the label."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        engagement = i % 11
        topic = _TOPICS[int(rng.integers(len(_TOPICS)))]
        noise = rng.choice(_NOISE_WORDS, size=3, replace=False)
        if signal:
            question = f"did you mean level{engagement} {topic} {' '.join(noise)}"
        else:
            question = f"did you mean {topic} {' '.join(noise)}"
        impression = "low" if rng.random() < low_share else ("medium" if rng.random() < 0.5 else "high")
        rows.append(
            {
                "query": f"{topic} query {int(rng.integers(1000))}",
                "question": question,
                "answers": [f"answer {w}" for w in rng.choice(_NOISE_WORDS, size=int(rng.integers(1, 4)), replace=False)],
                "impression": impression,
                "engagement": engagement,
            }
        )
    return rows


def synth_explore_rows(n_queries: int, seed: int, signal: bool = True) -> list[dict]:
    """2..4 CPs per query, unique query strings, engagement skewed to 0."""
    rng = np.random.default_rng(seed)
    rows = []
    for q in range(n_queries):
        topic = _TOPICS[int(rng.integers(len(_TOPICS)))]
        query = f"{topic} explore {q}"
        for _ in range(int(rng.integers(2, 5))):
            engagement = int(rng.choice([0, 0, 1, 2, 4, 7]))
            noise = rng.choice(_NOISE_WORDS, size=2, replace=False)
            if signal:
                question = f"did you mean level{engagement} {topic} {' '.join(noise)}"
            else:
                question = f"did you mean {topic} {' '.join(noise)}"
            rows.append(
                {
                    "query": query,
                    "question": question,
                    "answers": [f"answer {w}" for w in rng.choice(_NOISE_WORDS, size=2, replace=False)],
                    "impression": "medium" if rng.random() < 0.5 else "high",
                    "engagement": engagement,
                }
            )
    return rows


@pytest.fixture
def click_tsv(tmp_path):
    return write_click_tsv(tmp_path / "click.tsv", synth_click_rows(220, seed=7))


@pytest.fixture
def explore_tsv(tmp_path):
    return write_click_tsv(tmp_path / "explore.tsv", synth_explore_rows(40, seed=11))
