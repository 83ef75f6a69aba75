"""Parsing and validation of MIMICS-style clarification-pane TSV files.

A clarification pane (CP) is a clarifying question plus up to five candidate
answers. MIMICS-Click holds one CP per row; MIMICS-ClickExplore has several
CPs per query and is parsed into query groups.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

MAX_ANSWERS = 5
N_ENGAGEMENT_LEVELS = 11  # integer labels 0..10


class IngestError(ValueError):
    """Base class for TSV ingestion failures."""


class MissingColumn(IngestError):
    def __init__(self, name: str):
        super().__init__(f"required column missing from header: {name!r}")
        self.name = name


class BadRow(IngestError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class EmptyFile(IngestError):
    pass


class EmptyDataset(IngestError):
    pass


class Impression(Enum):
    """Exposure tier of a clarification pane."""

    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


@dataclass(frozen=True)
class ClickRecord:
    """One (query, question, answers, impression, engagement) row."""

    query: str
    question: str
    answers: tuple[str, ...]
    impression: Impression
    engagement: int

    def __post_init__(self):
        if not self.query:
            raise ValueError("query must be non-empty")
        if len(self.answers) > MAX_ANSWERS:
            raise ValueError(f"at most {MAX_ANSWERS} answers allowed")
        if any(a == "" for a in self.answers):
            raise ValueError("answers must not contain empty strings")
        if not 0 <= self.engagement < N_ENGAGEMENT_LEVELS:
            raise ValueError(f"engagement {self.engagement} outside [0, {N_ENGAGEMENT_LEVELS - 1}]")


@dataclass(frozen=True)
class ClickSchema:
    """Column-name mapping; defaults match the public MIMICS release."""

    query: str = "query"
    question: str = "question"
    options: tuple[str, ...] = ("option_1", "option_2", "option_3", "option_4", "option_5")
    impression: str = "impression_level"
    engagement: str = "engagement_level"

    def required_columns(self) -> tuple[str, ...]:
        return (self.query, self.question, *self.options, self.impression, self.engagement)


DEFAULT_SCHEMA = ClickSchema()


@dataclass(frozen=True)
class Dataset:
    """Ordered records plus provenance row indices for embedding alignment.

    ``row_indices[i]`` is the position of record ``i`` in the accepted-row
    sequence of ``source`` (0-based, header excluded), which is also the row
    index in any embedding file exported from that source.
    """

    records: tuple[ClickRecord, ...]
    row_indices: tuple[int, ...]
    source: str
    n_rejected: int = 0

    def __post_init__(self):
        if len(self.records) != len(self.row_indices):
            raise ValueError("records and row_indices must be parallel")
        if any(b <= a for a, b in zip(self.row_indices, self.row_indices[1:])):
            raise ValueError("row indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def labels(self) -> list[int]:
        return [r.engagement for r in self.records]


@dataclass(frozen=True)
class GroupedDataset:
    """Records grouped by exact query text, in first-appearance order."""

    groups: dict[str, tuple[ClickRecord, ...]]
    row_indices: dict[str, tuple[int, ...]]
    source: str
    n_rejected: int = 0

    def __post_init__(self):
        for query, members in self.groups.items():
            if not members:
                raise ValueError(f"empty group for query {query!r}")
            if any(r.query != query for r in members):
                raise ValueError(f"group {query!r} contains a record with a different query")

    def __len__(self) -> int:
        return len(self.groups)

    @property
    def n_pairs(self) -> int:
        return sum(len(members) for members in self.groups.values())

    def all_records(self) -> list[ClickRecord]:
        return [r for members in self.groups.values() for r in members]


@dataclass(frozen=True)
class CorpusStats:
    n_queries: int
    n_pairs: int
    mean_cps_per_query: float
    max_cps_per_query: int
    zero_engagement_fraction: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_queries": self.n_queries,
                "n_pairs": self.n_pairs,
                "mean_cps_per_query": self.mean_cps_per_query,
                "max_cps_per_query": self.max_cps_per_query,
                "zero_engagement_fraction": self.zero_engagement_fraction,
            },
            sort_keys=True,
        )


def _read_rows(path: str | Path, schema: ClickSchema, strict: bool):
    """Return ([(accepted_row_index, record), ...], n_rejected).

    Extracted so single-record and grouped parsing share validation exactly;
    accepted-row indices are what embedding files are aligned to.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise EmptyFile(f"{path}: file is empty")

    header = lines[0].split("\t")
    positions = {}
    for name in schema.required_columns():
        if name not in header:
            raise MissingColumn(name)
        positions[name] = header.index(name)

    accepted = []
    n_rejected = 0
    row_index = 0  # counts accepted data rows only
    for line_no, line in enumerate(lines[1:], start=2):
        if line == "":
            continue
        cells = line.split("\t")
        try:
            record = _row_to_record(cells, positions, schema, line_no)
        except BadRow:
            if strict:
                raise
            n_rejected += 1
            continue
        accepted.append((row_index, record))
        row_index += 1

    if not accepted:
        raise EmptyFile(f"{path}: no data rows")
    return accepted, n_rejected


def _row_to_record(cells, positions, schema, line_no):
    def cell(name):
        pos = positions[name]
        if pos >= len(cells):
            raise BadRow(line_no, f"row has no column {name!r}")
        return cells[pos]

    query = cell(schema.query)
    if not query:
        raise BadRow(line_no, "empty query")

    raw_impression = cell(schema.impression).casefold()
    try:
        impression = Impression(raw_impression)
    except ValueError:
        raise BadRow(line_no, f"unknown impression level {cell(schema.impression)!r}") from None

    raw_engagement = cell(schema.engagement)
    try:
        engagement = int(raw_engagement)
    except ValueError:
        raise BadRow(line_no, f"unparsable engagement {raw_engagement!r}") from None
    if not 0 <= engagement < N_ENGAGEMENT_LEVELS:
        raise BadRow(line_no, f"engagement {engagement} outside [0, {N_ENGAGEMENT_LEVELS - 1}]")

    answers = tuple(cell(name) for name in schema.options if cell(name) != "")
    return ClickRecord(
        query=query,
        question=cell(schema.question),
        answers=answers,
        impression=impression,
        engagement=engagement,
    )


def parse_click(path: str | Path, schema: ClickSchema = DEFAULT_SCHEMA, *, strict: bool = True) -> Dataset:
    """Parse a MIMICS-Click TSV into a validated Dataset.

    In strict mode (default) any malformed row raises BadRow; in lenient mode
    malformed rows are counted and skipped.
    """
    accepted, n_rejected = _read_rows(path, schema, strict)
    return Dataset(
        records=tuple(r for _, r in accepted),
        row_indices=tuple(i for i, _ in accepted),
        source=str(path),
        n_rejected=n_rejected,
    )


def parse_click_explore(
    path: str | Path, schema: ClickSchema = DEFAULT_SCHEMA, *, strict: bool = True
) -> GroupedDataset:
    """Parse a MIMICS-ClickExplore TSV, grouping rows by exact query text."""
    accepted, n_rejected = _read_rows(path, schema, strict)
    groups: dict[str, list[ClickRecord]] = {}
    indices: dict[str, list[int]] = {}
    for row_index, record in accepted:
        groups.setdefault(record.query, []).append(record)
        indices.setdefault(record.query, []).append(row_index)
    return GroupedDataset(
        groups={q: tuple(members) for q, members in groups.items()},
        row_indices={q: tuple(ix) for q, ix in indices.items()},
        source=str(path),
        n_rejected=n_rejected,
    )


def group_by_query(dataset: Dataset) -> GroupedDataset:
    """Group an already-parsed Dataset by query text (first-appearance order)."""
    groups: dict[str, list[ClickRecord]] = {}
    indices: dict[str, list[int]] = {}
    for record, row_index in zip(dataset.records, dataset.row_indices):
        groups.setdefault(record.query, []).append(record)
        indices.setdefault(record.query, []).append(row_index)
    return GroupedDataset(
        groups={q: tuple(members) for q, members in groups.items()},
        row_indices={q: tuple(ix) for q, ix in indices.items()},
        source=dataset.source,
        n_rejected=dataset.n_rejected,
    )


def compute_stats(grouped: GroupedDataset) -> CorpusStats:
    """Corpus statistics over a grouped dataset."""
    if len(grouped) == 0:
        raise EmptyDataset("no groups")
    sizes = [len(members) for members in grouped.groups.values()]
    n_pairs = sum(sizes)
    records = grouped.all_records()
    n_zero = sum(1 for r in records if r.engagement == 0)
    return CorpusStats(
        n_queries=len(grouped),
        n_pairs=n_pairs,
        mean_cps_per_query=n_pairs / len(grouped),
        max_cps_per_query=max(sizes),
        zero_engagement_fraction=n_zero / n_pairs,
    )


def write_click(dataset: Dataset, path: str | Path, schema: ClickSchema = DEFAULT_SCHEMA) -> None:
    """Serialize a Dataset back to the TSV layout parse_click accepts.

    Fields must not contain tabs or newlines (the release format has no
    quoting); impression values are written lowercase.
    """
    columns = schema.required_columns()
    lines = ["\t".join(columns)]
    for record in dataset.records:
        options = list(record.answers) + [""] * (MAX_ANSWERS - len(record.answers))
        row = {
            schema.query: record.query,
            schema.question: record.question,
            schema.impression: record.impression.value,
            schema.engagement: str(record.engagement),
        }
        for name, value in zip(schema.options, options):
            row[name] = value
        cells = [row[c] for c in columns]
        for cell in cells:
            if "\t" in cell or "\n" in cell or "\r" in cell:
                raise ValueError(f"field contains tab/newline, cannot serialize: {cell!r}")
        lines.append("\t".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
