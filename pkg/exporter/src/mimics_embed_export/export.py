"""Export EMB1 embedding files from MIMICS-style TSVs.

Each accepted row yields 7 field embeddings of 768 floats (query, question,
answer slots 1..5, missing answers zero-filled), concatenated to one 5376-dim
row. Row order equals accepted-row order of the input file, so EMB1 row i
aligns with dataset provenance row i on the consumer side.

The encoder is pluggable: ``--stub`` produces deterministic pseudo-embeddings
derived from a SHA-256 stream over (seed, text), needing no model download;
otherwise a sentence-transformers checkpoint is loaded lazily.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FIELD_DIM = 768
N_FIELDS = 7  # query, question, answer slots 1..5
ROW_DIM = FIELD_DIM * N_FIELDS  # 5376
EMB_MAGIC = b"EMB1"
MAX_ANSWERS = 5

REQUIRED_COLUMNS = (
    "query",
    "question",
    "option_1",
    "option_2",
    "option_3",
    "option_4",
    "option_5",
    "impression_level",
    "engagement_level",
)
IMPRESSION_LEVELS = {"low", "medium", "high"}


class ExportError(ValueError):
    pass


class EncoderLoadFailure(ExportError):
    pass


class RowCountMismatch(ExportError):
    pass


@dataclass(frozen=True)
class ExportSpec:
    input_tsv: str
    output_emb1: str
    checkpoint: str = "sentence-transformers/distilbert-base-nli-stsb-mean-tokens"
    batch_size: int = 64
    stub: bool = False
    stub_seed: int = 0


@dataclass(frozen=True)
class ParsedRow:
    query: str
    question: str
    answers: tuple[str, ...]


def read_rows(path: str | Path) -> list[ParsedRow]:
    """Accepted rows of a MIMICS TSV, validated under the same rules the
    consumer's parser applies, so row indices line up exactly.

    Rejects (raises) on: missing header columns, empty query, impression
    outside low/medium/high (case-folded), engagement not an integer in 0..10.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ExportError(f"{path}: file is empty")
    header = lines[0].split("\t")
    positions = {}
    for name in REQUIRED_COLUMNS:
        if name not in header:
            raise ExportError(f"{path}: required column missing: {name!r}")
        positions[name] = header.index(name)

    rows = []
    for line_no, line in enumerate(lines[1:], start=2):
        if line == "":
            continue
        cells = line.split("\t")

        def cell(name):
            pos = positions[name]
            if pos >= len(cells):
                raise ExportError(f"{path}:{line_no}: row has no column {name!r}")
            return cells[pos]

        if not cell("query"):
            raise ExportError(f"{path}:{line_no}: empty query")
        if cell("impression_level").casefold() not in IMPRESSION_LEVELS:
            raise ExportError(f"{path}:{line_no}: unknown impression level")
        try:
            engagement = int(cell("engagement_level"))
        except ValueError:
            raise ExportError(f"{path}:{line_no}: unparsable engagement") from None
        if not 0 <= engagement <= 10:
            raise ExportError(f"{path}:{line_no}: engagement {engagement} outside [0, 10]")

        answers = tuple(cell(f"option_{i}") for i in range(1, MAX_ANSWERS + 1))
        rows.append(ParsedRow(query=cell("query"), question=cell("question"), answers=answers))
    if not rows:
        raise ExportError(f"{path}: no data rows")
    return rows


class StubEncoder:
    """Deterministic pseudo-embeddings without any model.

    Each vector is derived from a SHA-256 stream over (seed, text), mapped to
    floats in [-1, 1); the same (seed, text) always yields the same bytes, on
    any platform. Empty text encodes to the zero vector, matching the
    zero-fill rule for missing answers.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed

    def encode(self, texts: list[str], batch_size: int = 64) -> np.ndarray:
        return np.stack([self._one(t) for t in texts])

    def _one(self, text: str) -> np.ndarray:
        if text == "":
            return np.zeros(FIELD_DIM, dtype=np.float32)
        key = f"{self.seed}:{text}".encode("utf-8")
        blocks = []
        counter = 0
        while len(blocks) * 8 < FIELD_DIM:
            digest = hashlib.sha256(key + counter.to_bytes(4, "little")).digest()
            blocks.append(np.frombuffer(digest, dtype="<u4"))
            counter += 1
        words = np.concatenate(blocks)[:FIELD_DIM]
        return (words.astype(np.float64) / 2**31 - 1.0).astype(np.float32)


def load_encoder(checkpoint: str):
    """Load a sentence-transformers checkpoint; import and download happen
    lazily so stub mode never needs them."""
    try:
        from sentence_transformers import SentenceTransformer
    except ImportError as error:
        raise EncoderLoadFailure(f"sentence-transformers is not installed: {error}") from error
    try:
        return SentenceTransformer(checkpoint)
    except Exception as error:
        raise EncoderLoadFailure(f"could not load encoder {checkpoint!r}: {error}") from error


def encode_rows(rows: list[ParsedRow], encoder, batch_size: int) -> np.ndarray:
    """Encode all fields of all rows; returns (n_rows, 5376) float32.

    Fields are encoded per kind in batches; empty answer slots become exact
    zero vectors regardless of encoder behaviour.
    """
    out = np.zeros((len(rows), ROW_DIM), dtype=np.float32)
    fields = [[r.query for r in rows], [r.question for r in rows]]
    fields += [[r.answers[slot] for r in rows] for slot in range(MAX_ANSWERS)]

    for field_index, texts in enumerate(fields):
        nonempty = [i for i, t in enumerate(texts) if t != ""]
        lo = field_index * FIELD_DIM
        for start in range(0, len(nonempty), batch_size):
            chunk = nonempty[start : start + batch_size]
            vectors = np.asarray(encoder.encode([texts[i] for i in chunk], batch_size=batch_size))
            if vectors.shape[0] != len(chunk):
                raise RowCountMismatch(
                    f"encoder returned {vectors.shape[0]} vectors for {len(chunk)} texts"
                )
            if vectors.ndim != 2 or vectors.shape[1] != FIELD_DIM:
                raise ExportError(f"encoder output must be (n, {FIELD_DIM}), got {vectors.shape}")
            out[chunk, lo : lo + FIELD_DIM] = vectors.astype(np.float32)
    return out


def write_emb1(values: np.ndarray, path: str | Path) -> None:
    """Atomic EMB1 write: magic, u32-LE n_rows, u32-LE dim, float32-LE payload."""
    path = Path(path)
    header = EMB_MAGIC + struct.pack("<II", values.shape[0], values.shape[1])
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + np.ascontiguousarray(values, dtype="<f4").tobytes())
    os.replace(tmp, path)


def export_embeddings(spec: ExportSpec, encoder=None) -> dict:
    """Run the export; returns the manifest that was written alongside.

    ``encoder`` overrides encoder construction (used by tests to avoid model
    downloads while exercising the real-encoder path).
    """
    rows = read_rows(spec.input_tsv)
    if encoder is None:
        encoder = StubEncoder(spec.stub_seed) if spec.stub else load_encoder(spec.checkpoint)
    values = encode_rows(rows, encoder, spec.batch_size)
    if values.shape != (len(rows), ROW_DIM):
        raise RowCountMismatch(f"expected {(len(rows), ROW_DIM)}, produced {values.shape}")
    write_emb1(values, spec.output_emb1)

    manifest = {
        "source_file": str(spec.input_tsv),
        "sha256": hashlib.sha256(Path(spec.input_tsv).read_bytes()).hexdigest(),
        "dim": ROW_DIM,
        "n_rows": len(rows),
        "encoder": f"stub(seed={spec.stub_seed})" if spec.stub else spec.checkpoint,
    }
    manifest_path = Path(spec.output_emb1).with_name(Path(spec.output_emb1).name + ".json")
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest
