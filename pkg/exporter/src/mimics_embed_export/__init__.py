"""EMB1 embedding exporter for MIMICS TSV files."""

from .export import (
    EncoderLoadFailure,
    ExportError,
    ExportSpec,
    RowCountMismatch,
    StubEncoder,
    export_embeddings,
    read_rows,
    write_emb1,
)

__version__ = "0.1.0"
