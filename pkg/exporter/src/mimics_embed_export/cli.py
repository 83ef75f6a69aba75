"""CLI: export EMB1 embeddings from a MIMICS TSV."""

from __future__ import annotations

import argparse
import json


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mimics-embed-export",
        description="Encode query/question/answers per row and write an EMB1 file.",
    )
    parser.add_argument("--input", required=True, help="MIMICS TSV path")
    parser.add_argument("--output", required=True, help="EMB1 output path")
    parser.add_argument("--stub", action="store_true", help="deterministic pseudo-embeddings, no model")
    parser.add_argument("--stub-seed", type=int, default=0)
    parser.add_argument(
        "--checkpoint",
        default="sentence-transformers/distilbert-base-nli-stsb-mean-tokens",
        help="sentence-transformers checkpoint id",
    )
    parser.add_argument("--batch-size", type=int, default=64)
    args = parser.parse_args(argv)

    from .export import ExportSpec, export_embeddings

    manifest = export_embeddings(
        ExportSpec(
            input_tsv=args.input,
            output_emb1=args.output,
            checkpoint=args.checkpoint,
            batch_size=args.batch_size,
            stub=args.stub,
            stub_seed=args.stub_seed,
        )
    )
    print(json.dumps(manifest))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
