"""Converters from native dataset layouts to ``label<TAB>text`` corpus files.

TREC: the distributed files hold ``CATEGORY:fine question`` per line (latin-1);
the fine label is kept verbatim as the leaf name.

20 Newsgroups: one directory per group, one message per file. Everything up to
the first blank line (the mail header) is dropped and whitespace is collapsed;
messages that are empty afterwards are skipped. No deduplication is done.

Usage::

    python -m hiersoftmax.convert trec train_5500.label train.tsv
    python -m hiersoftmax.convert 20ng 20news-bydate-train train.tsv
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path


def convert_trec(src: str | Path, dst: str | Path) -> int:
    n = 0
    with open(src, encoding="latin-1") as fin, open(dst, "w", encoding="utf-8") as fout:
        for line in fin:
            line = line.strip()
            if not line:
                continue
            label, _, text = line.partition(" ")
            fout.write(f"{label}\t{text}\n")
            n += 1
    return n


def strip_header(message: str) -> str:
    _, sep, body = message.partition("\n\n")
    return " ".join((body if sep else message).split())


def convert_20ng(src_dir: str | Path, dst: str | Path) -> int:
    n = 0
    with open(dst, "w", encoding="utf-8") as fout:
        for group in sorted(p for p in Path(src_dir).iterdir() if p.is_dir()):
            for f in sorted(group.iterdir(), key=lambda p: p.name):
                text = strip_header(f.read_text(encoding="latin-1"))
                if text:
                    fout.write(f"{group.name}\t{text}\n")
                    n += 1
    return n


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="python -m hiersoftmax.convert")
    ap.add_argument("format", choices=["trec", "20ng"])
    ap.add_argument("src")
    ap.add_argument("dst")
    args = ap.parse_args(argv)
    n = (convert_trec if args.format == "trec" else convert_20ng)(args.src, args.dst)
    print(f"wrote {n} examples to {args.dst}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
