#!/usr/bin/env python3
"""Extract gene<TAB>GO:id pairs from a GAF 2.x annotation file.

Annotations carrying a NOT qualifier are dropped. Reads gzip input when the
file name ends in .gz.
"""

import argparse
import gzip
import sys


def open_text(path):
    if path == "-":
        return sys.stdin
    if path.endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, encoding="utf-8")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("gaf", help="GAF file, .gz, or - for stdin")
    ap.add_argument("--id-column", choices=["id", "symbol"], default="id",
                    help="gene key: DB object id (column 2) or symbol (column 3)")
    ap.add_argument("--aspect", choices=["F", "P", "C"], action="append",
                    help="keep only these aspects (repeatable)")
    args = ap.parse_args()

    key = 1 if args.id_column == "id" else 2
    seen = set()
    out = sys.stdout
    with open_text(args.gaf) as f:
        for line in f:
            if line.startswith("!") or not line.strip():
                continue
            cols = line.rstrip("\n").split("\t")
            if len(cols) < 9:
                continue
            if "NOT" in cols[3].split("|"):
                continue
            if args.aspect and cols[8] not in args.aspect:
                continue
            pair = (cols[key], cols[4])
            if pair in seen:
                continue
            seen.add(pair)
            out.write(f"{pair[0]}\t{pair[1]}\n")


if __name__ == "__main__":
    main()
