#!/usr/bin/env python3
"""Line-scanning stanza counter for OBO fixtures.

Prints "key<TAB>value" counts followed by one "edge<TAB>src<TAB>kind<TAB>dst"
line per retained edge, sorted. Written without reference to the C++ parser.
"""
import re
import sys

KINDS = {"regulates", "positively_regulates", "negatively_regulates", "part_of"}

stanzas = []
cur = None
for raw in open(sys.argv[1], encoding="utf-8"):
    line = raw.strip()
    if line.startswith("["):
        cur = {"type": line, "is_a": [], "rel": [], "obsolete": False, "id": None}
        stanzas.append(cur)
        continue
    if cur is None or cur["type"] != "[Term]" or not line:
        continue
    tag, _, value = line.partition(":")
    value = re.sub(r"\s*!.*$", "", value).strip()
    value = re.sub(r"\s*\{.*\}\s*$", "", value).strip()
    if tag == "id":
        cur["id"] = value
    elif tag == "is_a":
        cur["is_a"].append(value)
    elif tag == "relationship":
        kind, target = value.split()[:2]
        cur["rel"].append((kind, target))
    elif tag == "is_obsolete" and value == "true":
        cur["obsolete"] = True

terms = [s for s in stanzas if s["type"] == "[Term]"]
live = {s["id"] for s in terms if not s["obsolete"]}
edges, unknown, dangling = set(), 0, 0
for s in terms:
    if s["obsolete"]:
        continue
    pairs = [("is_a", t) for t in s["is_a"]]
    for kind, t in s["rel"]:
        if kind in KINDS:
            pairs.append((kind, t))
        else:
            unknown += 1
    for kind, t in pairs:
        if t in live:
            edges.add((s["id"], kind, t))
        else:
            dangling += 1

print(f"terms\t{len(terms)}")
print(f"non_obsolete\t{len(live)}")
print(f"obsolete\t{len(terms) - len(live)}")
print(f"edges\t{len(edges)}")
print(f"unknown_relations\t{unknown}")
print(f"dangling_edges\t{dangling}")
for src, kind, dst in sorted(edges):
    print(f"edge\t{src}\t{kind}\t{dst}")
