#!/usr/bin/env python3
"""Brute-force duplicate filter: keeps a gene unless its term set equals the
set of any earlier kept gene. Prints kept gene ids in input order."""
import sys

order, sets = [], {}
for line in open(sys.argv[1]):
    gene, term = line.rstrip("\n").split("\t")
    if gene not in sets:
        order.append(gene)
        sets[gene] = set()
    sets[gene].add(term)
kept = []
for g in order:
    if all(sets[g] != sets[k] for k in kept):
        kept.append(g)
print("\n".join(kept))
