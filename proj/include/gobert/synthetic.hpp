#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gobert/corpus.hpp"
#include "gobert/ontology.hpp"

namespace gobert {

// Random ontology in OBO text: three named roots, every other term gets
// one or two hierarchy parents among earlier terms of its namespace, plus
// occasional regulates-family edges. Acyclic by construction.
struct SyntheticDagOptions {
  int terms = 200;
  std::uint64_t seed = 0;
  double second_parent = 0.3;
  double part_of = 0.2;
  double regulates = 0.05;
};

std::string synthetic_obo(const SyntheticDagOptions& options);

struct PlantedRule {
  TermId premise;     // a
  TermId conclusion;  // b: present whenever a is
  bool is_edge;       // premise -> conclusion is a DAG edge
};

// Genes carry one non-edge rule pair, optionally one edge rule pair, and
// background terms. Rule terms and their predecessors never appear as
// background, so every rule conclusion is maskable unless its premise is
// a predecessor.
struct PlantedCorpusOptions {
  int genes = 2000;
  int rules = 20;
  int edge_rules = 0;
  int background_min = 3;
  int background_max = 6;
  std::uint64_t seed = 0;
  std::string gene_prefix = "gene";
};

struct PlantedCorpus {
  std::vector<GeneExample> examples;
  std::vector<PlantedRule> rules;
};

// Rule selection depends only on (dag, rules, edge_rules, seed) so corpora
// drawn with different gene_prefix/genes share the same rules when the
// seed matches; `gene_seed` varies the genes.
PlantedCorpus planted_corpus(const GoDag& dag, const PlantedCorpusOptions& options, std::uint64_t gene_seed);

}  // namespace gobert
