#include "gobert/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "gobert/error.hpp"
#include "gobert/random.hpp"

namespace gobert {

namespace {

std::string go_id(int n) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "GO:%07d", n);
  return buf;
}

}  // namespace

std::string synthetic_obo(const SyntheticDagOptions& options) {
  if (options.terms < 3) throw DomainError("synthetic ontology needs at least the three roots");
  Rng rng(derive_seed(options.seed, 0xda6));
  constexpr std::array<Namespace, 3> kNs = {Namespace::molecular_function, Namespace::biological_process,
                                            Namespace::cellular_component};
  std::array<std::vector<int>, 3> members;
  std::ostringstream out;
  out << "format-version: 1.2\n";
  out << "ontology: synthetic\n";

  for (int n = 1; n <= options.terms; ++n) {
    const int ns = n <= 3 ? n - 1 : static_cast<int>(rng.index(3));
    auto& pool = members[static_cast<std::size_t>(ns)];
    out << "\n[Term]\n";
    out << "id: " << go_id(n) << "\n";
    if (n <= 3) {
      out << "name: " << to_string(kNs[static_cast<std::size_t>(ns)]) << "\n";
      out << "namespace: " << to_string(kNs[static_cast<std::size_t>(ns)]) << "\n";
      out << "def: \"Root of the " << to_string(kNs[static_cast<std::size_t>(ns)]) << " namespace.\" []\n";
    } else {
      out << "name: synthetic " << to_string(kNs[static_cast<std::size_t>(ns)]) << " " << n << "\n";
      out << "namespace: " << to_string(kNs[static_cast<std::size_t>(ns)]) << "\n";
      out << "def: \"Synthetic term number " << n << ".\" []\n";
      std::set<int> parents{pool[rng.index(pool.size())]};
      if (pool.size() > 1 && rng.uniform() < options.second_parent) parents.insert(pool[rng.index(pool.size())]);
      for (int p : parents) {
        if (rng.uniform() < options.part_of)
          out << "relationship: part_of " << go_id(p) << "\n";
        else
          out << "is_a: " << go_id(p) << "\n";
      }
      if (pool.size() > 2 && rng.uniform() < options.regulates) {
        const int target = pool[rng.index(pool.size())];
        if (!parents.count(target)) {
          static constexpr std::array<const char*, 3> kReg = {"regulates", "positively_regulates",
                                                              "negatively_regulates"};
          out << "relationship: " << kReg[rng.index(3)] << " " << go_id(target) << "\n";
        }
      }
    }
    pool.push_back(n);
  }
  return out.str();
}

PlantedCorpus planted_corpus(const GoDag& dag, const PlantedCorpusOptions& options, std::uint64_t gene_seed) {
  if (options.rules < 1 || options.background_min < 0 || options.background_max < options.background_min)
    throw DomainError("invalid planted corpus options");
  Rng rng(derive_seed(options.seed, 0x9a7));

  // Non-root, non-obsolete terms.
  std::vector<TermIndex> pool;
  for (TermIndex l = 0; l < dag.label_count(); ++l) {
    const auto t = dag.term_of_label(l);
    if (!dag.is_root(t)) pool.push_back(t);
  }
  std::vector<char> used(dag.size(), 0);
  auto adjacent = [&](TermIndex a, TermIndex b) {
    const auto s = dag.successors(a);
    const auto p = dag.predecessor_indices(a);
    return std::find(s.begin(), s.end(), b) != s.end() || std::find(p.begin(), p.end(), b) != p.end();
  };
  auto shares_pred = [&](TermIndex a, TermIndex b) {
    // a term appearing as a predecessor of the other rule term would make
    // that term non-maskable
    const auto pa = dag.predecessor_indices(a);
    const auto pb = dag.predecessor_indices(b);
    return std::find(pb.begin(), pb.end(), a) != pb.end() || std::find(pa.begin(), pa.end(), b) != pa.end();
  };

  PlantedCorpus corpus;
  std::size_t attempts = 0;
  while (static_cast<int>(corpus.rules.size()) < options.edge_rules) {
    if (++attempts > 100000) throw DomainError("cannot place edge rules on this ontology");
    const auto edges = dag.edges();
    const auto& e = edges[rng.index(edges.size())];
    if (used[static_cast<std::size_t>(e.source)] || used[static_cast<std::size_t>(e.target)]) continue;
    if (dag.is_root(e.source) || dag.is_root(e.target)) continue;
    used[static_cast<std::size_t>(e.source)] = used[static_cast<std::size_t>(e.target)] = 1;
    corpus.rules.push_back({dag.term(e.source).id, dag.term(e.target).id, true});
  }
  attempts = 0;
  while (static_cast<int>(corpus.rules.size()) < options.edge_rules + options.rules) {
    if (++attempts > 100000) throw DomainError("cannot place planted rules on this ontology");
    const auto a = pool[rng.index(pool.size())];
    const auto b = pool[rng.index(pool.size())];
    if (a == b || used[static_cast<std::size_t>(a)] || used[static_cast<std::size_t>(b)]) continue;
    if (adjacent(a, b) || shares_pred(a, b)) continue;
    used[static_cast<std::size_t>(a)] = used[static_cast<std::size_t>(b)] = 1;
    corpus.rules.push_back({dag.term(a).id, dag.term(b).id, false});
  }

  // Background: not a rule term and not a predecessor of any rule term.
  std::vector<char> blocked = used;
  for (std::size_t t = 0; t < used.size(); ++t)
    if (used[t])
      for (auto u : dag.predecessor_indices(static_cast<TermIndex>(t))) blocked[static_cast<std::size_t>(u)] = 1;
  std::vector<TermIndex> background;
  for (auto t : pool)
    if (!blocked[static_cast<std::size_t>(t)]) background.push_back(t);
  if (static_cast<int>(background.size()) < options.background_max)
    throw DomainError("ontology too small for the requested background size");

  Rng genes(derive_seed(gene_seed, 0x6e5));
  const auto edge_count = static_cast<std::uint64_t>(options.edge_rules);
  const auto plain_count = static_cast<std::uint64_t>(options.rules);
  for (int g = 0; g < options.genes; ++g) {
    std::vector<TermId> terms;
    const auto& rule = corpus.rules[static_cast<std::size_t>(edge_count + genes.index(plain_count))];
    terms.push_back(rule.premise);
    terms.push_back(rule.conclusion);
    if (edge_count > 0) {
      const auto& er = corpus.rules[static_cast<std::size_t>(genes.index(edge_count))];
      terms.push_back(er.premise);
      terms.push_back(er.conclusion);
    }
    const auto span = static_cast<std::uint64_t>(options.background_max - options.background_min + 1);
    const int nbg = options.background_min + static_cast<int>(genes.index(span));
    std::set<TermIndex> chosen;
    while (static_cast<int>(chosen.size()) < nbg) chosen.insert(background[genes.index(background.size())]);
    for (auto t : chosen) terms.push_back(dag.term(t).id);
    corpus.examples.push_back(make_example(options.gene_prefix + std::to_string(g), std::move(terms), dag));
  }
  return corpus;
}

}  // namespace gobert
