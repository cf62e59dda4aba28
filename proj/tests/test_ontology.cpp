#include <algorithm>
#include <functional>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "gobert/error.hpp"
#include "gobert/ontology.hpp"
#include "gobert/synthetic.hpp"

using namespace gobert;
using fixtures::data;

namespace {

GoDag fixture40(OboOptions o = {}) { return load_obo(data("go_40.obo"), o); }

TermId T(const char* s) { return TermId(s); }

std::string edge_tsv(const GoDag& dag) {
  std::ostringstream os;
  dag.write_edge_tsv(os);
  return os.str();
}

// Exhaustive DFS over every simple path, collecting the vertex sets of all
// directed cycles.
std::set<std::set<std::string>> brute_force_cycles(const GoDag& dag) {
  std::set<std::set<std::string>> found;
  const auto n = static_cast<TermIndex>(dag.size());
  std::vector<TermIndex> path;
  std::function<void(TermIndex, TermIndex)> dfs = [&](TermIndex start, TermIndex v) {
    for (const auto& e : dag.edges()) {
      if (e.source != v) continue;
      if (e.target == start) {
        std::set<std::string> ids;
        for (auto p : path) ids.insert(dag.term(p).id.str());
        found.insert(ids);
      } else if (e.target > start && std::find(path.begin(), path.end(), e.target) == path.end()) {
        path.push_back(e.target);
        dfs(start, e.target);
        path.pop_back();
      }
    }
  };
  for (TermIndex s = 0; s < n; ++s) {
    path = {s};
    dfs(s, s);
  }
  return found;
}

}  // namespace

TEST_CASE("term ids") {
  CHECK(TermId::is_valid("GO:0005515"));
  CHECK_FALSE(TermId::is_valid("GO:005515"));
  CHECK_FALSE(TermId::is_valid("GO:00055150"));
  CHECK_FALSE(TermId::is_valid("go:0005515"));
  CHECK_FALSE(TermId::is_valid("GO:000551x"));
  CHECK_THROWS_AS(TermId("HP:0000001"), DomainError);
  CHECK(T("GO:0000002") < T("GO:0000010"));
}

TEST_CASE("relation kinds round trip") {
  for (std::size_t k = 0; k < kRelationKindCount; ++k) {
    const auto kind = static_cast<RelationKind>(k);
    CHECK(relation_from_string(to_string(kind)) == kind);
  }
  CHECK_FALSE(relation_from_string("has_part"));
  CHECK(RelationSet::parse("is_a,part_of") == RelationSet::hierarchy());
  CHECK(RelationSet::parse(RelationSet::all().to_string()) == RelationSet::all());
  CHECK_THROWS_AS(RelationSet::parse("is_a,bogus"), DomainError);
}

TEST_CASE("chain fixture") {
  const auto dag = parse_obo_text(fixtures::kChain);
  CHECK(dag.label_count() == 3);
  CHECK(dag.edges().size() == 2);
  CHECK(dag.depth(T("GO:0008150")) == 0);
  CHECK(dag.depth(T("GO:0000002")) == 1);
  CHECK(dag.depth(T("GO:0000003")) == 2);
  CHECK(dag.predecessors(T("GO:0008150")) == std::vector<TermId>{T("GO:0000002")});
  CHECK(dag.predecessors(T("GO:0000003")).empty());
  const auto row = dag.adjacency_row(T("GO:0000002"));
  CHECK(row.sum() == 2);
  CHECK(row[dag.label_of(dag.index_of(T("GO:0000003"))).value()] == 1);
  CHECK(row[dag.label_of(dag.index_of(T("GO:0008150"))).value()] == 1);
  CHECK(dag.validate().ok());
  CHECK_THROWS_AS(dag.predecessors(T("GO:0000099")), DomainError);
  CHECK_THROWS_AS(dag.adjacency_row(T("GO:0000099")), DomainError);
}

TEST_CASE("diamond predecessors match an edge scan") {
  const auto dag = parse_obo_text(fixtures::kDiamond);
  for (const auto& t : dag.terms()) {
    std::vector<TermId> scan;
    for (const auto& e : dag.edges())
      if (dag.term(e.target).id == t.id) scan.push_back(dag.term(e.source).id);
    std::sort(scan.begin(), scan.end());
    auto got = dag.predecessors(t.id);
    std::sort(got.begin(), got.end());
    CHECK(got == scan);
  }
  CHECK(dag.predecessors(T("GO:0000010")) == std::vector<TermId>{T("GO:0000011"), T("GO:0000012")});
  CHECK(dag.depth(T("GO:0000013")) == 3);
}

TEST_CASE("40-term fixture agrees with the stanza counter") {
  const auto dag = fixture40();
  const auto oracle = fixtures::read_oracle_counts(data("go_40.counts"));
  CHECK(dag.size() == oracle.counts.at("terms"));
  CHECK(static_cast<std::size_t>(dag.label_count()) == oracle.counts.at("non_obsolete"));
  CHECK(dag.parse_stats().obsolete_terms == oracle.counts.at("obsolete"));
  CHECK(dag.edges().size() == oracle.counts.at("edges"));
  CHECK(dag.parse_stats().unknown_relations == oracle.counts.at("unknown_relations"));
  CHECK(dag.parse_stats().dangling_edges == oracle.counts.at("dangling_edges"));

  std::vector<std::array<std::string, 3>> ours;
  for (const auto& e : dag.edges())
    ours.push_back({dag.term(e.source).id.str(), std::string(to_string(e.kind)), dag.term(e.target).id.str()});
  std::sort(ours.begin(), ours.end());
  CHECK(ours == oracle.edges);
  CHECK(dag.validate().ok());
}

TEST_CASE("adjacency rows equal a reconstruction from the edge list") {
  const auto dag = fixture40();
  const auto oracle = fixtures::read_oracle_counts(data("go_40.counts"));
  std::vector<std::string> live;
  for (const auto& t : dag.terms())
    if (!t.is_obsolete) live.push_back(t.id.str());
  std::sort(live.begin(), live.end());
  auto col = [&](const std::string& id) {
    return static_cast<int>(std::lower_bound(live.begin(), live.end(), id) - live.begin());
  };
  const int L = static_cast<int>(live.size());
  Eigen::MatrixXi A = Eigen::MatrixXi::Zero(L, L);
  for (const auto& e : oracle.edges) A(col(e[0]), col(e[2])) = A(col(e[2]), col(e[0])) = 1;

  long total = 0;
  for (int i = 0; i < L; ++i) {
    const auto row = dag.adjacency_row(TermId(live[static_cast<std::size_t>(i)]));
    CHECK(row == A.row(i).transpose());
    total += row.sum();
  }
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& e : oracle.edges) pairs.insert(std::minmax(e[0], e[2]));
  CHECK(total == 2 * static_cast<long>(pairs.size()));

  // symmetry
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) CHECK(A(i, j) == A(j, i));

  CHECK(dag.adjacency_row(T("GO:0009001")).sum() == 0);
}

TEST_CASE("adjacency allowlist") {
  const auto hier = fixture40({.adjacency = RelationSet::hierarchy()});
  const auto all = fixture40();
  const auto row_h = hier.adjacency_row(T("GO:0006572"));
  const auto row_a = all.adjacency_row(T("GO:0006572"));
  CHECK(row_a.sum() == row_h.sum() + 2);  // regulates and negatively_regulates
  CHECK(hier.edges().size() == all.edges().size());
}

TEST_CASE("depth properties on the 40-term fixture and a synthetic dag") {
  for (const auto& dag : {fixture40(), parse_obo_text(synthetic_obo({.terms = 200, .seed = 4}))}) {
    for (TermIndex i = 0; i < static_cast<TermIndex>(dag.size()); ++i) {
      const auto& t = dag.term(i);
      if (t.is_obsolete) {
        CHECK_THROWS_AS(dag.depth(t.id), DomainError);
        continue;
      }
      const int d = dag.depth(t.id);
      CHECK((d == 0) == dag.is_root(i));
      // Bellman condition over hierarchy successors
      int best = -1;
      for (const auto& e : dag.edges()) {
        if (e.source != i || !is_hierarchical(e.kind)) continue;
        const int s = dag.depth(dag.term(e.target).id);
        if (best < 0 || s < best) best = s;
      }
      if (d > 0) CHECK(d == best + 1);
      if (best >= 0) CHECK(d >= 1);
    }
  }
}

TEST_CASE("depth errors") {
  const auto dag = parse_obo_text(R"(
[Term]
id: GO:0008150
name: biological_process
namespace: biological_process

[Term]
id: GO:0000005
name: orphan
namespace: biological_process
)");
  CHECK_THROWS_AS(dag.depth(T("GO:0000005")), DomainError);
  const auto report = dag.validate();
  CHECK(report.count(Violation::Kind::reachability) == 1);
  CHECK(report.violations.size() == 1);
  CHECK(report.violations[0].terms == std::vector<TermId>{T("GO:0000005")});
}

TEST_CASE("antisymmetry violation") {
  const char* text = R"(
[Term]
id: GO:0008150
name: biological_process
namespace: biological_process

[Term]
id: GO:0000001
name: a
namespace: biological_process
is_a: GO:0008150
is_a: GO:0000002

[Term]
id: GO:0000002
name: b
namespace: biological_process
relationship: part_of GO:0000001
)";
  CHECK_THROWS_AS(parse_obo_text(text), ValidationError);
  const auto dag = parse_obo_text(text, {.require_acyclic = false});
  const auto report = dag.validate();
  CHECK(report.count(Violation::Kind::antisymmetry) == 1);
  CHECK_FALSE(report.ok());
}

TEST_CASE("3-cycle is reported once with its members") {
  const char* text = R"(
[Term]
id: GO:0003674
name: molecular_function
namespace: molecular_function

[Term]
id: GO:0000021
name: x
namespace: molecular_function
is_a: GO:0000022

[Term]
id: GO:0000022
name: y
namespace: molecular_function
is_a: GO:0000023

[Term]
id: GO:0000023
name: z
namespace: molecular_function
is_a: GO:0000021
relationship: regulates GO:0003674

[Term]
id: GO:0000024
name: w
namespace: molecular_function
is_a: GO:0003674
)";
  try {
    parse_obo_text(text);
    FAIL("cycle accepted");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("GO:0000022") != std::string::npos);
  }
  const auto dag = parse_obo_text(text, {.require_acyclic = false});
  const auto report = dag.validate();
  REQUIRE(report.count(Violation::Kind::cycle) == 1);
  const auto oracle = brute_force_cycles(dag);
  REQUIRE(oracle.size() == 1);
  for (const auto& v : report.violations) {
    if (v.kind != Violation::Kind::cycle) continue;
    std::set<std::string> named;
    for (const auto& t : v.terms) named.insert(t.str());
    CHECK(named == *oracle.begin());
  }
}

TEST_CASE("parse errors carry line numbers") {
  auto line_of = [](const char* text) {
    try {
      parse_obo_text(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  CHECK(line_of("[Term]\nid: GO:0000001\nname x\n") == 3);
  CHECK(line_of("[Term]\nid: GO:0000001\nname: x\n") == 1);  // no namespace
  CHECK(line_of("[Term]\nid: GO:1\nnamespace: molecular_function\n") == 2);
  CHECK(line_of("[Term\nid: GO:0000001\n") == 1);
  CHECK(line_of("\n\n[Term]\nid: GO:0000001\nnamespace: molecular_function\nrelationship: part_of\n") == 6);
  CHECK(line_of("[Term]\nid: GO:0000001\nnamespace: molecular_function\ndef: \"open\n") == 4);
  CHECK(line_of("[Term]\nid: GO:0000001\nnamespace: cytoplasm\n") == 3);
}

TEST_CASE("definitions, comments and obsolete terms") {
  const auto dag = fixture40();
  const auto& t = dag.term(dag.index_of(T("GO:0001565")));
  CHECK(t.name == "protein binding");
  CHECK(t.definition == "Fixture term \"protein binding\".");
  CHECK(t.ns == Namespace::molecular_function);
  const auto& obs = dag.term(dag.index_of(T("GO:0009001")));
  CHECK(obs.is_obsolete);
  CHECK_FALSE(dag.label_of(dag.index_of(obs.id)));
  CHECK(dag.successors(dag.index_of(obs.id)).empty());
  CHECK(dag.predecessor_indices(dag.index_of(obs.id)).empty());
}

TEST_CASE("parsing is deterministic and exports are byte-stable") {
  const auto text = fixtures::slurp(data("go_40.obo"));
  const auto a = parse_obo_text(text), b = parse_obo_text(text);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.term(static_cast<TermIndex>(i)).id == b.term(static_cast<TermIndex>(i)).id);
  CHECK(std::equal(a.edges().begin(), a.edges().end(), b.edges().begin(), b.edges().end()));
  CHECK(edge_tsv(a) == edge_tsv(b));
  std::ostringstream ja, jb;
  a.write_term_json(ja);
  b.write_term_json(jb);
  CHECK(ja.str() == jb.str());
  // ascending term order
  for (std::size_t i = 1; i < a.size(); ++i)
    CHECK(a.term(static_cast<TermIndex>(i - 1)).id < a.term(static_cast<TermIndex>(i)).id);
  CHECK(edge_tsv(a).rfind("GO:0001234\tis_a\tGO:0003674\n", 0) == 0);
}

TEST_CASE("roots") {
  const auto dag = fixture40();
  CHECK(dag.term(*dag.root(Namespace::molecular_function)).id == T("GO:0003674"));
  CHECK(dag.term(*dag.root(Namespace::biological_process)).id == T("GO:0008150"));
  CHECK(dag.term(*dag.root(Namespace::cellular_component)).id == T("GO:0005575"));
}
