#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace gobert {

// "GO:" followed by exactly seven digits.
class TermId {
 public:
  TermId() = default;
  explicit TermId(std::string_view text);  // throws DomainError if malformed

  static bool is_valid(std::string_view text);

  const std::string& str() const { return value_; }
  auto operator<=>(const TermId&) const = default;

 private:
  std::string value_;
};

std::ostream& operator<<(std::ostream& os, const TermId& id);

enum class RelationKind : std::uint8_t {
  is_a,
  part_of,
  regulates,
  positively_regulates,
  negatively_regulates,
};
inline constexpr std::size_t kRelationKindCount = 5;

std::string_view to_string(RelationKind kind);
std::optional<RelationKind> relation_from_string(std::string_view text);

// Edges of these kinds form the namespace hierarchies used for depth and
// root reachability.
constexpr bool is_hierarchical(RelationKind kind) {
  return kind == RelationKind::is_a || kind == RelationKind::part_of;
}

enum class Namespace : std::uint8_t {
  molecular_function,
  biological_process,
  cellular_component,
};

std::string_view to_string(Namespace ns);
std::optional<Namespace> namespace_from_string(std::string_view text);

struct GoTerm {
  TermId id;
  std::string name;
  std::optional<Namespace> ns;  // always set for non-obsolete terms
  std::string definition;
  bool is_obsolete = false;
};

using TermIndex = std::int32_t;

// Directed edge: for "A part_of B", source = A and target = B.
struct Edge {
  TermIndex source;
  TermIndex target;
  RelationKind kind;
  auto operator<=>(const Edge&) const = default;
};

// Bit set over RelationKind selecting which edges feed the neighborhood
// labels.
class RelationSet {
 public:
  constexpr RelationSet() = default;
  static constexpr RelationSet all() { return RelationSet{0x1f}; }
  static constexpr RelationSet hierarchy() { return RelationSet{0x3}; }

  constexpr bool contains(RelationKind k) const {
    return (bits_ >> static_cast<unsigned>(k)) & 1u;
  }
  constexpr RelationSet& insert(RelationKind k) {
    bits_ |= 1u << static_cast<unsigned>(k);
    return *this;
  }
  constexpr bool operator==(const RelationSet&) const = default;

  // Comma-separated relation names, e.g. "is_a,part_of".
  static RelationSet parse(std::string_view csv);
  std::string to_string() const;

 private:
  constexpr explicit RelationSet(std::uint8_t bits) : bits_(bits) {}
  std::uint8_t bits_ = 0;
};

struct ParseStats {
  std::size_t unknown_relations = 0;  // relationship lines with other kinds
  std::size_t dangling_edges = 0;     // edges to undeclared or obsolete terms
  std::size_t obsolete_terms = 0;
};

struct Violation {
  enum class Kind { cycle, antisymmetry, reachability };
  Kind kind;
  std::vector<TermId> terms;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  std::size_t count(Violation::Kind kind) const;
};

struct OboOptions {
  // Relation kinds that contribute to adjacency rows.
  RelationSet adjacency = RelationSet::all();
  // Reject cyclic or non-antisymmetric input with a ValidationError.
  bool require_acyclic = true;
};

// The parsed ontology. Immutable after construction.
//
// Terms are stored in ascending TermId order. Non-obsolete terms get a
// dense label index in the same order; label indices are the positions of
// adjacency rows and, offset by the special tokens, of the vocabulary.
class GoDag {
 public:
  GoDag() = default;
  GoDag(std::vector<GoTerm> terms, std::vector<Edge> edges, OboOptions options = {},
        ParseStats stats = {});

  std::size_t size() const { return terms_.size(); }
  // L: number of non-obsolete terms.
  TermIndex label_count() const { return static_cast<TermIndex>(labels_.size()); }

  const GoTerm& term(TermIndex i) const { return terms_[static_cast<std::size_t>(i)]; }
  std::span<const GoTerm> terms() const { return terms_; }
  std::span<const Edge> edges() const { return edges_; }

  std::optional<TermIndex> find(const TermId& id) const;
  TermIndex index_of(const TermId& id) const;  // throws DomainError

  std::optional<TermIndex> label_of(TermIndex term) const;
  TermIndex term_of_label(TermIndex label) const { return labels_[static_cast<std::size_t>(label)]; }

  // Roots by namespace, if present.
  std::optional<TermIndex> root(Namespace ns) const { return roots_[static_cast<std::size_t>(ns)]; }
  bool is_root(TermIndex i) const;

  std::span<const TermIndex> successors(TermIndex i) const { return out_[static_cast<std::size_t>(i)]; }
  std::span<const TermIndex> predecessor_indices(TermIndex i) const { return in_[static_cast<std::size_t>(i)]; }

  // Immediate predecessors (any relation kind): all u with an edge u -> v.
  std::vector<TermId> predecessors(const TermId& v) const;

  // Shortest is_a/part_of path length to the namespace root; root = 0.
  int depth(const TermId& v) const;
  std::optional<int> depth_of(TermIndex i) const;

  // Sorted label indices adjacent to label `row` in either direction.
  std::span<const TermIndex> neighbor_labels(TermIndex label) const {
    return neighbors_[static_cast<std::size_t>(label)];
  }
  // Binary row of length L, symmetrized. Obsolete terms give a zero row.
  Eigen::VectorXi adjacency_row(const TermId& v) const;

  ValidationReport validate() const;

  const OboOptions& options() const { return options_; }
  const ParseStats& parse_stats() const { return stats_; }

  // `source<TAB>kind<TAB>target` per edge, sorted by (source, target, kind).
  void write_edge_tsv(std::ostream& os) const;
  // JSON array of term records in TermId order.
  void write_term_json(std::ostream& os) const;

 private:
  std::vector<GoTerm> terms_;
  std::vector<Edge> edges_;
  OboOptions options_;
  ParseStats stats_;
  std::unordered_map<std::string, TermIndex> by_id_;
  std::vector<std::vector<TermIndex>> out_, in_;
  std::vector<TermIndex> labels_;
  std::vector<TermIndex> label_of_;  // -1 for obsolete
  std::array<std::optional<TermIndex>, 3> roots_{};
  std::vector<int> depth_;  // -1 when no hierarchy path to a root
  std::vector<std::vector<TermIndex>> neighbors_;
};

GoDag parse_obo(std::istream& in, const OboOptions& options = {});
GoDag parse_obo_text(std::string_view text, const OboOptions& options = {});
GoDag load_obo(const std::string& path, const OboOptions& options = {});

}  // namespace gobert
