#include "gobert/ontology.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>

#include "gobert/error.hpp"
#include "json.hpp"

namespace gobert {

namespace {

constexpr std::array<std::string_view, kRelationKindCount> kRelationNames = {
    "is_a", "part_of", "regulates", "positively_regulates", "negatively_regulates"};
constexpr std::array<std::string_view, 3> kNamespaceNames = {
    "molecular_function", "biological_process", "cellular_component"};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

// Drop a trailing "! comment" and "{qualifier=...}" block from an
// unquoted value.
std::string_view strip_value(std::string_view v) {
  if (auto bang = v.find(" !"); bang != std::string_view::npos) v = v.substr(0, bang);
  v = trim(v);
  if (!v.empty() && v.back() == '}') {
    if (auto brace = v.rfind('{'); brace != std::string_view::npos) v = v.substr(0, brace);
  }
  return trim(v);
}

// def: "text" [xrefs]
std::string parse_quoted(std::string_view v, std::size_t line) {
  v = trim(v);
  if (v.empty() || v.front() != '"') throw ParseError("expected quoted definition", line);
  std::string out;
  for (std::size_t i = 1; i < v.size(); ++i) {
    const char c = v[i];
    if (c == '\\' && i + 1 < v.size()) {
      out.push_back(v[++i]);
    } else if (c == '"') {
      return out;
    } else {
      out.push_back(c);
    }
  }
  throw ParseError("unterminated quoted definition", line);
}

struct RawEdge {
  std::string target;
  RelationKind kind;
  std::size_t line;
};

struct RawTerm {
  GoTerm term;
  std::vector<RawEdge> edges;
  std::size_t line = 0;
  bool has_id = false;
};

}  // namespace

// ---------------------------------------------------------------------------
// TermId, enums

bool TermId::is_valid(std::string_view text) {
  if (text.size() != 10 || text.substr(0, 3) != "GO:") return false;
  return std::all_of(text.begin() + 3, text.end(), [](char c) { return c >= '0' && c <= '9'; });
}

TermId::TermId(std::string_view text) : value_(text) {
  if (!is_valid(text)) throw DomainError("malformed GO term id '" + std::string(text) + "'");
}

std::ostream& operator<<(std::ostream& os, const TermId& id) { return os << id.str(); }

std::string_view to_string(RelationKind kind) { return kRelationNames[static_cast<std::size_t>(kind)]; }

std::optional<RelationKind> relation_from_string(std::string_view text) {
  for (std::size_t i = 0; i < kRelationNames.size(); ++i)
    if (kRelationNames[i] == text) return static_cast<RelationKind>(i);
  return std::nullopt;
}

std::string_view to_string(Namespace ns) { return kNamespaceNames[static_cast<std::size_t>(ns)]; }

std::optional<Namespace> namespace_from_string(std::string_view text) {
  for (std::size_t i = 0; i < kNamespaceNames.size(); ++i)
    if (kNamespaceNames[i] == text) return static_cast<Namespace>(i);
  return std::nullopt;
}

RelationSet RelationSet::parse(std::string_view csv) {
  RelationSet set;
  while (!csv.empty()) {
    const auto comma = csv.find(',');
    const auto item = trim(csv.substr(0, comma));
    if (!item.empty()) {
      auto kind = relation_from_string(item);
      if (!kind) throw DomainError("unknown relation kind '" + std::string(item) + "'");
      set.insert(*kind);
    }
    if (comma == std::string_view::npos) break;
    csv.remove_prefix(comma + 1);
  }
  return set;
}

std::string RelationSet::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < kRelationKindCount; ++i) {
    if (!contains(static_cast<RelationKind>(i))) continue;
    if (!out.empty()) out += ',';
    out += kRelationNames[i];
  }
  return out;
}

std::size_t ValidationReport::count(Violation::Kind kind) const {
  return static_cast<std::size_t>(std::count_if(violations.begin(), violations.end(),
                                                [&](const Violation& v) { return v.kind == kind; }));
}

// ---------------------------------------------------------------------------
// GoDag

GoDag::GoDag(std::vector<GoTerm> terms, std::vector<Edge> edges, OboOptions options, ParseStats stats)
    : terms_(std::move(terms)), edges_(std::move(edges)), options_(options), stats_(stats) {
  const auto n = terms_.size();
  if (!std::is_sorted(terms_.begin(), terms_.end(),
                      [](const GoTerm& a, const GoTerm& b) { return a.id < b.id; }))
    throw DomainError("GoDag terms must be sorted by id");

  by_id_.reserve(n);
  label_of_.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (!by_id_.emplace(terms_[i].id.str(), static_cast<TermIndex>(i)).second)
      throw DomainError("duplicate term id " + terms_[i].id.str());
    if (!terms_[i].is_obsolete) {
      label_of_[i] = static_cast<TermIndex>(labels_.size());
      labels_.push_back(static_cast<TermIndex>(i));
    }
  }

  std::sort(edges_.begin(), edges_.end(), [](const Edge& a, const Edge& b) {
    return std::tie(a.source, a.target, a.kind) < std::tie(b.source, b.target, b.kind);
  });
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());

  out_.resize(n);
  in_.resize(n);
  std::vector<std::vector<TermIndex>> hier_out(n), hier_in(n);
  for (const auto& e : edges_) {
    const auto s = static_cast<std::size_t>(e.source), t = static_cast<std::size_t>(e.target);
    if (s >= n || t >= n) throw DomainError("edge endpoint out of range");
    out_[s].push_back(e.target);
    in_[t].push_back(e.source);
    if (is_hierarchical(e.kind)) {
      hier_out[s].push_back(e.target);
      hier_in[t].push_back(e.source);
    }
  }
  for (auto* lists : {&out_, &in_}) {
    for (auto& v : *lists) v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  // in_ lists were filled in source order, so are already sorted.

  for (std::size_t k = 0; k < 3; ++k) {
    const auto ns = static_cast<Namespace>(k);
    std::vector<TermIndex> named, sinks;
    for (auto i : labels_) {
      const auto& t = terms_[static_cast<std::size_t>(i)];
      if (t.ns != ns) continue;
      if (t.name == kNamespaceNames[k]) named.push_back(i);
      if (hier_out[static_cast<std::size_t>(i)].empty()) sinks.push_back(i);
    }
    if (named.size() == 1)
      roots_[k] = named.front();
    else if (named.empty() && sinks.size() == 1)
      roots_[k] = sinks.front();
  }

  // Multi-source BFS from the roots over reversed hierarchy edges.
  depth_.assign(n, -1);
  std::deque<TermIndex> queue;
  for (const auto& r : roots_) {
    if (r) {
      depth_[static_cast<std::size_t>(*r)] = 0;
      queue.push_back(*r);
    }
  }
  while (!queue.empty()) {
    const auto v = queue.front();
    queue.pop_front();
    for (auto u : hier_in[static_cast<std::size_t>(v)]) {
      auto& d = depth_[static_cast<std::size_t>(u)];
      if (d < 0) {
        d = depth_[static_cast<std::size_t>(v)] + 1;
        queue.push_back(u);
      }
    }
  }

  neighbors_.resize(labels_.size());
  for (const auto& e : edges_) {
    if (!options_.adjacency.contains(e.kind)) continue;
    const auto a = label_of_[static_cast<std::size_t>(e.source)];
    const auto b = label_of_[static_cast<std::size_t>(e.target)];
    if (a < 0 || b < 0) continue;
    neighbors_[static_cast<std::size_t>(a)].push_back(b);
    neighbors_[static_cast<std::size_t>(b)].push_back(a);
  }
  for (auto& row : neighbors_) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
  }
}

std::optional<TermIndex> GoDag::find(const TermId& id) const {
  auto it = by_id_.find(id.str());
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

TermIndex GoDag::index_of(const TermId& id) const {
  auto i = find(id);
  if (!i) throw DomainError("unknown term " + id.str());
  return *i;
}

std::optional<TermIndex> GoDag::label_of(TermIndex term) const {
  const auto l = label_of_[static_cast<std::size_t>(term)];
  if (l < 0) return std::nullopt;
  return l;
}

bool GoDag::is_root(TermIndex i) const {
  return std::any_of(roots_.begin(), roots_.end(), [&](const auto& r) { return r && *r == i; });
}

std::vector<TermId> GoDag::predecessors(const TermId& v) const {
  std::vector<TermId> out;
  for (auto u : predecessor_indices(index_of(v))) out.push_back(terms_[static_cast<std::size_t>(u)].id);
  return out;
}

std::optional<int> GoDag::depth_of(TermIndex i) const {
  const auto d = depth_[static_cast<std::size_t>(i)];
  if (d < 0 || terms_[static_cast<std::size_t>(i)].is_obsolete) return std::nullopt;
  return d;
}

int GoDag::depth(const TermId& v) const {
  const auto i = index_of(v);
  if (terms_[static_cast<std::size_t>(i)].is_obsolete) throw DomainError("depth of obsolete term " + v.str());
  auto d = depth_of(i);
  if (!d) throw DomainError("term " + v.str() + " has no path to a namespace root");
  return *d;
}

Eigen::VectorXi GoDag::adjacency_row(const TermId& v) const {
  Eigen::VectorXi row = Eigen::VectorXi::Zero(label_count());
  const auto label = label_of(index_of(v));
  if (!label) return row;
  for (auto j : neighbor_labels(*label)) row[j] = 1;
  return row;
}

ValidationReport GoDag::validate() const {
  ValidationReport report;
  const auto n = terms_.size();
  auto ids_of = [&](const std::vector<TermIndex>& xs) {
    std::vector<TermId> out;
    for (auto x : xs) out.push_back(terms_[static_cast<std::size_t>(x)].id);
    return out;
  };

  // Antisymmetry: an edge in both directions between the same pair.
  for (std::size_t u = 0; u < n; ++u) {
    for (auto v : out_[u]) {
      if (static_cast<std::size_t>(v) <= u) continue;
      const auto& back = out_[static_cast<std::size_t>(v)];
      if (std::binary_search(back.begin(), back.end(), static_cast<TermIndex>(u))) {
        report.violations.push_back({Violation::Kind::antisymmetry,
                                     ids_of({static_cast<TermIndex>(u), v}),
                                     "edges in both directions between " + terms_[u].id.str() +
                                         " and " + terms_[static_cast<std::size_t>(v)].id.str()});
      }
    }
  }

  // Cycles: one violation per strongly connected component with more than
  // one member, naming a concrete cycle inside it. Iterative Tarjan.
  {
    std::vector<int> index(n, -1), low(n, 0);
    std::vector<char> on_stack(n, 0);
    std::vector<TermIndex> stack;
    int counter = 0;
    std::vector<std::vector<TermIndex>> components;
    for (std::size_t start = 0; start < n; ++start) {
      if (index[start] >= 0) continue;
      std::vector<std::pair<TermIndex, std::size_t>> frames{{static_cast<TermIndex>(start), 0}};
      index[start] = low[start] = counter++;
      stack.push_back(static_cast<TermIndex>(start));
      on_stack[start] = 1;
      while (!frames.empty()) {
        auto& [v, next] = frames.back();
        const auto vs = static_cast<std::size_t>(v);
        if (next < out_[vs].size()) {
          const auto w = static_cast<std::size_t>(out_[vs][next++]);
          if (index[w] < 0) {
            index[w] = low[w] = counter++;
            stack.push_back(static_cast<TermIndex>(w));
            on_stack[w] = 1;
            frames.emplace_back(static_cast<TermIndex>(w), 0);
          } else if (on_stack[w]) {
            low[vs] = std::min(low[vs], index[w]);
          }
          continue;
        }
        if (low[vs] == index[vs]) {
          std::vector<TermIndex> comp;
          TermIndex w;
          do {
            w = stack.back();
            stack.pop_back();
            on_stack[static_cast<std::size_t>(w)] = 0;
            comp.push_back(w);
          } while (w != v);
          if (comp.size() > 1) components.push_back(std::move(comp));
        }
        const auto finished = v;
        frames.pop_back();
        if (!frames.empty()) {
          const auto parent = static_cast<std::size_t>(frames.back().first);
          low[parent] = std::min(low[parent], low[static_cast<std::size_t>(finished)]);
        }
      }
    }
    for (auto& comp : components) {
      // Walk inside the component until a node repeats.
      std::vector<char> in_comp(n, 0);
      for (auto c : comp) in_comp[static_cast<std::size_t>(c)] = 1;
      const auto first = *std::min_element(comp.begin(), comp.end());
      std::vector<TermIndex> path{first};
      std::vector<int> pos(n, -1);
      pos[static_cast<std::size_t>(first)] = 0;
      while (true) {
        const auto v = static_cast<std::size_t>(path.back());
        TermIndex next = -1;
        for (auto w : out_[v])
          if (in_comp[static_cast<std::size_t>(w)]) {
            next = w;
            break;
          }
        const auto p = pos[static_cast<std::size_t>(next)];
        if (p >= 0) {
          path.erase(path.begin(), path.begin() + p);
          break;
        }
        pos[static_cast<std::size_t>(next)] = static_cast<int>(path.size());
        path.push_back(next);
      }
      std::string msg = "cycle:";
      for (auto v : path) msg += " " + terms_[static_cast<std::size_t>(v)].id.str() + " ->";
      msg += " " + terms_[static_cast<std::size_t>(path.front())].id.str();
      report.violations.push_back({Violation::Kind::cycle, ids_of(path), std::move(msg)});
    }
  }

  // Reachability: every non-obsolete term reaches exactly one root through
  // is_a/part_of edges.
  std::vector<std::vector<TermIndex>> hier_out(n);
  for (const auto& e : edges_)
    if (is_hierarchical(e.kind)) hier_out[static_cast<std::size_t>(e.source)].push_back(e.target);
  std::vector<int> seen(n, -1);
  for (auto v : labels_) {
    int roots_reached = 0;
    std::vector<TermIndex> frontier{v};
    seen[static_cast<std::size_t>(v)] = v;
    while (!frontier.empty()) {
      const auto x = frontier.back();
      frontier.pop_back();
      if (is_root(x)) ++roots_reached;
      for (auto y : hier_out[static_cast<std::size_t>(x)]) {
        if (seen[static_cast<std::size_t>(y)] == v) continue;
        seen[static_cast<std::size_t>(y)] = v;
        frontier.push_back(y);
      }
    }
    if (roots_reached != 1) {
      report.violations.push_back(
          {Violation::Kind::reachability, {terms_[static_cast<std::size_t>(v)].id},
           terms_[static_cast<std::size_t>(v)].id.str() + " reaches " + std::to_string(roots_reached) +
               " namespace roots"});
    }
  }
  return report;
}

void GoDag::write_edge_tsv(std::ostream& os) const {
  for (const auto& e : edges_) {
    os << terms_[static_cast<std::size_t>(e.source)].id << '\t' << to_string(e.kind) << '\t'
       << terms_[static_cast<std::size_t>(e.target)].id << '\n';
  }
}

void GoDag::write_term_json(std::ostream& os) const {
  auto table = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < terms_.size(); ++i) {
    const auto& t = terms_[i];
    nlohmann::ordered_json rec;
    rec["id"] = t.id.str();
    rec["name"] = t.name;
    rec["namespace"] = t.ns ? std::string(to_string(*t.ns)) : std::string();
    rec["definition"] = t.definition;
    rec["is_obsolete"] = t.is_obsolete;
    const auto d = depth_of(static_cast<TermIndex>(i));
    rec["depth"] = d ? nlohmann::ordered_json(*d) : nlohmann::ordered_json(nullptr);
    table.push_back(std::move(rec));
  }
  os << table.dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// OBO parsing

GoDag parse_obo(std::istream& in, const OboOptions& options) {
  std::vector<RawTerm> raw;
  ParseStats stats;
  bool in_term = false;
  std::string line_buf;
  std::size_t line_no = 0;

  while (std::getline(in, line_buf)) {
    ++line_no;
    const auto line = trim(line_buf);
    if (line.empty() || line.front() == '!') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("malformed stanza header", line_no);
      in_term = line == "[Term]";
      if (in_term) {
        raw.emplace_back();
        raw.back().line = line_no;
      }
      continue;
    }
    const auto colon = line.find(':');
    if (colon == std::string_view::npos || colon == 0) throw ParseError("expected 'tag: value'", line_no);
    if (!in_term) continue;  // header or non-Term stanza

    const auto tag = line.substr(0, colon);
    const auto value = trim(line.substr(colon + 1));
    auto& cur = raw.back();
    if (tag == "id") {
      if (cur.has_id) throw ParseError("duplicate id tag in stanza", line_no);
      const auto v = strip_value(value);
      if (!TermId::is_valid(v)) throw ParseError("malformed term id '" + std::string(v) + "'", line_no);
      cur.term.id = TermId(v);
      cur.has_id = true;
    } else if (tag == "name") {
      cur.term.name = std::string(trim(value));
    } else if (tag == "namespace") {
      const auto v = strip_value(value);
      auto ns = namespace_from_string(v);
      if (!ns) throw ParseError("unknown namespace '" + std::string(v) + "'", line_no);
      cur.term.ns = ns;
    } else if (tag == "def") {
      cur.term.definition = parse_quoted(value, line_no);
    } else if (tag == "is_obsolete") {
      cur.term.is_obsolete = strip_value(value) == "true";
    } else if (tag == "is_a") {
      const auto v = strip_value(value);
      if (!TermId::is_valid(v)) throw ParseError("malformed is_a target '" + std::string(v) + "'", line_no);
      cur.edges.push_back({std::string(v), RelationKind::is_a, line_no});
    } else if (tag == "relationship") {
      const auto v = strip_value(value);
      const auto space = v.find(' ');
      if (space == std::string_view::npos) throw ParseError("expected 'relationship: <kind> <id>'", line_no);
      const auto kind = relation_from_string(v.substr(0, space));
      if (!kind) {
        ++stats.unknown_relations;
        continue;
      }
      const auto target = trim(v.substr(space + 1));
      if (!TermId::is_valid(target))
        throw ParseError("malformed relationship target '" + std::string(target) + "'", line_no);
      cur.edges.push_back({std::string(target), *kind, line_no});
    }
  }

  for (const auto& r : raw) {
    if (!r.has_id) throw ParseError("[Term] stanza without id", r.line);
    if (!r.term.is_obsolete && !r.term.ns)
      throw ParseError("term " + r.term.id.str() + " has no namespace", r.line);
  }
  std::sort(raw.begin(), raw.end(), [](const RawTerm& a, const RawTerm& b) { return a.term.id < b.term.id; });
  for (std::size_t i = 1; i < raw.size(); ++i)
    if (raw[i].term.id == raw[i - 1].term.id)
      throw ParseError("duplicate term " + raw[i].term.id.str(), std::max(raw[i].line, raw[i - 1].line));

  std::unordered_map<std::string, TermIndex> index;
  for (std::size_t i = 0; i < raw.size(); ++i) index.emplace(raw[i].term.id.str(), static_cast<TermIndex>(i));

  std::vector<Edge> edges;
  std::vector<GoTerm> terms;
  terms.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto& r = raw[i];
    if (r.term.is_obsolete) {
      ++stats.obsolete_terms;
      stats.dangling_edges += r.edges.size();
    } else {
      for (const auto& e : r.edges) {
        auto it = index.find(e.target);
        if (it == index.end() || raw[static_cast<std::size_t>(it->second)].term.is_obsolete) {
          ++stats.dangling_edges;
          continue;
        }
        edges.push_back({static_cast<TermIndex>(i), it->second, e.kind});
      }
    }
    terms.push_back(std::move(r.term));
  }

  GoDag dag(std::move(terms), std::move(edges), options, stats);
  if (options.require_acyclic) {
    const auto report = dag.validate();
    for (const auto& v : report.violations) {
      if (v.kind == Violation::Kind::cycle || v.kind == Violation::Kind::antisymmetry)
        throw ValidationError(v.message);
    }
  }
  return dag;
}

GoDag parse_obo_text(std::string_view text, const OboOptions& options) {
  std::istringstream in{std::string(text)};
  return parse_obo(in, options);
}

GoDag load_obo(const std::string& path, const OboOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot open " + path);
  return parse_obo(in, options);
}

}  // namespace gobert
