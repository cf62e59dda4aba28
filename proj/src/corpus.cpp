#include "gobert/corpus.hpp"

#include <algorithm>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <unordered_map>

#include "gobert/error.hpp"
#include "gobert/random.hpp"
#include "json.hpp"

namespace gobert {

using nlohmann::ordered_json;

TokenId Vocabulary::token_of(const GoDag& dag, const TermId& id) const {
  const auto idx = dag.find(id);
  if (!idx) return kUnk;
  const auto label = dag.label_of(*idx);
  return label ? token_of_label(*label) : kUnk;
}

std::string Vocabulary::token_string(const GoDag& dag, TokenId t) const {
  switch (t) {
    case kPad: return "[PAD]";
    case kMask: return "[MASK]";
    case kUnk: return "[UNK]";
    default: return dag.term(dag.term_of_label(label_of_token(t))).id.str();
  }
}

GeneExample make_example(std::string gene, std::vector<TermId> terms, const GoDag& dag) {
  std::sort(terms.begin(), terms.end());
  terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
  GeneExample ex{std::move(gene), std::move(terms), {}};
  ex.texts.reserve(ex.terms.size());
  for (const auto& t : ex.terms) ex.texts.push_back(render_term_text(dag.term(dag.index_of(t))).text);
  return ex;
}

std::vector<GeneExample> load_annotations(std::istream& in, const GoDag& dag, std::size_t max_len,
                                          LoadStats* stats) {
  LoadStats local;
  std::vector<std::string> order;
  std::unordered_map<std::string, std::set<TermId>> by_gene;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    ++local.lines;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || line.find('\t', tab + 1) != std::string::npos)
      throw ParseError("expected 'gene_id<TAB>GO:xxxxxxx'", line_no);
    const auto gene = line.substr(0, tab);
    const auto term_text = std::string_view(line).substr(tab + 1);
    if (!TermId::is_valid(term_text)) throw ParseError("malformed term id '" + std::string(term_text) + "'", line_no);

    auto [it, inserted] = by_gene.try_emplace(gene);
    if (inserted) order.push_back(gene);
    const TermId id(term_text);
    const auto idx = dag.find(id);
    if (!idx || dag.term(*idx).is_obsolete) {
      ++local.dropped_terms;
      continue;
    }
    it->second.insert(id);
  }

  std::vector<GeneExample> out;
  for (const auto& gene : order) {
    const auto& set = by_gene[gene];
    if (set.empty()) {
      ++local.skipped_genes;
      continue;
    }
    std::vector<TermId> terms(set.begin(), set.end());
    if (terms.size() > max_len) {
      terms.resize(max_len);
      ++local.truncated_genes;
    }
    out.push_back(make_example(gene, std::move(terms), dag));
  }
  if (stats) *stats = local;
  return out;
}

std::vector<GeneExample> dedupe_examples(std::vector<GeneExample> examples) {
  std::set<std::vector<TermId>> seen;
  std::vector<GeneExample> out;
  for (auto& ex : examples) {
    if (seen.insert(ex.terms).second) out.push_back(std::move(ex));
  }
  return out;
}

Eigen::VectorXd gene_embedding(const GeneExample& example, const GoDag& dag, const Vocabulary& vocab,
                               const EmbeddingMatrix& embeddings, bool l2_normalize_terms) {
  if (example.terms.empty()) throw DomainError("gene " + example.gene + " has no terms");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(embeddings.dim());
  for (const auto& t : example.terms) {
    Eigen::VectorXd row = embeddings.rows.row(vocab.token_of(dag, t)).transpose().cast<double>();
    if (l2_normalize_terms && row.norm() > 0) row.normalize();
    sum += row;
  }
  return sum / static_cast<double>(example.terms.size());
}

// ---------------------------------------------------------------------------
// k-means

KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int max_iters) {
  const auto n = points.rows();
  if (k < 1) throw DomainError("k must be >= 1");
  if (n < k) throw DomainError("fewer points (" + std::to_string(n) + ") than clusters (" + std::to_string(k) + ")");

  Rng rng(derive_seed(seed, 0x6b6d));
  KMeansResult res;
  res.centroids.resize(k, points.cols());

  // k-means++ seeding.
  Eigen::VectorXd nearest = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  auto first = static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(n)));
  res.centroids.row(0) = points.row(first);
  for (int c = 1; c < k; ++c) {
    nearest = nearest.cwiseMin((points.rowwise() - res.centroids.row(c - 1)).rowwise().squaredNorm());
    const double total = nearest.sum();
    Eigen::Index pick = 0;
    if (total > 0) {
      double target = rng.uniform() * total;
      for (pick = 0; pick < n - 1; ++pick) {
        target -= nearest[pick];
        if (target < 0) break;
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(n)));
    }
    res.centroids.row(c) = points.row(pick);
  }

  res.assignment.assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    double objective = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best;
      const double d = (res.centroids.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff(&best);
      objective += d;
      if (res.assignment[static_cast<std::size_t>(i)] != best) {
        res.assignment[static_cast<std::size_t>(i)] = static_cast<int>(best);
        changed = true;
      }
    }
    res.objective.push_back(objective);
    res.iterations = iter + 1;
    if (!changed) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto c = res.assignment[static_cast<std::size_t>(i)];
      sums.row(c) += points.row(i);
      counts[c] += 1;
    }
    // Empty clusters keep their previous centroid.
    for (int c = 0; c < k; ++c)
      if (counts[c] > 0) res.centroids.row(c) = sums.row(c) / counts[c];
  }
  return res;
}

CorpusSplit kmeans_split(const std::vector<GeneExample>& examples, const Eigen::MatrixXd& gene_embeddings, int k,
                         std::array<double, 3> ratios, std::uint64_t seed) {
  if (static_cast<Eigen::Index>(examples.size()) != gene_embeddings.rows())
    throw DomainError("one embedding row per gene required");
  double total = 0;
  for (double r : ratios) {
    if (r < 0) throw DomainError("split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-6) throw DomainError("split ratios must sum to 1");

  const auto km = kmeans(gene_embeddings, k, seed);
  std::vector<std::vector<std::size_t>> clusters(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < examples.size(); ++i) clusters[static_cast<std::size_t>(km.assignment[i])].push_back(i);

  std::vector<std::size_t> order(clusters.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return clusters[a].size() > clusters[b].size(); });

  const double n = static_cast<double>(examples.size());
  std::array<double, 3> assigned{};
  std::array<std::vector<std::size_t>, 3> members;
  for (auto c : order) {
    if (clusters[c].empty()) continue;
    std::size_t best = 0;
    double best_deficit = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < 3; ++s) {
      const double deficit = ratios[s] * n - assigned[s];
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = s;
      }
    }
    assigned[best] += static_cast<double>(clusters[c].size());
    members[best].insert(members[best].end(), clusters[c].begin(), clusters[c].end());
  }

  CorpusSplit split;
  split.seed = seed;
  split.k = k;
  split.ratios = ratios;
  std::array<std::vector<std::string>*, 3> dst{&split.train, &split.valid, &split.test};
  for (std::size_t s = 0; s < 3; ++s) {
    std::sort(members[s].begin(), members[s].end());
    for (auto i : members[s]) dst[s]->push_back(examples[i].gene);
  }
  return split;
}

// ---------------------------------------------------------------------------
// Serialization

void write_corpus_jsonl(std::ostream& out, const std::vector<GeneExample>& examples) {
  for (const auto& ex : examples) {
    ordered_json j;
    j["gene"] = ex.gene;
    auto& terms = j["terms"] = ordered_json::array();
    for (const auto& t : ex.terms) terms.push_back(t.str());
    j["texts"] = ex.texts;
    out << j.dump() << '\n';
  }
}

std::vector<GeneExample> read_corpus_jsonl(std::istream& in) {
  std::vector<GeneExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = ordered_json::parse(line);
      GeneExample ex;
      ex.gene = j.at("gene").get<std::string>();
      for (const auto& t : j.at("terms")) ex.terms.emplace_back(t.get<std::string>());
      ex.texts = j.at("texts").get<std::vector<std::string>>();
      if (ex.gene.empty() || ex.terms.empty() || ex.texts.size() != ex.terms.size())
        throw ParseError("inconsistent gene record", line_no);
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    } catch (const DomainError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

void write_split_json(std::ostream& out, const CorpusSplit& split) {
  ordered_json j;
  j["seed"] = split.seed;
  j["k"] = split.k;
  j["ratios"] = split.ratios;
  j["train"] = split.train;
  j["valid"] = split.valid;
  j["test"] = split.test;
  out << j.dump(1) << '\n';
}

CorpusSplit read_split_json(std::istream& in) {
  try {
    const auto j = ordered_json::parse(in);
    CorpusSplit s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.k = j.at("k").get<int>();
    s.ratios = j.at("ratios").get<std::array<double, 3>>();
    s.train = j.at("train").get<std::vector<std::string>>();
    s.valid = j.at("valid").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("split.json: ") + e.what(), 0);
  }
}

}  // namespace gobert
