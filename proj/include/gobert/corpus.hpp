#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gobert/embedding.hpp"
#include "gobert/ontology.hpp"

namespace gobert {

using TokenId = std::int32_t;

// PAD, MASK, UNK at 0..2, then every non-obsolete term in ascending id
// order, so token = 3 + label index.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kMask = 1;
  static constexpr TokenId kUnk = 2;
  static constexpr TokenId kSpecialCount = 3;

  explicit Vocabulary(const GoDag& dag) : labels_(dag.label_count()) {}
  Vocabulary() = default;

  TokenId size() const { return kSpecialCount + labels_; }
  TokenId label_count() const { return labels_; }

  static bool is_special(TokenId t) { return t < kSpecialCount; }
  static TokenId token_of_label(TermIndex label) { return kSpecialCount + label; }
  static TermIndex label_of_token(TokenId t) { return t - kSpecialCount; }

  TokenId token_of(const GoDag& dag, const TermId& id) const;  // kUnk if unknown/obsolete
  std::string token_string(const GoDag& dag, TokenId t) const;

 private:
  TokenId labels_ = 0;
};

struct GeneExample {
  std::string gene;
  std::vector<TermId> terms;  // ascending, unique
  std::vector<std::string> texts;

  bool operator==(const GeneExample&) const = default;
};

struct LoadStats {
  std::size_t lines = 0;
  std::size_t dropped_terms = 0;   // unknown or obsolete
  std::size_t skipped_genes = 0;   // no valid term left
  std::size_t truncated_genes = 0;
};

// Reads `gene_id<TAB>GO:xxxxxxx` lines. Genes are emitted in order of
// first appearance.
std::vector<GeneExample> load_annotations(std::istream& in, const GoDag& dag, std::size_t max_len,
                                          LoadStats* stats = nullptr);

// Removes genes whose term set equals an earlier gene's set.
std::vector<GeneExample> dedupe_examples(std::vector<GeneExample> examples);

// Mean of the per-term rows of `embeddings` (rows indexed by vocabulary
// token). Computed in double and returned in double.
Eigen::VectorXd gene_embedding(const GeneExample& example, const GoDag& dag,
                               const Vocabulary& vocab, const EmbeddingMatrix& embeddings,
                               bool l2_normalize_terms = false);

struct CorpusSplit {
  std::vector<std::string> train, valid, test;
  std::uint64_t seed = 0;
  int k = 0;
  std::array<double, 3> ratios{};
};

struct KMeansResult {
  Eigen::MatrixXd centroids;          // [k x dim]
  std::vector<int> assignment;        // per point
  std::vector<double> objective;      // after every assignment step
  int iterations = 0;
};

// k-means++ seeding then Lloyd iterations to an assignment fixpoint or
// `max_iters`. Points are rows.
KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int max_iters = 100);

// Clusters the gene embeddings and assigns whole clusters, largest first,
// to whichever split is furthest below its target gene count.
CorpusSplit kmeans_split(const std::vector<GeneExample>& examples, const Eigen::MatrixXd& gene_embeddings,
                         int k, std::array<double, 3> ratios, std::uint64_t seed);

// Rendered texts are attached from the dag.
GeneExample make_example(std::string gene, std::vector<TermId> terms, const GoDag& dag);

void write_corpus_jsonl(std::ostream& out, const std::vector<GeneExample>& examples);
std::vector<GeneExample> read_corpus_jsonl(std::istream& in);

void write_split_json(std::ostream& out, const CorpusSplit& split);
CorpusSplit read_split_json(std::istream& in);

}  // namespace gobert
