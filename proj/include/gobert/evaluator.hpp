#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gobert/corpus.hpp"
#include "gobert/masking.hpp"
#include "gobert/model.hpp"
#include "gobert/trainer.hpp"

namespace gobert {

// One evaluated position: the true token, the model's logits over the
// full vocabulary, and the example's other input tokens.
struct ScoredPosition {
  TokenId truth;
  Eigen::VectorXf logits;
  std::vector<TokenId> context;
};

// 1-based rank of `truth` among `candidates` by descending score; ties go
// to the smaller token id (tokens ascend with TermId).
std::size_t rank_among(const Eigen::VectorXf& scores, TokenId truth, std::span<const TokenId> candidates);

enum class DepthMode {
  restrict,  // rank only among terms at the truth's depth
  bucket,    // unrestricted ranking, reported per truth depth
};

struct EvalOptions {
  std::vector<int> ks{1, 5};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double alpha_mask = 0.15;
  MaskingMode masking = MaskingMode::strategy;
  bool exclude_inputs = false;
  DepthMode depth_mode = DepthMode::restrict;
  int batch_size = 64;
  std::size_t max_len = 64;
};

struct SeedCounts {
  std::uint64_t seed = 0;
  std::size_t positions = 0;
  std::vector<std::size_t> hits;  // per k
  std::size_t depth_positions = 0;
  std::vector<std::size_t> depth_hits;  // per k
  std::size_t skipped_depth = 0;        // truth without a depth
  // bucket mode: depth -> (positions, hits per k)
  std::map<int, std::pair<std::size_t, std::vector<std::size_t>>> by_depth;
};

struct MeanStd {
  double mean = 0;
  double std = 0;  // sample standard deviation over seeds
};

struct EvalReport {
  std::string name;
  std::vector<int> ks;
  std::vector<SeedCounts> per_seed;
  std::vector<MeanStd> topk;        // per k, percent
  std::vector<MeanStd> topk_depth;  // per k, percent
  nlohmann::json config = nlohmann::json::object();
};

// Counts hits over scored positions. Special tokens never rank.
SeedCounts count_hits(std::span<const ScoredPosition> positions, const GoDag& dag, const EvalOptions& options);

// Masks each test example with `seed` (every selected position becomes
// MASK) and scores the masked positions.
std::vector<ScoredPosition> score_masked_positions(const ModelParameters<float>& params,
                                                   const std::vector<GeneExample>& examples, const GoDag& dag,
                                                   std::uint64_t seed, const EvalOptions& options);

double topk_accuracy(const ModelParameters<float>& params, const std::vector<GeneExample>& examples,
                     const GoDag& dag, int k, std::uint64_t seed, const EvalOptions& options = {});
double topk_accuracy_at_depth(const ModelParameters<float>& params, const std::vector<GeneExample>& examples,
                              const GoDag& dag, int k, std::uint64_t seed, const EvalOptions& options = {});

// Aggregates counts into mean and sample std over seeds.
EvalReport summarize(std::string name, std::vector<SeedCounts> per_seed, std::vector<int> ks);

EvalReport evaluate(const ModelParameters<float>& params, const std::vector<GeneExample>& examples,
                    const GoDag& dag, const EvalOptions& options, std::string name = "model");

nlohmann::ordered_json report_to_json(const EvalReport& report);
// Aligned text table: one row per report, "mean ± std" cells.
void write_report_table(std::ostream& out, std::span<const EvalReport> reports);
// TSV with mean and std columns for every metric.
void write_report_tsv(std::ostream& out, std::span<const EvalReport> reports);

struct RankedTerm {
  TermId term;
  double probability;
  std::size_t rank;
};

struct Ranking {
  std::vector<RankedTerm> terms;  // best first

  std::optional<std::size_t> rank_of(const TermId& id) const;
};

// Probability distribution over the vocabulary at a MASK appended to the
// known terms.
Eigen::VectorXd mask_probabilities(const ModelParameters<float>& params, const std::vector<TermId>& known,
                                   const GoDag& dag);

// All terms of `ns` at `depth`, ranked at the MASK position.
Ranking restricted_ranking(const ModelParameters<float>& params, const std::vector<TermId>& known, Namespace ns,
                           int depth, const GoDag& dag);

// Immediate predecessors of `anchor`, ranked at the MASK position.
Ranking predecessor_ranking(const ModelParameters<float>& params, const std::vector<TermId>& known,
                            const TermId& anchor, const GoDag& dag);

struct AblationRun {
  std::string name;
  TrainConfig train;
};

// The full model plus the three ablations, sharing one seed.
std::vector<AblationRun> default_ablation_runs(const TrainConfig& base);

// Trains each configuration from scratch and evaluates it on `test`.
std::vector<EvalReport> run_ablation_suite(const std::vector<AblationRun>& runs, const ModelConfig& model,
                                           const std::vector<GeneExample>& train_set,
                                           const std::vector<GeneExample>& test_set, const GoDag& dag,
                                           const EmbeddingMatrix& embeddings, const EvalOptions& options);

}  // namespace gobert
