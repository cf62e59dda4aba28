#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gobert/corpus.hpp"
#include "gobert/ontology.hpp"

namespace gobert {

enum class MaskAction : std::uint8_t { mask, random, keep };

std::string_view to_string(MaskAction a);

enum class MaskingMode {
  strategy,  // exclude roots and terms with a predecessor in the gene's set
  naive,     // every position is a candidate
};

struct MaskSelection {
  int position;
  MaskAction action;
  TokenId replacement;  // token written at `position`; MASK, a random term, or the original

  bool operator==(const MaskSelection&) const = default;
};

struct MaskPlan {
  std::vector<int> candidates;          // ascending positions
  std::vector<MaskSelection> selected;  // ascending positions
  double alpha_mask = 0.15;
  std::uint64_t seed = 0;

  // False when nothing could be masked; such an example carries no MLM signal.
  bool usable() const { return !selected.empty(); }
  bool operator==(const MaskPlan&) const = default;
};

// Positions p whose term is not a namespace root and has no immediate
// predecessor among the gene's terms.
std::vector<int> mask_candidates(const GeneExample& example, const GoDag& dag,
                                 MaskingMode mode = MaskingMode::strategy);

struct SampleOptions {
  // Pick one candidate uniformly when the Bernoulli draws select none.
  bool force_one = true;
  // Replace every selected position with MASK instead of the 80/10/10 rule.
  bool mask_only = false;
};

// Bernoulli(alpha_mask) selection per candidate, then per-position
// corruption: 0.8 MASK, 0.1 random non-special token, 0.1 unchanged.
// `tokens` are the example's original token ids.
MaskPlan sample_mask(std::span<const int> candidates, std::span<const TokenId> tokens, double alpha_mask,
                     std::uint64_t seed, const Vocabulary& vocab, SampleOptions options = {});

// Original token ids of an example's terms.
std::vector<TokenId> tokenize(const GeneExample& example, const GoDag& dag, const Vocabulary& vocab);

using TokenMatrix = Eigen::Matrix<TokenId, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MaskedBatch {
  static constexpr TokenId kIgnore = -100;

  TokenMatrix input_ids;     // [B x S], PAD-padded
  TokenMatrix labels;        // [B x S], original token at selected positions, else kIgnore
  TokenMatrix original_ids;  // [B x S], uncorrupted tokens, PAD-padded
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> attention_mask;  // 1 = token

  Eigen::Index batch_size() const { return input_ids.rows(); }
  Eigen::Index seq_len() const { return input_ids.cols(); }
  bool valid(Eigen::Index b, Eigen::Index s) const { return attention_mask(b, s) != 0; }
};

// Pads to the longest example. Examples longer than max_len are rejected.
MaskedBatch collate(std::span<const GeneExample> examples, std::span<const MaskPlan> plans, const GoDag& dag,
                    const Vocabulary& vocab, std::size_t max_len);

std::string mask_plan_to_json(const MaskPlan& plan);
MaskPlan mask_plan_from_json(const std::string& text);

}  // namespace gobert
