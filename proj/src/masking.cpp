#include "gobert/masking.hpp"

#include <algorithm>
#include <unordered_set>

#include "gobert/error.hpp"
#include "gobert/random.hpp"
#include "json.hpp"

namespace gobert {

std::string_view to_string(MaskAction a) {
  switch (a) {
    case MaskAction::mask: return "mask";
    case MaskAction::random: return "random";
    case MaskAction::keep: return "keep";
  }
  return "?";
}

namespace {

MaskAction action_from_string(std::string_view s) {
  if (s == "mask") return MaskAction::mask;
  if (s == "random") return MaskAction::random;
  if (s == "keep") return MaskAction::keep;
  throw DomainError("unknown mask action '" + std::string(s) + "'");
}

}  // namespace

std::vector<int> mask_candidates(const GeneExample& example, const GoDag& dag, MaskingMode mode) {
  const int n = static_cast<int>(example.terms.size());
  std::vector<int> out;
  if (mode == MaskingMode::naive) {
    out.resize(static_cast<std::size_t>(n));
    for (int p = 0; p < n; ++p) out[static_cast<std::size_t>(p)] = p;
    return out;
  }
  std::vector<TermIndex> present;
  present.reserve(example.terms.size());
  for (const auto& t : example.terms) present.push_back(dag.index_of(t));
  std::vector<TermIndex> sorted = present;
  std::sort(sorted.begin(), sorted.end());

  for (int p = 0; p < n; ++p) {
    const auto v = present[static_cast<std::size_t>(p)];
    if (dag.is_root(v)) continue;
    const auto preds = dag.predecessor_indices(v);
    const bool has_pred_in_set = std::any_of(preds.begin(), preds.end(), [&](TermIndex u) {
      return std::binary_search(sorted.begin(), sorted.end(), u);
    });
    if (!has_pred_in_set) out.push_back(p);
  }
  return out;
}

MaskPlan sample_mask(std::span<const int> candidates, std::span<const TokenId> tokens, double alpha_mask,
                     std::uint64_t seed, const Vocabulary& vocab, SampleOptions options) {
  if (!(alpha_mask > 0.0 && alpha_mask <= 1.0)) throw DomainError("alpha_mask must be in (0, 1]");
  MaskPlan plan;
  plan.candidates.assign(candidates.begin(), candidates.end());
  plan.alpha_mask = alpha_mask;
  plan.seed = seed;

  Rng rng(seed);
  std::vector<int> chosen;
  for (int p : candidates)
    if (rng.uniform() < alpha_mask) chosen.push_back(p);
  if (chosen.empty() && !candidates.empty() && options.force_one)
    chosen.push_back(candidates[rng.index(candidates.size())]);

  const auto term_tokens = static_cast<std::uint64_t>(vocab.label_count());
  for (int p : chosen) {
    const auto original = tokens[static_cast<std::size_t>(p)];
    MaskSelection sel{p, MaskAction::mask, Vocabulary::kMask};
    if (!options.mask_only) {
      const double u = rng.uniform();
      if (u < 0.8) {
        sel.action = MaskAction::mask;
      } else if (u < 0.9) {
        sel.action = MaskAction::random;
        sel.replacement = Vocabulary::kSpecialCount + static_cast<TokenId>(rng.index(term_tokens));
      } else {
        sel.action = MaskAction::keep;
        sel.replacement = original;
      }
    }
    plan.selected.push_back(sel);
  }
  return plan;
}

std::vector<TokenId> tokenize(const GeneExample& example, const GoDag& dag, const Vocabulary& vocab) {
  std::vector<TokenId> out;
  out.reserve(example.terms.size());
  for (const auto& t : example.terms) out.push_back(vocab.token_of(dag, t));
  return out;
}

MaskedBatch collate(std::span<const GeneExample> examples, std::span<const MaskPlan> plans, const GoDag& dag,
                    const Vocabulary& vocab, std::size_t max_len) {
  if (examples.size() != plans.size()) throw DomainError("one mask plan per example required");
  std::size_t width = 0;
  for (const auto& ex : examples) {
    if (ex.terms.size() > max_len)
      throw DomainError("gene " + ex.gene + " has " + std::to_string(ex.terms.size()) + " terms, max_len is " +
                        std::to_string(max_len));
    width = std::max(width, ex.terms.size());
  }
  const auto B = static_cast<Eigen::Index>(examples.size());
  const auto S = static_cast<Eigen::Index>(width);
  MaskedBatch batch;
  batch.input_ids = TokenMatrix::Constant(B, S, Vocabulary::kPad);
  batch.original_ids = TokenMatrix::Constant(B, S, Vocabulary::kPad);
  batch.labels = TokenMatrix::Constant(B, S, MaskedBatch::kIgnore);
  batch.attention_mask.setZero(B, S);

  for (Eigen::Index b = 0; b < B; ++b) {
    const auto tokens = tokenize(examples[static_cast<std::size_t>(b)], dag, vocab);
    for (std::size_t p = 0; p < tokens.size(); ++p) {
      const auto s = static_cast<Eigen::Index>(p);
      batch.input_ids(b, s) = tokens[p];
      batch.original_ids(b, s) = tokens[p];
      batch.attention_mask(b, s) = 1;
    }
    for (const auto& sel : plans[static_cast<std::size_t>(b)].selected) {
      if (sel.position < 0 || static_cast<std::size_t>(sel.position) >= tokens.size())
        throw DomainError("mask position out of range");
      batch.input_ids(b, sel.position) = sel.replacement;
      batch.labels(b, sel.position) = tokens[static_cast<std::size_t>(sel.position)];
    }
  }
  return batch;
}

std::string mask_plan_to_json(const MaskPlan& plan) {
  nlohmann::ordered_json j;
  j["alpha_mask"] = plan.alpha_mask;
  j["seed"] = plan.seed;
  j["candidates"] = plan.candidates;
  auto& sel = j["selected"] = nlohmann::ordered_json::array();
  for (const auto& s : plan.selected)
    sel.push_back({{"position", s.position}, {"action", to_string(s.action)}, {"replacement", s.replacement}});
  return j.dump();
}

MaskPlan mask_plan_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  MaskPlan plan;
  plan.alpha_mask = j.at("alpha_mask").get<double>();
  plan.seed = j.at("seed").get<std::uint64_t>();
  plan.candidates = j.at("candidates").get<std::vector<int>>();
  for (const auto& s : j.at("selected"))
    plan.selected.push_back({s.at("position").get<int>(), action_from_string(s.at("action").get<std::string>()),
                             s.at("replacement").get<TokenId>()});
  return plan;
}

}  // namespace gobert
