#include <algorithm>
#include <array>

#include "doctest.h"
#include "fixtures.hpp"
#include "gobert/error.hpp"
#include "gobert/masking.hpp"
#include "gobert/random.hpp"
#include "reference.hpp"

using namespace gobert;
using fixtures::data;

namespace {

const GoDag& fixture40() {
  static const GoDag dag = load_obo(data("go_40.obo"));
  return dag;
}

GeneExample gene(std::vector<const char*> ids) {
  std::vector<TermId> terms;
  for (auto s : ids) terms.emplace_back(s);
  std::sort(terms.begin(), terms.end());
  return make_example("g", terms, fixture40());
}

}  // namespace

TEST_CASE("root only gene has no candidates") {
  CHECK(mask_candidates(gene({"GO:0008150"}), fixture40()).empty());
}

TEST_CASE("successor of a present predecessor is excluded") {
  // GO:0001565 is_a GO:0001468: the predecessor stays eligible
  const auto ex = gene({"GO:0001565", "GO:0001468"});
  const auto cands = mask_candidates(ex, fixture40());
  REQUIRE(cands.size() == 1);
  CHECK(ex.terms[static_cast<std::size_t>(cands[0])] == TermId("GO:0001565"));
  CHECK(mask_candidates(ex, fixture40(), MaskingMode::naive) == std::vector<int>{0, 1});
}

TEST_CASE("12-term gene matches the literal edge-scan rule") {
  const auto ex = gene({"GO:0003674", "GO:0001234", "GO:0001468", "GO:0001565", "GO:0002315", "GO:0003157",
                        "GO:0003283", "GO:0002549", "GO:0006572", "GO:0004703", "GO:0007650", "GO:0008436"});
  REQUIRE(ex.terms.size() == 12);
  const auto got = mask_candidates(ex, fixture40());
  CHECK(got == reference::masking_candidates(ex, fixture40()));
  CHECK(got.size() < 12);
}

TEST_CASE("sample_mask") {
  const Vocabulary vocab(fixture40());
  const std::vector<TokenId> tokens{5, 6, 7, 8, 9, 10, 11, 12};
  const std::vector<int> cands{0, 1, 2, 3, 4, 5, 6, 7};

  SUBCASE("alpha 1 selects every candidate") {
    const auto plan = sample_mask(cands, tokens, 1.0, 3, vocab);
    CHECK(plan.selected.size() == 8);
  }
  SUBCASE("empty candidates give an unusable plan") {
    const auto plan = sample_mask({}, tokens, 0.5, 3, vocab);
    CHECK(plan.selected.empty());
    CHECK_FALSE(plan.usable());
  }
  SUBCASE("force one") {
    const std::vector<int> one{2};
    for (std::uint64_t s = 0; s < 50; ++s) {
      const auto plan = sample_mask(one, tokens, 0.01, s, vocab);
      REQUIRE(plan.selected.size() == 1);
      CHECK(plan.selected[0].position == 2);
    }
  }
  SUBCASE("selected subset of candidates, deterministic, valid replacements") {
    const std::vector<int> some{1, 4, 6};
    for (std::uint64_t s = 0; s < 200; ++s) {
      const auto plan = sample_mask(some, tokens, 0.6, s, vocab);
      CHECK(plan == sample_mask(some, tokens, 0.6, s, vocab));
      for (const auto& sel : plan.selected) {
        CHECK(std::find(some.begin(), some.end(), sel.position) != some.end());
        switch (sel.action) {
          case MaskAction::mask: CHECK(sel.replacement == Vocabulary::kMask); break;
          case MaskAction::keep: CHECK(sel.replacement == tokens[static_cast<std::size_t>(sel.position)]); break;
          case MaskAction::random:
            CHECK_FALSE(Vocabulary::is_special(sel.replacement));
            CHECK(sel.replacement < vocab.size());
            break;
        }
      }
      CHECK(mask_plan_from_json(mask_plan_to_json(plan)) == plan);
    }
  }
  SUBCASE("Monte-Carlo rates over 10k trials") {
    std::size_t selected = 0;
    std::array<std::size_t, 3> actions{};
    for (std::uint64_t s = 0; s < 10000; ++s) {
      const auto plan = sample_mask(cands, tokens, 0.15, derive_seed(77, s), vocab, {.force_one = false});
      selected += plan.selected.size();
      for (const auto& sel : plan.selected) ++actions[static_cast<std::size_t>(sel.action)];
    }
    CHECK(std::abs(static_cast<double>(selected) / 80000.0 - 0.15) <= 0.01);
    const double n = static_cast<double>(selected);
    CHECK(std::abs(actions[0] / n - 0.8) <= 0.02);
    CHECK(std::abs(actions[1] / n - 0.1) <= 0.02);
    CHECK(std::abs(actions[2] / n - 0.1) <= 0.02);
  }
  SUBCASE("mask only") {
    const auto plan = sample_mask(cands, tokens, 1.0, 1, vocab, {.mask_only = true});
    for (const auto& sel : plan.selected) CHECK(sel.replacement == Vocabulary::kMask);
  }
  SUBCASE("alpha out of range") {
    CHECK_THROWS_AS(sample_mask(cands, tokens, 0.0, 1, vocab), DomainError);
    CHECK_THROWS_AS(sample_mask(cands, tokens, 1.5, 1, vocab), DomainError);
  }
}

TEST_CASE("collate") {
  const auto& dag = fixture40();
  const Vocabulary vocab(dag);
  const auto a = gene({"GO:0001234", "GO:0001565", "GO:0007650"});
  const auto b = gene({"GO:0001234", "GO:0001882", "GO:0004393", "GO:0006051", "GO:0008480"});

  SUBCASE("no masks means no labels") {
    const std::vector<GeneExample> ex{a};
    const std::vector<MaskPlan> plans(1);
    const auto batch = collate(ex, plans, dag, vocab, 64);
    CHECK((batch.labels.array() == MaskedBatch::kIgnore).all());
  }
  SUBCASE("padding to the longest example") {
    const std::vector<GeneExample> ex{a, b};
    const std::vector<MaskPlan> plans(2);
    const auto batch = collate(ex, plans, dag, vocab, 64);
    CHECK(batch.seq_len() == 5);
    CHECK((batch.input_ids.row(0).array() == Vocabulary::kPad).count() == 2);
    CHECK(batch.attention_mask.row(0).cast<int>().sum() == 3);
  }
  SUBCASE("matches a hand-written collator") {
    const std::vector<GeneExample> ex{a, b};
    std::vector<MaskPlan> plans{sample_mask(mask_candidates(a, dag), tokenize(a, dag, vocab), 1.0, 4, vocab),
                                sample_mask(mask_candidates(b, dag), tokenize(b, dag, vocab), 0.7, 9, vocab)};
    const auto batch = collate(ex, plans, dag, vocab, 64);
    for (std::size_t r = 0; r < 2; ++r) {
      const auto& g = ex[r];
      for (int s = 0; s < 5; ++s) {
        int input = 0, label = -100, original = 0, attn = 0;
        if (s < static_cast<int>(g.terms.size())) {
          const auto label_idx = *dag.label_of(dag.index_of(g.terms[static_cast<std::size_t>(s)]));
          original = input = 3 + label_idx;
          attn = 1;
          for (const auto& sel : plans[r].selected)
            if (sel.position == s) {
              input = sel.replacement;
              label = original;
            }
        }
        const auto row = static_cast<Eigen::Index>(r);
        CHECK(batch.input_ids(row, s) == input);
        CHECK(batch.labels(row, s) == label);
        CHECK(batch.original_ids(row, s) == original);
        CHECK(batch.attention_mask(row, s) == attn);
      }
    }
  }
  SUBCASE("too long") {
    const std::vector<GeneExample> ex{b};
    const std::vector<MaskPlan> plans(1);
    CHECK_THROWS_AS(collate(ex, plans, dag, vocab, 4), DomainError);
  }
}

TEST_CASE("no selected position ever breaks the exclusion rules") {
  const auto& dag = fixture40();
  const Vocabulary vocab(dag);
  std::vector<TermId> live;
  for (const auto& t : dag.terms())
    if (!t.is_obsolete) live.push_back(t.id);
  Rng rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<TermId> terms;
    const auto n = 1 + rng.index(10);
    while (terms.size() < n) {
      const auto& t = live[rng.index(live.size())];
      if (std::find(terms.begin(), terms.end(), t) == terms.end()) terms.push_back(t);
    }
    std::sort(terms.begin(), terms.end());
    const auto ex = make_example("g", terms, dag);
    const auto cands = mask_candidates(ex, dag);
    CHECK(cands == reference::masking_candidates(ex, dag));
    const auto plan = sample_mask(cands, tokenize(ex, dag, vocab), 0.5, static_cast<std::uint64_t>(trial), vocab);
    const auto allowed = reference::masking_candidates(ex, dag);
    for (const auto& sel : plan.selected)
      CHECK(std::find(allowed.begin(), allowed.end(), sel.position) != allowed.end());
  }
}
