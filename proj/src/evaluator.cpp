#include "gobert/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "gobert/error.hpp"
#include "gobert/random.hpp"

namespace gobert {

std::size_t rank_among(const Eigen::VectorXf& scores, TokenId truth, std::span<const TokenId> candidates) {
  const float ts = scores[truth];
  std::size_t better = 0;
  for (auto c : candidates) {
    if (c == truth) continue;
    const float s = scores[c];
    if (s > ts || (s == ts && c < truth)) ++better;
  }
  return better + 1;
}

namespace {

// Vocabulary tokens grouped by term depth.
std::map<int, std::vector<TokenId>> tokens_by_depth(const GoDag& dag) {
  std::map<int, std::vector<TokenId>> out;
  for (TermIndex l = 0; l < dag.label_count(); ++l) {
    if (auto d = dag.depth_of(dag.term_of_label(l))) out[*d].push_back(Vocabulary::token_of_label(l));
  }
  return out;
}

std::vector<TokenId> filter_inputs(std::span<const TokenId> candidates, const ScoredPosition& p) {
  std::vector<TokenId> ctx = p.context;
  std::sort(ctx.begin(), ctx.end());
  std::vector<TokenId> out;
  for (auto c : candidates)
    if (c == p.truth || !std::binary_search(ctx.begin(), ctx.end(), c)) out.push_back(c);
  return out;
}

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

std::string k_label(int k, bool depth) { return "top" + std::to_string(k) + (depth ? "_depth" : ""); }

}  // namespace

SeedCounts count_hits(std::span<const ScoredPosition> positions, const GoDag& dag, const EvalOptions& options) {
  for (int k : options.ks)
    if (k < 1) throw DomainError("k must be >= 1");
  const auto nk = options.ks.size();
  SeedCounts counts;
  counts.hits.assign(nk, 0);
  counts.depth_hits.assign(nk, 0);

  const Vocabulary vocab(dag);
  std::vector<TokenId> all_terms(static_cast<std::size_t>(vocab.label_count()));
  for (TermIndex l = 0; l < vocab.label_count(); ++l) all_terms[static_cast<std::size_t>(l)] = Vocabulary::token_of_label(l);
  const auto by_depth = tokens_by_depth(dag);

  for (const auto& p : positions) {
    if (Vocabulary::is_special(p.truth)) throw DomainError("evaluation truth must be a term token");
    ++counts.positions;
    const auto overall = options.exclude_inputs ? filter_inputs(all_terms, p) : all_terms;
    const auto rank = rank_among(p.logits, p.truth, overall);
    for (std::size_t i = 0; i < nk; ++i)
      if (rank <= static_cast<std::size_t>(options.ks[i])) ++counts.hits[i];

    const auto depth = dag.depth_of(dag.term_of_label(Vocabulary::label_of_token(p.truth)));
    if (!depth) {
      ++counts.skipped_depth;
      continue;
    }
    if (options.depth_mode == DepthMode::bucket) {
      auto& bucket = counts.by_depth[*depth];
      bucket.second.resize(nk, 0);
      ++bucket.first;
      for (std::size_t i = 0; i < nk; ++i)
        if (rank <= static_cast<std::size_t>(options.ks[i])) ++bucket.second[i];
    }
    const auto& level = by_depth.at(*depth);
    const auto restricted = options.exclude_inputs ? filter_inputs(level, p) : level;
    const auto drank = rank_among(p.logits, p.truth, restricted);
    ++counts.depth_positions;
    for (std::size_t i = 0; i < nk; ++i)
      if (drank <= static_cast<std::size_t>(options.ks[i])) ++counts.depth_hits[i];
  }
  return counts;
}

std::vector<ScoredPosition> score_masked_positions(const ModelParameters<float>& params,
                                                   const std::vector<GeneExample>& examples, const GoDag& dag,
                                                   std::uint64_t seed, const EvalOptions& options) {
  const Vocabulary vocab(dag);
  std::vector<ScoredPosition> out;
  const auto bs = static_cast<std::size_t>(std::max(1, options.batch_size));
  for (std::size_t start = 0; start < examples.size(); start += bs) {
    const auto end = std::min(examples.size(), start + bs);
    std::vector<GeneExample> batch_examples(examples.begin() + static_cast<std::ptrdiff_t>(start),
                                            examples.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<MaskPlan> plans;
    std::vector<std::vector<TokenId>> tokens;
    for (std::size_t i = start; i < end; ++i) {
      tokens.push_back(tokenize(examples[i], dag, vocab));
      const auto cand = mask_candidates(examples[i], dag, options.masking);
      plans.push_back(sample_mask(cand, tokens.back(), options.alpha_mask, derive_seed(seed, i, 4), vocab,
                                  {.force_one = true, .mask_only = true}));
    }
    const auto batch = collate(batch_examples, plans, dag, vocab, options.max_len);
    const auto fwd = forward(params, batch);
    for (std::size_t b = 0; b < plans.size(); ++b) {
      for (const auto& sel : plans[b].selected) {
        ScoredPosition sp;
        sp.truth = tokens[b][static_cast<std::size_t>(sel.position)];
        sp.logits = fwd.mlm_logits[b].row(sel.position).transpose();
        for (std::size_t q = 0; q < tokens[b].size(); ++q)
          if (static_cast<int>(q) != sel.position) sp.context.push_back(tokens[b][q]);
        out.push_back(std::move(sp));
      }
    }
  }
  return out;
}

double topk_accuracy(const ModelParameters<float>& params, const std::vector<GeneExample>& examples,
                     const GoDag& dag, int k, std::uint64_t seed, const EvalOptions& options) {
  if (k < 1) throw DomainError("k must be >= 1");
  auto opts = options;
  opts.ks = {k};
  const auto scored = score_masked_positions(params, examples, dag, seed, opts);
  const auto c = count_hits(scored, dag, opts);
  return c.positions ? 100.0 * static_cast<double>(c.hits[0]) / static_cast<double>(c.positions) : 0.0;
}

double topk_accuracy_at_depth(const ModelParameters<float>& params, const std::vector<GeneExample>& examples,
                              const GoDag& dag, int k, std::uint64_t seed, const EvalOptions& options) {
  if (k < 1) throw DomainError("k must be >= 1");
  auto opts = options;
  opts.ks = {k};
  const auto scored = score_masked_positions(params, examples, dag, seed, opts);
  const auto c = count_hits(scored, dag, opts);
  return c.depth_positions ? 100.0 * static_cast<double>(c.depth_hits[0]) / static_cast<double>(c.depth_positions)
                           : 0.0;
}

EvalReport summarize(std::string name, std::vector<SeedCounts> per_seed, std::vector<int> ks) {
  EvalReport r;
  r.name = std::move(name);
  r.ks = std::move(ks);
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    std::vector<double> acc, dacc;
    for (const auto& s : per_seed) {
      acc.push_back(s.positions ? 100.0 * static_cast<double>(s.hits[i]) / static_cast<double>(s.positions) : 0.0);
      dacc.push_back(s.depth_positions
                         ? 100.0 * static_cast<double>(s.depth_hits[i]) / static_cast<double>(s.depth_positions)
                         : 0.0);
    }
    r.topk.push_back(mean_std(acc));
    r.topk_depth.push_back(mean_std(dacc));
  }
  r.per_seed = std::move(per_seed);
  return r;
}

EvalReport evaluate(const ModelParameters<float>& params, const std::vector<GeneExample>& examples,
                    const GoDag& dag, const EvalOptions& options, std::string name) {
  std::vector<SeedCounts> per_seed;
  for (auto seed : options.seeds) {
    const auto scored = score_masked_positions(params, examples, dag, seed, options);
    auto c = count_hits(scored, dag, options);
    c.seed = seed;
    per_seed.push_back(std::move(c));
  }
  auto report = summarize(std::move(name), std::move(per_seed), options.ks);
  report.config = {{"alpha_mask", options.alpha_mask},
                   {"masking", options.masking == MaskingMode::strategy ? "strategy" : "naive"},
                   {"exclude_inputs", options.exclude_inputs},
                   {"depth_mode", options.depth_mode == DepthMode::restrict ? "restrict" : "bucket"},
                   {"seeds", options.seeds},
                   {"examples", examples.size()}};
  return report;
}

nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  j["k"] = r.ks;
  auto& metrics = j["metrics"] = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    metrics[k_label(r.ks[i], false)] = {{"mean", r.topk[i].mean}, {"std", r.topk[i].std}};
    metrics[k_label(r.ks[i], true)] = {{"mean", r.topk_depth[i].mean}, {"std", r.topk_depth[i].std}};
  }
  auto& seeds = j["per_seed"] = nlohmann::ordered_json::array();
  for (const auto& s : r.per_seed) {
    nlohmann::ordered_json e;
    e["seed"] = s.seed;
    e["positions"] = s.positions;
    e["hits"] = s.hits;
    e["depth_positions"] = s.depth_positions;
    e["depth_hits"] = s.depth_hits;
    e["skipped_depth"] = s.skipped_depth;
    if (!s.by_depth.empty()) {
      auto& bd = e["by_depth"] = nlohmann::ordered_json::object();
      for (const auto& [depth, cnt] : s.by_depth)
        bd[std::to_string(depth)] = {{"positions", cnt.first}, {"hits", cnt.second}};
    }
    seeds.push_back(std::move(e));
  }
  j["config"] = r.config;
  return j;
}

namespace {

std::string cell(const MeanStd& m) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << m.mean << " ± " << m.std;
  return os.str();
}

}  // namespace

void write_report_table(std::ostream& out, std::span<const EvalReport> reports) {
  if (reports.empty()) return;
  const auto& ks = reports.front().ks;
  std::vector<std::string> header{"Method"};
  for (int k : ks) header.push_back("Top-" + std::to_string(k) + " Acc");
  for (int k : ks) header.push_back("Top-" + std::to_string(k) + " Acc w/ depth");
  std::vector<std::vector<std::string>> rows{header};
  for (const auto& r : reports) {
    std::vector<std::string> row{r.name};
    for (const auto& m : r.topk) row.push_back(cell(m));
    for (const auto& m : r.topk_depth) row.push_back(cell(m));
    rows.push_back(std::move(row));
  }
  // Width in code points; "±" is two bytes.
  auto width = [](const std::string& s) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
  };
  std::vector<std::size_t> w(header.size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) w[c] = std::max(w[c], width(row[c]));
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out << row[c] << std::string(w[c] - width(row[c]), ' ');
      out << (c + 1 < row.size() ? " | " : "\n");
    }
  }
}

void write_report_tsv(std::ostream& out, std::span<const EvalReport> reports) {
  if (reports.empty()) return;
  const auto& ks = reports.front().ks;
  out << "method";
  for (bool depth : {false, true})
    for (int k : ks) out << '\t' << k_label(k, depth) << "_mean\t" << k_label(k, depth) << "_std";
  out << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& r : reports) {
    out << r.name;
    for (const auto* metric : {&r.topk, &r.topk_depth})
      for (const auto& m : *metric) out << '\t' << m.mean << '\t' << m.std;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Case-study queries

std::optional<std::size_t> Ranking::rank_of(const TermId& id) const {
  for (const auto& t : terms)
    if (t.term == id) return t.rank;
  return std::nullopt;
}

Eigen::VectorXd mask_probabilities(const ModelParameters<float>& params, const std::vector<TermId>& known,
                                   const GoDag& dag) {
  const Vocabulary vocab(dag);
  std::vector<TermId> sorted = known;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  MaskedBatch batch;
  const auto n = static_cast<Eigen::Index>(sorted.size()) + 1;
  batch.input_ids.resize(1, n);
  batch.original_ids.resize(1, n);
  batch.labels = TokenMatrix::Constant(1, n, MaskedBatch::kIgnore);
  batch.attention_mask.setOnes(1, n);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    const auto idx = dag.index_of(sorted[static_cast<std::size_t>(i)]);
    if (dag.term(idx).is_obsolete) throw DomainError("obsolete term " + sorted[static_cast<std::size_t>(i)].str());
    batch.input_ids(0, i) = batch.original_ids(0, i) = vocab.token_of(dag, sorted[static_cast<std::size_t>(i)]);
  }
  batch.input_ids(0, n - 1) = batch.original_ids(0, n - 1) = Vocabulary::kMask;
  const auto out = forward(params, batch);
  Eigen::VectorXd logits = out.mlm_logits[0].row(n - 1).transpose().cast<double>();
  logits.array() -= logits.maxCoeff();
  Eigen::VectorXd p = logits.array().exp();
  return p / p.sum();
}

namespace {

Ranking rank_terms(const Eigen::VectorXd& probs, std::vector<TermIndex> candidates, const GoDag& dag) {
  if (candidates.empty()) throw DomainError("empty candidate set");
  const Vocabulary vocab(dag);
  std::vector<std::pair<double, TermIndex>> scored;
  for (auto c : candidates) scored.emplace_back(probs[vocab.token_of(dag, dag.term(c).id)], c);
  std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return dag.term(a.second).id < dag.term(b.second).id;
  });
  Ranking r;
  for (std::size_t i = 0; i < scored.size(); ++i) r.terms.push_back({dag.term(scored[i].second).id, scored[i].first, i + 1});
  return r;
}

}  // namespace

Ranking restricted_ranking(const ModelParameters<float>& params, const std::vector<TermId>& known, Namespace ns,
                           int depth, const GoDag& dag) {
  std::vector<TermIndex> candidates;
  for (TermIndex l = 0; l < dag.label_count(); ++l) {
    const auto t = dag.term_of_label(l);
    if (dag.term(t).ns == ns && dag.depth_of(t) == depth) candidates.push_back(t);
  }
  if (candidates.empty())
    throw DomainError("no " + std::string(to_string(ns)) + " terms at depth " + std::to_string(depth));
  return rank_terms(mask_probabilities(params, known, dag), std::move(candidates), dag);
}

Ranking predecessor_ranking(const ModelParameters<float>& params, const std::vector<TermId>& known,
                            const TermId& anchor, const GoDag& dag) {
  std::vector<TermIndex> candidates;
  for (auto u : dag.predecessor_indices(dag.index_of(anchor)))
    if (!dag.term(u).is_obsolete) candidates.push_back(u);
  if (candidates.empty()) throw DomainError(anchor.str() + " has no predecessors");
  return rank_terms(mask_probabilities(params, known, dag), std::move(candidates), dag);
}

// ---------------------------------------------------------------------------
// Ablations

std::vector<AblationRun> default_ablation_runs(const TrainConfig& base) {
  std::vector<AblationRun> runs;
  for (auto [name, ab] : {std::pair{"no_neighborhood", Ablation::no_neighborhood},
                          std::pair{"no_semantics", Ablation::no_semantics},
                          std::pair{"naive_masking", Ablation::naive_masking}, std::pair{"full", Ablation::none}}) {
    auto cfg = base;
    cfg.ablation = ab;
    runs.push_back({name, cfg});
  }
  return runs;
}

std::vector<EvalReport> run_ablation_suite(const std::vector<AblationRun>& runs, const ModelConfig& model,
                                           const std::vector<GeneExample>& train_set,
                                           const std::vector<GeneExample>& test_set, const GoDag& dag,
                                           const EmbeddingMatrix& embeddings, const EvalOptions& options) {
  std::vector<EvalReport> reports;
  for (const auto& run : runs) {
    auto ckpt = initial_checkpoint(model, run.train, embeddings);
    train(ckpt, train_set, dag);
    auto report = evaluate(ckpt.params, test_set, dag, options, run.name);
    report.config["train"] = run.train;
    reports.push_back(std::move(report));
  }
  return reports;
}

}  // namespace gobert
