#include "gobert/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gobert/error.hpp"
#include "gobert/random.hpp"

namespace gobert {

namespace {

constexpr std::array<std::string_view, 4> kAblationNames = {"none", "no_neighborhood", "no_semantics",
                                                             "naive_masking"};

}  // namespace

std::string_view to_string(Ablation a) { return kAblationNames[static_cast<std::size_t>(a)]; }

Ablation ablation_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kAblationNames.size(); ++i)
    if (kAblationNames[i] == s) return static_cast<Ablation>(i);
  throw DomainError("unknown ablation '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw DomainError("train config: " + msg); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(lr > 0)) fail("lr must be > 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("adam betas must be in [0, 1)");
  if (!(adam_eps > 0)) fail("adam_eps must be > 0");
  if (!(lambda >= 0 && lambda <= 1)) fail("lambda must be in [0, 1]");
  if (!(alpha_mask > 0 && alpha_mask <= 1)) fail("alpha_mask must be in (0, 1]");
  if (!(rho > 0 && rho <= 1)) fail("rho must be in (0, 1]");
  if (max_len < 1) fail("max_len must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},       {"batch_size", c.batch_size},
                     {"lr", c.lr},               {"beta1", c.beta1},
                     {"beta2", c.beta2},         {"adam_eps", c.adam_eps},
                     {"warmup_steps", c.warmup_steps}, {"seed", c.seed},
                     {"lambda", c.lambda},       {"alpha_mask", c.alpha_mask},
                     {"rho", c.rho},             {"max_len", c.max_len},
                     {"ablation", std::string(to_string(c.ablation))}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("lr", c.lr);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("adam_eps", c.adam_eps);
  get("warmup_steps", c.warmup_steps);
  get("seed", c.seed);
  get("lambda", c.lambda);
  get("alpha_mask", c.alpha_mask);
  get("rho", c.rho);
  get("max_len", c.max_len);
  if (j.contains("ablation")) c.ablation = ablation_from_string(j.at("ablation").get<std::string>());
}

std::string metrics_jsonl_line(const EpochMetrics& m, bool include_seconds) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["loss_total"] = m.loss_total;
  if (m.loss_ex) j["loss_ex"] = *m.loss_ex;
  j["loss_im"] = m.loss_im;
  j["seconds"] = include_seconds ? m.seconds : 0.0;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["model"] = ckpt.model;
  header["train"] = ckpt.train;
  header["epoch"] = ckpt.epoch;
  header["adam_step"] = ckpt.adam.step;
  header["extra"] = ckpt.extra;
  auto blocks = to_blocks(ckpt.params);
  for (auto& b : to_blocks(ckpt.adam.m, "adam.m.")) blocks.push_back(std::move(b));
  for (auto& b : to_blocks(ckpt.adam.v, "adam.v.")) blocks.push_back(std::move(b));
  write_checkpoint_blocks(out, header, blocks);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DomainError("cannot write " + path);
  save_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(std::istream& in) {
  auto [header, blocks] = read_checkpoint_blocks(in);
  Checkpoint ckpt;
  try {
    ckpt.model = header.at("model").get<ModelConfig>();
    ckpt.train = header.at("train").get<TrainConfig>();
    ckpt.epoch = header.at("epoch").get<int>();
    if (header.contains("extra")) ckpt.extra = header.at("extra");
    ckpt.adam = AdamState<float>::zeros(ckpt.model);
    ckpt.adam.step = header.at("adam_step").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what(), 0);
  }
  ckpt.params = ModelParameters<float>::zeros(ckpt.model);
  from_blocks(ckpt.params, blocks);
  from_blocks(ckpt.adam.m, blocks, "adam.m.");
  from_blocks(ckpt.adam.v, blocks, "adam.v.");
  return ckpt;
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot open " + path);
  return load_checkpoint(in);
}

// ---------------------------------------------------------------------------
// Training

ModelConfig apply_ablation(ModelConfig model, const TrainConfig& train) {
  model.lambda = train.lambda;
  model.neg_downsample = train.rho;
  if (train.ablation == Ablation::no_neighborhood) {
    model.neighborhood_head = false;
    model.lambda = 0.0;
  }
  return model;
}

Checkpoint initial_checkpoint(const ModelConfig& model, const TrainConfig& train, const EmbeddingMatrix& embeddings) {
  train.validate();
  Checkpoint ckpt;
  ckpt.model = apply_ablation(model, train);
  ckpt.model.embed_dim = embeddings.dim() == ckpt.model.hidden ? 0 : embeddings.dim();
  ckpt.train = train;
  const auto table = train.ablation == Ablation::no_semantics ? randomized_embeddings(embeddings, train.seed)
                                                              : embeddings;
  ckpt.params = init_parameters(ckpt.model, table, train.seed);
  ckpt.adam = AdamState<float>::zeros(ckpt.model);
  return ckpt;
}

std::vector<EpochMetrics> train(Checkpoint& ckpt, const std::vector<GeneExample>& examples, const GoDag& dag,
                                const TrainHooks& hooks) {
  const auto& cfg = ckpt.train;
  cfg.validate();
  if (examples.empty()) throw DomainError("train: no examples");
  const Vocabulary vocab(dag);
  if (vocab.size() != ckpt.model.vocab_size) throw DomainError("train: vocabulary does not match the model");
  const double lambda = ckpt.model.neighborhood_head ? cfg.lambda : 0.0;
  const auto mode = cfg.ablation == Ablation::naive_masking ? MaskingMode::naive : MaskingMode::strategy;

  // Candidates and tokens do not change between epochs.
  std::vector<std::vector<int>> candidates;
  std::vector<std::vector<TokenId>> tokens;
  candidates.reserve(examples.size());
  tokens.reserve(examples.size());
  for (const auto& ex : examples) {
    candidates.push_back(mask_candidates(ex, dag, mode));
    tokens.push_back(tokenize(ex, dag, vocab));
  }

  std::vector<EpochMetrics> log;
  auto grads = ModelParameters<float>::zeros(ckpt.model);
  for (int epoch = ckpt.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng(derive_seed(cfg.seed, epoch, 1)).shuffle(order.begin(), order.end());

    Checkpoint next = ckpt;
    double sum_total = 0, sum_ex = 0, sum_im = 0;
    std::size_t steps = 0, im_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<GeneExample> batch_examples;
      std::vector<MaskPlan> plans;
      for (auto k = start; k < end; ++k) {
        const auto i = order[k];
        batch_examples.push_back(examples[i]);
        plans.push_back(sample_mask(candidates[i], tokens[i], cfg.alpha_mask, derive_seed(cfg.seed, epoch, i, 2),
                                    vocab));
      }
      const auto batch = collate(batch_examples, plans, dag, vocab, cfg.max_len);
      const auto step_seed = derive_seed(cfg.seed, epoch, start, 3);
      NeighborTargets targets;
      if (ckpt.model.neighborhood_head) targets = sample_neighbor_targets(batch, dag, cfg.rho, step_seed);

      grads.visit([](const std::string&, auto& m) { m.setZero(); });
      const auto terms = loss_and_gradients(next.params, batch, targets, lambda, &grads);
      if (!std::isfinite(terms.total))
        throw DomainError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                          std::to_string(next.adam.step + 1));
      grads.visit([](const std::string& name, const auto& m) {
        if (!m.allFinite()) throw DomainError("non-finite gradient in block " + name);
      });
      double lr = cfg.lr;
      if (cfg.warmup_steps > 0)
        lr *= std::min(1.0, static_cast<double>(next.adam.step + 1) / static_cast<double>(cfg.warmup_steps));
      adam_step(next.params, grads, next.adam, lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
      if (hooks.on_step) hooks.on_step(next.adam.step, terms);

      sum_total += terms.total;
      sum_ex += terms.nbr;
      if (terms.mlm_positions > 0) {
        sum_im += terms.mlm;
        ++im_steps;
      }
      ++steps;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.loss_total = sum_total / static_cast<double>(steps);
    if (ckpt.model.neighborhood_head) m.loss_ex = sum_ex / static_cast<double>(steps);
    m.loss_im = im_steps ? sum_im / static_cast<double>(im_steps) : 0.0;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    next.epoch = epoch;
    ckpt = std::move(next);
    log.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m, ckpt);
  }
  return log;
}

}  // namespace gobert
