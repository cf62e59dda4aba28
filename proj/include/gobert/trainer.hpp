#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gobert/corpus.hpp"
#include "gobert/embedding.hpp"
#include "gobert/masking.hpp"
#include "gobert/model.hpp"
#include "json.hpp"

namespace gobert {

enum class Ablation { none, no_neighborhood, no_semantics, naive_masking };

std::string_view to_string(Ablation a);
Ablation ablation_from_string(std::string_view s);

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int warmup_steps = 0;  // linear warmup; 0 disables
  std::uint64_t seed = 0;
  double lambda = 0.5;
  double alpha_mask = 0.15;
  double rho = 0.001;
  std::size_t max_len = 64;
  Ablation ablation = Ablation::none;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

template <typename Scalar>
struct AdamState {
  ModelParameters<Scalar> m, v;
  std::int64_t step = 0;

  static AdamState zeros(const ModelConfig& config) {
    return {ModelParameters<Scalar>::zeros(config), ModelParameters<Scalar>::zeros(config), 0};
  }
};

// Bias-corrected Adam: m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
// p <- p - lr * m_hat / (sqrt(v_hat) + eps).
template <typename Scalar>
void adam_step(ModelParameters<Scalar>& params, const ModelParameters<Scalar>& grads, AdamState<Scalar>& state,
               double lr, double beta1, double beta2, double eps) {
  ++state.step;
  const Scalar b1 = static_cast<Scalar>(beta1), b2 = static_cast<Scalar>(beta2);
  const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(beta1, static_cast<double>(state.step)));
  const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(beta2, static_cast<double>(state.step)));
  const Scalar step = static_cast<Scalar>(lr);
  const Scalar e = static_cast<Scalar>(eps);

  std::vector<std::pair<Scalar*, Eigen::Index>> p_blocks, g_blocks, m_blocks, v_blocks;
  auto collect = [](auto& list) {
    return [&list](const std::string&, auto& m) { list.emplace_back(const_cast<Scalar*>(m.data()), m.size()); };
  };
  params.visit(collect(p_blocks));
  grads.visit(collect(g_blocks));
  state.m.visit(collect(m_blocks));
  state.v.visit(collect(v_blocks));
  for (std::size_t b = 0; b < p_blocks.size(); ++b) {
    const auto n = p_blocks[b].second;
    Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> p(p_blocks[b].first, n), m(m_blocks[b].first, n),
        v(v_blocks[b].first, n);
    Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> g(g_blocks[b].first, n);
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    p -= step * (m / c1) / ((v / c2).sqrt() + e);
  }
}

struct EpochMetrics {
  int epoch = 0;
  double loss_total = 0;
  std::optional<double> loss_ex;  // absent without the neighborhood head
  double loss_im = 0;
  double seconds = 0;
};

std::string metrics_jsonl_line(const EpochMetrics& m, bool include_seconds = true);

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  ModelParameters<float> params;
  AdamState<float> adam;
  int epoch = 0;  // epochs completed
  nlohmann::json extra = nlohmann::json::object();  // caller metadata (e.g. ontology path)
};

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::string& path);

// Applies the ablation to a model config: no_neighborhood drops the head
// and forces lambda = 0; other ablations leave the model untouched.
ModelConfig apply_ablation(ModelConfig model, const TrainConfig& train);

// Initial checkpoint (epoch 0): parameters initialized from `embeddings`
// (replaced by text-free random vectors for no_semantics).
Checkpoint initial_checkpoint(const ModelConfig& model, const TrainConfig& train, const EmbeddingMatrix& embeddings);

struct TrainHooks {
  // Called after each epoch with the metrics and the checkpoint state.
  std::function<void(const EpochMetrics&, const Checkpoint&)> on_epoch;
  // Called after each optimizer step with the step's loss terms.
  std::function<void(std::int64_t step, const LossTerms<float>&)> on_step;
};

// Runs epochs (ckpt.epoch, train.epochs] on `examples`, updating `ckpt`
// in place. Deterministic for a fixed seed. Throws DomainError on a
// non-finite loss, leaving `ckpt` at the last completed epoch.
std::vector<EpochMetrics> train(Checkpoint& ckpt, const std::vector<GeneExample>& examples, const GoDag& dag,
                                const TrainHooks& hooks = {});

}  // namespace gobert
