#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "gobert/embedding.hpp"
#include "gobert/masking.hpp"
#include "gobert/ontology.hpp"
#include "json.hpp"

namespace gobert {

struct ModelConfig {
  int hidden = 256;
  int layers = 4;
  int heads = 4;
  int ffn_dim = 1024;
  int vocab_size = 0;
  int label_size = 0;
  // Width of the initial token table. 0 means "same as hidden"; any other
  // value adds a learned [embed_dim x hidden] projection.
  int embed_dim = 0;
  double lambda = 0.5;
  double neg_downsample = 0.001;
  bool neighborhood_head = true;
  double layer_norm_eps = 1e-6;
  double init_std = 0.02;

  int head_dim() const { return hidden / heads; }
  int token_dim() const { return embed_dim > 0 ? embed_dim : hidden; }
  bool has_projection() const { return embed_dim > 0 && embed_dim != hidden; }
  void validate() const;  // throws DomainError
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

// Weights act on row vectors: a token is a row, y = x W + b. Query, key
// and value maps are [hidden x hidden]; head h owns columns
// [h*d_k, (h+1)*d_k).
template <typename Scalar>
struct LayerParameters {
  Mat<Scalar> wq, wk, wv, wo;
  RowVec<Scalar> ln1_gamma, ln1_beta;
  Mat<Scalar> w1;
  RowVec<Scalar> b1;
  Mat<Scalar> w2;
  RowVec<Scalar> b2;
  RowVec<Scalar> ln2_gamma, ln2_beta;
};

template <typename Scalar>
struct ModelParameters {
  ModelConfig config;
  Mat<Scalar> embedding;   // [vocab x token_dim]
  Mat<Scalar> projection;  // [token_dim x hidden], empty without projection
  std::vector<LayerParameters<Scalar>> layers;
  Mat<Scalar> mlm_weight;  // [hidden x vocab]
  RowVec<Scalar> mlm_bias;
  Mat<Scalar> nbr_weight;  // [hidden x L], empty when the head is removed
  RowVec<Scalar> nbr_bias;

  // Calls f(name, block) for every parameter block in a fixed order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, std::forward<F>(f));
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, std::forward<F>(f));
  }

  std::size_t parameter_count() const;
  static ModelParameters zeros(const ModelConfig& config);

  template <typename To>
  ModelParameters<To> cast() const;

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& p, F&& f) {
    f("embedding", p.embedding);
    if (p.config.has_projection()) f("projection", p.projection);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      auto& L = p.layers[l];
      const std::string pre = "layer" + std::to_string(l) + ".";
      f(pre + "wq", L.wq);
      f(pre + "wk", L.wk);
      f(pre + "wv", L.wv);
      f(pre + "wo", L.wo);
      f(pre + "ln1_gamma", L.ln1_gamma);
      f(pre + "ln1_beta", L.ln1_beta);
      f(pre + "w1", L.w1);
      f(pre + "b1", L.b1);
      f(pre + "w2", L.w2);
      f(pre + "b2", L.b2);
      f(pre + "ln2_gamma", L.ln2_gamma);
      f(pre + "ln2_beta", L.ln2_beta);
    }
    f("mlm_weight", p.mlm_weight);
    f("mlm_bias", p.mlm_bias);
    if (p.config.neighborhood_head) {
      f("nbr_weight", p.nbr_weight);
      f("nbr_bias", p.nbr_bias);
    }
  }
};

// Random initialization; the token table is copied from `embeddings`
// (rows in vocabulary order, width token_dim).
ModelParameters<float> init_parameters(const ModelConfig& config, const EmbeddingMatrix& embeddings,
                                       std::uint64_t seed);

// softmax(Q K^T / sqrt(d_k) + bias) V with bias = -inf on keys whose
// `key_valid` entry is 0. Q, K: [n x d_k], V: [n x d_v].
template <typename Scalar>
Mat<Scalar> attention(const Mat<Scalar>& q, const Mat<Scalar>& k, const Mat<Scalar>& v,
                      std::span<const std::uint8_t> key_valid);

// Row-wise normalization to zero mean and unit variance, then gamma/beta.
template <typename Scalar>
Mat<Scalar> layer_norm(const Mat<Scalar>& x, const RowVec<Scalar>& gamma, const RowVec<Scalar>& beta,
                       double eps);

template <typename Scalar>
struct ForwardOutput {
  std::vector<Mat<Scalar>> hidden_states;    // per example [S x hidden]
  std::vector<Mat<Scalar>> mlm_logits;       // per example [S x vocab]
  std::vector<Mat<Scalar>> neighbor_logits;  // per example [S x L]; empty without the head
};

// Full forward pass over every position, PAD rows included. PAD keys are
// masked out of attention so they never influence real tokens.
template <typename Scalar>
ForwardOutput<Scalar> forward(const ModelParameters<Scalar>& params, const MaskedBatch& batch);

// Sampled neighborhood targets: for each real position, every positive
// label plus negatives kept with probability rho.
struct NeighborTargets {
  struct Entry {
    int label;
    std::uint8_t target;
  };
  struct Position {
    Eigen::Index batch;
    Eigen::Index pos;
    std::vector<Entry> entries;
  };
  std::vector<Position> positions;
};

NeighborTargets sample_neighbor_targets(const MaskedBatch& batch, const GoDag& dag, double rho, std::uint64_t seed);

template <typename Scalar>
Scalar mlm_loss(const ForwardOutput<Scalar>& out, const TokenMatrix& labels);

template <typename Scalar>
Scalar neighborhood_loss(const ForwardOutput<Scalar>& out, const NeighborTargets& targets);

template <typename Scalar>
Scalar neighborhood_loss(const ForwardOutput<Scalar>& out, const GoDag& dag, const MaskedBatch& batch, double rho,
                         std::uint64_t seed) {
  return neighborhood_loss(out, sample_neighbor_targets(batch, dag, rho, seed));
}

inline double total_loss(double mlm, double nbr, double lambda) { return lambda * nbr + (1.0 - lambda) * mlm; }

template <typename Scalar>
struct LossTerms {
  Scalar total = 0;
  Scalar mlm = 0;  // L_Im; 0 when no position is labeled
  Scalar nbr = 0;  // L_Ex; 0 when the head is absent or nothing sampled
  std::size_t mlm_positions = 0;
  std::size_t nbr_positions = 0;
};

// Joint loss and, when `grads` is non-null, its exact gradient accumulated
// into `grads` (which must have the parameters' shapes). Only the rows
// needed by the losses are evaluated.
template <typename Scalar>
LossTerms<Scalar> loss_and_gradients(const ModelParameters<Scalar>& params, const MaskedBatch& batch,
                                     const NeighborTargets& targets, double lambda, ModelParameters<Scalar>* grads);

// Gradient of the joint loss. Throws DomainError naming the first block
// with a non-finite entry.
template <typename Scalar>
ModelParameters<Scalar> gradients(const ModelParameters<Scalar>& params, const MaskedBatch& batch, const GoDag& dag,
                                  double lambda, double rho, std::uint64_t seed, LossTerms<Scalar>* loss = nullptr);

// Checkpoint container: magic "GOBERT1", u64 header length, JSON header,
// u32 block count, then per block u16 name length, name, u32 rows,
// u32 cols and row-major little-endian float32 values.
struct NamedBlock {
  std::string name;
  Eigen::MatrixXf value;
};

void write_checkpoint_blocks(std::ostream& out, const nlohmann::json& header, const std::vector<NamedBlock>& blocks);
std::pair<nlohmann::json, std::vector<NamedBlock>> read_checkpoint_blocks(std::istream& in);

std::vector<NamedBlock> to_blocks(const ModelParameters<float>& params, const std::string& prefix = "");
// Fills every block of `params` (already shaped) from `blocks` by name.
void from_blocks(ModelParameters<float>& params, const std::vector<NamedBlock>& blocks,
                 const std::string& prefix = "");

extern template struct ModelParameters<float>;
extern template struct ModelParameters<double>;

}  // namespace gobert
