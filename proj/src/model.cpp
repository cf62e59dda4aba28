#include "gobert/model.hpp"

#include <bit>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "gobert/error.hpp"
#include "gobert/random.hpp"

namespace gobert {

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw DomainError("model config: " + msg); };
  if (hidden < 1 || layers < 0 || heads < 1 || ffn_dim < 1) fail("sizes must be positive");
  if (hidden % heads != 0) fail("hidden must be divisible by heads");
  if (vocab_size < 4) fail("vocab_size must cover the special tokens and at least one term");
  if (neighborhood_head && label_size < 1) fail("label_size must be positive");
  if (embed_dim < 0) fail("embed_dim must be >= 0");
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail("lambda must be in [0, 1]");
  if (!(neg_downsample > 0.0 && neg_downsample <= 1.0)) fail("neg_downsample must be in (0, 1]");
  if (!neighborhood_head && lambda != 0.0) fail("lambda must be 0 without the neighborhood head");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"hidden", c.hidden},
                     {"layers", c.layers},
                     {"heads", c.heads},
                     {"ffn_dim", c.ffn_dim},
                     {"vocab_size", c.vocab_size},
                     {"label_size", c.label_size},
                     {"embed_dim", c.embed_dim},
                     {"lambda", c.lambda},
                     {"neg_downsample", c.neg_downsample},
                     {"neighborhood_head", c.neighborhood_head},
                     {"layer_norm_eps", c.layer_norm_eps},
                     {"init_std", c.init_std}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("hidden", c.hidden);
  get("layers", c.layers);
  get("heads", c.heads);
  get("ffn_dim", c.ffn_dim);
  get("vocab_size", c.vocab_size);
  get("label_size", c.label_size);
  get("embed_dim", c.embed_dim);
  get("lambda", c.lambda);
  get("neg_downsample", c.neg_downsample);
  get("neighborhood_head", c.neighborhood_head);
  get("layer_norm_eps", c.layer_norm_eps);
  get("init_std", c.init_std);
}

// ---------------------------------------------------------------------------
// Parameters

template <typename Scalar>
std::size_t ModelParameters<Scalar>::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const auto& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <typename Scalar>
ModelParameters<Scalar> ModelParameters<Scalar>::zeros(const ModelConfig& c) {
  c.validate();
  ModelParameters p;
  p.config = c;
  const int d = c.hidden;
  p.embedding = Mat<Scalar>::Zero(c.vocab_size, c.token_dim());
  if (c.has_projection()) p.projection = Mat<Scalar>::Zero(c.token_dim(), d);
  p.layers.resize(static_cast<std::size_t>(c.layers));
  for (auto& L : p.layers) {
    L.wq = L.wk = L.wv = L.wo = Mat<Scalar>::Zero(d, d);
    L.ln1_gamma = L.ln1_beta = L.ln2_gamma = L.ln2_beta = RowVec<Scalar>::Zero(d);
    L.w1 = Mat<Scalar>::Zero(d, c.ffn_dim);
    L.b1 = RowVec<Scalar>::Zero(c.ffn_dim);
    L.w2 = Mat<Scalar>::Zero(c.ffn_dim, d);
    L.b2 = RowVec<Scalar>::Zero(d);
  }
  p.mlm_weight = Mat<Scalar>::Zero(d, c.vocab_size);
  p.mlm_bias = RowVec<Scalar>::Zero(c.vocab_size);
  if (c.neighborhood_head) {
    p.nbr_weight = Mat<Scalar>::Zero(d, c.label_size);
    p.nbr_bias = RowVec<Scalar>::Zero(c.label_size);
  }
  return p;
}

template <typename Scalar>
template <typename To>
ModelParameters<To> ModelParameters<Scalar>::cast() const {
  auto out = ModelParameters<To>::zeros(config);
  std::vector<const Mat<Scalar>*> src_m;
  std::vector<const RowVec<Scalar>*> src_v;
  visit([&](const std::string&, const auto& m) {
    if constexpr (std::is_same_v<std::decay_t<decltype(m)>, Mat<Scalar>>)
      src_m.push_back(&m);
    else
      src_v.push_back(&m);
  });
  std::size_t im = 0, iv = 0;
  out.visit([&](const std::string&, auto& m) {
    if constexpr (std::is_same_v<std::decay_t<decltype(m)>, Mat<To>>)
      m = src_m[im++]->template cast<To>();
    else
      m = src_v[iv++]->template cast<To>();
  });
  return out;
}

ModelParameters<float> init_parameters(const ModelConfig& config, const EmbeddingMatrix& embeddings,
                                       std::uint64_t seed) {
  auto p = ModelParameters<float>::zeros(config);
  if (embeddings.rows.rows() != config.vocab_size || embeddings.dim() != config.token_dim())
    throw DomainError("embedding matrix is " + std::to_string(embeddings.rows.rows()) + "x" +
                      std::to_string(embeddings.dim()) + ", model expects " + std::to_string(config.vocab_size) +
                      "x" + std::to_string(config.token_dim()));
  Rng rng(derive_seed(seed, 0x1417));
  auto normal_fill = [&](Mat<float>& m, double std) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<float>(rng.normal() * std);
  };
  p.embedding = embeddings.rows;
  if (config.has_projection()) normal_fill(p.projection, 1.0 / std::sqrt(static_cast<double>(config.token_dim())));
  for (auto& L : p.layers) {
    for (auto* m : {&L.wq, &L.wk, &L.wv, &L.wo, &L.w1, &L.w2}) normal_fill(*m, config.init_std);
    L.ln1_gamma.setOnes();
    L.ln2_gamma.setOnes();
  }
  normal_fill(p.mlm_weight, config.init_std);
  if (config.neighborhood_head) normal_fill(p.nbr_weight, config.init_std);
  return p;
}

// ---------------------------------------------------------------------------
// Building blocks

namespace {

template <typename Scalar>
void require_finite(const Mat<Scalar>& m, const char* what) {
  if (!m.allFinite()) throw DomainError(std::string("non-finite values in ") + what);
}

// Row-wise masked softmax of `scores`, in place.
template <typename Scalar>
void masked_softmax_rows(Mat<Scalar>& scores, std::span<const std::uint8_t> key_valid) {
  const auto n = scores.cols();
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index j = 0; j < n; ++j)
      if (key_valid[static_cast<std::size_t>(j)]) mx = std::max(mx, scores(i, j));
    Scalar sum = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const Scalar e = key_valid[static_cast<std::size_t>(j)] ? std::exp(scores(i, j) - mx) : Scalar(0);
      scores(i, j) = e;
      sum += e;
    }
    scores.row(i) /= sum;
  }
}

template <typename Scalar>
struct NormCache {
  Mat<Scalar> xhat;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rstd;
};

template <typename Scalar>
Mat<Scalar> layer_norm_cached(const Mat<Scalar>& x, const RowVec<Scalar>& gamma, const RowVec<Scalar>& beta,
                              double eps, NormCache<Scalar>& cache) {
  const Scalar inv_d = Scalar(1) / static_cast<Scalar>(x.cols());
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean = x.rowwise().sum() * inv_d;
  cache.xhat = x.colwise() - mean;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> var = cache.xhat.rowwise().squaredNorm() * inv_d;
  cache.rstd = (var.array() + static_cast<Scalar>(eps)).rsqrt();
  cache.xhat = cache.xhat.array().colwise() * cache.rstd.array();
  Mat<Scalar> out = cache.xhat.array().rowwise() * gamma.array();
  out.rowwise() += beta;
  return out;
}

template <typename Scalar>
Mat<Scalar> layer_norm_backward(const Mat<Scalar>& dout, const RowVec<Scalar>& gamma, const NormCache<Scalar>& c,
                                RowVec<Scalar>* dgamma, RowVec<Scalar>* dbeta) {
  if (dgamma) *dgamma += (dout.array() * c.xhat.array()).colwise().sum().matrix();
  if (dbeta) *dbeta += dout.colwise().sum();
  const Scalar inv_d = Scalar(1) / static_cast<Scalar>(dout.cols());
  Mat<Scalar> dxhat = dout.array().rowwise() * gamma.array();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean_dxhat = dxhat.rowwise().sum() * inv_d;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean_dxhat_xhat =
      (dxhat.array() * c.xhat.array()).rowwise().sum().matrix() * inv_d;
  Mat<Scalar> dx = dxhat;
  dx.colwise() -= mean_dxhat;
  dx -= (c.xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
  return dx.array().colwise() * c.rstd.array();
}

template <typename Scalar>
struct LayerCache {
  Mat<Scalar> x_in;
  Mat<Scalar> q, k, v;
  std::vector<Mat<Scalar>> probs;
  Mat<Scalar> ctx;
  NormCache<Scalar> ln1;
  Mat<Scalar> y;
  Mat<Scalar> f1;
  NormCache<Scalar> ln2;
};

template <typename Scalar>
struct EncoderCache {
  Mat<Scalar> x0;  // token rows before projection
  std::vector<LayerCache<Scalar>> layers;
  Mat<Scalar> out;
};

// Encodes one sequence of tokens. Only keys with key_valid != 0 are attended.
template <typename Scalar>
void encode(const ModelParameters<Scalar>& p, std::span<const TokenId> tokens, std::span<const std::uint8_t> key_valid,
            EncoderCache<Scalar>& cache) {
  const auto& c = p.config;
  const auto n = static_cast<Eigen::Index>(tokens.size());
  const int dk = c.head_dim();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dk));

  cache.x0.resize(n, c.token_dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto t = tokens[static_cast<std::size_t>(i)];
    if (t < 0 || t >= c.vocab_size) throw DomainError("token id " + std::to_string(t) + " outside vocabulary");
    cache.x0.row(i) = p.embedding.row(t);
  }
  Mat<Scalar> x = c.has_projection() ? Mat<Scalar>(cache.x0 * p.projection) : cache.x0;

  cache.layers.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    auto& lc = cache.layers[l];
    lc.x_in = x;
    lc.q.noalias() = x * L.wq;
    lc.k.noalias() = x * L.wk;
    lc.v.noalias() = x * L.wv;
    lc.ctx.resize(n, c.hidden);
    lc.probs.resize(static_cast<std::size_t>(c.heads));
    for (int h = 0; h < c.heads; ++h) {
      auto& P = lc.probs[static_cast<std::size_t>(h)];
      P.noalias() = lc.q.middleCols(h * dk, dk) * lc.k.middleCols(h * dk, dk).transpose();
      P *= scale;
      masked_softmax_rows(P, key_valid);
      lc.ctx.middleCols(h * dk, dk).noalias() = P * lc.v.middleCols(h * dk, dk);
    }
    Mat<Scalar> r1 = x;
    r1.noalias() += lc.ctx * L.wo;
    lc.y = layer_norm_cached(r1, L.ln1_gamma, L.ln1_beta, c.layer_norm_eps, lc.ln1);
    lc.f1.noalias() = lc.y * L.w1;
    lc.f1.rowwise() += L.b1;
    Mat<Scalar> r2 = lc.y;
    r2.noalias() += lc.f1.cwiseMax(Scalar(0)) * L.w2;
    r2.rowwise() += L.b2;
    x = layer_norm_cached(r2, L.ln2_gamma, L.ln2_beta, c.layer_norm_eps, lc.ln2);
  }
  cache.out = std::move(x);
}

// Accumulates parameter gradients given d(loss)/d(encoder output).
template <typename Scalar>
void encode_backward(const ModelParameters<Scalar>& p, std::span<const TokenId> tokens, const EncoderCache<Scalar>& cache,
                     Mat<Scalar> dx, ModelParameters<Scalar>& g) {
  const auto& c = p.config;
  const int dk = c.head_dim();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dk));

  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& L = p.layers[li];
    auto& G = g.layers[li];
    const auto& lc = cache.layers[li];

    // Second residual block: out = LN2(y + FFN(y)).
    Mat<Scalar> dr2 = layer_norm_backward(dx, L.ln2_gamma, lc.ln2, &G.ln2_gamma, &G.ln2_beta);
    const Mat<Scalar> hrelu = lc.f1.cwiseMax(Scalar(0));
    G.w2.noalias() += hrelu.transpose() * dr2;
    G.b2 += dr2.colwise().sum();
    Mat<Scalar> df1 = dr2 * L.w2.transpose();
    df1 = (lc.f1.array() > Scalar(0)).select(df1, Scalar(0));
    G.w1.noalias() += lc.y.transpose() * df1;
    G.b1 += df1.colwise().sum();
    Mat<Scalar> dy = dr2;
    dy.noalias() += df1 * L.w1.transpose();

    // First residual block: y = LN1(x + MHA(x)).
    Mat<Scalar> dr1 = layer_norm_backward(dy, L.ln1_gamma, lc.ln1, &G.ln1_gamma, &G.ln1_beta);
    G.wo.noalias() += lc.ctx.transpose() * dr1;
    const Mat<Scalar> dctx = dr1 * L.wo.transpose();
    Mat<Scalar> dq(lc.q.rows(), lc.q.cols()), dk_m(lc.k.rows(), lc.k.cols()), dv(lc.v.rows(), lc.v.cols());
    for (int h = 0; h < c.heads; ++h) {
      const auto& P = lc.probs[static_cast<std::size_t>(h)];
      const auto dch = dctx.middleCols(h * dk, dk);
      Mat<Scalar> dP = dch * lc.v.middleCols(h * dk, dk).transpose();
      dv.middleCols(h * dk, dk).noalias() = P.transpose() * dch;
      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rowdot = (dP.array() * P.array()).rowwise().sum();
      Mat<Scalar> dS = P.array() * (dP.array().colwise() - rowdot.array());
      dS *= scale;
      dq.middleCols(h * dk, dk).noalias() = dS * lc.k.middleCols(h * dk, dk);
      dk_m.middleCols(h * dk, dk).noalias() = dS.transpose() * lc.q.middleCols(h * dk, dk);
    }
    G.wq.noalias() += lc.x_in.transpose() * dq;
    G.wk.noalias() += lc.x_in.transpose() * dk_m;
    G.wv.noalias() += lc.x_in.transpose() * dv;
    dx = dr1;
    dx.noalias() += dq * L.wq.transpose();
    dx.noalias() += dk_m * L.wk.transpose();
    dx.noalias() += dv * L.wv.transpose();
  }

  Mat<Scalar> dx0;
  if (c.has_projection()) {
    g.projection.noalias() += cache.x0.transpose() * dx;
    dx0 = dx * p.projection.transpose();
  } else {
    dx0 = std::move(dx);
  }
  for (std::size_t i = 0; i < tokens.size(); ++i)
    g.embedding.row(tokens[i]) += dx0.row(static_cast<Eigen::Index>(i));
}

template <typename Scalar>
Scalar softplus(Scalar z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  return z >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-z)) : std::exp(z) / (Scalar(1) + std::exp(z));
}

}  // namespace

template <typename Scalar>
Mat<Scalar> attention(const Mat<Scalar>& q, const Mat<Scalar>& k, const Mat<Scalar>& v,
                      std::span<const std::uint8_t> key_valid) {
  if (q.cols() != k.cols() || k.rows() != v.rows() || static_cast<Eigen::Index>(key_valid.size()) != k.rows())
    throw DomainError("attention: shape mismatch");
  require_finite(q, "attention query");
  require_finite(k, "attention key");
  require_finite(v, "attention value");
  if (std::none_of(key_valid.begin(), key_valid.end(), [](std::uint8_t b) { return b != 0; }))
    throw DomainError("attention: every key is masked");
  Mat<Scalar> scores = q * k.transpose();
  scores /= std::sqrt(static_cast<Scalar>(q.cols()));
  masked_softmax_rows(scores, key_valid);
  return scores * v;
}

template <typename Scalar>
Mat<Scalar> layer_norm(const Mat<Scalar>& x, const RowVec<Scalar>& gamma, const RowVec<Scalar>& beta, double eps) {
  NormCache<Scalar> cache;
  return layer_norm_cached(x, gamma, beta, eps, cache);
}

template <typename Scalar>
ForwardOutput<Scalar> forward(const ModelParameters<Scalar>& params, const MaskedBatch& batch) {
  params.config.validate();
  ForwardOutput<Scalar> out;
  const auto B = batch.batch_size(), S = batch.seq_len();
  std::vector<TokenId> tokens(static_cast<std::size_t>(S));
  std::vector<std::uint8_t> valid(static_cast<std::size_t>(S));
  EncoderCache<Scalar> cache;
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index s = 0; s < S; ++s) {
      tokens[static_cast<std::size_t>(s)] = batch.input_ids(b, s);
      valid[static_cast<std::size_t>(s)] = batch.attention_mask(b, s);
    }
    encode(params, tokens, valid, cache);
    Mat<Scalar> mlm = cache.out * params.mlm_weight;
    mlm.rowwise() += params.mlm_bias;
    out.mlm_logits.push_back(std::move(mlm));
    if (params.config.neighborhood_head) {
      Mat<Scalar> nbr = cache.out * params.nbr_weight;
      nbr.rowwise() += params.nbr_bias;
      out.neighbor_logits.push_back(std::move(nbr));
    }
    out.hidden_states.push_back(std::move(cache.out));
  }
  return out;
}

NeighborTargets sample_neighbor_targets(const MaskedBatch& batch, const GoDag& dag, double rho, std::uint64_t seed) {
  if (!(rho > 0.0 && rho <= 1.0)) throw DomainError("neg_downsample must be in (0, 1]");
  NeighborTargets out;
  const int L = dag.label_count();
  Rng rng(derive_seed(seed, 0x6e62));
  const double log_keep_fail = rho < 1.0 ? std::log1p(-rho) : 0.0;
  for (Eigen::Index b = 0; b < batch.batch_size(); ++b) {
    for (Eigen::Index s = 0; s < batch.seq_len(); ++s) {
      if (!batch.valid(b, s)) continue;
      const auto tok = batch.original_ids(b, s);
      if (Vocabulary::is_special(tok)) continue;
      const auto label = Vocabulary::label_of_token(tok);
      const auto positives = dag.neighbor_labels(label);
      NeighborTargets::Position pos{b, s, {}};
      for (auto j : positives) pos.entries.push_back({j, 1});
      // Negatives: walk the label range with geometric gaps between kept
      // indices, skipping positives.
      auto keep_neg = [&](int j) {
        if (!std::binary_search(positives.begin(), positives.end(), j)) pos.entries.push_back({j, 0});
      };
      if (rho >= 1.0) {
        for (int j = 0; j < L; ++j) keep_neg(j);
      } else {
        double j = -1;
        while (true) {
          double u;
          do {
            u = rng.uniform();
          } while (u <= 0.0);
          j += 1.0 + std::floor(std::log(u) / log_keep_fail);
          if (j >= L) break;
          keep_neg(static_cast<int>(j));
        }
      }
      std::sort(pos.entries.begin(), pos.entries.end(), [](const auto& a, const auto& b2) { return a.label < b2.label; });
      if (!pos.entries.empty()) out.positions.push_back(std::move(pos));
    }
  }
  return out;
}

template <typename Scalar>
Scalar mlm_loss(const ForwardOutput<Scalar>& out, const TokenMatrix& labels) {
  Scalar sum = 0;
  std::size_t count = 0;
  for (Eigen::Index b = 0; b < labels.rows(); ++b) {
    const auto& logits = out.mlm_logits[static_cast<std::size_t>(b)];
    for (Eigen::Index s = 0; s < labels.cols(); ++s) {
      const auto y = labels(b, s);
      if (y == MaskedBatch::kIgnore) continue;
      const Scalar mx = logits.row(s).maxCoeff();
      const Scalar lse = mx + std::log((logits.row(s).array() - mx).exp().sum());
      sum += lse - logits(s, y);
      ++count;
    }
  }
  if (count == 0) throw DomainError("mlm_loss: no labeled positions");
  return sum / static_cast<Scalar>(count);
}

template <typename Scalar>
Scalar neighborhood_loss(const ForwardOutput<Scalar>& out, const NeighborTargets& targets) {
  if (out.neighbor_logits.empty()) throw DomainError("neighborhood_loss: model has no neighborhood head");
  Scalar sum = 0;
  for (const auto& pos : targets.positions) {
    const auto& logits = out.neighbor_logits[static_cast<std::size_t>(pos.batch)];
    Scalar row = 0;
    for (const auto& e : pos.entries) {
      const Scalar z = logits(pos.pos, e.label);
      row += softplus(z) - (e.target ? z : Scalar(0));
    }
    sum += row / static_cast<Scalar>(pos.entries.size());
  }
  return targets.positions.empty() ? Scalar(0) : sum / static_cast<Scalar>(targets.positions.size());
}

template <typename Scalar>
LossTerms<Scalar> loss_and_gradients(const ModelParameters<Scalar>& p, const MaskedBatch& batch,
                                     const NeighborTargets& targets, double lambda, ModelParameters<Scalar>* grads) {
  const auto& c = p.config;
  c.validate();
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw DomainError("lambda must be in [0, 1]");
  const bool use_nbr = c.neighborhood_head && lambda > 0.0;
  const Scalar w_nbr = static_cast<Scalar>(lambda);
  const Scalar w_mlm = static_cast<Scalar>(1.0 - lambda);

  LossTerms<Scalar> terms;
  const auto B = batch.batch_size(), S = batch.seq_len();
  for (Eigen::Index b = 0; b < B; ++b)
    for (Eigen::Index s = 0; s < S; ++s)
      if (batch.labels(b, s) != MaskedBatch::kIgnore) ++terms.mlm_positions;
  if (c.neighborhood_head) terms.nbr_positions = targets.positions.size();

  // Neighborhood targets grouped by example.
  std::vector<std::vector<const NeighborTargets::Position*>> nbr_by_example(static_cast<std::size_t>(B));
  if (c.neighborhood_head)
    for (const auto& pos : targets.positions) nbr_by_example[static_cast<std::size_t>(pos.batch)].push_back(&pos);

  std::vector<TokenId> tokens;
  std::vector<Eigen::Index> where(static_cast<std::size_t>(S));
  EncoderCache<Scalar> cache;
  for (Eigen::Index b = 0; b < B; ++b) {
    // Compact to real tokens; PAD rows cannot affect them.
    tokens.clear();
    for (Eigen::Index s = 0; s < S; ++s) {
      where[static_cast<std::size_t>(s)] = -1;
      if (!batch.valid(b, s)) continue;
      where[static_cast<std::size_t>(s)] = static_cast<Eigen::Index>(tokens.size());
      tokens.push_back(batch.input_ids(b, s));
    }
    if (tokens.empty()) continue;
    const std::vector<std::uint8_t> valid(tokens.size(), 1);
    encode(p, tokens, valid, cache);
    const auto& h = cache.out;
    Mat<Scalar> dh;
    if (grads) dh = Mat<Scalar>::Zero(h.rows(), h.cols());

    for (Eigen::Index s = 0; s < S; ++s) {
      const auto y = batch.labels(b, s);
      if (y == MaskedBatch::kIgnore) continue;
      const auto r = where[static_cast<std::size_t>(s)];
      RowVec<Scalar> logits = h.row(r) * p.mlm_weight + p.mlm_bias;
      const Scalar mx = logits.maxCoeff();
      RowVec<Scalar> e = (logits.array() - mx).exp();
      const Scalar z = e.sum();
      terms.mlm += mx + std::log(z) - logits(y);
      if (grads && w_mlm != Scalar(0)) {
        RowVec<Scalar> dlog = e / z;
        dlog(y) -= Scalar(1);
        dlog *= w_mlm / static_cast<Scalar>(terms.mlm_positions);
        grads->mlm_weight.noalias() += h.row(r).transpose() * dlog;
        grads->mlm_bias += dlog;
        dh.row(r).noalias() += dlog * p.mlm_weight.transpose();
      }
    }

    if (c.neighborhood_head) {
      for (const auto* pos : nbr_by_example[static_cast<std::size_t>(b)]) {
        const auto r = where[static_cast<std::size_t>(pos->pos)];
        const Scalar inv_n = Scalar(1) / static_cast<Scalar>(pos->entries.size());
        const Scalar coef = w_nbr * inv_n / static_cast<Scalar>(terms.nbr_positions);
        Scalar row_loss = 0;
        for (const auto& ent : pos->entries) {
          const Scalar zval = h.row(r).dot(p.nbr_weight.col(ent.label)) + p.nbr_bias(ent.label);
          row_loss += softplus(zval) - (ent.target ? zval : Scalar(0));
          if (grads && use_nbr) {
            const Scalar dz = (sigmoid(zval) - Scalar(ent.target)) * coef;
            grads->nbr_weight.col(ent.label) += dz * h.row(r).transpose();
            grads->nbr_bias(ent.label) += dz;
            dh.row(r) += dz * p.nbr_weight.col(ent.label).transpose();
          }
        }
        terms.nbr += row_loss * inv_n;
      }
    }

    if (grads) encode_backward(p, tokens, cache, std::move(dh), *grads);
  }

  if (terms.mlm_positions > 0) terms.mlm /= static_cast<Scalar>(terms.mlm_positions);
  if (terms.nbr_positions > 0) terms.nbr /= static_cast<Scalar>(terms.nbr_positions);
  terms.total = w_nbr * terms.nbr + w_mlm * terms.mlm;
  return terms;
}

template <typename Scalar>
ModelParameters<Scalar> gradients(const ModelParameters<Scalar>& params, const MaskedBatch& batch, const GoDag& dag,
                                  double lambda, double rho, std::uint64_t seed, LossTerms<Scalar>* loss) {
  auto g = ModelParameters<Scalar>::zeros(params.config);
  NeighborTargets targets;
  if (params.config.neighborhood_head) targets = sample_neighbor_targets(batch, dag, rho, seed);
  const auto terms = loss_and_gradients(params, batch, targets, lambda, &g);
  if (terms.mlm_positions == 0 && lambda < 1.0) throw DomainError("gradients: batch has no masked positions");
  g.visit([](const std::string& name, const auto& m) {
    if (!m.allFinite()) throw DomainError("non-finite gradient in block " + name);
  });
  if (loss) *loss = terms;
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoint blocks

namespace {

constexpr char kCheckpointMagic[] = "GOBERT1";
constexpr std::size_t kCheckpointMagicLen = 7;

template <typename U>
void put_u(std::ostream& out, U v) {
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, sizeof(U));
}

template <typename U>
U get_u(std::istream& in) {
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) throw ParseError("truncated checkpoint", 0);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_checkpoint_blocks(std::ostream& out, const nlohmann::json& header, const std::vector<NamedBlock>& blocks) {
  out.write(kCheckpointMagic, kCheckpointMagicLen);
  const auto text = header.dump();
  put_u<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_u<std::uint32_t>(out, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& blk : blocks) {
    put_u<std::uint16_t>(out, static_cast<std::uint16_t>(blk.name.size()));
    out.write(blk.name.data(), static_cast<std::streamsize>(blk.name.size()));
    put_u<std::uint32_t>(out, static_cast<std::uint32_t>(blk.value.rows()));
    put_u<std::uint32_t>(out, static_cast<std::uint32_t>(blk.value.cols()));
    for (Eigen::Index i = 0; i < blk.value.rows(); ++i)
      for (Eigen::Index j = 0; j < blk.value.cols(); ++j) put_u<std::uint32_t>(out, std::bit_cast<std::uint32_t>(blk.value(i, j)));
  }
}

std::pair<nlohmann::json, std::vector<NamedBlock>> read_checkpoint_blocks(std::istream& in) {
  char magic[kCheckpointMagicLen];
  if (!in.read(magic, kCheckpointMagicLen) || std::string_view(magic, kCheckpointMagicLen) != kCheckpointMagic)
    throw ParseError("not a GOBERT1 checkpoint", 0);
  const auto len = get_u<std::uint64_t>(in);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw ParseError("truncated checkpoint header", 0);
  auto header = nlohmann::json::parse(text);
  const auto count = get_u<std::uint32_t>(in);
  std::vector<NamedBlock> blocks;
  blocks.reserve(count);
  for (std::uint32_t b = 0; b < count; ++b) {
    NamedBlock blk;
    blk.name.resize(get_u<std::uint16_t>(in));
    if (!in.read(blk.name.data(), static_cast<std::streamsize>(blk.name.size())))
      throw ParseError("truncated checkpoint block", 0);
    const auto rows = get_u<std::uint32_t>(in), cols = get_u<std::uint32_t>(in);
    blk.value.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) blk.value(i, j) = std::bit_cast<float>(get_u<std::uint32_t>(in));
    blocks.push_back(std::move(blk));
  }
  return {std::move(header), std::move(blocks)};
}

std::vector<NamedBlock> to_blocks(const ModelParameters<float>& params, const std::string& prefix) {
  std::vector<NamedBlock> out;
  params.visit([&](const std::string& name, const auto& m) { out.push_back({prefix + name, Eigen::MatrixXf(m)}); });
  return out;
}

void from_blocks(ModelParameters<float>& params, const std::vector<NamedBlock>& blocks, const std::string& prefix) {
  std::unordered_map<std::string, const Eigen::MatrixXf*> by_name;
  for (const auto& b : blocks) by_name[b.name] = &b.value;
  params.visit([&](const std::string& name, auto& m) {
    auto it = by_name.find(prefix + name);
    if (it == by_name.end()) throw ParseError("checkpoint is missing block " + prefix + name, 0);
    if (it->second->rows() != m.rows() || it->second->cols() != m.cols())
      throw ParseError("checkpoint block " + prefix + name + " has the wrong shape", 0);
    m = *it->second;
  });
}

// ---------------------------------------------------------------------------
// Instantiations

template struct ModelParameters<float>;
template struct ModelParameters<double>;
template ModelParameters<double> ModelParameters<float>::cast<double>() const;
template ModelParameters<float> ModelParameters<double>::cast<float>() const;
template ModelParameters<float> ModelParameters<float>::cast<float>() const;
template ModelParameters<double> ModelParameters<double>::cast<double>() const;

#define GOBERT_INSTANTIATE(S)                                                                                    \
  template Mat<S> attention<S>(const Mat<S>&, const Mat<S>&, const Mat<S>&, std::span<const std::uint8_t>);      \
  template Mat<S> layer_norm<S>(const Mat<S>&, const RowVec<S>&, const RowVec<S>&, double);                      \
  template ForwardOutput<S> forward<S>(const ModelParameters<S>&, const MaskedBatch&);                           \
  template S mlm_loss<S>(const ForwardOutput<S>&, const TokenMatrix&);                                            \
  template S neighborhood_loss<S>(const ForwardOutput<S>&, const NeighborTargets&);                              \
  template LossTerms<S> loss_and_gradients<S>(const ModelParameters<S>&, const MaskedBatch&, const NeighborTargets&, \
                                              double, ModelParameters<S>*);                                      \
  template ModelParameters<S> gradients<S>(const ModelParameters<S>&, const MaskedBatch&, const GoDag&, double,    \
                                           double, std::uint64_t, LossTerms<S>*);

GOBERT_INSTANTIATE(float)
GOBERT_INSTANTIATE(double)

#undef GOBERT_INSTANTIATE

}  // namespace gobert
