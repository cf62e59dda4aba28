#include "gobert/embedding.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "gobert/corpus.hpp"
#include "gobert/error.hpp"
#include "gobert/random.hpp"

namespace gobert {

namespace {

constexpr char kMagic[] = "GOEMB1";
constexpr std::size_t kMagicLen = 6;

template <typename T>
void put_le(std::ostream& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  const auto bits = std::bit_cast<U>(value);
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(buf, sizeof(U));
}

template <typename T>
T get_le(std::istream& in) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) throw ParseError("truncated embedding file", 0);
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(buf[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

EmbeddingMatrix with_specials(const Vocabulary& vocab, int dim, std::uint64_t seed) {
  EmbeddingMatrix m;
  m.rows = Eigen::MatrixXf::Zero(vocab.size(), dim);
  m.rows.row(Vocabulary::kMask) = fallback_embedding("[MASK]", dim, seed).transpose();
  m.rows.row(Vocabulary::kUnk) = fallback_embedding("[UNK]", dim, seed).transpose();
  return m;
}

std::unordered_map<std::string, std::vector<float>> read_rows(std::istream& in, int dim) {
  std::unordered_map<std::string, std::vector<float>> rows;
  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  const bool binary = in.gcount() == static_cast<std::streamsize>(kMagicLen) &&
                      std::memcmp(magic, kMagic, kMagicLen) == 0;
  if (binary) {
    const auto file_dim = get_le<std::uint32_t>(in);
    if (static_cast<int>(file_dim) != dim)
      throw DomainError("embedding dimension mismatch: file has " + std::to_string(file_dim) +
                        ", expected " + std::to_string(dim));
    const auto count = get_le<std::uint64_t>(in);
    for (std::uint64_t r = 0; r < count; ++r) {
      const auto len = get_le<std::uint16_t>(in);
      std::string id(len, '\0');
      if (!in.read(id.data(), len)) throw ParseError("truncated embedding file", 0);
      std::vector<float> v(static_cast<std::size_t>(dim));
      for (auto& x : v) {
        x = get_le<float>(in);
        if (!std::isfinite(x)) throw DomainError("non-finite embedding value for " + id);
      }
      rows[id] = std::move(v);
    }
    return rows;
  }

  in.clear();
  in.seekg(0);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("expected 'term<TAB>values'", line_no);
    std::vector<float> v;
    std::istringstream values(line.substr(tab + 1));
    std::string tok;
    while (std::getline(values, tok, ',')) {
      char* end = nullptr;
      const float x = std::strtof(tok.c_str(), &end);
      if (end == tok.c_str()) throw ParseError("bad number '" + tok + "'", line_no);
      if (!std::isfinite(x)) throw DomainError("non-finite embedding value on line " + std::to_string(line_no));
      v.push_back(x);
    }
    if (static_cast<int>(v.size()) != dim)
      throw DomainError("embedding dimension mismatch on line " + std::to_string(line_no) + ": got " +
                        std::to_string(v.size()) + ", expected " + std::to_string(dim));
    rows[line.substr(0, tab)] = std::move(v);
  }
  return rows;
}

}  // namespace

TermText render_term_text(const GoTerm& term) {
  std::string text;
  text += "id: " + term.id.str();
  text += "; name: " + term.name;
  text += "; namespace: ";
  if (term.ns) text += to_string(*term.ns);
  text += "; definition: " + term.definition;
  return {term.id, std::move(text)};
}

Eigen::VectorXf fallback_embedding(std::string_view text, int dim, std::uint64_t seed) {
  if (dim < 1) throw DomainError("embedding dimension must be >= 1");
  Rng rng(fnv1a64(text) ^ splitmix64(seed));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  Eigen::VectorXf v(dim);
  for (int i = 0; i < dim; ++i) v[i] = static_cast<float>(rng.normal() * scale);
  return v;
}

EmbeddingMatrix fallback_embeddings(const Vocabulary& vocab, const GoDag& dag, int dim, std::uint64_t seed) {
  auto m = with_specials(vocab, dim, seed);
  for (TermIndex l = 0; l < vocab.label_count(); ++l) {
    const auto text = render_term_text(dag.term(dag.term_of_label(l)));
    m.rows.row(Vocabulary::token_of_label(l)) = fallback_embedding(text.text, dim, seed).transpose();
  }
  m.source = EmbeddingSource::fallback;
  m.fallback_fills = static_cast<std::size_t>(vocab.label_count());
  return m;
}

EmbeddingMatrix load_embeddings(std::istream& in, const Vocabulary& vocab, const GoDag& dag, int dim,
                                std::uint64_t seed) {
  const auto rows = read_rows(in, dim);
  auto m = with_specials(vocab, dim, seed);
  m.source = EmbeddingSource::file;
  for (TermIndex l = 0; l < vocab.label_count(); ++l) {
    const auto& term = dag.term(dag.term_of_label(l));
    auto it = rows.find(term.id.str());
    auto row = m.rows.row(Vocabulary::token_of_label(l));
    if (it != rows.end()) {
      row = Eigen::Map<const Eigen::RowVectorXf>(it->second.data(), dim);
    } else {
      row = fallback_embedding(render_term_text(term).text, dim, seed).transpose();
      ++m.fallback_fills;
    }
  }
  return m;
}

EmbeddingMatrix load_embeddings(const std::string& path, const Vocabulary& vocab, const GoDag& dag, int dim,
                                std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot open " + path);
  return load_embeddings(in, vocab, dag, dim, seed);
}

int detect_embedding_dim(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot open " + path);
  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (in.gcount() == static_cast<std::streamsize>(kMagicLen) && std::memcmp(magic, kMagic, kMagicLen) == 0)
    return static_cast<int>(get_le<std::uint32_t>(in));
  in.clear();
  in.seekg(0);
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    return static_cast<int>(std::count(line.begin() + static_cast<std::ptrdiff_t>(tab), line.end(), ',')) + 1;
  }
  throw ParseError("no embedding rows in " + path, 0);
}

void save_embeddings(std::ostream& out, const EmbeddingMatrix& matrix, const GoDag& dag) {
  const Vocabulary vocab(dag);
  if (matrix.rows.rows() != vocab.size()) throw DomainError("embedding matrix does not match vocabulary");
  out.write(kMagic, kMagicLen);
  put_le(out, static_cast<std::uint32_t>(matrix.dim()));
  put_le(out, static_cast<std::uint64_t>(vocab.label_count()));
  for (TermIndex l = 0; l < vocab.label_count(); ++l) {
    const auto& id = dag.term(dag.term_of_label(l)).id.str();
    put_le(out, static_cast<std::uint16_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    for (int c = 0; c < matrix.dim(); ++c) put_le(out, matrix.rows(Vocabulary::token_of_label(l), c));
  }
}

EmbeddingMatrix randomized_embeddings(const EmbeddingMatrix& like, std::uint64_t seed) {
  EmbeddingMatrix m = like;
  Rng rng(derive_seed(seed, 0x5eed));
  const double scale = 1.0 / std::sqrt(static_cast<double>(like.dim()));
  for (Eigen::Index r = 0; r < m.rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.rows.cols(); ++c)
      m.rows(r, c) = r == Vocabulary::kPad ? 0.0f : static_cast<float>(rng.normal() * scale);
  }
  m.source = EmbeddingSource::fallback;
  return m;
}

}  // namespace gobert
