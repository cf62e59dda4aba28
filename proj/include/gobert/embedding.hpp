#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "gobert/ontology.hpp"

namespace gobert {

class Vocabulary;

// Key-value rendering of a term: "id: ..; name: ..; namespace: ..; definition: ..".
struct TermText {
  TermId term;
  std::string text;
};

TermText render_term_text(const GoTerm& term);

// Deterministic stand-in for a text encoder: Normal(0, 1/sqrt(dim)) draws
// from a generator seeded by a 64-bit hash of the text.
Eigen::VectorXf fallback_embedding(std::string_view text, int dim, std::uint64_t seed = 0);

enum class EmbeddingSource { file, fallback };

// One row per vocabulary token, in vocabulary order. PAD is the zero
// vector; MASK and UNK are fallback vectors of "[MASK]" and "[UNK]".
struct EmbeddingMatrix {
  Eigen::MatrixXf rows;  // [vocab_size x dim]
  EmbeddingSource source = EmbeddingSource::fallback;
  std::size_t fallback_fills = 0;  // vocabulary terms missing from the file

  int dim() const { return static_cast<int>(rows.cols()); }
};

// All rows from the fallback generator.
EmbeddingMatrix fallback_embeddings(const Vocabulary& vocab, const GoDag& dag, int dim,
                                    std::uint64_t seed = 0);

// Loads a GOEMB1 binary or `term<TAB>v1,v2,...` TSV file. Terms absent
// from the file are filled by the fallback and counted. Entries for terms
// outside the vocabulary are ignored.
EmbeddingMatrix load_embeddings(const std::string& path, const Vocabulary& vocab,
                                const GoDag& dag, int dim, std::uint64_t seed = 0);
EmbeddingMatrix load_embeddings(std::istream& in, const Vocabulary& vocab, const GoDag& dag,
                                int dim, std::uint64_t seed = 0);

// Row width of a GOEMB1 or TSV embedding file.
int detect_embedding_dim(const std::string& path);

// Writes the vocabulary term rows (specials excluded) in GOEMB1 layout.
void save_embeddings(std::ostream& out, const EmbeddingMatrix& matrix, const GoDag& dag);

// Replaces every row with seeded random vectors that carry no text
// information (the "no semantics" ablation). PAD stays zero.
EmbeddingMatrix randomized_embeddings(const EmbeddingMatrix& like, std::uint64_t seed);

}  // namespace gobert
