#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "refseg/common.hpp"

namespace refseg {

// Vocabulary-to-vector table in the common whitespace text format:
// one `<token> <f1> ... <fD>` line per word, dimension inferred from the
// first line. Immutable once built; out-of-vocabulary lookups return the
// mean of all stored vectors.
struct EmbeddingTable {
  int dim = 0;
  std::vector<std::string> tokens;  // file order
  Matrix vectors;                   // one row per token
  Vec fallback;                     // componentwise mean of all rows
  std::unordered_map<std::string, int> index;

  int find(std::string_view token) const;
  std::span<const double> row_or_fallback(std::string_view token) const;

  // Rebuilds the token index and the mean-vector fallback from `vectors`.
  void finalize();
};

EmbeddingTable parse_embedding_file(std::istream& in);
EmbeddingTable load_embedding_file(const std::string& path);

// Builds a table directly from rows; used for synthetic vector sets and for
// scratch-initialized trainable embeddings.
EmbeddingTable make_table(int dim, std::vector<std::pair<std::string, Vec>> rows);

// Text serialization with 17 significant digits so parse(write(t)) == t
// bit for bit.
void write_embedding_file(const EmbeddingTable& table, std::ostream& out);

Vec lookup(const EmbeddingTable& table, std::string_view token);

// Standard cosine; zero-norm inputs give 0 by convention.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

// k most similar in-vocabulary tokens, query excluded, sorted by descending
// similarity with lexicographic tie-break.
std::vector<std::pair<std::string, double>> nearest_neighbors(const EmbeddingTable& table,
                                                              std::string_view token, int k);

}  // namespace refseg
