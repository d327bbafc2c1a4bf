#include "refseg/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>

namespace refseg {

int EmbeddingTable::find(std::string_view token) const {
  auto it = index.find(std::string(token));
  return it == index.end() ? -1 : it->second;
}

std::span<const double> EmbeddingTable::row_or_fallback(std::string_view token) const {
  int i = find(token);
  if (i < 0) return {fallback.data(), fallback.size()};
  return vectors.row(i);
}

void EmbeddingTable::finalize() {
  index.clear();
  index.reserve(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) index.emplace(tokens[i], static_cast<int>(i));
  fallback.assign(dim, 0.0);
  for (int r = 0; r < vectors.rows; ++r)
    for (int c = 0; c < dim; ++c) fallback[c] += vectors.at(r, c);
  for (int c = 0; c < dim; ++c) fallback[c] /= static_cast<double>(vectors.rows);
}

static std::vector<std::string> split_on_spaces(const std::string& line) {
  std::vector<std::string> fields;
  size_t start = 0;
  while (start <= line.size()) {
    size_t pos = line.find(' ', start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

static double parse_component(const std::string& field, size_t lineno) {
  if (field.empty())
    fail(ErrorCode::MalformedNumber, strprintf("empty field on line %zu", lineno));
  const char* s = field.c_str();
  char* end = nullptr;
  double v = std::strtod(s, &end);
  if (end != s + field.size())
    fail(ErrorCode::MalformedNumber, strprintf("'%s' on line %zu", field.c_str(), lineno));
  if (!std::isfinite(v))
    fail(ErrorCode::MalformedNumber, strprintf("non-finite value on line %zu", lineno));
  return v;
}

EmbeddingTable parse_embedding_file(std::istream& in) {
  EmbeddingTable table;
  std::vector<Vec> rows;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields = split_on_spaces(line);
    if (fields[0].empty())
      fail(ErrorCode::MalformedNumber, strprintf("empty token on line %zu", lineno));
    int d = static_cast<int>(fields.size()) - 1;
    if (table.dim == 0) {
      if (d < 1)
        fail(ErrorCode::InconsistentDimension,
             strprintf("line %zu has no vector components", lineno));
      table.dim = d;
    } else if (d != table.dim) {
      fail(ErrorCode::InconsistentDimension,
           strprintf("line %zu has %d components, expected %d", lineno, d, table.dim));
    }
    if (table.index.count(fields[0]))
      fail(ErrorCode::DuplicateToken, strprintf("'%s' on line %zu", fields[0].c_str(), lineno));
    Vec row(table.dim);
    for (int c = 0; c < table.dim; ++c) row[c] = parse_component(fields[c + 1], lineno);
    table.index.emplace(fields[0], static_cast<int>(rows.size()));
    table.tokens.push_back(fields[0]);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) fail(ErrorCode::EmptyFile, "no embedding lines found");
  table.vectors = Matrix(static_cast<int>(rows.size()), table.dim);
  for (size_t r = 0; r < rows.size(); ++r)
    std::copy(rows[r].begin(), rows[r].end(), table.vectors.row(static_cast<int>(r)).begin());
  table.finalize();
  return table;
}

EmbeddingTable load_embedding_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open vectors file: " + path);
  return parse_embedding_file(in);
}

EmbeddingTable make_table(int dim, std::vector<std::pair<std::string, Vec>> rows) {
  if (rows.empty()) fail(ErrorCode::EmptyFile, "cannot build a table with no rows");
  EmbeddingTable table;
  table.dim = dim;
  table.vectors = Matrix(static_cast<int>(rows.size()), dim);
  for (size_t r = 0; r < rows.size(); ++r) {
    auto& [token, row] = rows[r];
    if (token.empty()) fail(ErrorCode::EmptyToken, "empty token in row set");
    if (static_cast<int>(row.size()) != dim)
      fail(ErrorCode::InconsistentDimension,
           strprintf("row '%s' has %zu components, expected %d", token.c_str(), row.size(), dim));
    if (std::find(table.tokens.begin(), table.tokens.end(), token) != table.tokens.end())
      fail(ErrorCode::DuplicateToken, token);
    table.tokens.push_back(token);
    std::copy(row.begin(), row.end(), table.vectors.row(static_cast<int>(r)).begin());
  }
  table.finalize();
  return table;
}

void write_embedding_file(const EmbeddingTable& table, std::ostream& out) {
  for (size_t r = 0; r < table.tokens.size(); ++r) {
    out << table.tokens[r];
    for (int c = 0; c < table.dim; ++c)
      out << ' ' << fmt_g17(table.vectors.at(static_cast<int>(r), c));
    out << '\n';
  }
}

Vec lookup(const EmbeddingTable& table, std::string_view token) {
  if (token.empty()) fail(ErrorCode::EmptyToken, "lookup of empty token");
  auto row = table.row_or_fallback(token);
  return Vec(row.begin(), row.end());
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    fail(ErrorCode::LengthMismatch,
         strprintf("vector lengths %zu vs %zu", u.size(), v.size()));
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) return 0.0;
  double s = uv / (std::sqrt(uu) * std::sqrt(vv));
  return std::clamp(s, -1.0, 1.0);
}

std::vector<std::pair<std::string, double>> nearest_neighbors(const EmbeddingTable& table,
                                                              std::string_view token, int k) {
  int q = table.find(token);
  if (q < 0) fail(ErrorCode::UnknownToken, std::string(token));
  int vocab = static_cast<int>(table.tokens.size());
  if (k < 1 || k > vocab - 1)
    fail(ErrorCode::KTooLarge, strprintf("k=%d with vocabulary of %d", k, vocab));
  std::vector<std::pair<std::string, double>> all;
  all.reserve(vocab - 1);
  for (int i = 0; i < vocab; ++i) {
    if (i == q) continue;
    all.emplace_back(table.tokens[i], cosine_similarity(table.vectors.row(q), table.vectors.row(i)));
  }
  std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) {
    if (x.second != y.second) return x.second > y.second;
    return x.first < y.first;
  });
  all.resize(k);
  return all;
}

}  // namespace refseg
