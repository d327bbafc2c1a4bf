#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace refseg {

using Vec = std::vector<double>;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

enum class ErrorCode {
  EmptyFile,
  InconsistentDimension,
  DuplicateToken,
  MalformedNumber,
  EmptyToken,
  LengthMismatch,
  UnknownToken,
  KTooLarge,
  EmptyExpression,
  ShapeMismatch,
  DimensionMismatch,
  ClassCountMismatch,
  BadThreshold,
  EmptyName,
  BadClassIndex,
  PlacementFailure,
  NoUnambiguousReferent,
  EmptyGroundTruth,
  EmptyList,
  BadLabel,
  BadConfig,
  IoError,
};

const char* error_code_name(ErrorCode c);

struct Error : std::runtime_error {
  ErrorCode code;
  Error(ErrorCode c, const std::string& msg);
};

[[noreturn]] void fail(ErrorCode c, const std::string& msg);

// ---------------------------------------------------------------------------
// Dense row-major matrix, double precision throughout
// ---------------------------------------------------------------------------

struct Matrix {
  int rows = 0;
  int cols = 0;
  Vec a;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

  std::span<double> row(int r) {
    return {a.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
  }
  std::span<const double> row(int r) const {
    return {a.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
  }

  size_t size() const { return a.size(); }
};

double dot(std::span<const double> u, std::span<const double> v);

// y = M x + b (b may be empty for no bias)
void matvec(const Matrix& m, std::span<const double> x, std::span<const double> b,
            std::span<double> y);
// x += M^T d
void matvec_t_acc(const Matrix& m, std::span<const double> d, std::span<double> x);
// G += d x^T
void outer_acc(Matrix& g, std::span<const double> d, std::span<const double> x);
// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);

double sigmoid(double x);

// ---------------------------------------------------------------------------
// Deterministic PRNG: xoshiro256** seeded through splitmix64
// ---------------------------------------------------------------------------

struct Rng {
  uint64_t s[4];

  explicit Rng(uint64_t seed);

  uint64_t next();
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  int uniform_int(int lo, int hi);       // inclusive on both ends
};

// Stable child-seed derivation so independent streams never share state.
uint64_t derive_seed(uint64_t seed, uint64_t stream);

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------

// printf-style formatting into a std::string
std::string strprintf(const char* fmt, ...);

// 17 significant digits: round-trips any finite double exactly
std::string fmt_g17(double v);

uint64_t fnv1a64(const void* data, size_t n);

}  // namespace refseg
