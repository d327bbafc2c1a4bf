#include "refseg/common.hpp"

#include <cmath>
#include <cstdarg>
#include <cstdio>

namespace refseg {

const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::InconsistentDimension: return "InconsistentDimension";
    case ErrorCode::DuplicateToken: return "DuplicateToken";
    case ErrorCode::MalformedNumber: return "MalformedNumber";
    case ErrorCode::EmptyToken: return "EmptyToken";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::UnknownToken: return "UnknownToken";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::EmptyExpression: return "EmptyExpression";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ClassCountMismatch: return "ClassCountMismatch";
    case ErrorCode::BadThreshold: return "BadThreshold";
    case ErrorCode::EmptyName: return "EmptyName";
    case ErrorCode::BadClassIndex: return "BadClassIndex";
    case ErrorCode::PlacementFailure: return "PlacementFailure";
    case ErrorCode::NoUnambiguousReferent: return "NoUnambiguousReferent";
    case ErrorCode::EmptyGroundTruth: return "EmptyGroundTruth";
    case ErrorCode::EmptyList: return "EmptyList";
    case ErrorCode::BadLabel: return "BadLabel";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::IoError: return "IoError";
  }
  return "UnknownError";
}

Error::Error(ErrorCode c, const std::string& msg)
    : std::runtime_error(std::string(error_code_name(c)) + ": " + msg), code(c) {}

void fail(ErrorCode c, const std::string& msg) { throw Error(c, msg); }

double dot(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

void matvec(const Matrix& m, std::span<const double> x, std::span<const double> b,
            std::span<double> y) {
  for (int r = 0; r < m.rows; ++r) {
    const double* w = m.a.data() + static_cast<size_t>(r) * m.cols;
    double s = b.empty() ? 0.0 : b[r];
    for (int c = 0; c < m.cols; ++c) s += w[c] * x[c];
    y[r] = s;
  }
}

void matvec_t_acc(const Matrix& m, std::span<const double> d, std::span<double> x) {
  for (int r = 0; r < m.rows; ++r) {
    const double dr = d[r];
    if (dr == 0.0) continue;
    const double* w = m.a.data() + static_cast<size_t>(r) * m.cols;
    for (int c = 0; c < m.cols; ++c) x[c] += w[c] * dr;
  }
}

void outer_acc(Matrix& g, std::span<const double> d, std::span<const double> x) {
  for (int r = 0; r < g.rows; ++r) {
    const double dr = d[r];
    if (dr == 0.0) continue;
    double* w = g.a.data() + static_cast<size_t>(r) * g.cols;
    for (int c = 0; c < g.cols; ++c) w[c] += dr * x[c];
  }
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// PRNG
// ---------------------------------------------------------------------------

static uint64_t splitmix64(uint64_t& x) {
  x += 0x9E3779B97F4A7C15ull;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Rng::Rng(uint64_t seed) {
  uint64_t x = seed;
  for (auto& si : s) si = splitmix64(x);
}

static inline uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

uint64_t Rng::next() {
  const uint64_t result = rotl(s[1] * 5, 7) * 9;
  const uint64_t t = s[1] << 17;
  s[2] ^= s[0];
  s[3] ^= s[1];
  s[1] ^= s[2];
  s[0] ^= s[3];
  s[2] ^= t;
  s[3] = rotl(s[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int lo, int hi) {
  uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(next() % span);
}

uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  uint64_t x = seed ^ (0xA0761D6478BD642Full * (stream + 1));
  uint64_t a = splitmix64(x);
  uint64_t b = splitmix64(x);
  return a ^ rotl(b, 31);
}

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------

std::string strprintf(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  char buf[512];
  int n = vsnprintf(buf, sizeof(buf), fmt, ap);
  va_end(ap);
  if (n < 0) return {};
  if (static_cast<size_t>(n) < sizeof(buf)) return std::string(buf, n);
  std::string big(static_cast<size_t>(n) + 1, '\0');
  va_start(ap, fmt);
  vsnprintf(big.data(), big.size(), fmt, ap);
  va_end(ap);
  big.resize(static_cast<size_t>(n));
  return big;
}

std::string fmt_g17(double v) { return strprintf("%.17g", v); }

uint64_t fnv1a64(const void* data, size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xCBF29CE484222325ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace refseg
