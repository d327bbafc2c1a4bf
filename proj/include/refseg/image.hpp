#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refseg/common.hpp"

namespace refseg {

// RGB image, values in [0,1], channel-major storage: pix[c*h*w + y*w + x].
struct Image {
  int height = 0;
  int width = 0;
  Vec pix;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pix(3ul * h * w, 0.0) {}

  double& at(int c, int y, int x) {
    return pix[(static_cast<size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return pix[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> v;

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), v(static_cast<size_t>(h) * w, 0) {}

  uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * width + x]; }
  size_t count() const;
};

// Per-cell foreground probability in [0,1].
struct ForegroundMap {
  int height = 0;
  int width = 0;
  Vec p;

  ForegroundMap() = default;
  ForegroundMap(int h, int w) : height(h), width(w), p(static_cast<size_t>(h) * w, 0.0) {}

  double& at(int y, int x) { return p[static_cast<size_t>(y) * width + x]; }
  double at(int y, int x) const { return p[static_cast<size_t>(y) * width + x]; }
};

// Per-cell distribution over M classes, cell-major: p[(y*w + x)*M + k].
struct ProbabilityMap {
  int height = 0;
  int width = 0;
  int classes = 0;
  Vec p;

  ProbabilityMap() = default;
  ProbabilityMap(int h, int w, int m)
      : height(h), width(w), classes(m), p(static_cast<size_t>(h) * w * m, 0.0) {}

  std::span<double> cell(int y, int x) {
    return {p.data() + (static_cast<size_t>(y) * width + x) * classes,
            static_cast<size_t>(classes)};
  }
  std::span<const double> cell(int y, int x) const {
    return {p.data() + (static_cast<size_t>(y) * width + x) * classes,
            static_cast<size_t>(classes)};
  }
};

// Spatial feature grid: C learned channels followed by 2 coordinate channels
// (normalized x then y in [-1,1] at cell centers). Channel-major like Image.
struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;

  Vec f;

  FeatureMap() = default;
  FeatureMap(int h, int w, int c)
      : height(h), width(w), channels(c), f(static_cast<size_t>(c) * h * w, 0.0) {}

  double& at(int c, int y, int x) {
    return f[(static_cast<size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return f[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

// ---------------------------------------------------------------------------
// PNM I/O. Images are binary PPM (P6), masks and heatmaps binary PGM (P5),
// 8-bit maxval 255.
// ---------------------------------------------------------------------------

Image read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image& img);

BinaryMask read_mask_pgm(const std::string& path);
// 0/255 per pixel
void write_mask_pgm(const std::string& path, const BinaryMask& mask);
// round(255 * p) per pixel
void write_heatmap_pgm(const std::string& path, const ForegroundMap& map);

}  // namespace refseg
