#include <cmath>
#include <cstdio>
#include <fstream>

#include "refseg/image.hpp"

namespace refseg {

size_t BinaryMask::count() const {
  size_t n = 0;
  for (uint8_t b : v) n += b != 0;
  return n;
}

// Reads one PNM header token, skipping whitespace and # comments.
static std::string pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

static void read_pnm_header(std::istream& in, const std::string& path, const char* magic,
                            int& width, int& height) {
  if (pnm_token(in) != magic)
    fail(ErrorCode::IoError, path + ": not a " + magic + " file");
  try {
    width = std::stoi(pnm_token(in));
    height = std::stoi(pnm_token(in));
    int maxval = std::stoi(pnm_token(in));
    if (maxval != 255) fail(ErrorCode::IoError, path + ": only maxval 255 supported");
  } catch (const std::invalid_argument&) {
    fail(ErrorCode::IoError, path + ": malformed header");
  }
  if (width < 1 || height < 1) fail(ErrorCode::IoError, path + ": bad dimensions");
  // single whitespace byte separates header from raster (pnm_token already ate it)
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  int w = 0, h = 0;
  read_pnm_header(in, path, "P6", w, h);
  std::vector<uint8_t> raw(3ul * w * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    fail(ErrorCode::IoError, path + ": truncated raster");
  Image img(h, w);
  size_t i = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = raw[i++] / 255.0;
  return img;
}

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> raw;
  raw.reserve(3ul * img.width * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        raw.push_back(static_cast<uint8_t>(std::lround(v * 255.0)));
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) fail(ErrorCode::IoError, "write failed: " + path);
}

BinaryMask read_mask_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  int w = 0, h = 0;
  read_pnm_header(in, path, "P5", w, h);
  std::vector<uint8_t> raw(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    fail(ErrorCode::IoError, path + ": truncated raster");
  BinaryMask mask(h, w);
  for (size_t i = 0; i < raw.size(); ++i) mask.v[i] = raw[i] >= 128 ? 1 : 0;
  return mask;
}

static void write_pgm_bytes(const std::string& path, int width, int height,
                            const std::vector<uint8_t>& raw) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) fail(ErrorCode::IoError, "write failed: " + path);
}

void write_mask_pgm(const std::string& path, const BinaryMask& mask) {
  std::vector<uint8_t> raw(mask.v.size());
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = mask.v[i] ? 255 : 0;
  write_pgm_bytes(path, mask.width, mask.height, raw);
}

void write_heatmap_pgm(const std::string& path, const ForegroundMap& map) {
  std::vector<uint8_t> raw(map.p.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    double v = std::clamp(map.p[i], 0.0, 1.0);
    raw[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  write_pgm_bytes(path, map.width, map.height, raw);
}

}  // namespace refseg
