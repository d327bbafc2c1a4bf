#include "refseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "refseg/embedding.hpp"
#include "refseg/tokenize.hpp"

namespace fs = std::filesystem;

namespace refseg {

// ---------------------------------------------------------------------------
// Catalog and shape rendering
// ---------------------------------------------------------------------------

static const char* kShapeNames[8] = {"circle", "square",  "triangle", "cross",
                                     "diamond", "ring",   "bar",      "star"};

// one distinctive fill color per class
static const double kPalette[8][3] = {
    {0.90, 0.15, 0.15},  // red
    {0.15, 0.75, 0.20},  // green
    {0.20, 0.30, 0.95},  // blue
    {0.95, 0.85, 0.10},  // yellow
    {0.90, 0.20, 0.90},  // magenta
    {0.10, 0.85, 0.90},  // cyan
    {0.95, 0.55, 0.10},  // orange
    {0.60, 0.25, 0.85},  // purple
};

int ClassCatalog::find(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

ClassCatalog ClassCatalog::defaults(int m) {
  if (m < 2 || m > 8) fail(ErrorCode::BadConfig, strprintf("class count %d not in 2..8", m));
  ClassCatalog c;
  for (int i = 0; i < m; ++i) c.names.emplace_back(kShapeNames[i]);
  return c;
}

// Shape predicate in instance-local coordinates (dx, dy from center, radius r).
static bool shape_hit(int shape, double dx, double dy, double r) {
  double ax = std::abs(dx), ay = std::abs(dy);
  switch (shape) {
    case 0:  // circle
      return dx * dx + dy * dy <= r * r;
    case 1:  // square
      return ax <= 0.82 * r && ay <= 0.82 * r;
    case 2:  // triangle, apex up
      return dy >= -r && dy <= 0.85 * r && ax <= 0.55 * (dy + r);
    case 3:  // cross
      return (ax <= 0.34 * r && ay <= r) || (ay <= 0.34 * r && ax <= r);
    case 4:  // diamond
      return ax + ay <= 1.05 * r;
    case 5:  // ring
      {
        double d2 = dx * dx + dy * dy;
        return d2 <= r * r && d2 >= 0.45 * 0.45 * r * r;
      }
    case 6:  // bar
      return ay <= 0.38 * r && ax <= 1.05 * r;
    case 7:  // star (square-diamond union)
      return (ax + ay <= 1.05 * r) || (ax <= 0.62 * r && ay <= 0.62 * r);
  }
  return false;
}

std::string synthesize_expression(const std::string& class_name) {
  if (class_name.empty()) fail(ErrorCode::EmptyName, "class name is empty");
  return class_name;
}

std::vector<Sample> regions_to_samples(const std::vector<Scene>& scenes,
                                       const ClassCatalog& catalog) {
  std::vector<Sample> out;
  for (const Scene& scene : scenes)
    for (const Instance& inst : scene.instances) {
      if (inst.class_index < 0 || inst.class_index >= catalog.size())
        fail(ErrorCode::BadClassIndex, strprintf("class index %d with %d classes",
                                                 inst.class_index, catalog.size()));
      Sample s;
      s.image = scene.image;
      s.gt_mask = inst.mask;
      s.expression = synthesize_expression(catalog.names[inst.class_index]);
      s.class_label = inst.class_index;
      out.push_back(std::move(s));
    }
  return out;
}

Scene generate_scene(uint64_t seed, const SceneSpec& spec) {
  if (spec.image_size < 16) fail(ErrorCode::BadConfig, "image size below 16");
  if (spec.min_objects < 1 || spec.max_objects < spec.min_objects)
    fail(ErrorCode::BadConfig, "bad object count range");
  Rng rng(seed);
  const int n = spec.image_size;
  auto img = std::make_shared<Image>(n, n);
  // flat dark background with mild deterministic texture
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double g = 0.10 + 0.07 * rng.uniform();
      for (int c = 0; c < 3; ++c) img->at(c, y, x) = g;
    }

  Scene scene;
  scene.instances.reserve(spec.max_objects);
  BinaryMask occupied(n, n);
  int count = rng.uniform_int(spec.min_objects, spec.max_objects);
  for (int k = 0; k < count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 128 && !placed; ++attempt) {
      int cls = rng.uniform_int(0, spec.classes - 1);
      // narrow the radius range as attempts fail so dense scenes still fill
      int hi = std::max(spec.min_radius, spec.max_radius - attempt / 16);
      int radius = rng.uniform_int(spec.min_radius, hi);
      if (2 * radius + 4 >= n) continue;
      int cx = rng.uniform_int(radius + 1, n - 2 - radius);
      int cy = rng.uniform_int(radius + 1, n - 2 - radius);
      BinaryMask mask(n, n);
      bool overlap = false;
      size_t area = 0;
      for (int y = cy - radius - 1; y <= cy + radius + 1 && !overlap; ++y)
        for (int x = cx - radius - 1; x <= cx + radius + 1; ++x) {
          if (y < 0 || y >= n || x < 0 || x >= n) continue;
          if (!shape_hit(cls, x - cx, y - cy, radius)) continue;
          if (occupied.at(y, x)) {
            overlap = true;
            break;
          }
          mask.at(y, x) = 1;
          ++area;
        }
      if (overlap || area == 0) continue;

      double brightness = rng.uniform(0.85, 1.0);
      double sum_x = 0.0, sum_y = 0.0;
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          if (!mask.at(y, x)) continue;
          occupied.at(y, x) = 1;
          sum_x += x;
          sum_y += y;
          for (int c = 0; c < 3; ++c) img->at(c, y, x) = kPalette[cls][c] * brightness;
        }
      Instance inst;
      inst.class_index = cls;
      inst.color_tag = cls;
      inst.center_x = sum_x / static_cast<double>(area);
      inst.center_y = sum_y / static_cast<double>(area);
      inst.mask = std::move(mask);
      scene.instances.push_back(std::move(inst));
      placed = true;
    }
    if (!placed)
      fail(ErrorCode::PlacementFailure,
           strprintf("could not place instance %d of %d after 128 attempts", k + 1, count));
  }
  scene.image = std::move(img);
  return scene;
}

// Qualifiers that make `target` the unique extremum among same-class instances.
static std::vector<std::string> valid_qualifiers(const Scene& scene, size_t target) {
  const Instance& t = scene.instances[target];
  bool left = true, right = true, top = true, bottom = true;
  for (size_t i = 0; i < scene.instances.size(); ++i) {
    if (i == target) continue;
    const Instance& o = scene.instances[i];
    if (o.class_index != t.class_index) continue;
    if (o.center_x <= t.center_x) left = false;
    if (o.center_x >= t.center_x) right = false;
    if (o.center_y <= t.center_y) top = false;
    if (o.center_y >= t.center_y) bottom = false;
  }
  std::vector<std::string> quals;
  if (left) quals.push_back("left");
  if (right) quals.push_back("right");
  if (top) quals.push_back("top");
  if (bottom) quals.push_back("bottom");
  return quals;
}

Sample make_referring_sample(uint64_t seed, const Scene& scene, const ClassCatalog& catalog) {
  Rng rng(seed);
  std::vector<size_t> order(scene.instances.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order, rng);
  for (size_t target : order) {
    const Instance& inst = scene.instances[target];
    const std::string& name = catalog.names.at(inst.class_index);
    int same_class = 0;
    for (const Instance& o : scene.instances) same_class += o.class_index == inst.class_index;
    std::string expr;
    if (same_class == 1) {
      expr = synthesize_expression(name);
    } else {
      std::vector<std::string> quals = valid_qualifiers(scene, target);
      if (quals.empty()) continue;  // resample target
      expr = quals[rng.uniform_int(0, static_cast<int>(quals.size()) - 1)] + " " + name;
    }
    Sample s;
    s.image = scene.image;
    s.gt_mask = inst.mask;
    s.expression = expr;
    s.class_label = inst.class_index;
    return s;
  }
  fail(ErrorCode::NoUnambiguousReferent, "no instance admits an unambiguous expression");
}

int resolve_expression(const Scene& scene, const ClassCatalog& catalog,
                       const std::string& expression) {
  TokenSequence tokens = tokenize(expression);
  std::string qualifier;
  size_t name_start = 0;
  if (tokens.size() > 1 && (tokens[0] == "left" || tokens[0] == "right" || tokens[0] == "top" ||
                            tokens[0] == "bottom")) {
    qualifier = tokens[0];
    name_start = 1;
  }
  std::string name;
  for (size_t i = name_start; i < tokens.size(); ++i) {
    if (!name.empty()) name += ' ';
    name += tokens[i];
  }
  int cls = catalog.find(name);
  if (cls < 0) return -1;
  std::vector<size_t> candidates;
  for (size_t i = 0; i < scene.instances.size(); ++i)
    if (scene.instances[i].class_index == cls) candidates.push_back(i);
  if (candidates.empty()) return -1;
  if (qualifier.empty())
    return candidates.size() == 1 ? static_cast<int>(candidates[0]) : -1;
  auto coord = [&](size_t i) {
    const Instance& inst = scene.instances[i];
    return qualifier == "left" || qualifier == "right" ? inst.center_x : inst.center_y;
  };
  bool want_min = qualifier == "left" || qualifier == "top";
  size_t best = candidates[0];
  bool tie = false;
  for (size_t i = 1; i < candidates.size(); ++i) {
    double c = coord(candidates[i]), b = coord(best);
    if (c == b) {
      tie = true;
    } else if (want_min ? c < b : c > b) {
      best = candidates[i];
      tie = false;
    }
  }
  return tie ? -1 : static_cast<int>(best);
}

// ---------------------------------------------------------------------------
// Mixing
// ---------------------------------------------------------------------------

std::vector<std::pair<bool, size_t>> mix_indices(size_t n_referring, size_t n_synthesized,
                                                 double ratio, uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0))
    fail(ErrorCode::BadConfig, strprintf("mix ratio %g not in [0,1]", ratio));
  Rng rng(seed);
  std::vector<size_t> ref_order(n_referring), syn_order(n_synthesized);
  for (size_t i = 0; i < n_referring; ++i) ref_order[i] = i;
  for (size_t i = 0; i < n_synthesized; ++i) syn_order[i] = i;
  shuffle(ref_order, rng);
  shuffle(syn_order, rng);

  std::vector<std::pair<bool, size_t>> stream;
  if (ratio >= 1.0) {
    for (size_t i : syn_order) stream.emplace_back(true, i);
    return stream;
  }
  size_t take_syn =
      ratio <= 0.0
          ? 0
          : std::min(n_synthesized,
                     static_cast<size_t>(std::llround(ratio / (1.0 - ratio) *
                                                      static_cast<double>(n_referring))));
  size_t total = n_referring + take_syn;
  double frac = total == 0 ? 0.0 : static_cast<double>(take_syn) / static_cast<double>(total);
  // quota interleave: emit a synthesized sample whenever the running quota says so
  size_t ri = 0, si = 0;
  stream.reserve(total);
  for (size_t t = 1; t <= total; ++t) {
    size_t quota = static_cast<size_t>(std::llround(frac * static_cast<double>(t)));
    bool emit_syn = quota > si && si < take_syn;
    if (!emit_syn && ri >= n_referring) emit_syn = true;
    if (emit_syn)
      stream.emplace_back(true, syn_order[si++]);
    else
      stream.emplace_back(false, ref_order[ri++]);
  }
  return stream;
}

std::vector<Sample> mix_datasets(const std::vector<Sample>& referring,
                                 const std::vector<Sample>& synthesized, double ratio,
                                 uint64_t seed) {
  auto idx = mix_indices(referring.size(), synthesized.size(), ratio, seed);
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (auto [from_syn, i] : idx) out.push_back(from_syn ? synthesized[i] : referring[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset on disk
// ---------------------------------------------------------------------------

GeneratedDataset generate_dataset(uint64_t seed, const SceneSpec& spec, int count) {
  GeneratedDataset data;
  data.catalog = ClassCatalog::defaults(spec.classes);
  data.scenes.reserve(count);
  for (int i = 0; i < count; ++i) {
    // dense draws can fail placement; retry the scene with derived sub-seeds
    Scene scene;
    bool built = false;
    for (uint64_t retry = 0; retry < 32 && !built; ++retry) {
      try {
        scene = generate_scene(
            derive_seed(seed, 1000 + static_cast<uint64_t>(i) * 64 + retry), spec);
        built = true;
      } catch (const Error& e) {
        if (e.code != ErrorCode::PlacementFailure || retry == 31) throw;
      }
    }
    data.scenes.push_back(std::move(scene));
    uint64_t ref_seed = derive_seed(seed, 2000000 + static_cast<uint64_t>(i));
    data.referring.push_back(make_referring_sample(ref_seed, data.scenes.back(), data.catalog));
  }
  data.synthesized = regions_to_samples(data.scenes, data.catalog);
  return data;
}

static std::string sample_row(const std::string& image_rel, const std::string& mask_rel,
                              const Sample& s) {
  std::string label = s.class_label < 0 ? "-" : std::to_string(s.class_label);
  return image_rel + "\t" + mask_rel + "\t" + label + "\t" + s.expression + "\n";
}

void write_dataset(const std::string& dir, const GeneratedDataset& data) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");

  std::vector<std::string> scene_image_rel(data.scenes.size());
  for (size_t i = 0; i < data.scenes.size(); ++i) {
    scene_image_rel[i] = strprintf("images/%05zu.ppm", i);
    write_ppm((fs::path(dir) / scene_image_rel[i]).string(), *data.scenes[i].image);
  }
  // map images back to scenes through shared pointers
  std::map<const Image*, size_t> scene_of;
  for (size_t i = 0; i < data.scenes.size(); ++i) scene_of[data.scenes[i].image.get()] = i;

  auto write_manifest = [&](const std::string& name, const std::vector<Sample>& samples,
                            const char* mask_prefix) {
    std::ofstream tsv(fs::path(dir) / name, std::ios::binary);
    if (!tsv) fail(ErrorCode::IoError, "cannot write manifest in " + dir);
    for (size_t i = 0; i < samples.size(); ++i) {
      const Sample& s = samples[i];
      std::string mask_rel = strprintf("masks/%s_%05zu.pgm", mask_prefix, i);
      write_mask_pgm((fs::path(dir) / mask_rel).string(), s.gt_mask);
      tsv << sample_row(scene_image_rel.at(scene_of.at(s.image.get())), mask_rel, s);
    }
    if (!tsv) fail(ErrorCode::IoError, "manifest write failed in " + dir);
  };
  write_manifest("dataset.tsv", data.referring, "ref");
  write_manifest("synth.tsv", data.synthesized, "syn");

  std::ofstream classes(fs::path(dir) / "classes.txt", std::ios::binary);
  for (const auto& n : data.catalog.names) classes << n << "\n";
}

std::vector<Sample> load_manifest(const std::string& tsv_path) {
  std::ifstream in(tsv_path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open manifest " + tsv_path);
  fs::path base = fs::path(tsv_path).parent_path();
  std::map<std::string, std::shared_ptr<const Image>> image_cache;
  std::vector<Sample> samples;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    size_t start = 0;
    for (int i = 0; i < 3; ++i) {
      size_t tab = line.find('\t', start);
      if (tab == std::string::npos)
        fail(ErrorCode::IoError,
             strprintf("%s:%zu: expected 4 tab-separated columns", tsv_path.c_str(), lineno));
      cols.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    cols.push_back(line.substr(start));

    Sample s;
    std::string image_path = (base / cols[0]).string();
    auto it = image_cache.find(image_path);
    if (it == image_cache.end())
      it = image_cache.emplace(image_path, std::make_shared<Image>(read_ppm(image_path))).first;
    s.image = it->second;
    s.gt_mask = read_mask_pgm((base / cols[1]).string());
    if (cols[2] == "-") {
      s.class_label = -1;
    } else {
      try {
        s.class_label = std::stoi(cols[2]);
      } catch (const std::exception&) {
        fail(ErrorCode::IoError, strprintf("%s:%zu: bad class index '%s'", tsv_path.c_str(),
                                           lineno, cols[2].c_str()));
      }
    }
    s.expression = cols[3];
    samples.push_back(std::move(s));
  }
  return samples;
}

void write_toy_vectors(const std::string& path, const std::vector<std::string>& tokens, int dim,
                       uint64_t seed) {
  // Unit vectors, orthogonalized while the dimension allows it so tokens are
  // maximally separated; extras beyond dim stay plain random directions.
  std::vector<std::pair<std::string, Vec>> rows;
  std::vector<Vec> basis;
  Rng rng(seed);
  for (const std::string& tok : tokens) {
    Vec v(dim);
    for (int pass = 0; pass < 8; ++pass) {
      for (auto& c : v) c = rng.uniform(-1.0, 1.0);
      if (basis.size() < static_cast<size_t>(dim))
        for (const Vec& b : basis) axpy(-dot(v, b), b, v);
      double norm = std::sqrt(dot(v, v));
      if (norm > 1e-6) {
        for (auto& c : v) c /= norm;
        break;
      }
    }
    if (basis.size() < static_cast<size_t>(dim)) basis.push_back(v);
    rows.emplace_back(tok, std::move(v));
  }
  EmbeddingTable table = make_table(dim, std::move(rows));
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  write_embedding_file(table, out);
}

}  // namespace refseg
