#pragma once

#include <memory>
#include <string>
#include <vector>

#include "refseg/common.hpp"
#include "refseg/image.hpp"

namespace refseg {

struct ClassCatalog {
  std::vector<std::string> names;  // unique, lowercase, index 0..M-1

  int size() const { return static_cast<int>(names.size()); }
  int find(const std::string& name) const;

  // First M of the built-in shape vocabulary (M in 2..8).
  static ClassCatalog defaults(int m);
};

struct Instance {
  int class_index = 0;
  int color_tag = 0;  // palette index; classes render in class-keyed colors
  double center_x = 0.0, center_y = 0.0;  // mask centroid
  BinaryMask mask;                        // image-sized
};

struct Scene {
  std::shared_ptr<const Image> image;
  std::vector<Instance> instances;
};

// image + ground-truth mask + referring expression (+ optional class label)
struct Sample {
  std::shared_ptr<const Image> image;
  BinaryMask gt_mask;
  std::string expression;
  int class_label = -1;  // -1 = absent
};

struct SceneSpec {
  int image_size = 64;
  int min_objects = 1;
  int max_objects = 3;
  int min_radius = 12;
  int max_radius = 20;
  int classes = 8;
};

// Expression synthesized from a class label: the class name verbatim.
std::string synthesize_expression(const std::string& class_name);

// One sample per region with the class name as its expression.
std::vector<Sample> regions_to_samples(const std::vector<Scene>& scenes,
                                       const ClassCatalog& catalog);

// Deterministic in seed. Instances are filled shapes in class-keyed colors
// with brightness jitter, placed disjointly by rejection; throws
// PlacementFailure when the requested density leaves no room after bounded
// retries.
Scene generate_scene(uint64_t seed, const SceneSpec& spec);

// Picks a target instance and emits an expression guaranteed to resolve to
// exactly one instance: the bare class name when unique, otherwise a spatial
// qualifier from {left,right,top,bottom} applied to the class name.
Sample make_referring_sample(uint64_t seed, const Scene& scene, const ClassCatalog& catalog);

// Literal interpreter for the generated expression templates; returns the
// index of the unique referent or -1. Independent check used by tests.
int resolve_expression(const Scene& scene, const ClassCatalog& catalog,
                       const std::string& expression);

// Deterministic shuffled interleave. All referring samples are used; enough
// synthesized samples join so their stream fraction is `ratio` (capped by
// availability). ratio 0 = referring only, 1 = synthesized only.
std::vector<Sample> mix_datasets(const std::vector<Sample>& referring,
                                 const std::vector<Sample>& synthesized, double ratio,
                                 uint64_t seed);

// Index-level core of mix_datasets: (from_synthesized, index) pairs.
std::vector<std::pair<bool, size_t>> mix_indices(size_t n_referring, size_t n_synthesized,
                                                 double ratio, uint64_t seed);

// ---------------------------------------------------------------------------
// On-disk dataset
// ---------------------------------------------------------------------------

struct GeneratedDataset {
  std::vector<Scene> scenes;
  std::vector<Sample> referring;     // one per scene
  std::vector<Sample> synthesized;   // one per instance
  ClassCatalog catalog;
};

GeneratedDataset generate_dataset(uint64_t seed, const SceneSpec& spec, int count);

// Writes images/ and masks/ plus manifests dataset.tsv (referring) and
// synth.tsv (synthesized). Manifest lines are
// image_path<TAB>mask_path<TAB>class_index_or_dash<TAB>expression.
void write_dataset(const std::string& dir, const GeneratedDataset& data);

std::vector<Sample> load_manifest(const std::string& tsv_path);

// Deterministic synthetic word vectors for a token set (unit-norm rows).
void write_toy_vectors(const std::string& path, const std::vector<std::string>& tokens, int dim,
                       uint64_t seed);

}  // namespace refseg
