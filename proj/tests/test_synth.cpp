#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "refseg/synth.hpp"
#include "refseg/tokenize.hpp"

using namespace refseg;

TEST_CASE("synthesize_expression is the class name verbatim") {
  CHECK(synthesize_expression("person") == "person");
  CHECK(synthesize_expression("traffic light") == "traffic light");
  CHECK_THROWS_AS(synthesize_expression(""), Error);
}

TEST_CASE("scene generation is deterministic and respects invariants") {
  SceneSpec spec;
  spec.image_size = 32;
  spec.min_radius = 5;
  spec.max_radius = 8;
  Scene a = generate_scene(42, spec);
  Scene b = generate_scene(42, spec);
  CHECK(a.image->pix == b.image->pix);
  REQUIRE(a.instances.size() == b.instances.size());
  for (size_t i = 0; i < a.instances.size(); ++i) {
    CHECK(a.instances[i].class_index == b.instances[i].class_index);
    CHECK(a.instances[i].mask.v == b.instances[i].mask.v);
  }

  // brute-force pixel scan: masks non-empty and pairwise disjoint
  for (int seed = 0; seed < 25; ++seed) {
    Scene s = generate_scene(seed, spec);
    REQUIRE(!s.instances.empty());
    BinaryMask seen(spec.image_size, spec.image_size);
    for (const Instance& inst : s.instances) {
      CHECK(inst.mask.count() > 0);
      for (size_t i = 0; i < inst.mask.v.size(); ++i) {
        if (!inst.mask.v[i]) continue;
        CHECK(seen.v[i] == 0);
        seen.v[i] = 1;
      }
    }
  }

  SceneSpec single = spec;
  single.min_objects = single.max_objects = 1;
  CHECK(generate_scene(7, single).instances.size() == 1);

  // an impossible request fails after bounded retries
  SceneSpec impossible = spec;
  impossible.image_size = 16;
  impossible.min_radius = impossible.max_radius = 10;
  CHECK_THROWS_AS(generate_scene(1, impossible), Error);
}

TEST_CASE("regions_to_samples emits one sample per instance") {
  SceneSpec spec;
  spec.image_size = 32;
  spec.min_radius = 5;
  spec.max_radius = 7;
  ClassCatalog catalog = ClassCatalog::defaults(spec.classes);
  std::vector<Scene> scenes;
  size_t total_instances = 0;
  for (int seed = 0; seed < 10; ++seed) {
    scenes.push_back(generate_scene(seed + 100, spec));
    total_instances += scenes.back().instances.size();
  }
  std::vector<Sample> samples = regions_to_samples(scenes, catalog);
  CHECK(samples.size() == total_instances);
  for (const Sample& s : samples) {
    CHECK(s.class_label >= 0);
    CHECK(s.expression == catalog.names[s.class_label]);
    CHECK(s.gt_mask.count() > 0);
    CHECK_NOTHROW(tokenize(s.expression));
  }

  Scene broken = scenes[0];
  broken.instances[0].class_index = 99;
  CHECK_THROWS_AS(regions_to_samples({broken}, catalog), Error);
}

TEST_CASE("referring samples resolve to exactly one instance") {
  SceneSpec spec;
  spec.image_size = 40;
  spec.min_radius = 5;
  spec.max_radius = 8;
  spec.max_objects = 3;
  ClassCatalog catalog = ClassCatalog::defaults(spec.classes);
  int qualifier_count = 0;
  for (int seed = 0; seed < 120; ++seed) {
    Scene scene = generate_scene(seed + 5000, spec);
    Sample s = make_referring_sample(seed, scene, catalog);
    int idx = resolve_expression(scene, catalog, s.expression);
    REQUIRE(idx >= 0);
    CHECK(scene.instances[idx].mask.v == s.gt_mask.v);
    CHECK(scene.instances[idx].class_index == s.class_label);
    if (tokenize(s.expression).size() > 1) ++qualifier_count;
  }
  CHECK(qualifier_count > 0);  // spatial qualifiers do occur
}

TEST_CASE("qualifier chosen by the extremal rule") {
  // two same-class instances: the left one must be called "left <class>"
  SceneSpec spec;
  spec.image_size = 48;
  spec.min_radius = 6;
  spec.max_radius = 9;
  spec.classes = 2;
  ClassCatalog catalog = ClassCatalog::defaults(2);
  for (int seed = 0; seed < 400; ++seed) {
    Scene scene = generate_scene(seed + 900, spec);
    if (scene.instances.size() != 2) continue;
    if (scene.instances[0].class_index != scene.instances[1].class_index) continue;
    Sample s = make_referring_sample(seed, scene, catalog);
    TokenSequence toks = tokenize(s.expression);
    REQUIRE(toks.size() == 2);
    const Instance& a = scene.instances[0];
    const Instance& b = scene.instances[1];
    const Instance& target =
        s.gt_mask.v == a.mask.v ? a : b;
    const Instance& other = &target == &a ? b : a;
    if (toks[0] == "left") CHECK(target.center_x < other.center_x);
    if (toks[0] == "right") CHECK(target.center_x > other.center_x);
    if (toks[0] == "top") CHECK(target.center_y < other.center_y);
    if (toks[0] == "bottom") CHECK(target.center_y > other.center_y);
  }
}

TEST_CASE("no unambiguous referent is an error") {
  // two same-class instances with coinciding centroids: a ring around a disc
  ClassCatalog catalog = ClassCatalog::defaults(2);
  Scene scene;
  scene.image = std::make_shared<Image>(32, 32);
  auto put = [&](int r_in, int r_out) {
    Instance inst;
    inst.class_index = 0;
    inst.mask = BinaryMask(32, 32);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        double d2 = (y - 16.0) * (y - 16.0) + (x - 16.0) * (x - 16.0);
        if (d2 >= r_in * r_in && d2 < r_out * r_out) inst.mask.at(y, x) = 1;
      }
    inst.center_x = 16.0;
    inst.center_y = 16.0;
    scene.instances.push_back(std::move(inst));
  };
  put(0, 5);    // disc
  put(8, 12);   // ring around it, same class, same centroid
  CHECK_THROWS_AS(make_referring_sample(1, scene, catalog), Error);
  try {
    make_referring_sample(1, scene, catalog);
  } catch (const Error& e) {
    CHECK(e.code == ErrorCode::NoUnambiguousReferent);
  }
}

TEST_CASE("mix_datasets ratio endpoints and counts") {
  std::vector<Sample> ref(10), syn(30);
  auto img = std::make_shared<Image>(16, 16);
  for (size_t i = 0; i < ref.size(); ++i) {
    ref[i].image = img;
    ref[i].expression = "r" + std::to_string(i);
  }
  for (size_t i = 0; i < syn.size(); ++i) {
    syn[i].image = img;
    syn[i].expression = "s" + std::to_string(i);
  }

  auto only_ref = mix_datasets(ref, syn, 0.0, 1);
  CHECK(only_ref.size() == 10);
  for (const Sample& s : only_ref) CHECK(s.expression[0] == 'r');

  auto only_syn = mix_datasets(ref, syn, 1.0, 1);
  CHECK(only_syn.size() == 30);
  for (const Sample& s : only_syn) CHECK(s.expression[0] == 's');

  // counting oracle: synthesized count within 1 of ratio * stream length
  for (double ratio : {0.25, 0.5, 0.75}) {
    auto stream = mix_datasets(ref, syn, ratio, 7);
    size_t n_syn = 0;
    for (const Sample& s : stream) n_syn += s.expression[0] == 's';
    CHECK(std::abs(static_cast<double>(n_syn) - ratio * static_cast<double>(stream.size())) <=
          1.0);
    // every referring sample appears exactly once
    CHECK(stream.size() - n_syn == 10);
  }

  // determinism
  auto a = mix_indices(10, 30, 0.5, 3);
  auto b = mix_indices(10, 30, 0.5, 3);
  CHECK(a == b);
}

TEST_CASE("dataset write + load round trip") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "refseg_test_ds";
  fs::remove_all(dir);

  SceneSpec spec;
  spec.image_size = 24;
  spec.min_radius = 4;
  spec.max_radius = 6;
  GeneratedDataset data = generate_dataset(11, spec, 6);
  CHECK(data.referring.size() == 6);
  CHECK(data.synthesized.size() >= 6);
  write_dataset(dir.string(), data);

  std::vector<Sample> loaded = load_manifest((dir / "dataset.tsv").string());
  REQUIRE(loaded.size() == 6);
  for (size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].expression == data.referring[i].expression);
    CHECK(loaded[i].class_label == data.referring[i].class_label);
    CHECK(loaded[i].gt_mask.v == data.referring[i].gt_mask.v);
    CHECK(loaded[i].image->height == 24);
    // 8-bit quantization: pixels within half a step
    for (size_t j = 0; j < loaded[i].image->pix.size(); ++j)
      CHECK(std::abs(loaded[i].image->pix[j] - data.referring[i].image->pix[j]) <=
            0.5 / 255.0 + 1e-12);
  }
  std::vector<Sample> syn = load_manifest((dir / "synth.tsv").string());
  CHECK(syn.size() == data.synthesized.size());
  fs::remove_all(dir);
}

TEST_CASE("generated datasets are pure functions of the seed") {
  SceneSpec spec;
  spec.image_size = 24;
  spec.min_radius = 4;
  spec.max_radius = 6;
  GeneratedDataset a = generate_dataset(5, spec, 4);
  GeneratedDataset b = generate_dataset(5, spec, 4);
  REQUIRE(a.referring.size() == b.referring.size());
  for (size_t i = 0; i < a.referring.size(); ++i) {
    CHECK(a.referring[i].expression == b.referring[i].expression);
    CHECK(a.referring[i].gt_mask.v == b.referring[i].gt_mask.v);
    CHECK(a.scenes[i].image->pix == b.scenes[i].image->pix);
  }
}
