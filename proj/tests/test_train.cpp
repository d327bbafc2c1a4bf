#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "refseg/train.hpp"

using namespace refseg;

TEST_CASE("bce_loss hand values and gradient formula") {
  ForegroundMap p(2, 2);
  BinaryMask gt(2, 2);
  gt.at(0, 0) = 1;
  gt.at(1, 1) = 1;

  // p == gt (after clamping) is near-zero loss
  p.p = {1.0, 0.0, 0.0, 1.0};
  auto [perfect, g0] = bce_loss(p, gt);
  CHECK(perfect < 1e-6);

  // uniform 0.5 gives ln 2
  for (auto& v : p.p) v = 0.5;
  auto [ln2, g1] = bce_loss(p, gt);
  CHECK(ln2 == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // gradient matches central differences
  Rng rng(3);
  for (auto& v : p.p) v = rng.uniform(0.05, 0.95);
  auto [base, grad] = bce_loss(p, gt);
  const double h = 1e-6;
  for (size_t i = 0; i < p.p.size(); ++i) {
    double saved = p.p[i];
    p.p[i] = saved + h;
    double up = bce_loss(p, gt).first;
    p.p[i] = saved - h;
    double down = bce_loss(p, gt).first;
    p.p[i] = saved;
    double numeric = (up - down) / (2 * h);
    CHECK(std::abs(numeric - grad.p[i]) /
              std::max({std::abs(numeric), std::abs(grad.p[i]), 1e-8}) <
          1e-4);
  }

  BinaryMask wrong(3, 2);
  CHECK_THROWS_AS(bce_loss(p, wrong), Error);
}

TEST_CASE("cross_entropy_loss hand values and logit gradient") {
  ClassDistribution uniform(4, 0.25);
  auto [l, g] = cross_entropy_loss(uniform, 2);
  CHECK(l == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(g[2] == doctest::Approx(0.25 - 1.0).epsilon(1e-15));
  CHECK(g[0] == 0.25);

  ClassDistribution hot{0.0, 1.0, 0.0};
  CHECK(cross_entropy_loss(hot, 1).first == doctest::Approx(0.0).epsilon(1e-9));

  CHECK_THROWS_AS(cross_entropy_loss(uniform, 4), Error);
  CHECK_THROWS_AS(cross_entropy_loss(uniform, -1), Error);
}

TEST_CASE("sgd_step hand iteration on a quadratic") {
  // f(x) = x^2, f'(x) = 2x, lr 0.1, no momentum: 1 -> 0.8 -> 0.64
  Vec x{1.0}, v{0.0};
  Vec g{2.0 * x[0]};
  sgd_step(x, g, v, 0.1, 0.0);
  CHECK(x[0] == doctest::Approx(0.8).epsilon(1e-15));
  g[0] = 2.0 * x[0];
  sgd_step(x, g, v, 0.1, 0.0);
  CHECK(x[0] == doctest::Approx(0.64).epsilon(1e-15));

  // zero gradient: params unchanged, velocity decays
  Vec p{2.0}, vel{1.0}, zero{0.0};
  sgd_step(p, zero, vel, 0.1, 0.9);
  CHECK(vel[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(p[0] == doctest::Approx(2.9).epsilon(1e-15));
}

TEST_CASE("full-model gradients match finite differences on random configs") {
  for (uint64_t seed : {11u, 22u, 33u, 44u}) {
    double err = grad_check_random_config(seed);
    CHECK(err < 1e-4);
  }
}

// ---------------------------------------------------------------------------
// training behavior on a miniature dataset
// ---------------------------------------------------------------------------

namespace {

struct TinyData {
  GeneratedDataset data;
  std::string vectors_path;
};

TinyData tiny_dataset(uint64_t seed, int count) {
  SceneSpec spec;
  spec.image_size = 24;
  spec.min_radius = 4;
  spec.max_radius = 6;
  spec.classes = 4;
  TinyData t;
  t.data = generate_dataset(seed, spec, count);
  namespace fs = std::filesystem;
  fs::path p = fs::temp_directory_path() /
               ("refseg_vec_" + std::to_string(seed) + ".txt");
  std::vector<std::string> words = t.data.catalog.names;
  words.insert(words.end(), {"left", "right", "top", "bottom"});
  write_toy_vectors(p.string(), words, 8, 99);
  t.vectors_path = p.string();
  return t;
}

TrainConfig tiny_config(const TinyData& t) {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 4;
  c.dims.embed_dim = 8;
  c.dims.lstm_hidden = 8;
  c.dims.mlp_hidden = 8;
  c.dims.classes = 4;
  c.dims.conv1_channels = 4;
  c.dims.conv2_channels = 6;
  c.dims.head_hidden = 8;
  c.dims.fcn_hidden = 8;
  c.classifier_pretrain_epochs = 1;
  c.vectors_path = t.vectors_path;
  return c;
}

}  // namespace

TEST_CASE("training is deterministic and keeps fixed embeddings frozen") {
  TinyData t = tiny_dataset(3, 8);
  TrainConfig c = tiny_config(t);

  TrainHistory h1, h2;
  Model m1 = train_full(c, t.data.referring, t.data.synthesized, nullptr, &h1);
  Model m2 = train_full(c, t.data.referring, t.data.synthesized, nullptr, &h2);
  CHECK(h1.loss.size() == static_cast<size_t>(c.epochs));
  CHECK(h1.alpha.size() == static_cast<size_t>(c.epochs));
  CHECK(h1.loss == h2.loss);
  CHECK(h1.alpha == h2.alpha);
  CHECK(m1.fusion.raw == m2.fusion.raw);
  CHECK(m1.lstm_seg.w_i.a == m2.lstm_seg.w_i.a);
  CHECK(m1.conv.c2.w.a == m2.conv.c2.w.a);

  // pretrained rows identical to the file contents
  EmbeddingTable original = load_embedding_file(t.vectors_path);
  CHECK(m1.table.vectors.a == original.vectors.a);

  // alpha stays strictly inside (0,1)
  for (double a : h1.alpha) {
    CHECK(a > 0.0);
    CHECK(a < 1.0);
  }
}

TEST_CASE("scratch embeddings are trained when the pretrained toggle is off") {
  TinyData t = tiny_dataset(4, 8);
  TrainConfig c = tiny_config(t);
  c.pretrained_embedding = false;
  c.category_path = CategoryMode::Off;

  TrainHistory h;
  Model m = train_full(c, t.data.referring, t.data.synthesized, nullptr, &h);
  CHECK(m.embedding_trainable);
  CHECK(m.table.tokens.size() >= 4);

  // a second run from the same config is bit-identical even here
  Model m2 = train_full(c, t.data.referring, t.data.synthesized, nullptr, nullptr);
  CHECK(m.table.vectors.a == m2.table.vectors.a);
}

TEST_CASE("category path auto-disables when no sample carries a label") {
  TinyData t = tiny_dataset(5, 6);
  std::vector<Sample> unlabeled = t.data.referring;
  for (Sample& s : unlabeled) s.class_label = -1;
  TrainConfig c = tiny_config(t);
  c.synthesized_expressions = false;
  TrainHistory h;
  Model m = train_full(c, unlabeled, {}, nullptr, &h);
  CHECK_FALSE(h.category_path_active);
  CHECK(m.path == PathMode::Baseline);
}

TEST_CASE("loss decreases over a short run") {
  TinyData t = tiny_dataset(6, 16);
  TrainConfig c = tiny_config(t);
  c.epochs = 6;
  TrainHistory h;
  train_full(c, t.data.referring, t.data.synthesized, nullptr, &h);
  CHECK(h.loss.back() <= h.loss.front());
}

TEST_CASE("checkpoint round trip preserves every parameter") {
  TinyData t = tiny_dataset(7, 6);
  TrainConfig c = tiny_config(t);
  Model m = train_full(c, t.data.referring, t.data.synthesized, nullptr, nullptr);

  namespace fs = std::filesystem;
  fs::path p = fs::temp_directory_path() / "refseg_test_ckpt.bin";
  save_checkpoint(p.string(), m);
  Model r = load_checkpoint(p.string());

  CHECK(r.path == m.path);
  CHECK(r.dims.classes == m.dims.classes);
  CHECK(r.table.tokens == m.table.tokens);
  CHECK(r.table.vectors.a == m.table.vectors.a);
  CHECK(r.table.fallback == m.table.fallback);
  CHECK(r.lstm_seg.w_g.a == m.lstm_seg.w_g.a);
  CHECK(r.lstm_cls.b_f == m.lstm_cls.b_f);
  CHECK(r.classifier.w2.a == m.classifier.w2.a);
  CHECK(r.conv.c1.w.a == m.conv.c1.w.a);
  CHECK(r.head.w1.a == m.head.w1.a);
  CHECK(r.fcn.w2.a == m.fcn.w2.a);
  CHECK(r.fusion.raw == m.fusion.raw);

  // save -> load -> save gives identical bytes
  fs::path p2 = fs::temp_directory_path() / "refseg_test_ckpt2.bin";
  save_checkpoint(p2.string(), r);
  std::ifstream f1(p, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  fs::remove(p);
  fs::remove(p2);

  // prediction from the reloaded model is bit-identical
  const Sample& s = t.data.referring[0];
  Prediction a = predict(m, *s.image, s.expression);
  Prediction b = predict(r, *s.image, s.expression);
  CHECK(a.heatmap.p == b.heatmap.p);
  CHECK(a.mask.v == b.mask.v);
}

TEST_CASE("forced fusion endpoints reproduce the single paths bit for bit") {
  TinyData t = tiny_dataset(8, 6);
  TrainConfig c = tiny_config(t);
  c.epochs = 1;
  Model full = train_full(c, t.data.referring, t.data.synthesized, nullptr, nullptr);
  REQUIRE(full.path == PathMode::Full);

  const Sample& s = t.data.referring[0];

  Model forced = full;
  forced.fusion.raw = FusionWeight::kRawClamp;
  Prediction via_combine = predict(forced, *s.image, s.expression);
  Model base_only = full;
  base_only.path = PathMode::Baseline;
  Prediction direct = predict(base_only, *s.image, s.expression);
  CHECK(via_combine.heatmap.p == direct.heatmap.p);
  CHECK(via_combine.mask.v == direct.mask.v);

  forced.fusion.raw = -FusionWeight::kRawClamp;
  Prediction via_combine0 = predict(forced, *s.image, s.expression);
  Model cat_only = full;
  cat_only.path = PathMode::Category;
  Prediction direct0 = predict(cat_only, *s.image, s.expression);
  CHECK(via_combine0.heatmap.p == direct0.heatmap.p);
  CHECK(via_combine0.mask.v == direct0.mask.v);
}

TEST_CASE("ablation toggles reproduce the baseline row bit for bit") {
  TinyData t = tiny_dataset(9, 6);
  TrainConfig base = tiny_config(t);
  base.epochs = 1;
  auto rows = ablation_configs(base);
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].first == "baseline");
  CHECK(rows[4].first == "full");

  TrainConfig manual = base;
  manual.pretrained_embedding = false;
  manual.synthesized_expressions = false;
  manual.category_path = CategoryMode::Off;
  manual.seed = 123;
  Model direct = train_full(manual, t.data.referring, t.data.synthesized, nullptr, nullptr);

  TrainConfig row = rows[0].second;
  row.seed = 123;
  Model via_rows = train_full(row, t.data.referring, t.data.synthesized, nullptr, nullptr);
  CHECK(direct.lstm_seg.w_i.a == via_rows.lstm_seg.w_i.a);
  CHECK(direct.head.w1.a == via_rows.head.w1.a);
  CHECK(direct.table.vectors.a == via_rows.table.vectors.a);
}

TEST_CASE("evaluate is independent of the job count and honors oracle models") {
  TinyData t = tiny_dataset(10, 8);
  TrainConfig c = tiny_config(t);
  c.epochs = 1;
  Model m = train_full(c, t.data.referring, t.data.synthesized, nullptr, nullptr);
  MetricsReport r1 = evaluate(m, t.data.referring, 1);
  MetricsReport r2 = evaluate(m, t.data.referring, 3);
  CHECK(report_json(r1) == report_json(r2));
}
