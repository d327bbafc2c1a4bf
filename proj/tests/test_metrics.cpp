#include <cmath>

#include "doctest.h"
#include "refseg/metrics.hpp"

using namespace refseg;

namespace {

BinaryMask mask_from(std::initializer_list<uint8_t> bits, int h, int w) {
  BinaryMask m(h, w);
  std::copy(bits.begin(), bits.end(), m.v.begin());
  return m;
}

}  // namespace

TEST_CASE("iou hand values") {
  BinaryMask a = mask_from({1, 1, 1, 1, 0, 0, 0, 0, 0}, 3, 3);
  auto [s_same, v_same] = iou(a, a);
  CHECK(v_same == 1.0);
  CHECK(s_same.intersection == 4);
  CHECK(s_same.uni == 4);

  BinaryMask b = mask_from({0, 0, 0, 0, 1, 1, 1, 1, 0}, 3, 3);
  CHECK(iou(a, b).second == 0.0);

  // |pred|=4, |gt|=4, overlap 2 -> 2/6
  BinaryMask c = mask_from({0, 0, 1, 1, 1, 1, 0, 0, 0}, 3, 3);
  auto [s, v] = iou(a, c);
  CHECK(s.intersection == 2);
  CHECK(s.uni == 6);
  CHECK(v == doctest::Approx(2.0 / 6.0).epsilon(1e-15));

  BinaryMask wrong(2, 2);
  CHECK_THROWS_AS(iou(a, wrong), Error);
  BinaryMask empty(3, 3);
  CHECK_THROWS_AS(iou(a, empty), Error);
}

TEST_CASE("precision_at uses strict inequality") {
  std::vector<double> ious{0.6, 0.4, 0.9};
  CHECK(precision_at(ious, 0.5) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(precision_at({0.5, 0.5, 0.5}, 0.5) == 0.0);
  CHECK(precision_at({1.0, 1.0}, 0.9) == 1.0);
  CHECK_THROWS_AS(precision_at({}, 0.5), Error);
}

TEST_CASE("overall_iou is cumulative, not the mean") {
  std::vector<IoUStat> stats{{2, 6}, {3, 3}};
  double overall = overall_iou(stats);
  CHECK(overall == doctest::Approx(5.0 / 9.0).epsilon(1e-15));
  double mean = (2.0 / 6.0 + 3.0 / 3.0) / 2.0;
  CHECK(mean == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(overall != mean);

  CHECK(overall_iou({{3, 7}}) == doctest::Approx(3.0 / 7.0).epsilon(1e-15));
  CHECK(overall_iou({{4, 4}, {9, 9}}) == 1.0);
  CHECK_THROWS_AS(overall_iou({}), Error);
}

TEST_CASE("metrics agree with a brute-force reimplementation on random masks") {
  Rng rng(17);
  std::vector<IoUStat> stats;
  std::vector<double> values;
  for (int iter = 0; iter < 300; ++iter) {
    int h = rng.uniform_int(2, 12), w = rng.uniform_int(2, 12);
    BinaryMask pred(h, w), gt(h, w);
    for (auto& v : pred.v) v = rng.uniform() < 0.4;
    for (auto& v : gt.v) v = rng.uniform() < 0.4;
    if (gt.count() == 0) gt.at(0, 0) = 1;

    long long inter = 0, uni = 0;  // naive double loop
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        inter += pred.at(y, x) && gt.at(y, x);
        uni += pred.at(y, x) || gt.at(y, x);
      }
    auto [stat, value] = iou(pred, gt);
    CHECK(stat.intersection == inter);
    CHECK(stat.uni == uni);
    CHECK(value == static_cast<double>(inter) / static_cast<double>(uni));
    stats.push_back(stat);
    values.push_back(value);
  }

  // order invariance
  std::vector<IoUStat> shuffled_stats = stats;
  std::vector<double> shuffled_values = values;
  Rng rng2(5);
  shuffle(shuffled_stats, rng2);
  Rng rng3(5);
  shuffle(shuffled_values, rng3);
  CHECK(overall_iou(shuffled_stats) == overall_iou(stats));
  for (double theta : {0.3, 0.5, 0.7})
    CHECK(precision_at(shuffled_values, theta) == precision_at(values, theta));

  // prec@theta nonincreasing in theta
  double last = 1.0;
  for (double theta : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}) {
    double p = precision_at(values, theta);
    CHECK(p <= last + 1e-15);
    last = p;
  }
}

TEST_CASE("evaluate_with on oracle and degenerate predictors") {
  Rng rng(23);
  std::vector<Sample> samples;
  auto img = std::make_shared<Image>(16, 16);
  for (int i = 0; i < 12; ++i) {
    Sample s;
    s.image = img;
    s.expression = "x";
    s.gt_mask = BinaryMask(10, 10);
    for (auto& v : s.gt_mask.v) v = rng.uniform() < 0.3;
    if (s.gt_mask.count() == 0) s.gt_mask.at(0, 0) = 1;
    samples.push_back(std::move(s));
  }

  // a predictor that always returns the ground truth scores perfectly
  MetricsReport oracle =
      evaluate_with([](const Sample& s) { return s.gt_mask; }, samples);
  for (double p : oracle.prec) CHECK(p == 1.0);
  CHECK(oracle.overall == 1.0);

  // empty predictions score zero everywhere
  MetricsReport empty = evaluate_with(
      [](const Sample& s) { return BinaryMask(s.gt_mask.height, s.gt_mask.width); }, samples);
  for (double p : empty.prec) CHECK(p == 0.0);
  CHECK(empty.overall == 0.0);

  // random predictor: report matches an independent re-aggregation
  std::vector<BinaryMask> preds;
  for (const Sample& s : samples) {
    BinaryMask m(s.gt_mask.height, s.gt_mask.width);
    for (auto& v : m.v) v = rng.uniform() < 0.5;
    preds.push_back(std::move(m));
  }
  size_t next = 0;
  MetricsReport got = evaluate_with(
      [&](const Sample&) { return preds[next++]; }, samples, 1);
  std::vector<IoUStat> stats;
  std::vector<double> vals;
  for (size_t i = 0; i < samples.size(); ++i) {
    auto [st, v] = iou(preds[i], samples[i].gt_mask);
    stats.push_back(st);
    vals.push_back(v);
  }
  CHECK(got.overall == overall_iou(stats));
  for (int k = 0; k < 5; ++k)
    CHECK(got.prec[k] == precision_at(vals, kPrecisionThresholds[k]));
}

TEST_CASE("report JSON carries the six metric keys") {
  MetricsReport r;
  r.n = 3;
  r.prec[0] = 0.5;
  r.overall = 0.25;
  std::string json = report_json(r);
  CHECK(json.find("\"n\": 3") != std::string::npos);
  CHECK(json.find("\"prec_05\": 0.5") != std::string::npos);
  CHECK(json.find("\"prec_09\": 0") != std::string::npos);
  CHECK(json.find("\"overall_iou\": 0.25") != std::string::npos);
}
