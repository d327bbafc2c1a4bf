#include "refseg/metrics.hpp"

#include <thread>

namespace refseg {

std::pair<IoUStat, double> iou(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    fail(ErrorCode::ShapeMismatch, strprintf("masks %dx%d vs %dx%d", pred.height, pred.width,
                                             gt.height, gt.width));
  if (gt.count() == 0) fail(ErrorCode::EmptyGroundTruth, "ground-truth mask has no pixels");
  IoUStat s;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    bool p = pred.v[i] != 0, g = gt.v[i] != 0;
    s.intersection += p && g;
    s.uni += p || g;
  }
  return {s, static_cast<double>(s.intersection) / static_cast<double>(s.uni)};
}

double precision_at(const std::vector<double>& ious, double theta) {
  if (ious.empty()) fail(ErrorCode::EmptyList, "no IoU values");
  if (!(theta > 0.0 && theta < 1.0))
    fail(ErrorCode::BadThreshold, strprintf("theta %g not in (0,1)", theta));
  size_t hits = 0;
  for (double v : ious) hits += v > theta;
  return static_cast<double>(hits) / static_cast<double>(ious.size());
}

double overall_iou(const std::vector<IoUStat>& stats) {
  if (stats.empty()) fail(ErrorCode::EmptyList, "no IoU stats");
  long long inter = 0, uni = 0;
  for (const IoUStat& s : stats) {
    inter += s.intersection;
    uni += s.uni;
  }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

MetricsReport evaluate_with(const MaskPredictor& predictor, const std::vector<Sample>& samples,
                            int jobs) {
  if (samples.empty()) fail(ErrorCode::EmptyList, "no samples to evaluate");
  if (jobs < 1) jobs = 1;
  size_t n = samples.size();
  std::vector<IoUStat> stats(n);
  std::vector<double> values(n);

  auto run_range = [&](size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i) {
      auto [stat, value] = iou(predictor(samples[i]), samples[i].gt_mask);
      stats[i] = stat;
      values[i] = value;
    }
  };

  if (jobs == 1 || n < 2) {
    run_range(0, n);
  } else {
    size_t workers = std::min<size_t>(jobs, n);
    std::vector<std::thread> pool;
    for (size_t t = 0; t < workers; ++t) {
      size_t lo = n * t / workers, hi = n * (t + 1) / workers;
      pool.emplace_back(run_range, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  MetricsReport r;
  r.n = n;
  for (int k = 0; k < 5; ++k) r.prec[k] = precision_at(values, kPrecisionThresholds[k]);
  r.overall = overall_iou(stats);
  return r;
}

MetricsReport evaluate(const Model& model, const std::vector<Sample>& samples, int jobs) {
  return evaluate_with(
      [&model](const Sample& s) { return predict(model, *s.image, s.expression).mask; },
      samples, jobs);
}

MetricsReport evaluate_manifest(const Model& model, const std::string& tsv_path, int jobs) {
  return evaluate(model, load_manifest(tsv_path), jobs);
}

std::string report_json(const MetricsReport& r) {
  return strprintf(
      "{\"n\": %zu, \"prec_05\": %s, \"prec_06\": %s, \"prec_07\": %s, \"prec_08\": %s, "
      "\"prec_09\": %s, \"overall_iou\": %s}",
      r.n, fmt_g17(r.prec[0]).c_str(), fmt_g17(r.prec[1]).c_str(), fmt_g17(r.prec[2]).c_str(),
      fmt_g17(r.prec[3]).c_str(), fmt_g17(r.prec[4]).c_str(), fmt_g17(r.overall).c_str());
}

std::string report_table_header() {
  return strprintf("%-28s %9s %9s %9s %9s %9s %12s", "method", "prec@0.5", "prec@0.6",
                   "prec@0.7", "prec@0.8", "prec@0.9", "overall IoU");
}

std::string report_table_row(const std::string& name, const MetricsReport& r) {
  return strprintf("%-28s %8.2f%% %8.2f%% %8.2f%% %8.2f%% %8.2f%% %11.2f%%", name.c_str(),
                   100.0 * r.prec[0], 100.0 * r.prec[1], 100.0 * r.prec[2], 100.0 * r.prec[3],
                   100.0 * r.prec[4], 100.0 * r.overall);
}

}  // namespace refseg
