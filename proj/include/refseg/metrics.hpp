#pragma once

#include <functional>
#include <string>
#include <vector>

#include "refseg/image.hpp"
#include "refseg/model.hpp"
#include "refseg/synth.hpp"

namespace refseg {

struct IoUStat {
  long long intersection = 0;
  long long uni = 0;
};

// Exact integer intersection/union counts, divided once.
std::pair<IoUStat, double> iou(const BinaryMask& pred, const BinaryMask& gt);

// Fraction of samples with IoU strictly greater than theta.
double precision_at(const std::vector<double>& ious, double theta);

// Cumulative intersections over cumulative unions (not the mean of IoUs).
double overall_iou(const std::vector<IoUStat>& stats);

constexpr double kPrecisionThresholds[5] = {0.5, 0.6, 0.7, 0.8, 0.9};

struct MetricsReport {
  size_t n = 0;
  double prec[5] = {0, 0, 0, 0, 0};  // prec@{0.5..0.9}
  double overall = 0.0;
};

// Runs predict over every sample in order; `jobs` parallelizes prediction but
// accumulation stays in manifest order, so results are independent of jobs.
MetricsReport evaluate(const Model& model, const std::vector<Sample>& samples, int jobs = 1);

// Same aggregation behind any mask producer; lets tests plug oracle or
// degenerate predictors.
using MaskPredictor = std::function<BinaryMask(const Sample&)>;
MetricsReport evaluate_with(const MaskPredictor& predictor, const std::vector<Sample>& samples,
                            int jobs = 1);

// Loads a manifest and evaluates it.
MetricsReport evaluate_manifest(const Model& model, const std::string& tsv_path, int jobs = 1);

std::string report_json(const MetricsReport& r);
std::string report_table_header();
std::string report_table_row(const std::string& name, const MetricsReport& r);

}  // namespace refseg
