#pragma once

#include <optional>
#include <string>
#include <vector>

#include "refseg/metrics.hpp"
#include "refseg/model.hpp"
#include "refseg/synth.hpp"

namespace refseg {

enum class CategoryMode { Off, On, Only };

const char* category_mode_name(CategoryMode m);
PathMode path_for(CategoryMode m);

struct TrainConfig {
  uint64_t seed = 1;
  int epochs = 12;
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 8;
  double mix_ratio = 0.5;      // synthesized-sample stream fraction
  double refer_fraction = 1.0; // subsample of the referring training set
  bool pretrained_embedding = true;
  bool synthesized_expressions = true;
  CategoryMode category_path = CategoryMode::On;
  double classifier_loss_weight = 1.0;
  int classifier_pretrain_epochs = 2;
  ModelDims dims;
  std::string vectors_path;  // required when pretrained_embedding
};

struct TrainHistory {
  std::vector<double> loss;     // mean per-sample loss per epoch
  std::vector<double> val_iou;  // overall IoU on the validation set (NaN if none)
  std::vector<double> alpha;    // mixing weight after each epoch
  bool category_path_active = true;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Mean per-cell binary cross-entropy; probabilities are clamped to
// [1e-7, 1-1e-7] before the logs. Returns the loss and d(loss)/d(p).
std::pair<double, ForegroundMap> bce_loss(const ForegroundMap& p, const BinaryMask& grid_gt);

// -log p[label]; returns the loss and the logit gradient p - onehot(label).
std::pair<double, Vec> cross_entropy_loss(const ClassDistribution& dist, int label);

// v <- momentum*v - lr*g; p <- p + v
void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
              double lr, double momentum);

// ---------------------------------------------------------------------------
// Per-sample loss + gradients through the whole bundle
// ---------------------------------------------------------------------------

struct SampleLoss {
  double total = 0.0;
  double segmentation = 0.0;
  double classification = 0.0;
};

// Forward + loss only (no gradients); used by finite differencing.
SampleLoss sample_loss(const Model& m, const Sample& s, double classifier_weight);

// Forward + backward; accumulates into `grads` (a zeroed shape-mirror Model).
SampleLoss sample_gradients(const Model& m, const Sample& s, double classifier_weight,
                            Model& grads);

// ---------------------------------------------------------------------------
// Gradient checking: central differences over every trainable parameter,
// relative error denominator max(|analytic|, |numeric|, 1e-8).
// ---------------------------------------------------------------------------

double grad_check(Model& m, const Sample& s, double classifier_weight, double step = 1e-5);

// Random small configuration (tiny dims, short sequence, tiny image) checking
// every component at once: both LSTMs, classifier, both heads, conv stack,
// embedding rows and the fusion weight.
double grad_check_random_config(uint64_t seed, double step = 1e-5);

// ---------------------------------------------------------------------------
// Training entry points
// ---------------------------------------------------------------------------

Model train_full(const TrainConfig& config, const std::vector<Sample>& referring,
                 const std::vector<Sample>& synthesized, const std::vector<Sample>* val,
                 TrainHistory* history);

// Trains only the expression classifier (classifier LSTM + MLP) with
// cross-entropy on labeled samples. Used for pretraining and on its own.
void train_classifier(Model& m, const std::vector<Sample>& labeled, int epochs, double lr,
                      double momentum, int batch_size, uint64_t seed);

// ---------------------------------------------------------------------------
// Ablations: {baseline, +embedding, +embedding+synthesized, category-only,
// full}, one evaluation report per row, medians over a shared seed set.
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string name;
  TrainConfig config;  // seed field is overwritten per run
  std::vector<MetricsReport> per_seed;
  std::vector<double> train_seconds;
  MetricsReport median;
};

struct AblationReport {
  std::vector<uint64_t> seeds;
  std::vector<AblationRow> rows;
};

std::vector<std::pair<std::string, TrainConfig>> ablation_configs(const TrainConfig& base);

AblationReport ablation_runs(const TrainConfig& base, const std::vector<Sample>& referring,
                             const std::vector<Sample>& synthesized,
                             const std::vector<Sample>& test,
                             const std::vector<uint64_t>& seeds);

std::string ablation_json(const AblationReport& r);

}  // namespace refseg
