#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "refseg/classifier.hpp"
#include "refseg/embedding.hpp"
#include "refseg/image.hpp"
#include "refseg/lstm.hpp"
#include "refseg/segnet.hpp"
#include "refseg/tokenize.hpp"

namespace refseg {

// Which probability path produces the final foreground map.
enum class PathMode : uint8_t {
  Baseline = 0,  // expression-conditioned head only
  Category = 1,  // class-distribution fusion only
  Full = 2,      // weighted combination of both
};

const char* path_mode_name(PathMode m);

struct ModelDims {
  int embed_dim = 50;
  int lstm_hidden = 64;
  int mlp_hidden = 64;
  int classes = 8;
  int conv1_channels = 8;
  int conv2_channels = 12;
  int head_hidden = 32;
  int fcn_hidden = 32;
};

// The full parameter bundle. The expression encoder used for segmentation and
// the one used for expression classification are separate parameter sets.
struct Model {
  ModelDims dims;
  PathMode path = PathMode::Full;
  bool embedding_trainable = false;

  EmbeddingTable table;
  LstmParams lstm_seg;
  LstmParams lstm_cls;
  MlpParams classifier;
  ConvParams conv;
  HeadParams head;
  FcnParams fcn;
  FusionWeight fusion;
};

Model init_model(const ModelDims& dims, EmbeddingTable table, bool embedding_trainable,
                 PathMode path, uint64_t seed);

// Zeroes every numeric block; used to build gradient accumulators.
void zero_params(Model& m);

// Parameter groups included in an update.
struct ParamGroups {
  bool embedding = false;
  bool lstm_seg = false;
  bool lstm_cls = false;
  bool classifier = false;
  bool conv = false;
  bool head = false;
  bool fcn = false;
  bool fusion = false;

  static ParamGroups all(bool embedding_trainable);
  static ParamGroups for_path(PathMode path, bool embedding_trainable);
  static ParamGroups classifier_only();
};

// Visits every selected parameter block in a fixed, documented order.
void visit_params(Model& m, const ParamGroups& groups,
                  const std::function<void(std::span<double>)>& fn);
size_t param_count(Model& m, const ParamGroups& groups);

// ---------------------------------------------------------------------------
// Checkpoint: versioned little-endian binary, header + vocabulary + row-major
// parameter blocks. Byte-stable across runs for identical parameters.
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const Model& m);
Model load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct ForwardTrace {
  TokenSequence tokens;
  LstmTrace seg_trace, cls_trace;
  MlpTrace mlp_trace;
  ConvTrace conv_trace;
  HeadTrace head_trace;
  FcnTrace fcn_trace;
  FeatureMap fmap;
  Vec h_seg, h_cls;
  Vec text_logits;
  ClassDistribution text_probs;
  ProbabilityMap pixel_probs;
  ForegroundMap p1, p2, combined;
};

// Foreground probabilities at feature-grid resolution, per the model's path.
ForegroundMap model_forward_grid(const Model& m, const Image& image, const TokenSequence& tokens,
                                 ForwardTrace* trace);

struct Prediction {
  ForegroundMap heatmap;  // image resolution, pre-threshold
  BinaryMask mask;
};

Prediction predict(const Model& m, const Image& image, const std::string& expression);

}  // namespace refseg
