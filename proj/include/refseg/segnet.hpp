#pragma once

#include <vector>

#include "refseg/common.hpp"
#include "refseg/image.hpp"

namespace refseg {

// ---------------------------------------------------------------------------
// Tiny convolutional feature extractor: two 3x3 stride-2 ReLU convolutions,
// zero padding 1, so each stage halves the grid (ceil) and the output grid is
// ceil(H/4) x ceil(W/4). Two coordinate channels are appended after the
// learned channels.
// ---------------------------------------------------------------------------

struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  Matrix w;  // out_channels x (in_channels*9), kernel row-major (ic, ky, kx)
  Vec b;

  static ConvLayer init(int in_ch, int out_ch, Rng& rng);
  static ConvLayer zeros(int in_ch, int out_ch);
};

struct ConvParams {
  ConvLayer c1;  // 3 -> conv1_channels
  ConvLayer c2;  // conv1_channels -> conv2_channels
};

struct ConvTrace {
  // post-ReLU activations of both stages plus the raw input planes
  Vec input;  // 3 x H x W
  int in_h = 0, in_w = 0;
  Vec a1;  // c1.out x h1 x w1
  int h1 = 0, w1 = 0;
  Vec a2;  // c2.out x h2 x w2
  int h2 = 0, w2 = 0;
};

FeatureMap extract_features(const Image& image, const ConvParams& conv, ConvTrace* trace);

// d_features: gradient w.r.t. the feature map; only the learned channels are
// consumed (coordinate channels are constants). Accumulates into `grads`.
void extract_features_backward(const ConvParams& conv, const ConvTrace& trace,
                               const FeatureMap& d_features, ConvParams& grads);

// ---------------------------------------------------------------------------
// Baseline head: the encoded expression is tiled to every cell, concatenated
// with that cell's channels, passed through a 1x1 ReLU layer and a 1x1 logit
// layer with per-cell sigmoid.
// ---------------------------------------------------------------------------

struct HeadParams {
  Matrix w1;  // hidden x (feature_channels + expr_dim)
  Vec b1;
  Vec w2;  // hidden
  double b2 = 0.0;

  static HeadParams init(int in, int hidden, Rng& rng);
  static HeadParams zeros(int in, int hidden);
};

struct HeadTrace {
  Vec a1;  // hidden activations, cell-major
  Vec p;   // sigmoid outputs
};

ForegroundMap baseline_head(const FeatureMap& fmap, const Vec& expr, const HeadParams& head,
                            HeadTrace* trace);

// d_out is w.r.t. the sigmoid output. d_features / d_expr accumulate when given.
void baseline_head_backward(const FeatureMap& fmap, const Vec& expr, const HeadParams& head,
                            const HeadTrace& trace, const ForegroundMap& d_out,
                            HeadParams& grads, FeatureMap* d_features, Vec* d_expr);

// ---------------------------------------------------------------------------
// Category head: per-cell 1x1 ReLU layer + 1x1 layer to M logits, softmax.
// ---------------------------------------------------------------------------

struct FcnParams {
  Matrix w1;  // hidden x feature_channels
  Vec b1;
  Matrix w2;  // classes x hidden
  Vec b2;

  static FcnParams init(int in, int hidden, int classes, Rng& rng);
  static FcnParams zeros(int in, int hidden, int classes);
};

struct FcnTrace {
  Vec a1;  // hidden activations, cell-major
  ProbabilityMap probs;
};

ProbabilityMap category_head(const FeatureMap& fmap, const FcnParams& fcn, FcnTrace* trace);

// d_probs is w.r.t. the per-cell probabilities (softmax jacobian applied here).
void category_head_backward(const FeatureMap& fmap, const FcnParams& fcn, const FcnTrace& trace,
                            const ProbabilityMap& d_probs, FcnParams& grads,
                            FeatureMap* d_features);

// ---------------------------------------------------------------------------
// Probability fusion and combination
// ---------------------------------------------------------------------------

// Per-cell dot product of the pixel class distribution with the expression
// class distribution.
ForegroundMap fuse(const ProbabilityMap& pmap, const Vec& text_probs);
void fuse_backward(const ProbabilityMap& pmap, const Vec& text_probs, const ForegroundMap& d_out,
                   ProbabilityMap* d_pmap, Vec* d_text);

// Mixing weight alpha = sigmoid(raw). raw is clamped at +/-30 where alpha
// saturates to the exact endpoint, so a forced endpoint reproduces the
// corresponding single path bit for bit.
struct FusionWeight {
  static constexpr double kRawClamp = 30.0;
  double raw = 0.0;
  double alpha() const;
};

// alpha*p1 + (1-alpha)*p2 per cell, clamped into [min(p1,p2), max(p1,p2)].
ForegroundMap combine(const ForegroundMap& p1, const ForegroundMap& p2, FusionWeight w);
void combine_backward(const ForegroundMap& p1, const ForegroundMap& p2, FusionWeight w,
                      const ForegroundMap& d_out, ForegroundMap* d_p1, ForegroundMap* d_p2,
                      double* d_raw);

// ---------------------------------------------------------------------------
// Resolution changes and thresholding
// ---------------------------------------------------------------------------

// Corner-aligned bilinear resampling.
ForegroundMap upsample_bilinear(const ForegroundMap& map, int out_h, int out_w);

// value >= threshold counts as foreground.
BinaryMask binarize(const ForegroundMap& map, double threshold = 0.5);

// Area-weighted majority pooling of a full-resolution mask onto a grid;
// ties count as foreground.
BinaryMask downsample_mask(const BinaryMask& mask, int grid_h, int grid_w);

}  // namespace refseg
