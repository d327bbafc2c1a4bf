#pragma once

#include <vector>

#include "refseg/common.hpp"
#include "refseg/lstm.hpp"

namespace refseg {

// Probability vector over the M visual classes (nonnegative, sums to 1).
using ClassDistribution = Vec;

// Two-layer network on the LSTM final hidden state: ReLU hidden layer,
// softmax output over M classes.
struct MlpParams {
  Matrix w1;  // hidden x in
  Vec b1;
  Matrix w2;  // out x hidden
  Vec b2;

  static MlpParams init(int in, int hidden, int out, Rng& rng);
  static MlpParams zeros(int in, int hidden, int out);
  int in_dim() const { return w1.cols; }
  int hidden_dim() const { return w1.rows; }
  int out_dim() const { return w2.rows; }
};

struct MlpTrace {
  Vec input, a1, probs;
};

Vec softmax(std::span<const double> logits);

// d(logits) from d(probs) through the softmax jacobian.
Vec softmax_vjp(const Vec& probs, const Vec& d_probs);

Vec mlp_logits(const MlpParams& p, std::span<const double> input, MlpTrace* trace);

ClassDistribution classify(const MlpParams& p, const Vec& hidden_state);

// Accumulates gradients given d(loss)/d(logits); optionally returns
// d(loss)/d(input).
void mlp_backward(const MlpParams& p, const MlpTrace& trace, const Vec& d_logits,
                  MlpParams& grads, Vec* d_input);

// Cross-entropy loss of classify(encode(seq)) against `label`, with gradients
// for every LSTM and classifier parameter accumulated into the shape mirrors.
double encoder_gradients(const LstmParams& lstm, const MlpParams& cls,
                         const EmbeddingTable& table, const TokenSequence& seq, int label,
                         LstmParams& lstm_grads, MlpParams& cls_grads);

}  // namespace refseg
