#include "refseg/classifier.hpp"

#include <algorithm>
#include <cmath>

namespace refseg {

static void init_layer(Matrix& w, Vec& b, int rows, int cols, Rng& rng) {
  w = Matrix(rows, cols);
  double s = std::sqrt(6.0 / (rows + cols));
  for (auto& v : w.a) v = rng.uniform(-s, s);
  b.assign(rows, 0.0);
}

MlpParams MlpParams::init(int in, int hidden, int out, Rng& rng) {
  MlpParams p;
  init_layer(p.w1, p.b1, hidden, in, rng);
  // ReLU hidden layer: a small positive bias keeps all-dead inputs off the kink
  p.b1.assign(hidden, 0.01);
  init_layer(p.w2, p.b2, out, hidden, rng);
  return p;
}

MlpParams MlpParams::zeros(int in, int hidden, int out) {
  MlpParams p;
  p.w1 = Matrix(hidden, in);
  p.b1.assign(hidden, 0.0);
  p.w2 = Matrix(out, hidden);
  p.b2.assign(out, 0.0);
  return p;
}

Vec softmax(std::span<const double> logits) {
  double mx = *std::max_element(logits.begin(), logits.end());
  Vec p(logits.size());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

Vec softmax_vjp(const Vec& probs, const Vec& d_probs) {
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) acc += d_probs[i] * probs[i];
  Vec d_logits(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) d_logits[i] = probs[i] * (d_probs[i] - acc);
  return d_logits;
}

Vec mlp_logits(const MlpParams& p, std::span<const double> input, MlpTrace* trace) {
  if (static_cast<int>(input.size()) != p.in_dim())
    fail(ErrorCode::ShapeMismatch,
         strprintf("classifier input %zu, expected %d", input.size(), p.in_dim()));
  Vec a1(p.hidden_dim());
  matvec(p.w1, input, p.b1, a1);
  for (auto& v : a1) v = std::max(0.0, v);
  Vec logits(p.out_dim());
  matvec(p.w2, a1, p.b2, logits);
  if (trace) {
    trace->input.assign(input.begin(), input.end());
    trace->a1 = a1;
  }
  return logits;
}

ClassDistribution classify(const MlpParams& p, const Vec& hidden_state) {
  return softmax(mlp_logits(p, hidden_state, nullptr));
}

void mlp_backward(const MlpParams& p, const MlpTrace& trace, const Vec& d_logits,
                  MlpParams& grads, Vec* d_input) {
  outer_acc(grads.w2, d_logits, trace.a1);
  axpy(1.0, d_logits, grads.b2);
  Vec da1(p.hidden_dim(), 0.0);
  matvec_t_acc(p.w2, d_logits, da1);
  for (int k = 0; k < p.hidden_dim(); ++k)
    if (trace.a1[k] <= 0.0) da1[k] = 0.0;
  outer_acc(grads.w1, da1, trace.input);
  axpy(1.0, da1, grads.b1);
  if (d_input) {
    d_input->assign(p.in_dim(), 0.0);
    matvec_t_acc(p.w1, da1, *d_input);
  }
}

double encoder_gradients(const LstmParams& lstm, const MlpParams& cls,
                         const EmbeddingTable& table, const TokenSequence& seq, int label,
                         LstmParams& lstm_grads, MlpParams& cls_grads) {
  if (label < 0 || label >= cls.out_dim())
    fail(ErrorCode::BadLabel, strprintf("label %d with %d classes", label, cls.out_dim()));
  LstmTrace lt;
  Vec h = encode(lstm, table, seq, &lt);
  MlpTrace mt;
  Vec logits = mlp_logits(cls, h, &mt);
  Vec probs = softmax(logits);
  Vec d_logits = probs;  // softmax + cross-entropy: p - onehot(label)
  d_logits[label] -= 1.0;
  Vec d_h(h.size(), 0.0);
  mlp_backward(cls, mt, d_logits, cls_grads, &d_h);
  lstm_backward(lstm, lt, d_h, lstm_grads, nullptr);
  return -std::log(std::max(probs[label], 1e-12));
}

}  // namespace refseg
