#pragma once

#include <vector>

#include "refseg/common.hpp"
#include "refseg/embedding.hpp"
#include "refseg/tokenize.hpp"

namespace refseg {

// Single-layer LSTM with the standard gate equations over [x; h]:
//   i,f,o = sigmoid(W [x;h] + b),  g = tanh(W_g [x;h] + b_g)
//   c' = f*c + i*g,  h' = o*tanh(c')
struct LstmParams {
  int input_dim = 0;
  int hidden_dim = 0;
  Matrix w_i, w_f, w_o, w_g;  // each hidden_dim x (input_dim + hidden_dim)
  Vec b_i, b_f, b_o, b_g;

  // Glorot-uniform weights, forget bias 1, other biases 0.
  static LstmParams init(int input_dim, int hidden_dim, Rng& rng);
  static LstmParams zeros(int input_dim, int hidden_dim);
};

void lstm_step(const LstmParams& p, std::span<const double> x, std::span<const double> h_prev,
               std::span<const double> c_prev, Vec& h_out, Vec& c_out);

// Forward cache kept for backpropagation through time.
struct LstmTrace {
  std::vector<Vec> x;                      // inputs per step
  std::vector<Vec> gi, gf, go, gg;         // gate activations per step
  std::vector<Vec> c, h, tc;               // cell, hidden, tanh(cell) per step
  std::vector<int> token_rows;             // embedding row per step, -1 = fallback
};

// Runs the sequence from zero initial state; returns the final hidden state.
Vec lstm_forward(const LstmParams& p, const std::vector<Vec>& inputs, LstmTrace* trace);

// Accumulates parameter gradients for d(loss)/d(h_final) into `grads`
// (shape mirror of the params). When `d_inputs` is given, also accumulates
// gradients with respect to each input vector.
void lstm_backward(const LstmParams& p, const LstmTrace& trace, const Vec& d_h_final,
                   LstmParams& grads, std::vector<Vec>* d_inputs);

// Embeds each token through the table and scans; returns h_T.
Vec encode(const LstmParams& p, const EmbeddingTable& table, const TokenSequence& seq,
           LstmTrace* trace = nullptr);

}  // namespace refseg
