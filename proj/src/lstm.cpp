#include "refseg/lstm.hpp"

#include <cmath>

namespace refseg {

static void init_gate(Matrix& w, Vec& b, int rows, int cols, double bias, Rng& rng) {
  w = Matrix(rows, cols);
  double s = std::sqrt(6.0 / (rows + cols));
  for (auto& v : w.a) v = rng.uniform(-s, s);
  b.assign(rows, bias);
}

LstmParams LstmParams::init(int input_dim, int hidden_dim, Rng& rng) {
  LstmParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  int cols = input_dim + hidden_dim;
  init_gate(p.w_i, p.b_i, hidden_dim, cols, 0.0, rng);
  init_gate(p.w_f, p.b_f, hidden_dim, cols, 1.0, rng);
  init_gate(p.w_o, p.b_o, hidden_dim, cols, 0.0, rng);
  init_gate(p.w_g, p.b_g, hidden_dim, cols, 0.0, rng);
  return p;
}

LstmParams LstmParams::zeros(int input_dim, int hidden_dim) {
  LstmParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  int cols = input_dim + hidden_dim;
  p.w_i = Matrix(hidden_dim, cols);
  p.w_f = Matrix(hidden_dim, cols);
  p.w_o = Matrix(hidden_dim, cols);
  p.w_g = Matrix(hidden_dim, cols);
  p.b_i.assign(hidden_dim, 0.0);
  p.b_f.assign(hidden_dim, 0.0);
  p.b_o.assign(hidden_dim, 0.0);
  p.b_g.assign(hidden_dim, 0.0);
  return p;
}

// z = W [x;h] + b
static void gate_preact(const Matrix& w, const Vec& b, std::span<const double> x,
                        std::span<const double> h, Vec& z) {
  int rows = w.rows;
  int d = static_cast<int>(x.size());
  z.assign(rows, 0.0);
  for (int r = 0; r < rows; ++r) {
    const double* wr = w.a.data() + static_cast<size_t>(r) * w.cols;
    double s = b[r];
    for (int c = 0; c < d; ++c) s += wr[c] * x[c];
    for (size_t j = 0; j < h.size(); ++j) s += wr[d + j] * h[j];
    z[r] = s;
  }
}

static void check_step_shapes(const LstmParams& p, size_t xs, size_t hs, size_t cs) {
  if (static_cast<int>(xs) != p.input_dim || static_cast<int>(hs) != p.hidden_dim ||
      static_cast<int>(cs) != p.hidden_dim)
    fail(ErrorCode::ShapeMismatch,
         strprintf("lstm_step got x=%zu h=%zu c=%zu for input_dim=%d hidden_dim=%d", xs, hs, cs,
                   p.input_dim, p.hidden_dim));
}

void lstm_step(const LstmParams& p, std::span<const double> x, std::span<const double> h_prev,
               std::span<const double> c_prev, Vec& h_out, Vec& c_out) {
  check_step_shapes(p, x.size(), h_prev.size(), c_prev.size());
  int hd = p.hidden_dim;
  Vec zi, zf, zo, zg;
  gate_preact(p.w_i, p.b_i, x, h_prev, zi);
  gate_preact(p.w_f, p.b_f, x, h_prev, zf);
  gate_preact(p.w_o, p.b_o, x, h_prev, zo);
  gate_preact(p.w_g, p.b_g, x, h_prev, zg);
  h_out.assign(hd, 0.0);
  c_out.assign(hd, 0.0);
  for (int k = 0; k < hd; ++k) {
    double i = sigmoid(zi[k]);
    double f = sigmoid(zf[k]);
    double o = sigmoid(zo[k]);
    double g = std::tanh(zg[k]);
    c_out[k] = f * c_prev[k] + i * g;
    h_out[k] = o * std::tanh(c_out[k]);
  }
}

Vec lstm_forward(const LstmParams& p, const std::vector<Vec>& inputs, LstmTrace* trace) {
  int hd = p.hidden_dim;
  Vec h(hd, 0.0), c(hd, 0.0);
  Vec zi, zf, zo, zg;
  for (const Vec& x : inputs) {
    check_step_shapes(p, x.size(), h.size(), c.size());
    gate_preact(p.w_i, p.b_i, x, h, zi);
    gate_preact(p.w_f, p.b_f, x, h, zf);
    gate_preact(p.w_o, p.b_o, x, h, zo);
    gate_preact(p.w_g, p.b_g, x, h, zg);
    Vec gi(hd), gf(hd), go(hd), gg(hd), cn(hd), hn(hd), tc(hd);
    for (int k = 0; k < hd; ++k) {
      gi[k] = sigmoid(zi[k]);
      gf[k] = sigmoid(zf[k]);
      go[k] = sigmoid(zo[k]);
      gg[k] = std::tanh(zg[k]);
      cn[k] = gf[k] * c[k] + gi[k] * gg[k];
      tc[k] = std::tanh(cn[k]);
      hn[k] = go[k] * tc[k];
    }
    if (trace) {
      trace->x.push_back(x);
      trace->gi.push_back(gi);
      trace->gf.push_back(gf);
      trace->go.push_back(go);
      trace->gg.push_back(gg);
      trace->c.push_back(cn);
      trace->h.push_back(hn);
      trace->tc.push_back(tc);
    }
    c = std::move(cn);
    h = std::move(hn);
  }
  return h;
}

void lstm_backward(const LstmParams& p, const LstmTrace& trace, const Vec& d_h_final,
                   LstmParams& grads, std::vector<Vec>* d_inputs) {
  int hd = p.hidden_dim;
  int d = p.input_dim;
  size_t steps = trace.x.size();
  if (d_inputs) d_inputs->assign(steps, Vec(d, 0.0));
  Vec dh = d_h_final;
  Vec dc(hd, 0.0);
  Vec concat(static_cast<size_t>(d) + hd);
  for (size_t t = steps; t-- > 0;) {
    const Vec& gi = trace.gi[t];
    const Vec& gf = trace.gf[t];
    const Vec& go = trace.go[t];
    const Vec& gg = trace.gg[t];
    const Vec& tc = trace.tc[t];
    const Vec* c_prev = t > 0 ? &trace.c[t - 1] : nullptr;
    const Vec* h_prev = t > 0 ? &trace.h[t - 1] : nullptr;

    // gate pre-activation gradients
    Vec dzi(hd), dzf(hd), dzo(hd), dzg(hd);
    for (int k = 0; k < hd; ++k) {
      double dck = dc[k] + dh[k] * go[k] * (1.0 - tc[k] * tc[k]);
      dzo[k] = dh[k] * tc[k] * go[k] * (1.0 - go[k]);
      dzi[k] = dck * gg[k] * gi[k] * (1.0 - gi[k]);
      double cp = c_prev ? (*c_prev)[k] : 0.0;
      dzf[k] = dck * cp * gf[k] * (1.0 - gf[k]);
      dzg[k] = dck * gi[k] * (1.0 - gg[k] * gg[k]);
      dc[k] = dck * gf[k];
    }

    std::copy(trace.x[t].begin(), trace.x[t].end(), concat.begin());
    if (h_prev)
      std::copy(h_prev->begin(), h_prev->end(), concat.begin() + d);
    else
      std::fill(concat.begin() + d, concat.end(), 0.0);

    outer_acc(grads.w_i, dzi, concat);
    outer_acc(grads.w_f, dzf, concat);
    outer_acc(grads.w_o, dzo, concat);
    outer_acc(grads.w_g, dzg, concat);
    axpy(1.0, dzi, grads.b_i);
    axpy(1.0, dzf, grads.b_f);
    axpy(1.0, dzo, grads.b_o);
    axpy(1.0, dzg, grads.b_g);

    Vec dconcat(static_cast<size_t>(d) + hd, 0.0);
    matvec_t_acc(p.w_i, dzi, dconcat);
    matvec_t_acc(p.w_f, dzf, dconcat);
    matvec_t_acc(p.w_o, dzo, dconcat);
    matvec_t_acc(p.w_g, dzg, dconcat);

    if (d_inputs)
      for (int c2 = 0; c2 < d; ++c2) (*d_inputs)[t][c2] += dconcat[c2];
    for (int k = 0; k < hd; ++k) dh[k] = dconcat[d + k];
  }
}

Vec encode(const LstmParams& p, const EmbeddingTable& table, const TokenSequence& seq,
           LstmTrace* trace) {
  if (table.dim != p.input_dim)
    fail(ErrorCode::DimensionMismatch,
         strprintf("table dimension %d vs lstm input %d", table.dim, p.input_dim));
  std::vector<Vec> inputs;
  inputs.reserve(seq.size());
  for (const std::string& tok : seq) {
    if (tok.empty()) fail(ErrorCode::EmptyToken, "empty token in sequence");
    auto row = table.row_or_fallback(tok);
    inputs.emplace_back(row.begin(), row.end());
    if (trace) trace->token_rows.push_back(table.find(tok));
  }
  return lstm_forward(p, inputs, trace);
}

}  // namespace refseg
