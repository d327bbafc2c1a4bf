#include "refseg/segnet.hpp"

#include <algorithm>
#include <cmath>

#include "refseg/classifier.hpp"

namespace refseg {

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

ConvLayer ConvLayer::init(int in_ch, int out_ch, Rng& rng) {
  ConvLayer l;
  l.in_channels = in_ch;
  l.out_channels = out_ch;
  l.w = Matrix(out_ch, in_ch * 9);
  double fan_in = in_ch * 9.0;
  double fan_out = out_ch * 9.0;
  double s = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : l.w.a) v = rng.uniform(-s, s);
  // small positive bias: cells whose whole input window is ReLU-dead would
  // otherwise sit exactly on the kink, where finite differences and the
  // subgradient disagree
  l.b.assign(out_ch, 0.01);
  return l;
}

ConvLayer ConvLayer::zeros(int in_ch, int out_ch) {
  ConvLayer l;
  l.in_channels = in_ch;
  l.out_channels = out_ch;
  l.w = Matrix(out_ch, in_ch * 9);
  l.b.assign(out_ch, 0.0);
  return l;
}

static inline int half_ceil(int n) { return (n - 1) / 2 + 1; }

// 3x3 stride-2 pad-1 convolution + ReLU over channel-major planes.
static void conv_relu(const ConvLayer& l, const double* in, int h, int w, Vec& out, int& oh,
                      int& ow) {
  oh = half_ceil(h);
  ow = half_ceil(w);
  out.assign(static_cast<size_t>(l.out_channels) * oh * ow, 0.0);
  const size_t plane = static_cast<size_t>(h) * w;
  for (int oc = 0; oc < l.out_channels; ++oc) {
    const double* wrow = l.w.a.data() + static_cast<size_t>(oc) * l.w.cols;
    double* op = out.data() + static_cast<size_t>(oc) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double s = l.b[oc];
        const int iy0 = 2 * oy - 1;
        const int ix0 = 2 * ox - 1;
        for (int ic = 0; ic < l.in_channels; ++ic) {
          const double* ip = in + static_cast<size_t>(ic) * plane;
          const double* wk = wrow + static_cast<size_t>(ic) * 9;
          for (int ky = 0; ky < 3; ++ky) {
            int iy = iy0 + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              int ix = ix0 + kx;
              if (ix < 0 || ix >= w) continue;
              s += wk[ky * 3 + kx] * ip[static_cast<size_t>(iy) * w + ix];
            }
          }
        }
        op[static_cast<size_t>(oy) * ow + ox] = std::max(0.0, s);
      }
    }
  }
}

// Backward of conv_relu: d_out is w.r.t. the post-ReLU output.
static void conv_relu_backward(const ConvLayer& l, const double* in, int h, int w,
                               const Vec& out_act, int oh, int ow, const Vec& d_out,
                               ConvLayer& grads, Vec* d_in) {
  const size_t plane = static_cast<size_t>(h) * w;
  if (d_in) d_in->assign(static_cast<size_t>(l.in_channels) * plane, 0.0);
  for (int oc = 0; oc < l.out_channels; ++oc) {
    const double* wrow = l.w.a.data() + static_cast<size_t>(oc) * l.w.cols;
    double* gw = grads.w.a.data() + static_cast<size_t>(oc) * grads.w.cols;
    const double* op = out_act.data() + static_cast<size_t>(oc) * oh * ow;
    const double* dp = d_out.data() + static_cast<size_t>(oc) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const size_t oi = static_cast<size_t>(oy) * ow + ox;
        double dz = dp[oi];
        if (dz == 0.0 || op[oi] <= 0.0) continue;  // ReLU gate
        grads.b[oc] += dz;
        const int iy0 = 2 * oy - 1;
        const int ix0 = 2 * ox - 1;
        for (int ic = 0; ic < l.in_channels; ++ic) {
          const double* ip = in + static_cast<size_t>(ic) * plane;
          double* gk = gw + static_cast<size_t>(ic) * 9;
          const double* wk = wrow + static_cast<size_t>(ic) * 9;
          double* dip = d_in ? d_in->data() + static_cast<size_t>(ic) * plane : nullptr;
          for (int ky = 0; ky < 3; ++ky) {
            int iy = iy0 + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              int ix = ix0 + kx;
              if (ix < 0 || ix >= w) continue;
              const size_t ii = static_cast<size_t>(iy) * w + ix;
              gk[ky * 3 + kx] += dz * ip[ii];
              if (dip) dip[ii] += dz * wk[ky * 3 + kx];
            }
          }
        }
      }
    }
  }
}

FeatureMap extract_features(const Image& image, const ConvParams& conv, ConvTrace* trace) {
  if (image.height < 8 || image.width < 8)
    fail(ErrorCode::ShapeMismatch, strprintf("image %dx%d below minimum 8x8", image.height,
                                             image.width));
  if (conv.c1.in_channels != 3 || conv.c2.in_channels != conv.c1.out_channels)
    fail(ErrorCode::ShapeMismatch, "conv layer channel counts are inconsistent");
  Vec a1, a2;
  int h1, w1, h2, w2;
  conv_relu(conv.c1, image.pix.data(), image.height, image.width, a1, h1, w1);
  conv_relu(conv.c2, a1.data(), h1, w1, a2, h2, w2);

  int c_learned = conv.c2.out_channels;
  FeatureMap fmap(h2, w2, c_learned + 2);
  std::copy(a2.begin(), a2.end(), fmap.f.begin());
  // coordinate channels: x = -1 + (2j+1)/w, y = -1 + (2i+1)/h
  for (int y = 0; y < h2; ++y)
    for (int x = 0; x < w2; ++x) {
      fmap.at(c_learned, y, x) = -1.0 + (2.0 * x + 1.0) / w2;
      fmap.at(c_learned + 1, y, x) = -1.0 + (2.0 * y + 1.0) / h2;
    }
  if (trace) {
    trace->input = image.pix;
    trace->in_h = image.height;
    trace->in_w = image.width;
    trace->a1 = std::move(a1);
    trace->h1 = h1;
    trace->w1 = w1;
    trace->a2 = std::move(a2);
    trace->h2 = h2;
    trace->w2 = w2;
  }
  return fmap;
}

void extract_features_backward(const ConvParams& conv, const ConvTrace& trace,
                               const FeatureMap& d_features, ConvParams& grads) {
  int c_learned = conv.c2.out_channels;
  const size_t n2 = static_cast<size_t>(c_learned) * trace.h2 * trace.w2;
  Vec d_a2(d_features.f.begin(), d_features.f.begin() + n2);
  Vec d_a1;
  conv_relu_backward(conv.c2, trace.a1.data(), trace.h1, trace.w1, trace.a2, trace.h2, trace.w2,
                     d_a2, grads.c2, &d_a1);
  conv_relu_backward(conv.c1, trace.input.data(), trace.in_h, trace.in_w, trace.a1, trace.h1,
                     trace.w1, d_a1, grads.c1, nullptr);
}

// ---------------------------------------------------------------------------
// Baseline head
// ---------------------------------------------------------------------------

HeadParams HeadParams::init(int in, int hidden, Rng& rng) {
  HeadParams h;
  h.w1 = Matrix(hidden, in);
  double s = std::sqrt(6.0 / (hidden + in));
  for (auto& v : h.w1.a) v = rng.uniform(-s, s);
  h.b1.assign(hidden, 0.01);  // ReLU layer: keep degenerate cells off the kink
  h.w2.assign(hidden, 0.0);
  double s2 = std::sqrt(6.0 / (hidden + 1));
  for (auto& v : h.w2) v = rng.uniform(-s2, s2);
  h.b2 = 0.0;
  return h;
}

HeadParams HeadParams::zeros(int in, int hidden) {
  HeadParams h;
  h.w1 = Matrix(hidden, in);
  h.b1.assign(hidden, 0.0);
  h.w2.assign(hidden, 0.0);
  h.b2 = 0.0;
  return h;
}

// Gathers one cell's channels followed by the tiled expression vector.
static void cell_input(const FeatureMap& fmap, const Vec& expr, int y, int x, Vec& u) {
  int fc = fmap.channels;
  for (int c = 0; c < fc; ++c) u[c] = fmap.at(c, y, x);
  std::copy(expr.begin(), expr.end(), u.begin() + fc);
}

ForegroundMap baseline_head(const FeatureMap& fmap, const Vec& expr, const HeadParams& head,
                            HeadTrace* trace) {
  int in = fmap.channels + static_cast<int>(expr.size());
  if (head.w1.cols != in)
    fail(ErrorCode::ShapeMismatch,
         strprintf("baseline head expects input %d, got %d", head.w1.cols, in));
  int hidden = head.w1.rows;
  ForegroundMap out(fmap.height, fmap.width);
  if (trace) {
    trace->a1.assign(static_cast<size_t>(fmap.height) * fmap.width * hidden, 0.0);
    trace->p.assign(static_cast<size_t>(fmap.height) * fmap.width, 0.0);
  }
  Vec u(in), a1(hidden);
  for (int y = 0; y < fmap.height; ++y)
    for (int x = 0; x < fmap.width; ++x) {
      cell_input(fmap, expr, y, x, u);
      matvec(head.w1, u, head.b1, a1);
      for (auto& v : a1) v = std::max(0.0, v);
      double logit = head.b2 + dot(head.w2, a1);
      double p = sigmoid(logit);
      out.at(y, x) = p;
      if (trace) {
        size_t cell = static_cast<size_t>(y) * fmap.width + x;
        std::copy(a1.begin(), a1.end(), trace->a1.begin() + cell * hidden);
        trace->p[cell] = p;
      }
    }
  return out;
}

void baseline_head_backward(const FeatureMap& fmap, const Vec& expr, const HeadParams& head,
                            const HeadTrace& trace, const ForegroundMap& d_out,
                            HeadParams& grads, FeatureMap* d_features, Vec* d_expr) {
  int fc = fmap.channels;
  int in = fc + static_cast<int>(expr.size());
  int hidden = head.w1.rows;
  Vec u(in), da1(hidden), du(in);
  for (int y = 0; y < fmap.height; ++y)
    for (int x = 0; x < fmap.width; ++x) {
      size_t cell = static_cast<size_t>(y) * fmap.width + x;
      double p = trace.p[cell];
      double dlogit = d_out.at(y, x) * p * (1.0 - p);
      if (dlogit == 0.0) continue;
      const double* a1 = trace.a1.data() + cell * hidden;
      cell_input(fmap, expr, y, x, u);
      grads.b2 += dlogit;
      for (int k = 0; k < hidden; ++k) {
        grads.w2[k] += dlogit * a1[k];
        da1[k] = a1[k] > 0.0 ? dlogit * head.w2[k] : 0.0;
      }
      outer_acc(grads.w1, da1, u);
      axpy(1.0, da1, grads.b1);
      std::fill(du.begin(), du.end(), 0.0);
      matvec_t_acc(head.w1, da1, du);
      if (d_features)
        for (int c = 0; c < fc; ++c) d_features->at(c, y, x) += du[c];
      if (d_expr)
        for (size_t j = 0; j < expr.size(); ++j) (*d_expr)[j] += du[fc + j];
    }
}

// ---------------------------------------------------------------------------
// Category head
// ---------------------------------------------------------------------------

FcnParams FcnParams::init(int in, int hidden, int classes, Rng& rng) {
  FcnParams p;
  p.w1 = Matrix(hidden, in);
  double s1 = std::sqrt(6.0 / (hidden + in));
  for (auto& v : p.w1.a) v = rng.uniform(-s1, s1);
  p.b1.assign(hidden, 0.01);  // ReLU layer: keep degenerate cells off the kink
  p.w2 = Matrix(classes, hidden);
  double s2 = std::sqrt(6.0 / (classes + hidden));
  for (auto& v : p.w2.a) v = rng.uniform(-s2, s2);
  p.b2.assign(classes, 0.0);
  return p;
}

FcnParams FcnParams::zeros(int in, int hidden, int classes) {
  FcnParams p;
  p.w1 = Matrix(hidden, in);
  p.b1.assign(hidden, 0.0);
  p.w2 = Matrix(classes, hidden);
  p.b2.assign(classes, 0.0);
  return p;
}

ProbabilityMap category_head(const FeatureMap& fmap, const FcnParams& fcn, FcnTrace* trace) {
  if (fcn.w1.cols != fmap.channels)
    fail(ErrorCode::ShapeMismatch,
         strprintf("category head expects %d channels, got %d", fcn.w1.cols, fmap.channels));
  int hidden = fcn.w1.rows;
  int classes = fcn.w2.rows;
  ProbabilityMap out(fmap.height, fmap.width, classes);
  if (trace)
    trace->a1.assign(static_cast<size_t>(fmap.height) * fmap.width * hidden, 0.0);
  Vec u(fmap.channels), a1(hidden), logits(classes);
  for (int y = 0; y < fmap.height; ++y)
    for (int x = 0; x < fmap.width; ++x) {
      for (int c = 0; c < fmap.channels; ++c) u[c] = fmap.at(c, y, x);
      matvec(fcn.w1, u, fcn.b1, a1);
      for (auto& v : a1) v = std::max(0.0, v);
      matvec(fcn.w2, a1, fcn.b2, logits);
      Vec probs = softmax(logits);
      std::copy(probs.begin(), probs.end(), out.cell(y, x).begin());
      if (trace) {
        size_t cell = static_cast<size_t>(y) * fmap.width + x;
        std::copy(a1.begin(), a1.end(), trace->a1.begin() + cell * hidden);
      }
    }
  if (trace) trace->probs = out;
  return out;
}

void category_head_backward(const FeatureMap& fmap, const FcnParams& fcn, const FcnTrace& trace,
                            const ProbabilityMap& d_probs, FcnParams& grads,
                            FeatureMap* d_features) {
  int hidden = fcn.w1.rows;
  int classes = fcn.w2.rows;
  Vec u(fmap.channels), da1(hidden), du(fmap.channels), dlogits(classes), probs(classes),
      dp(classes);
  for (int y = 0; y < fmap.height; ++y)
    for (int x = 0; x < fmap.width; ++x) {
      size_t cell = static_cast<size_t>(y) * fmap.width + x;
      auto pc = trace.probs.cell(y, x);
      auto dc = d_probs.cell(y, x);
      probs.assign(pc.begin(), pc.end());
      dp.assign(dc.begin(), dc.end());
      dlogits = softmax_vjp(probs, dp);
      const double* a1 = trace.a1.data() + cell * hidden;
      for (int c = 0; c < fmap.channels; ++c) u[c] = fmap.at(c, y, x);
      axpy(1.0, dlogits, grads.b2);
      std::fill(da1.begin(), da1.end(), 0.0);
      for (int k = 0; k < classes; ++k) {
        double dz = dlogits[k];
        if (dz == 0.0) continue;
        double* gw = grads.w2.a.data() + static_cast<size_t>(k) * hidden;
        const double* w = fcn.w2.a.data() + static_cast<size_t>(k) * hidden;
        for (int j = 0; j < hidden; ++j) {
          gw[j] += dz * a1[j];
          da1[j] += dz * w[j];
        }
      }
      for (int j = 0; j < hidden; ++j)
        if (a1[j] <= 0.0) da1[j] = 0.0;
      outer_acc(grads.w1, da1, u);
      axpy(1.0, da1, grads.b1);
      if (d_features) {
        std::fill(du.begin(), du.end(), 0.0);
        matvec_t_acc(fcn.w1, da1, du);
        for (int c = 0; c < fmap.channels; ++c) d_features->at(c, y, x) += du[c];
      }
    }
}

// ---------------------------------------------------------------------------
// Fusion and combination
// ---------------------------------------------------------------------------

ForegroundMap fuse(const ProbabilityMap& pmap, const Vec& text_probs) {
  if (pmap.classes != static_cast<int>(text_probs.size()))
    fail(ErrorCode::ClassCountMismatch,
         strprintf("probability map has %d classes, expression vector %zu", pmap.classes,
                   text_probs.size()));
  ForegroundMap out(pmap.height, pmap.width);
  for (int y = 0; y < pmap.height; ++y)
    for (int x = 0; x < pmap.width; ++x) {
      auto cell = pmap.cell(y, x);
      double s = 0.0;
      for (int k = 0; k < pmap.classes; ++k) s += cell[k] * text_probs[k];
      out.at(y, x) = s;
    }
  return out;
}

void fuse_backward(const ProbabilityMap& pmap, const Vec& text_probs, const ForegroundMap& d_out,
                   ProbabilityMap* d_pmap, Vec* d_text) {
  for (int y = 0; y < pmap.height; ++y)
    for (int x = 0; x < pmap.width; ++x) {
      double g = d_out.at(y, x);
      auto cell = pmap.cell(y, x);
      for (int k = 0; k < pmap.classes; ++k) {
        if (d_pmap) d_pmap->cell(y, x)[k] += g * text_probs[k];
        if (d_text) (*d_text)[k] += g * cell[k];
      }
    }
}

double FusionWeight::alpha() const {
  if (raw >= kRawClamp) return 1.0;
  if (raw <= -kRawClamp) return 0.0;
  return sigmoid(raw);
}

static void check_same_grid(const ForegroundMap& a, const ForegroundMap& b) {
  if (a.height != b.height || a.width != b.width)
    fail(ErrorCode::ShapeMismatch, strprintf("grids %dx%d vs %dx%d", a.height, a.width, b.height,
                                             b.width));
}

ForegroundMap combine(const ForegroundMap& p1, const ForegroundMap& p2, FusionWeight w) {
  check_same_grid(p1, p2);
  double a = w.alpha();
  if (a == 1.0) return p1;
  if (a == 0.0) return p2;
  ForegroundMap out(p1.height, p1.width);
  for (size_t i = 0; i < out.p.size(); ++i) {
    double lo = std::min(p1.p[i], p2.p[i]);
    double hi = std::max(p1.p[i], p2.p[i]);
    out.p[i] = std::clamp(a * p1.p[i] + (1.0 - a) * p2.p[i], lo, hi);
  }
  return out;
}

void combine_backward(const ForegroundMap& p1, const ForegroundMap& p2, FusionWeight w,
                      const ForegroundMap& d_out, ForegroundMap* d_p1, ForegroundMap* d_p2,
                      double* d_raw) {
  double a = w.alpha();
  double dsig = a * (1.0 - a);
  for (size_t i = 0; i < d_out.p.size(); ++i) {
    double g = d_out.p[i];
    if (d_p1) d_p1->p[i] += a * g;
    if (d_p2) d_p2->p[i] += (1.0 - a) * g;
    if (d_raw) *d_raw += g * (p1.p[i] - p2.p[i]) * dsig;
  }
}

// ---------------------------------------------------------------------------
// Resolution changes
// ---------------------------------------------------------------------------

ForegroundMap upsample_bilinear(const ForegroundMap& map, int out_h, int out_w) {
  ForegroundMap out(out_h, out_w);
  const double sy = out_h > 1 ? static_cast<double>(map.height - 1) / (out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(map.width - 1) / (out_w - 1) : 0.0;
  for (int y = 0; y < out_h; ++y) {
    double fy = y * sy;
    int y0 = static_cast<int>(fy);
    int y1 = std::min(y0 + 1, map.height - 1);
    double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = x * sx;
      int x0 = static_cast<int>(fx);
      int x1 = std::min(x0 + 1, map.width - 1);
      double wx = fx - x0;
      double top = map.at(y0, x0) * (1.0 - wx) + map.at(y0, x1) * wx;
      double bot = map.at(y1, x0) * (1.0 - wx) + map.at(y1, x1) * wx;
      out.at(y, x) = top * (1.0 - wy) + bot * wy;
    }
  }
  return out;
}

BinaryMask binarize(const ForegroundMap& map, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    fail(ErrorCode::BadThreshold, strprintf("threshold %g not in (0,1)", threshold));
  BinaryMask out(map.height, map.width);
  for (size_t i = 0; i < map.p.size(); ++i) out.v[i] = map.p[i] >= threshold ? 1 : 0;
  return out;
}

BinaryMask downsample_mask(const BinaryMask& mask, int grid_h, int grid_w) {
  BinaryMask out(grid_h, grid_w);
  const double cell_h = static_cast<double>(mask.height) / grid_h;
  const double cell_w = static_cast<double>(mask.width) / grid_w;
  for (int gy = 0; gy < grid_h; ++gy) {
    double y_lo = gy * cell_h, y_hi = (gy + 1) * cell_h;
    for (int gx = 0; gx < grid_w; ++gx) {
      double x_lo = gx * cell_w, x_hi = (gx + 1) * cell_w;
      double covered = 0.0, total = 0.0;
      for (int y = static_cast<int>(y_lo); y < mask.height && y < y_hi; ++y) {
        double wy = std::min<double>(y + 1, y_hi) - std::max<double>(y, y_lo);
        if (wy <= 0.0) continue;
        for (int x = static_cast<int>(x_lo); x < mask.width && x < x_hi; ++x) {
          double wx = std::min<double>(x + 1, x_hi) - std::max<double>(x, x_lo);
          if (wx <= 0.0) continue;
          total += wy * wx;
          if (mask.at(y, x)) covered += wy * wx;
        }
      }
      out.at(gy, gx) = covered * 2.0 >= total ? 1 : 0;
    }
  }
  return out;
}

}  // namespace refseg
