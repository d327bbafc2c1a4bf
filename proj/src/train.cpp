#include "refseg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace refseg {

const char* category_mode_name(CategoryMode m) {
  switch (m) {
    case CategoryMode::Off: return "off";
    case CategoryMode::On: return "on";
    case CategoryMode::Only: return "only";
  }
  return "?";
}

PathMode path_for(CategoryMode m) {
  switch (m) {
    case CategoryMode::Off: return PathMode::Baseline;
    case CategoryMode::Only: return PathMode::Category;
    case CategoryMode::On: return PathMode::Full;
  }
  return PathMode::Full;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

static constexpr double kProbClamp = 1e-7;

std::pair<double, ForegroundMap> bce_loss(const ForegroundMap& p, const BinaryMask& grid_gt) {
  if (p.height != grid_gt.height || p.width != grid_gt.width)
    fail(ErrorCode::ShapeMismatch, strprintf("map %dx%d vs mask %dx%d", p.height, p.width,
                                             grid_gt.height, grid_gt.width));
  const double n = static_cast<double>(p.p.size());
  ForegroundMap grad(p.height, p.width);
  double loss = 0.0;
  for (size_t i = 0; i < p.p.size(); ++i) {
    double v = std::clamp(p.p[i], kProbClamp, 1.0 - kProbClamp);
    double y = grid_gt.v[i] ? 1.0 : 0.0;
    loss += -(y * std::log(v) + (1.0 - y) * std::log(1.0 - v));
    grad.p[i] = (v - y) / (v * (1.0 - v)) / n;
  }
  return {loss / n, std::move(grad)};
}

std::pair<double, Vec> cross_entropy_loss(const ClassDistribution& dist, int label) {
  if (label < 0 || label >= static_cast<int>(dist.size()))
    fail(ErrorCode::BadLabel, strprintf("label %d with %zu classes", label, dist.size()));
  double p = std::max(dist[label], 1e-12);
  Vec d_logits = dist;
  d_logits[label] -= 1.0;
  return {-std::log(p), std::move(d_logits)};
}

void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
              double lr, double momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size())
    fail(ErrorCode::ShapeMismatch, "sgd_step span sizes differ");
  for (size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] - lr * grads[i];
    params[i] += velocity[i];
  }
}

// ---------------------------------------------------------------------------
// Per-sample loss and gradients
// ---------------------------------------------------------------------------

SampleLoss sample_loss(const Model& m, const Sample& s, double classifier_weight) {
  TokenSequence tokens = tokenize(s.expression);
  ForwardTrace trace;
  ForegroundMap grid = model_forward_grid(m, *s.image, tokens, &trace);
  BinaryMask gt_grid = downsample_mask(s.gt_mask, grid.height, grid.width);
  auto [seg_loss, seg_grad] = bce_loss(grid, gt_grid);
  SampleLoss out;
  out.segmentation = seg_loss;
  out.total = seg_loss;
  if (m.path != PathMode::Baseline && s.class_label >= 0) {
    auto [ce, d_logits] = cross_entropy_loss(trace.text_probs, s.class_label);
    out.classification = ce;
    out.total += classifier_weight * ce;
  }
  return out;
}

SampleLoss sample_gradients(const Model& m, const Sample& s, double classifier_weight,
                            Model& grads) {
  TokenSequence tokens = tokenize(s.expression);
  ForwardTrace trace;
  ForegroundMap grid = model_forward_grid(m, *s.image, tokens, &trace);
  BinaryMask gt_grid = downsample_mask(s.gt_mask, grid.height, grid.width);
  auto [seg_loss, d_grid] = bce_loss(grid, gt_grid);

  SampleLoss out;
  out.segmentation = seg_loss;
  out.total = seg_loss;

  ForegroundMap d_p1(grid.height, grid.width), d_p2(grid.height, grid.width);
  switch (m.path) {
    case PathMode::Baseline:
      d_p1 = d_grid;
      break;
    case PathMode::Category:
      d_p2 = d_grid;
      break;
    case PathMode::Full:
      combine_backward(trace.p1, trace.p2, m.fusion, d_grid, &d_p1, &d_p2, &grads.fusion.raw);
      break;
  }

  FeatureMap d_features(trace.fmap.height, trace.fmap.width, trace.fmap.channels);
  std::vector<Vec> d_inputs_seg, d_inputs_cls;
  bool want_emb = m.embedding_trainable;

  if (m.path != PathMode::Category) {
    Vec d_h_seg(m.dims.lstm_hidden, 0.0);
    baseline_head_backward(trace.fmap, trace.h_seg, m.head, trace.head_trace, d_p1, grads.head,
                           &d_features, &d_h_seg);
    lstm_backward(m.lstm_seg, trace.seg_trace, d_h_seg, grads.lstm_seg,
                  want_emb ? &d_inputs_seg : nullptr);
  }
  if (m.path != PathMode::Baseline) {
    Vec d_text(m.dims.classes, 0.0);
    ProbabilityMap d_pixel(trace.pixel_probs.height, trace.pixel_probs.width,
                           trace.pixel_probs.classes);
    fuse_backward(trace.pixel_probs, trace.text_probs, d_p2, &d_pixel, &d_text);
    category_head_backward(trace.fmap, m.fcn, trace.fcn_trace, d_pixel, grads.fcn, &d_features);

    Vec d_logits = softmax_vjp(trace.text_probs, d_text);
    if (s.class_label >= 0) {
      auto [ce, ce_logits] = cross_entropy_loss(trace.text_probs, s.class_label);
      out.classification = ce;
      out.total += classifier_weight * ce;
      axpy(classifier_weight, ce_logits, d_logits);
    }
    Vec d_h_cls(m.dims.lstm_hidden, 0.0);
    mlp_backward(m.classifier, trace.mlp_trace, d_logits, grads.classifier, &d_h_cls);
    lstm_backward(m.lstm_cls, trace.cls_trace, d_h_cls, grads.lstm_cls,
                  want_emb ? &d_inputs_cls : nullptr);
  }

  extract_features_backward(m.conv, trace.conv_trace, d_features, grads.conv);

  if (want_emb) {
    auto add_rows = [&](const LstmTrace& lt, const std::vector<Vec>& d_inputs) {
      for (size_t t = 0; t < d_inputs.size(); ++t) {
        int row = lt.token_rows[t];
        if (row < 0) continue;  // fallback vector is derived, not a parameter
        axpy(1.0, d_inputs[t], grads.table.vectors.row(row));
      }
    };
    if (!d_inputs_seg.empty()) add_rows(trace.seg_trace, d_inputs_seg);
    if (!d_inputs_cls.empty()) add_rows(trace.cls_trace, d_inputs_cls);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

double grad_check(Model& m, const Sample& s, double classifier_weight, double step) {
  Model grads = m;
  zero_params(grads);
  double base_loss = sample_gradients(m, s, classifier_weight, grads).total;

  // Central differences of a loss of this magnitude cannot resolve absolute
  // differences below a few ulps of the loss over 2h; differences under that
  // scale are measurement noise for any gradient, correct or not.
  const double fd_noise =
      16.0 * std::abs(base_loss) * std::numeric_limits<double>::epsilon() / (2.0 * step);

  ParamGroups groups = ParamGroups::for_path(m.path, m.embedding_trainable);
  std::vector<std::span<double>> param_blocks, grad_blocks;
  visit_params(m, groups, [&](std::span<double> sp) { param_blocks.push_back(sp); });
  visit_params(grads, groups, [&](std::span<double> sp) { grad_blocks.push_back(sp); });

  double worst = 0.0;
  for (size_t b = 0; b < param_blocks.size(); ++b) {
    for (size_t i = 0; i < param_blocks[b].size(); ++i) {
      double& p = param_blocks[b][i];
      double saved = p;
      double analytic = grad_blocks[b][i];
      auto err_at = [&](double h) {
        p = saved + h;
        double up = sample_loss(m, s, classifier_weight).total;
        p = saved - h;
        double down = sample_loss(m, s, classifier_weight).total;
        p = saved;
        double numeric = (up - down) / (2.0 * h);
        double diff = std::abs(numeric - analytic);
        if (diff <= fd_noise * (step / h)) return 0.0;
        return diff / std::max({std::abs(numeric), std::abs(analytic), 1e-8});
      };
      double err = err_at(step);
      // a ReLU kink inside the probe interval mimics a gradient error but
      // vanishes as the step shrinks; a real error stays put
      if (err > 1e-5) err = std::min({err, err_at(step / 8.0), err_at(step / 64.0)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double grad_check_random_config(uint64_t seed, double step) {
  Rng rng(derive_seed(seed, 0x6c));
  ModelDims dims;
  dims.embed_dim = 4;
  dims.lstm_hidden = 4;
  dims.mlp_hidden = 4;
  dims.classes = 3;
  dims.conv1_channels = 3;
  dims.conv2_channels = 3;
  dims.head_hidden = 4;
  dims.fcn_hidden = 4;

  // tiny vocabulary with random vectors
  std::vector<std::pair<std::string, Vec>> rows;
  const char* words[6] = {"ga", "bo", "tu", "ne", "ki", "ra"};
  for (const char* w : words) {
    Vec v(dims.embed_dim);
    for (auto& c : v) c = rng.uniform(-0.8, 0.8);
    rows.emplace_back(w, std::move(v));
  }
  EmbeddingTable table = make_table(dims.embed_dim, std::move(rows));

  Model m = init_model(dims, std::move(table), /*embedding_trainable=*/true, PathMode::Full,
                       derive_seed(seed, 0x11));
  m.fusion.raw = rng.uniform(-1.0, 1.0);

  // random sample: image around 12..20 px, sequence length 1..5
  int h = rng.uniform_int(12, 20);
  int w = rng.uniform_int(12, 20);
  auto img = std::make_shared<Image>(h, w);
  for (auto& v : img->pix) v = rng.uniform();
  Sample s;
  s.image = img;
  s.gt_mask = BinaryMask(h, w);
  for (auto& v : s.gt_mask.v) v = rng.uniform() < 0.35 ? 1 : 0;
  if (s.gt_mask.count() == 0) s.gt_mask.at(h / 2, w / 2) = 1;
  int len = rng.uniform_int(1, 5);
  std::string expr;
  for (int i = 0; i < len; ++i) {
    if (i) expr += ' ';
    expr += words[rng.uniform_int(0, 5)];
  }
  s.expression = expr;
  s.class_label = rng.uniform_int(0, dims.classes - 1);

  return grad_check(m, s, /*classifier_weight=*/1.0, step);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

static EmbeddingTable scratch_table(const std::vector<Sample>& referring,
                                    const std::vector<Sample>& synthesized, int dim,
                                    uint64_t seed) {
  std::vector<std::pair<std::string, Vec>> rows;
  std::vector<std::string> seen;
  Rng rng(seed);
  auto add_tokens = [&](const std::vector<Sample>& samples) {
    for (const Sample& s : samples)
      for (const std::string& tok : tokenize(s.expression)) {
        if (std::find(seen.begin(), seen.end(), tok) != seen.end()) continue;
        seen.push_back(tok);
        Vec v(dim);
        for (auto& c : v) c = rng.uniform(-0.1, 0.1);
        rows.emplace_back(tok, std::move(v));
      }
  };
  add_tokens(referring);
  add_tokens(synthesized);
  return make_table(dim, std::move(rows));
}

static uint64_t embedding_checksum(const Model& m) {
  return fnv1a64(m.table.vectors.a.data(), m.table.vectors.a.size() * sizeof(double));
}

static std::vector<size_t> subsample_indices(size_t n, double fraction, uint64_t seed) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  if (fraction >= 1.0) return idx;
  Rng rng(seed);
  shuffle(idx, rng);
  size_t keep = std::max<size_t>(1, static_cast<size_t>(std::llround(fraction * n)));
  idx.resize(keep);
  return idx;
}

namespace {

// Flattened view of the trainable blocks plus momentum state.
struct Optimizer {
  std::vector<std::span<double>> params, grads;
  Vec velocity;
  double lr, momentum;

  Optimizer(Model& model, Model& grad_model, const ParamGroups& groups, double lr_,
            double momentum_)
      : lr(lr_), momentum(momentum_) {
    visit_params(model, groups, [&](std::span<double> s) { params.push_back(s); });
    visit_params(grad_model, groups, [&](std::span<double> s) { grads.push_back(s); });
    size_t total = 0;
    for (auto& s : params) total += s.size();
    velocity.assign(total, 0.0);
  }

  void step(double scale) {
    size_t off = 0;
    for (size_t b = 0; b < params.size(); ++b) {
      auto& g = grads[b];
      for (auto& v : g) v *= scale;
      sgd_step(params[b], g, {velocity.data() + off, g.size()}, lr, momentum);
      std::fill(g.begin(), g.end(), 0.0);
      off += g.size();
    }
  }
};

}  // namespace

void train_classifier(Model& m, const std::vector<Sample>& labeled, int epochs, double lr,
                      double momentum, int batch_size, uint64_t seed) {
  if (labeled.empty()) return;
  Model grads = m;
  zero_params(grads);
  Optimizer opt(m, grads, ParamGroups::classifier_only(), lr, momentum);
  std::vector<size_t> order(labeled.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int e = 0; e < epochs; ++e) {
    Rng rng(derive_seed(seed, 0x9000 + static_cast<uint64_t>(e)));
    shuffle(order, rng);
    size_t in_batch = 0;
    for (size_t i = 0; i < order.size(); ++i) {
      const Sample& s = labeled[order[i]];
      encoder_gradients(m.lstm_cls, m.classifier, m.table, tokenize(s.expression),
                        s.class_label, grads.lstm_cls, grads.classifier);
      if (++in_batch == static_cast<size_t>(batch_size) || i + 1 == order.size()) {
        opt.step(1.0 / static_cast<double>(in_batch));
        in_batch = 0;
      }
    }
  }
}

Model train_full(const TrainConfig& config, const std::vector<Sample>& referring,
                 const std::vector<Sample>& synthesized, const std::vector<Sample>* val,
                 TrainHistory* history) {
  if (config.learning_rate <= 0.0) fail(ErrorCode::BadConfig, "learning rate must be positive");
  if (config.epochs < 1) fail(ErrorCode::BadConfig, "need at least one epoch");
  if (referring.empty()) fail(ErrorCode::EmptyList, "no referring training samples");

  // effective referring subset
  std::vector<Sample> train_ref;
  for (size_t i :
       subsample_indices(referring.size(), config.refer_fraction, derive_seed(config.seed, 0x5b)))
    train_ref.push_back(referring[i]);

  std::vector<Sample> train_syn;
  if (config.synthesized_expressions) train_syn = synthesized;

  // embedding: pretrained and fixed, or scratch and trained
  EmbeddingTable table;
  bool trainable;
  if (config.pretrained_embedding) {
    if (config.vectors_path.empty())
      fail(ErrorCode::BadConfig, "pretrained_embedding requires a vectors file");
    table = load_embedding_file(config.vectors_path);
    trainable = false;
  } else {
    table = scratch_table(train_ref, train_syn, config.dims.embed_dim,
                          derive_seed(config.seed, 0xe2b));
    trainable = true;
  }
  if (table.dim != config.dims.embed_dim)
    fail(ErrorCode::DimensionMismatch,
         strprintf("vectors file has dim %d, config wants %d", table.dim,
                   config.dims.embed_dim));

  CategoryMode cat = config.category_path;
  bool any_label = false;
  for (const Sample& s : train_ref) any_label |= s.class_label >= 0;
  for (const Sample& s : train_syn) any_label |= s.class_label >= 0;
  bool category_active = cat != CategoryMode::Off;
  if (category_active && !any_label) {
    // no class supervision anywhere: fall back to the expression-only path
    cat = CategoryMode::Off;
    category_active = false;
  }

  Model m = init_model(config.dims, std::move(table), trainable, path_for(cat),
                       derive_seed(config.seed, 0x1d));
  uint64_t frozen_sum = trainable ? 0 : embedding_checksum(m);

  if (history) {
    history->loss.clear();
    history->val_iou.clear();
    history->alpha.clear();
    history->category_path_active = category_active;
  }

  // classifier pretraining on labeled samples
  if (category_active && config.classifier_pretrain_epochs > 0) {
    std::vector<Sample> labeled;
    for (const Sample& s : train_ref)
      if (s.class_label >= 0) labeled.push_back(s);
    for (const Sample& s : train_syn)
      if (s.class_label >= 0) labeled.push_back(s);
    train_classifier(m, labeled, config.classifier_pretrain_epochs, config.learning_rate,
                     config.momentum, config.batch_size, derive_seed(config.seed, 0xc1a));
  }

  Model grads = m;
  zero_params(grads);
  ParamGroups groups = ParamGroups::for_path(m.path, trainable);
  Optimizer opt(m, grads, groups, config.learning_rate, config.momentum);

  double ratio = config.synthesized_expressions ? config.mix_ratio : 0.0;
  for (int e = 0; e < config.epochs; ++e) {
    auto stream = mix_indices(train_ref.size(), train_syn.size(), ratio,
                              derive_seed(config.seed, 0xa000 + static_cast<uint64_t>(e)));
    double loss_sum = 0.0;
    size_t in_batch = 0;
    for (size_t i = 0; i < stream.size(); ++i) {
      const Sample& s = stream[i].first ? train_syn[stream[i].second]
                                        : train_ref[stream[i].second];
      loss_sum += sample_gradients(m, s, config.classifier_loss_weight, grads).total;
      if (++in_batch == static_cast<size_t>(config.batch_size) || i + 1 == stream.size()) {
        opt.step(1.0 / static_cast<double>(in_batch));
        in_batch = 0;
      }
    }
    if (history) {
      history->loss.push_back(loss_sum / static_cast<double>(stream.size()));
      history->alpha.push_back(m.fusion.alpha());
      history->val_iou.push_back(
          val && !val->empty() ? evaluate(m, *val, 1).overall
                               : std::numeric_limits<double>::quiet_NaN());
    }
  }

  if (trainable) {
    m.table.finalize();  // refresh fallback after the rows moved
  } else if (embedding_checksum(m) != frozen_sum) {
    fail(ErrorCode::BadConfig, "fixed embedding rows were mutated during training");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, TrainConfig>> ablation_configs(const TrainConfig& base) {
  std::vector<std::pair<std::string, TrainConfig>> rows;
  TrainConfig c = base;

  c.pretrained_embedding = false;
  c.synthesized_expressions = false;
  c.category_path = CategoryMode::Off;
  rows.emplace_back("baseline", c);

  c = base;
  c.pretrained_embedding = true;
  c.synthesized_expressions = false;
  c.category_path = CategoryMode::Off;
  rows.emplace_back("embedding", c);

  c = base;
  c.pretrained_embedding = true;
  c.synthesized_expressions = true;
  c.category_path = CategoryMode::Off;
  rows.emplace_back("embedding+synthesized", c);

  c = base;
  c.pretrained_embedding = true;
  c.synthesized_expressions = true;
  c.category_path = CategoryMode::Only;
  rows.emplace_back("category-only", c);

  c = base;
  c.pretrained_embedding = true;
  c.synthesized_expressions = true;
  c.category_path = CategoryMode::On;
  rows.emplace_back("full", c);
  return rows;
}

static MetricsReport median_report(std::vector<MetricsReport> reports) {
  auto median_of = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  MetricsReport med;
  med.n = reports.empty() ? 0 : reports[0].n;
  for (int k = 0; k < 5; ++k) {
    std::vector<double> vals;
    for (const auto& r : reports) vals.push_back(r.prec[k]);
    med.prec[k] = median_of(vals);
  }
  std::vector<double> overall;
  for (const auto& r : reports) overall.push_back(r.overall);
  med.overall = median_of(overall);
  return med;
}

AblationReport ablation_runs(const TrainConfig& base, const std::vector<Sample>& referring,
                             const std::vector<Sample>& synthesized,
                             const std::vector<Sample>& test,
                             const std::vector<uint64_t>& seeds) {
  if (seeds.empty()) fail(ErrorCode::EmptyList, "no seeds for ablation");
  AblationReport report;
  report.seeds = seeds;
  for (auto& [name, config] : ablation_configs(base)) {
    AblationRow row;
    row.name = name;
    row.config = config;
    for (uint64_t seed : seeds) {
      TrainConfig c = config;
      c.seed = seed;
      auto t0 = std::chrono::steady_clock::now();
      Model m = train_full(c, referring, synthesized, nullptr, nullptr);
      double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      row.per_seed.push_back(evaluate(m, test, 1));
      row.train_seconds.push_back(secs);
    }
    row.median = median_report(row.per_seed);
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string ablation_json(const AblationReport& r) {
  std::string out = "{\"seeds\": [";
  for (size_t i = 0; i < r.seeds.size(); ++i)
    out += (i ? ", " : "") + std::to_string(r.seeds[i]);
  out += "], \"rows\": [";
  for (size_t i = 0; i < r.rows.size(); ++i) {
    const AblationRow& row = r.rows[i];
    if (i) out += ", ";
    out += "{\"name\": \"" + row.name + "\", \"median\": " + report_json(row.median) +
           ", \"per_seed\": [";
    for (size_t j = 0; j < row.per_seed.size(); ++j)
      out += (j ? ", " : "") + report_json(row.per_seed[j]);
    out += "], \"train_seconds\": [";
    for (size_t j = 0; j < row.train_seconds.size(); ++j)
      out += (j ? ", " : "") + strprintf("%.3f", row.train_seconds[j]);
    out += "]}";
  }
  out += "]}";
  return out;
}

}  // namespace refseg
