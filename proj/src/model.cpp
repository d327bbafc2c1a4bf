#include "refseg/model.hpp"

#include <cstring>
#include <fstream>

namespace refseg {

const char* path_mode_name(PathMode m) {
  switch (m) {
    case PathMode::Baseline: return "baseline";
    case PathMode::Category: return "category";
    case PathMode::Full: return "full";
  }
  return "?";
}

Model init_model(const ModelDims& dims, EmbeddingTable table, bool embedding_trainable,
                 PathMode path, uint64_t seed) {
  if (table.dim != dims.embed_dim)
    fail(ErrorCode::DimensionMismatch,
         strprintf("embedding table dim %d vs configured %d", table.dim, dims.embed_dim));
  if (dims.classes < 2) fail(ErrorCode::BadConfig, "need at least 2 classes");
  Model m;
  m.dims = dims;
  m.path = path;
  m.embedding_trainable = embedding_trainable;
  m.table = std::move(table);
  Rng rng(derive_seed(seed, 0x10de1));
  m.lstm_seg = LstmParams::init(dims.embed_dim, dims.lstm_hidden, rng);
  m.lstm_cls = LstmParams::init(dims.embed_dim, dims.lstm_hidden, rng);
  m.classifier = MlpParams::init(dims.lstm_hidden, dims.mlp_hidden, dims.classes, rng);
  m.conv.c1 = ConvLayer::init(3, dims.conv1_channels, rng);
  m.conv.c2 = ConvLayer::init(dims.conv1_channels, dims.conv2_channels, rng);
  int feat_channels = dims.conv2_channels + 2;
  m.head = HeadParams::init(feat_channels + dims.lstm_hidden, dims.head_hidden, rng);
  m.fcn = FcnParams::init(feat_channels, dims.fcn_hidden, dims.classes, rng);
  m.fusion.raw = 0.0;  // alpha = 0.5
  return m;
}

ParamGroups ParamGroups::all(bool embedding_trainable) {
  ParamGroups g;
  g.embedding = embedding_trainable;
  g.lstm_seg = g.lstm_cls = g.classifier = g.conv = g.head = g.fcn = g.fusion = true;
  return g;
}

ParamGroups ParamGroups::for_path(PathMode path, bool embedding_trainable) {
  ParamGroups g;
  g.embedding = embedding_trainable;
  g.conv = true;
  switch (path) {
    case PathMode::Baseline:
      g.lstm_seg = g.head = true;
      break;
    case PathMode::Category:
      g.lstm_cls = g.classifier = g.fcn = true;
      break;
    case PathMode::Full:
      g.lstm_seg = g.head = g.lstm_cls = g.classifier = g.fcn = g.fusion = true;
      break;
  }
  return g;
}

ParamGroups ParamGroups::classifier_only() {
  ParamGroups g;
  g.lstm_cls = g.classifier = true;
  return g;
}

static void visit_lstm(LstmParams& p, const std::function<void(std::span<double>)>& fn) {
  fn(p.w_i.a);
  fn(p.w_f.a);
  fn(p.w_o.a);
  fn(p.w_g.a);
  fn(p.b_i);
  fn(p.b_f);
  fn(p.b_o);
  fn(p.b_g);
}

void visit_params(Model& m, const ParamGroups& groups,
                  const std::function<void(std::span<double>)>& fn) {
  if (groups.embedding) fn(m.table.vectors.a);
  if (groups.lstm_seg) visit_lstm(m.lstm_seg, fn);
  if (groups.lstm_cls) visit_lstm(m.lstm_cls, fn);
  if (groups.classifier) {
    fn(m.classifier.w1.a);
    fn(m.classifier.b1);
    fn(m.classifier.w2.a);
    fn(m.classifier.b2);
  }
  if (groups.conv) {
    fn(m.conv.c1.w.a);
    fn(m.conv.c1.b);
    fn(m.conv.c2.w.a);
    fn(m.conv.c2.b);
  }
  if (groups.head) {
    fn(m.head.w1.a);
    fn(m.head.b1);
    fn(m.head.w2);
    fn({&m.head.b2, 1});
  }
  if (groups.fcn) {
    fn(m.fcn.w1.a);
    fn(m.fcn.b1);
    fn(m.fcn.w2.a);
    fn(m.fcn.b2);
  }
  if (groups.fusion) fn({&m.fusion.raw, 1});
}

size_t param_count(Model& m, const ParamGroups& groups) {
  size_t n = 0;
  visit_params(m, groups, [&](std::span<double> s) { n += s.size(); });
  return n;
}

void zero_params(Model& m) {
  visit_params(m, ParamGroups::all(true),
               [](std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
  std::fill(m.table.fallback.begin(), m.table.fallback.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

static constexpr char kMagic[8] = {'R', 'S', 'E', 'G', 'C', 'K', 'P', '1'};
static constexpr uint32_t kVersion = 1;

namespace {

struct Writer {
  std::ofstream out;
  explicit Writer(const std::string& path) : out(path, std::ios::binary) {
    if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  }
  void bytes(const void* p, size_t n) { out.write(static_cast<const char*>(p), n); }
  void u32(uint32_t v) { bytes(&v, 4); }
  void i32(int32_t v) { bytes(&v, 4); }
  void u64(uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void f64s(std::span<const double> s) { bytes(s.data(), s.size() * 8); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
};

struct Reader {
  std::ifstream in;
  std::string path;
  explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) fail(ErrorCode::IoError, "cannot open " + p);
  }
  void bytes(void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n))
      fail(ErrorCode::IoError, path + ": truncated checkpoint");
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
  }
  int32_t i32() {
    int32_t v;
    bytes(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    bytes(&v, 8);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, 8);
    return v;
  }
  void f64s(std::span<double> s) { bytes(s.data(), s.size() * 8); }
  std::string str() {
    uint32_t n = u32();
    if (n > (1u << 20)) fail(ErrorCode::IoError, path + ": absurd string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const Model& m) {
  Writer w(path);
  w.bytes(kMagic, 8);
  w.u32(kVersion);
  uint32_t flags = static_cast<uint32_t>(m.path) | (m.embedding_trainable ? 0x100u : 0u);
  w.u32(flags);
  const ModelDims& d = m.dims;
  for (int v : {d.embed_dim, d.lstm_hidden, d.mlp_hidden, d.classes, d.conv1_channels,
                d.conv2_channels, d.head_hidden, d.fcn_hidden})
    w.i32(v);
  w.u64(m.table.tokens.size());
  for (const auto& t : m.table.tokens) w.str(t);
  w.f64s(m.table.vectors.a);
  w.f64s(m.table.fallback);
  Model& mm = const_cast<Model&>(m);
  ParamGroups everything = ParamGroups::all(false);  // vectors already written
  visit_params(mm, everything, [&](std::span<double> s) { w.f64s(s); });
  w.out.flush();
  if (!w.out) fail(ErrorCode::IoError, "write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    fail(ErrorCode::IoError, path + ": not a checkpoint file");
  uint32_t version = r.u32();
  if (version != kVersion)
    fail(ErrorCode::IoError, strprintf("%s: unsupported version %u", path.c_str(), version));
  uint32_t flags = r.u32();

  ModelDims d;
  d.embed_dim = r.i32();
  d.lstm_hidden = r.i32();
  d.mlp_hidden = r.i32();
  d.classes = r.i32();
  d.conv1_channels = r.i32();
  d.conv2_channels = r.i32();
  d.head_hidden = r.i32();
  d.fcn_hidden = r.i32();

  Model m;
  m.dims = d;
  m.path = static_cast<PathMode>(flags & 0xFF);
  m.embedding_trainable = (flags & 0x100u) != 0;

  uint64_t vocab = r.u64();
  m.table.dim = d.embed_dim;
  m.table.tokens.resize(vocab);
  for (auto& t : m.table.tokens) t = r.str();
  m.table.vectors = Matrix(static_cast<int>(vocab), d.embed_dim);
  r.f64s(m.table.vectors.a);
  m.table.fallback.resize(d.embed_dim);
  r.f64s(m.table.fallback);
  m.table.index.clear();
  for (size_t i = 0; i < m.table.tokens.size(); ++i)
    m.table.index.emplace(m.table.tokens[i], static_cast<int>(i));

  m.lstm_seg = LstmParams::zeros(d.embed_dim, d.lstm_hidden);
  m.lstm_cls = LstmParams::zeros(d.embed_dim, d.lstm_hidden);
  m.classifier = MlpParams::zeros(d.lstm_hidden, d.mlp_hidden, d.classes);
  m.conv.c1 = ConvLayer::zeros(3, d.conv1_channels);
  m.conv.c2 = ConvLayer::zeros(d.conv1_channels, d.conv2_channels);
  int feat_channels = d.conv2_channels + 2;
  m.head = HeadParams::zeros(feat_channels + d.lstm_hidden, d.head_hidden);
  m.fcn = FcnParams::zeros(feat_channels, d.fcn_hidden, d.classes);
  visit_params(m, ParamGroups::all(false), [&](std::span<double> s) { r.f64s(s); });
  return m;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

ForegroundMap model_forward_grid(const Model& m, const Image& image, const TokenSequence& tokens,
                                 ForwardTrace* trace) {
  ForwardTrace local;
  ForwardTrace& t = trace ? *trace : local;
  t.tokens = tokens;
  t.fmap = extract_features(image, m.conv, trace ? &t.conv_trace : nullptr);

  ForegroundMap result;
  if (m.path != PathMode::Category) {
    t.h_seg = encode(m.lstm_seg, m.table, tokens, trace ? &t.seg_trace : nullptr);
    t.p1 = baseline_head(t.fmap, t.h_seg, m.head, trace ? &t.head_trace : nullptr);
  }
  if (m.path != PathMode::Baseline) {
    t.h_cls = encode(m.lstm_cls, m.table, tokens, trace ? &t.cls_trace : nullptr);
    t.text_logits = mlp_logits(m.classifier, t.h_cls, trace ? &t.mlp_trace : nullptr);
    t.text_probs = softmax(t.text_logits);
    t.pixel_probs = category_head(t.fmap, m.fcn, trace ? &t.fcn_trace : nullptr);
    t.p2 = fuse(t.pixel_probs, t.text_probs);
  }
  switch (m.path) {
    case PathMode::Baseline: result = t.p1; break;
    case PathMode::Category: result = t.p2; break;
    case PathMode::Full: result = combine(t.p1, t.p2, m.fusion); break;
  }
  if (trace) t.combined = result;
  return result;
}

Prediction predict(const Model& m, const Image& image, const std::string& expression) {
  TokenSequence tokens = tokenize(expression);
  ForegroundMap grid = model_forward_grid(m, image, tokens, nullptr);
  Prediction pred;
  pred.heatmap = upsample_bilinear(grid, image.height, image.width);
  pred.mask = binarize(pred.heatmap, 0.5);
  return pred;
}

}  // namespace refseg
