// Command-line front end: dataset synthesis, training, evaluation,
// prediction, embedding inspection, gradient checking and ablations.
//
// Exit codes: 0 success, 1 usage error, 2 data/model error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "refseg/embedding.hpp"
#include "refseg/metrics.hpp"
#include "refseg/model.hpp"
#include "refseg/synth.hpp"
#include "refseg/train.hpp"

using json = nlohmann::json;
using namespace refseg;

namespace {

// ---------------------------------------------------------------------------
// TrainConfig <-> JSON, strict about unknown keys
// ---------------------------------------------------------------------------

void reject_unknown(const json& j, const std::vector<std::string>& allowed,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      fail(ErrorCode::BadConfig, "unknown config key '" + where + it.key() + "'");
  }
}

CategoryMode category_mode_from(const std::string& s) {
  if (s == "off") return CategoryMode::Off;
  if (s == "on") return CategoryMode::On;
  if (s == "only") return CategoryMode::Only;
  fail(ErrorCode::BadConfig, "category_path must be one of off/on/only, got '" + s + "'");
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  reject_unknown(j,
                 {"seed", "epochs", "learning_rate", "momentum", "batch_size", "mix_ratio",
                  "refer_fraction", "pretrained_embedding", "synthesized_expressions",
                  "category_path", "classifier_loss_weight", "classifier_pretrain_epochs",
                  "vectors", "model"},
                 "");
  c.seed = j.value("seed", c.seed);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.mix_ratio = j.value("mix_ratio", c.mix_ratio);
  c.refer_fraction = j.value("refer_fraction", c.refer_fraction);
  c.pretrained_embedding = j.value("pretrained_embedding", c.pretrained_embedding);
  c.synthesized_expressions = j.value("synthesized_expressions", c.synthesized_expressions);
  if (j.contains("category_path"))
    c.category_path = category_mode_from(j["category_path"].get<std::string>());
  c.classifier_loss_weight = j.value("classifier_loss_weight", c.classifier_loss_weight);
  c.classifier_pretrain_epochs =
      j.value("classifier_pretrain_epochs", c.classifier_pretrain_epochs);
  c.vectors_path = j.value("vectors", c.vectors_path);
  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown(m,
                   {"embed_dim", "lstm_hidden", "mlp_hidden", "classes", "conv1_channels",
                    "conv2_channels", "head_hidden", "fcn_hidden"},
                   "model.");
    c.dims.embed_dim = m.value("embed_dim", c.dims.embed_dim);
    c.dims.lstm_hidden = m.value("lstm_hidden", c.dims.lstm_hidden);
    c.dims.mlp_hidden = m.value("mlp_hidden", c.dims.mlp_hidden);
    c.dims.classes = m.value("classes", c.dims.classes);
    c.dims.conv1_channels = m.value("conv1_channels", c.dims.conv1_channels);
    c.dims.conv2_channels = m.value("conv2_channels", c.dims.conv2_channels);
    c.dims.head_hidden = m.value("head_hidden", c.dims.head_hidden);
    c.dims.fcn_hidden = m.value("fcn_hidden", c.dims.fcn_hidden);
  }
  return c;
}

json config_to_json(const TrainConfig& c) {
  return json{{"seed", c.seed},
              {"epochs", c.epochs},
              {"learning_rate", c.learning_rate},
              {"momentum", c.momentum},
              {"batch_size", c.batch_size},
              {"mix_ratio", c.mix_ratio},
              {"refer_fraction", c.refer_fraction},
              {"pretrained_embedding", c.pretrained_embedding},
              {"synthesized_expressions", c.synthesized_expressions},
              {"category_path", category_mode_name(c.category_path)},
              {"classifier_loss_weight", c.classifier_loss_weight},
              {"classifier_pretrain_epochs", c.classifier_pretrain_epochs},
              {"vectors", c.vectors_path},
              {"model",
               {{"embed_dim", c.dims.embed_dim},
                {"lstm_hidden", c.dims.lstm_hidden},
                {"mlp_hidden", c.dims.mlp_hidden},
                {"classes", c.dims.classes},
                {"conv1_channels", c.dims.conv1_channels},
                {"conv2_channels", c.dims.conv2_channels},
                {"head_hidden", c.dims.head_hidden},
                {"fcn_hidden", c.dims.fcn_hidden}}}};
}

TrainConfig load_config_file(const std::string& path) {
  if (path.empty()) return TrainConfig{};
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::BadConfig, std::string("config parse: ") + e.what());
  }
  return config_from_json(j);
}

void echo_config(const json& j) { std::cerr << "resolved config: " << j.dump() << "\n"; }

std::vector<uint64_t> parse_seeds(const std::string& spec) {
  std::vector<uint64_t> seeds;
  size_t start = 0;
  while (start <= spec.size()) {
    size_t comma = spec.find(',', start);
    std::string part =
        comma == std::string::npos ? spec.substr(start) : spec.substr(start, comma - start);
    if (!part.empty()) seeds.push_back(std::stoull(part));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (seeds.empty()) fail(ErrorCode::BadConfig, "no seeds in '" + spec + "'");
  return seeds;
}

std::string history_line(const TrainHistory& h, size_t epoch) {
  std::string val = std::isnan(h.val_iou[epoch]) ? "null" : fmt_g17(h.val_iou[epoch]);
  return strprintf("{\"epoch\": %zu, \"loss\": %s, \"alpha\": %s, \"val_iou\": %s}",
                   epoch + 1, fmt_g17(h.loss[epoch]).c_str(), fmt_g17(h.alpha[epoch]).c_str(),
                   val.c_str());
}

// token set of a generated dataset, for the emitted toy vectors file
std::vector<std::string> dataset_vocabulary(const GeneratedDataset& data) {
  std::vector<std::string> vocab;
  auto add = [&](const std::string& tok) {
    if (std::find(vocab.begin(), vocab.end(), tok) == vocab.end()) vocab.push_back(tok);
  };
  for (const auto& name : data.catalog.names)
    for (const auto& tok : tokenize(name)) add(tok);
  for (const char* q : {"left", "right", "top", "bottom"}) add(q);
  return vocab;
}

// ---------------------------------------------------------------------------
// subcommand bodies
// ---------------------------------------------------------------------------

int cmd_synth_data(uint64_t seed, int count, const std::string& out_dir, const SceneSpec& spec,
                   int embed_dim) {
  echo_config(json{{"seed", seed},
                   {"count", count},
                   {"out", out_dir},
                   {"classes", spec.classes},
                   {"image_size", spec.image_size},
                   {"min_objects", spec.min_objects},
                   {"max_objects", spec.max_objects},
                   {"min_radius", spec.min_radius},
                   {"max_radius", spec.max_radius},
                   {"embed_dim", embed_dim}});
  GeneratedDataset data = generate_dataset(seed, spec, count);
  write_dataset(out_dir, data);
  write_toy_vectors((std::filesystem::path(out_dir) / "vectors.txt").string(),
                    dataset_vocabulary(data), embed_dim, derive_seed(seed, 0xfeed));
  std::cout << "wrote " << data.referring.size() << " referring and " << data.synthesized.size()
            << " synthesized samples to " << out_dir << "\n";
  return 0;
}

int cmd_train(const TrainConfig& config, const std::string& data_path,
              const std::string& synth_path, const std::string& val_path,
              const std::string& out_path, const std::string& history_path) {
  echo_config(config_to_json(config));
  std::vector<Sample> referring = load_manifest(data_path);
  std::vector<Sample> synthesized;
  if (!synth_path.empty()) synthesized = load_manifest(synth_path);
  std::vector<Sample> val;
  if (!val_path.empty()) val = load_manifest(val_path);

  TrainHistory history;
  Model model =
      train_full(config, referring, synthesized, val.empty() ? nullptr : &val, &history);
  save_checkpoint(out_path, model);

  std::string lines;
  for (size_t e = 0; e < history.loss.size(); ++e) lines += history_line(history, e) + "\n";
  std::cout << lines;
  if (!history_path.empty()) {
    std::ofstream out(history_path, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write " + history_path);
    out << lines;
  }
  std::cerr << "checkpoint written to " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_path, int jobs,
             const std::string& out_path) {
  echo_config(json{{"ckpt", ckpt}, {"data", data_path}, {"jobs", jobs}});
  Model model = load_checkpoint(ckpt);
  MetricsReport report = evaluate_manifest(model, data_path, jobs);
  std::string text = report_json(report) + "\n";
  std::cout << text;
  std::cerr << report_table_header() << "\n"
            << report_table_row(path_mode_name(model.path), report) << "\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write " + out_path);
    out << text;
  }
  return 0;
}

int cmd_predict(const std::string& ckpt, const std::string& image_path, const std::string& expr,
                const std::string& heatmap_path, const std::string& mask_path) {
  echo_config(json{{"ckpt", ckpt},
                   {"image", image_path},
                   {"expr", expr},
                   {"out_heatmap", heatmap_path},
                   {"out_mask", mask_path}});
  Model model = load_checkpoint(ckpt);
  Image image = read_ppm(image_path);
  Prediction pred = predict(model, image, expr);
  if (!heatmap_path.empty()) write_heatmap_pgm(heatmap_path, pred.heatmap);
  if (!mask_path.empty()) write_mask_pgm(mask_path, pred.mask);
  std::cout << "foreground pixels: " << pred.mask.count() << " of " << pred.mask.v.size()
            << "\n";
  return 0;
}

int cmd_embed_nn(const std::string& vectors, const std::string& token, int k) {
  echo_config(json{{"vectors", vectors}, {"token", token}, {"k", k}});
  EmbeddingTable table = load_embedding_file(vectors);
  for (const auto& [tok, sim] : nearest_neighbors(table, token, k))
    std::cout << tok << "\t" << strprintf("%.6f", sim) << "\n";
  return 0;
}

int cmd_gradcheck(uint64_t seed, int trials, double step) {
  echo_config(json{{"seed", seed}, {"trials", trials}, {"step", step}});
  double worst = 0.0;
  for (int i = 0; i < trials; ++i) {
    double err = grad_check_random_config(derive_seed(seed, static_cast<uint64_t>(i)), step);
    worst = std::max(worst, err);
    std::cout << strprintf("config %3d  max relative error %.3e\n", i, err);
  }
  std::cout << strprintf("worst over %d configs: %.3e (tolerance 1e-4)\n", trials, worst);
  if (worst >= 1e-4) {
    std::cerr << "gradient check FAILED\n";
    return 2;
  }
  return 0;
}

int cmd_ablate(TrainConfig base, const std::string& data_dir, const std::string& seeds_spec,
               const std::string& out_path) {
  namespace fs = std::filesystem;
  std::vector<uint64_t> seeds = parse_seeds(seeds_spec);
  if (base.vectors_path.empty())
    base.vectors_path = (fs::path(data_dir) / "train" / "vectors.txt").string();
  json echo = config_to_json(base);
  echo["data_dir"] = data_dir;
  echo["seeds"] = seeds;
  echo_config(echo);

  std::vector<Sample> referring =
      load_manifest((fs::path(data_dir) / "train" / "dataset.tsv").string());
  std::vector<Sample> synthesized =
      load_manifest((fs::path(data_dir) / "train" / "synth.tsv").string());
  std::vector<Sample> test =
      load_manifest((fs::path(data_dir) / "test" / "dataset.tsv").string());

  AblationReport report = ablation_runs(base, referring, synthesized, test, seeds);
  std::cout << report_table_header() << "\n";
  for (const AblationRow& row : report.rows)
    std::cout << report_table_row(row.name, row.median) << "\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write " + out_path);
    out << ablation_json(report) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"referring-expression segmentation workbench"};
  app.require_subcommand(1);

  // ---- synth-data ----
  auto* synth = app.add_subcommand("synth-data", "generate a shape-world dataset");
  uint64_t sd_seed = 1;
  int sd_count = 100;
  std::string sd_out;
  SceneSpec sd_spec;
  int sd_embed_dim = 16;
  synth->add_option("--seed", sd_seed, "dataset seed")->capture_default_str();
  synth->add_option("--count", sd_count, "number of scenes")->capture_default_str();
  synth->add_option("--out", sd_out, "output directory")->required();
  synth->add_option("--classes", sd_spec.classes, "number of classes (2..8)")
      ->capture_default_str();
  synth->add_option("--image-size", sd_spec.image_size, "square image size")
      ->capture_default_str();
  synth->add_option("--min-objects", sd_spec.min_objects, "minimum instances per scene")
      ->capture_default_str();
  synth->add_option("--max-objects", sd_spec.max_objects, "maximum instances per scene")
      ->capture_default_str();
  synth->add_option("--min-radius", sd_spec.min_radius, "minimum shape radius")
      ->capture_default_str();
  synth->add_option("--max-radius", sd_spec.max_radius, "maximum shape radius")
      ->capture_default_str();
  synth->add_option("--embed-dim", sd_embed_dim, "dimension of the emitted vectors.txt")
      ->capture_default_str();

  // ---- train ----
  auto* train = app.add_subcommand("train", "train a model");
  std::string tr_config, tr_data, tr_synth, tr_val, tr_out, tr_history, tr_vectors, tr_category;
  uint64_t tr_seed = 0;
  int tr_epochs = 0, tr_batch = 0;
  double tr_lr = 0, tr_momentum = -1, tr_mix = -1, tr_frac = -1;
  train->add_option("--config", tr_config, "JSON config file");
  train->add_option("--data", tr_data, "referring-sample manifest (TSV)")->required();
  train->add_option("--synth", tr_synth, "synthesized-sample manifest (TSV)");
  train->add_option("--val", tr_val, "validation manifest for per-epoch IoU");
  train->add_option("--out", tr_out, "output checkpoint path")->required();
  train->add_option("--history", tr_history, "write the JSONL history here too");
  train->add_option("--seed", tr_seed, "seed override");
  train->add_option("--epochs", tr_epochs, "epoch override");
  train->add_option("--lr", tr_lr, "learning-rate override");
  train->add_option("--momentum", tr_momentum, "momentum override");
  train->add_option("--batch-size", tr_batch, "batch-size override");
  train->add_option("--mix-ratio", tr_mix, "synthesized mix ratio override");
  train->add_option("--refer-fraction", tr_frac, "referring subsample override");
  train->add_option("--vectors", tr_vectors, "pretrained vectors file override");
  train->add_option("--category-path", tr_category, "off/on/only override");

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  std::string ev_ckpt, ev_data, ev_out;
  int ev_jobs = 1;
  eval_cmd->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
  eval_cmd->add_option("--data", ev_data, "test manifest")->required();
  eval_cmd->add_option("--jobs", ev_jobs, "prediction threads (result-invariant)")
      ->capture_default_str();
  eval_cmd->add_option("--out", ev_out, "also write the JSON report here");

  // ---- predict ----
  auto* pred = app.add_subcommand("predict", "segment one image from an expression");
  std::string pr_ckpt, pr_image, pr_expr, pr_heat, pr_mask;
  pred->add_option("--ckpt", pr_ckpt, "checkpoint")->required();
  pred->add_option("--image", pr_image, "input PPM image")->required();
  pred->add_option("--expr", pr_expr, "referring expression")->required();
  pred->add_option("--out-heatmap", pr_heat, "foreground-probability PGM");
  pred->add_option("--out-mask", pr_mask, "binary mask PGM");

  // ---- embed ----
  auto* embed = app.add_subcommand("embed", "embedding-table utilities");
  embed->require_subcommand(1);
  auto* nn = embed->add_subcommand("nn", "nearest neighbors by cosine similarity");
  std::string em_vectors, em_token;
  int em_k = 5;
  nn->add_option("--vectors", em_vectors, "vectors file")->required();
  nn->add_option("--token", em_token, "query token")->required();
  nn->add_option("--k", em_k, "neighbor count")->capture_default_str();

  // ---- gradcheck ----
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  uint64_t gc_seed = 1;
  int gc_trials = 20;
  double gc_step = 1e-5;
  gc->add_option("--seed", gc_seed, "seed")->capture_default_str();
  gc->add_option("--trials", gc_trials, "number of random configurations")
      ->capture_default_str();
  gc->add_option("--step", gc_step, "finite-difference step")->capture_default_str();

  // ---- ablate ----
  auto* ab = app.add_subcommand("ablate", "train and evaluate the five ablation rows");
  std::string ab_config, ab_dir, ab_seeds = "1,2,3", ab_out;
  double ab_frac = -1;
  ab->add_option("--config", ab_config, "JSON config file");
  ab->add_option("--data-dir", ab_dir, "directory with train/ and test/ datasets")->required();
  ab->add_option("--seeds", ab_seeds, "comma-separated seed list")->capture_default_str();
  ab->add_option("--refer-fraction", ab_frac, "referring subsample override");
  ab->add_option("--out", ab_out, "write the JSON ablation report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return cmd_synth_data(sd_seed, sd_count, sd_out, sd_spec, sd_embed_dim);
    if (train->parsed()) {
      TrainConfig c = load_config_file(tr_config);
      if (train->count("--seed")) c.seed = tr_seed;
      if (train->count("--epochs")) c.epochs = tr_epochs;
      if (train->count("--lr")) c.learning_rate = tr_lr;
      if (train->count("--momentum")) c.momentum = tr_momentum;
      if (train->count("--batch-size")) c.batch_size = tr_batch;
      if (train->count("--mix-ratio")) c.mix_ratio = tr_mix;
      if (train->count("--refer-fraction")) c.refer_fraction = tr_frac;
      if (train->count("--vectors")) c.vectors_path = tr_vectors;
      if (train->count("--category-path")) c.category_path = category_mode_from(tr_category);
      return cmd_train(c, tr_data, tr_synth, tr_val, tr_out, tr_history);
    }
    if (eval_cmd->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_jobs, ev_out);
    if (pred->parsed()) return cmd_predict(pr_ckpt, pr_image, pr_expr, pr_heat, pr_mask);
    if (embed->parsed() && nn->parsed()) return cmd_embed_nn(em_vectors, em_token, em_k);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_trials, gc_step);
    if (ab->parsed()) {
      TrainConfig c = load_config_file(ab_config);
      if (ab->count("--refer-fraction")) c.refer_fraction = ab_frac;
      return cmd_ablate(c, ab_dir, ab_seeds, ab_out);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code == ErrorCode::BadConfig ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
