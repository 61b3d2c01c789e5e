// Command-line front end: synthetic data generation, preprocessing,
// training, evaluation, cost accounting, and gradient checks.
#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "egcn/accounting.hpp"
#include "egcn/kernels.hpp"
#include "egcn/model.hpp"
#include "egcn/train.hpp"

namespace fs = std::filesystem;
using namespace egcn;

namespace {

ModelConfig config_from_arg(const std::string& arg, int classes) {
  ModelConfig cfg;
  if (arg.empty() || arg == "b0") {
    cfg = ModelConfig::b0(classes > 0 ? classes : 26);
  } else if (arg == "b0-tiny") {
    cfg = ModelConfig::b0(classes > 0 ? classes : 4);
    cfg.width_scale = 0.25;
  } else {
    cfg = load_config(arg);
    if (classes > 0) cfg.classes = classes;
  }
  return cfg;
}

int cmd_synth(int classes, int per_class, uint64_t seed, const std::string& out_dir) {
  if (per_class > 999) throw Error("usage", "synth: at most 999 clips per class");
  fs::create_directories(out_dir);
  int written = 0;
  for (int cls = 0; cls < classes; ++cls) {
    for (int i = 0; i < per_class; ++i) {
      const SkeletonClip clip =
          generate_synthetic_clip(cls, seed + static_cast<uint64_t>(i) * 1000003ULL);
      char name[64];
      std::snprintf(name, sizeof name, "S001C001P001R%03dA%03d.skeleton", i + 1, cls + 1);
      std::ofstream f(fs::path(out_dir) / name);
      if (!f) throw Error("io", "cannot write " + std::string(name));
      serialize_skeleton(clip, f);
      ++written;
    }
  }
  std::printf("wrote %d clips (%d classes) to %s\n", written, classes, out_dir.c_str());
  return 0;
}

int cmd_preprocess(const std::string& in_dir, const std::string& out_file) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(in_dir)) {
    if (entry.path().extension() == ".skeleton") files.push_back(entry.path());
  }
  if (files.empty()) throw Error("io", "no .skeleton files in " + in_dir);
  std::sort(files.begin(), files.end());
  std::vector<AlignedClip> clips;
  int dropped = 0;
  for (const fs::path& p : files) {
    SkeletonClip clip = parse_skeleton_file(p.string());
    dropped += clip.dropped_bodies;
    clips.push_back(to_aligned(align_clip_length(select_two_bodies(clip))));
  }
  save_corpus(clips, out_file);
  std::printf("preprocessed %zu clips -> %s (dropped %d extra bodies)\n", clips.size(),
              out_file.c_str(), dropped);
  return 0;
}

int cmd_train(const std::string& config_arg, int classes, const std::string& data,
              const std::string& eval_data, double split, const std::string& out_ckpt,
              std::string metrics_path, uint64_t seed, int epochs, int batch_size,
              int micro_batch, double stop_train, double stop_eval) {
  ModelConfig cfg = config_from_arg(config_arg, classes);
  Model model = Model::build(cfg, seed);

  std::vector<AlignedClip> all = load_corpus(data);
  std::vector<AlignedClip> train_clips, eval_clips;
  if (!eval_data.empty()) {
    train_clips = std::move(all);
    eval_clips = load_corpus(eval_data);
  } else if (split > 0.0 && split < 1.0) {
    split_corpus(all, split, &train_clips, &eval_clips);
  } else {
    train_clips = std::move(all);
  }

  TrainConfig tc;
  tc.seed = seed;
  if (epochs > 0) tc.epochs = epochs;
  if (batch_size > 0) tc.batch_size = batch_size;
  if (micro_batch > 0) tc.micro_batch = micro_batch;
  tc.stop_train_acc = stop_train;
  tc.stop_eval_acc = stop_eval;
  if (tc.warmup_epochs >= tc.epochs) tc.warmup_epochs = std::max(0, tc.epochs / 5);

  Trainer trainer(model, tc);
  const TrainResult result =
      trainer.train(train_clips, eval_clips.empty() ? nullptr : &eval_clips, &std::cout);
  model.save_checkpoint(out_ckpt);

  if (metrics_path.empty()) metrics_path = out_ckpt + ".metrics.json";
  std::ofstream mf(metrics_path);
  if (!mf) throw Error("io", "cannot write metrics file: " + metrics_path);
  mf << "{\n  \"model\": \"" << cfg.model_name() << "\",\n  \"epochs\": [\n";
  for (size_t i = 0; i < result.epochs.size(); ++i) {
    const EpochStats& e = result.epochs[i];
    mf << "    {\"epoch\": " << e.epoch << ", \"lr\": " << e.lr << ", \"loss\": " << e.loss
       << ", \"train_acc\": " << e.train_acc << ", \"eval_acc\": " << e.eval_acc << "}"
       << (i + 1 < result.epochs.size() ? "," : "") << "\n";
  }
  mf << "  ],\n  \"stopped_early\": " << (result.stopped_early ? "true" : "false") << "\n}\n";
  std::printf("checkpoint -> %s, metrics -> %s\n", out_ckpt.c_str(), metrics_path.c_str());
  return 0;
}

int cmd_eval(const std::string& config_arg, int classes, const std::string& ckpt,
             const std::string& data, const std::string& streams, uint64_t seed) {
  ModelConfig cfg = config_from_arg(config_arg, classes);
  Model model = Model::build(cfg, seed);
  model.load_checkpoint(ckpt);
  const std::vector<AlignedClip> clips = load_corpus(data);
  std::vector<int> subset;
  const std::vector<int>* subset_ptr = nullptr;
  if (!streams.empty()) {
    subset = parse_stream_subset(streams);
    subset_ptr = &subset;
  }
  const EvalResult r = evaluate(model, clips, subset_ptr);
  if (streams.empty()) {
    std::printf("accuracy %.4f over %lld clips\n", r.accuracy,
                static_cast<long long>(r.count));
  } else {
    std::printf("accuracy %.4f over %lld clips (streams %s)\n", r.accuracy,
                static_cast<long long>(r.count), streams.c_str());
  }
  std::printf("confusion (rows = truth):\n");
  for (int i = 0; i < r.classes; ++i) {
    for (int j = 0; j < r.classes; ++j) {
      std::printf("%6lld", static_cast<long long>(r.confusion_at(i, j)));
    }
    std::printf("\n");
  }
  return 0;
}

int cmd_count(const std::string& config_arg, int classes, int phi, int T, bool per_layer,
              const std::string& json_path) {
  ModelConfig cfg = scale_config(config_from_arg(config_arg, classes), phi);
  Model model = Model::build(cfg, 0);
  const CostReport report = count_costs(model, T);
  std::fputs(report_text(report, per_layer).c_str(), stdout);

  // The temporal kernel 9 reading of the receptive-field statement, for
  // comparison against the factorized default.
  if (cfg.temporal_kernel == 5) {
    ModelConfig alt = cfg;
    alt.temporal_kernel = 9;
    Model alt_model = Model::build(alt, 0);
    const CostReport alt_report = count_costs(alt_model, T);
    std::printf("with temporal kernel 9: %.4f M params, %.4f G FLOPs\n",
                alt_report.total.params / 1e6, alt_report.total.flops / 1e9);
  }
  if (!json_path.empty()) {
    std::ofstream jf(json_path);
    if (!jf) throw Error("io", "cannot write report: " + json_path);
    jf << report_json(report) << "\n";
  }
  return 0;
}

int cmd_gradcheck(const std::string& layer) {
  const std::vector<GradCheckItem> items = run_gradcheck(layer);
  double worst = 0.0;
  for (const GradCheckItem& it : items) {
    std::printf("%-24s max rel err %.3e\n", it.name.c_str(), it.max_err);
    worst = std::max(worst, it.max_err);
  }
  std::printf("worst %.3e (tolerance 1e-4)\n", worst);
  return worst <= 1e-4 ? 0 : 1;
}

int cmd_dump_graph(const std::string& kind, const std::string& out_dir) {
  GraphKind g;
  if (kind == "intra") {
    g = GraphKind::Intra;
  } else if (kind == "inter") {
    g = GraphKind::Inter;
  } else {
    throw Error("usage", "graph kind must be intra or inter");
  }
  dump_adjacency(build_adjacency(g), out_dir, kind);
  std::printf("adjacency matrices -> %s/%s_*.txt\n", out_dir.c_str(), kind.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3s-EGCN-IIG: two-person interaction recognition"};
  app.require_subcommand(1);

  if (const char* env = std::getenv("EGCN_THREADS")) {
    kern::set_threads(std::atoi(env));
  }

  auto* synth = app.add_subcommand("synth", "generate synthetic skeleton files");
  int classes = 4, per_class = 100;
  uint64_t seed = 0;
  std::string out_dir = "synth";
  synth->add_option("--classes", classes);
  synth->add_option("--clips-per-class", per_class);
  synth->add_option("--seed", seed);
  synth->add_option("--out", out_dir)->required();

  auto* prep = app.add_subcommand("preprocess", "parse, pair, and align skeleton files");
  std::string in_dir, out_file;
  prep->add_option("--in", in_dir)->required();
  prep->add_option("--out", out_file)->required();

  auto* train = app.add_subcommand("train", "train on a preprocessed corpus");
  std::string config_arg = "b0", data, eval_data, ckpt = "model.ckpt", metrics;
  double split = 0.8, stop_train = 0.0, stop_eval = 0.0;
  int epochs = 0, batch_size = 0, micro_batch = 0, cls_override = 0;
  train->add_option("--config", config_arg, "config file, or preset b0 / b0-tiny");
  train->add_option("--classes", cls_override);
  train->add_option("--data", data)->required();
  train->add_option("--eval-data", eval_data);
  train->add_option("--split", split, "train fraction when no --eval-data");
  train->add_option("--out", ckpt)->required();
  train->add_option("--metrics", metrics);
  train->add_option("--seed", seed);
  train->add_option("--epochs", epochs);
  train->add_option("--batch-size", batch_size);
  train->add_option("--micro-batch", micro_batch);
  train->add_option("--stop-train-acc", stop_train);
  train->add_option("--stop-eval-acc", stop_eval);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_streams;
  ev->add_option("--config", config_arg);
  ev->add_option("--classes", cls_override);
  ev->add_option("--ckpt", ev_ckpt)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--streams", ev_streams, "subset, e.g. A or B,C");
  ev->add_option("--seed", seed);

  auto* count = app.add_subcommand("count", "parameter and FLOP budget report");
  int phi = 0, T = kAlignedFrames;
  bool per_layer = false;
  std::string json_path;
  count->add_option("--config", config_arg);
  count->add_option("--classes", cls_override);
  count->add_option("--phi", phi);
  count->add_option("--t", T);
  count->add_flag("--per-layer", per_layer);
  count->add_option("--json", json_path);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference layer checks");
  std::string layer = "all";
  gc->add_option("--layer", layer, "agc, tgc, att, or all");

  auto* dg = app.add_subcommand("dump-graph", "write adjacency matrices as text");
  std::string graph_kind = "intra", graph_out = "graphs";
  dg->add_option("--kind", graph_kind);
  dg->add_option("--out", graph_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(classes, per_class, seed, out_dir);
    if (*prep) return cmd_preprocess(in_dir, out_file);
    if (*train) {
      return cmd_train(config_arg, cls_override, data, eval_data, split, ckpt, metrics,
                       seed, epochs, batch_size, micro_batch, stop_train, stop_eval);
    }
    if (*ev) return cmd_eval(config_arg, cls_override, ev_ckpt, ev_data, ev_streams, seed);
    if (*count) return cmd_count(config_arg, cls_override, phi, T, per_layer, json_path);
    if (*gc) return cmd_gradcheck(layer);
    if (*dg) return cmd_dump_graph(graph_kind, graph_out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: category=%s %s\n", e.category.c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: category=internal %s\n", e.what());
    return 2;
  }
  return 0;
}
