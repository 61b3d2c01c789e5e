#include "egcn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>

namespace egcn {

void TrainConfig::validate() const {
  if (epochs < 1 || warmup_epochs < 0 || warmup_epochs >= epochs) {
    throw Error("usage", "train config: need 0 <= warmup_epochs < epochs");
  }
  if (peak_lr <= 0.0 || momentum < 0.0 || weight_decay < 0.0) {
    throw Error("usage", "train config: hyperparameters must be positive");
  }
  if (batch_size < 1 || micro_batch < 1) {
    throw Error("usage", "train config: batch sizes must be positive");
  }
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw Error("usage", "lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                             std::to_string(cfg.epochs) + ")");
  }
  if (epoch < cfg.warmup_epochs) {
    return cfg.peak_lr * static_cast<double>(epoch) / cfg.warmup_epochs;
  }
  const double progress = static_cast<double>(epoch - cfg.warmup_epochs) /
                          (cfg.epochs - cfg.warmup_epochs);
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

Trainer::Trainer(Model& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) {
  cfg_.validate();
  model_.visit_params([&](const std::string&, Var& v, bool decay) {
    params_.push_back(v);
    decay_.push_back(decay ? 1 : 0);
    velocity_.emplace_back(v.shape());
  });
}

double Trainer::train_step(const std::vector<const AlignedClip*>& batch, double lr,
                           int* correct) {
  const int64_t B = static_cast<int64_t>(batch.size());
  if (B == 0) throw Error("usage", "train_step: empty batch");
  const int64_t n_streams = static_cast<int64_t>(model_.streams.size());

  double loss_sum = 0.0;
  for (int64_t at = 0; at < B; at += cfg_.micro_batch) {
    const int64_t take = std::min<int64_t>(cfg_.micro_batch, B - at);
    std::vector<const AlignedClip*> micro(batch.begin() + at, batch.begin() + at + take);
    std::vector<int> labels;
    for (const AlignedClip* c : micro) {
      if (c->label < 0 || c->label >= model_.cfg.classes) {
        throw Error("format", "train_step: label " + std::to_string(c->label) +
                                  " outside the configured class count");
      }
      labels.push_back(c->label);
    }

    Tensor fused({take, model_.cfg.classes});
    Var total;
    for (StreamNet& net : model_.streams) {
      std::vector<Tensor> blocks;
      for (const BranchStack& stack : net.branches) {
        blocks.push_back(batch_branch_block(micro, stack.kind));
      }
      const Var logits = net.forward_logits(blocks, true);
      const Var probs = ops::softmax(logits);
      for (int64_t i = 0; i < fused.size(); ++i) fused[i] += probs.value()[i];
      const Var loss = ops::cross_entropy_sum(logits, labels);
      total = total.defined() ? ops::add(total, loss) : loss;
    }
    const double micro_loss = total.value()[0];
    if (!std::isfinite(micro_loss)) {
      // Re-run one diagnostic forward to name the first offending layer.
      std::string first_nan;
      for (StreamNet& net : model_.streams) {
        std::vector<Tensor> blocks;
        for (const BranchStack& stack : net.branches) {
          blocks.push_back(batch_branch_block(micro, stack.kind));
        }
        net.forward_logits(blocks, true, &first_nan);
        if (!first_nan.empty()) break;
      }
      throw Error("numeric", "train_step: non-finite loss at epoch " +
                                 std::to_string(epoch_) + " (first bad layer: " +
                                 (first_nan.empty() ? "unknown" : first_nan) + ")");
    }
    loss_sum += micro_loss;
    backward(total);

    if (correct) {
      for (int64_t i = 0; i < take; ++i) {
        int arg = 0;
        for (int k = 1; k < model_.cfg.classes; ++k) {
          if (fused[i * model_.cfg.classes + k] > fused[i * model_.cfg.classes + arg]) arg = k;
        }
        if (arg == labels[static_cast<size_t>(i)]) ++*correct;
      }
    }
  }

  // Nesterov momentum step on the accumulated gradients.
  const double inv_b = 1.0 / static_cast<double>(B);
  for (size_t p = 0; p < params_.size(); ++p) {
    Var& v = params_[p];
    Tensor& vel = velocity_[p];
    Tensor& w = v.mutable_value();
    const bool has_grad = !v.grad().empty();
    const Tensor& g = v.grad();
    for (int64_t i = 0; i < w.size(); ++i) {
      double gi = has_grad ? g[i] * inv_b : 0.0;
      if (decay_[p]) gi += cfg_.weight_decay * w[i];
      vel[i] = cfg_.momentum * vel[i] + gi;
      w[i] -= lr * (gi + cfg_.momentum * vel[i]);
    }
    v.zero_grad();
  }
  return loss_sum / (static_cast<double>(B) * n_streams);
}

TrainResult Trainer::train(const std::vector<AlignedClip>& train_clips,
                           const std::vector<AlignedClip>* eval_clips, std::ostream* log) {
  if (train_clips.empty()) throw Error("usage", "train: empty corpus");
  TrainResult result;
  std::vector<size_t> order(train_clips.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (epoch_ = 0; epoch_ < cfg_.epochs; ++epoch_) {
    const double lr = lr_at(epoch_, cfg_);
    std::mt19937_64 shuffle_rng(cfg_.seed * 0x9E3779B97F4A7C15ULL + static_cast<uint64_t>(epoch_));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_acc = 0.0;
    int correct = 0;
    int64_t seen = 0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg_.batch_size)) {
      const size_t take = std::min<size_t>(static_cast<size_t>(cfg_.batch_size),
                                           order.size() - at);
      std::vector<const AlignedClip*> batch;
      for (size_t i = 0; i < take; ++i) batch.push_back(&train_clips[order[at + i]]);
      loss_acc += train_step(batch, lr, &correct) * static_cast<double>(take);
      seen += static_cast<int64_t>(take);
    }

    EpochStats stats;
    stats.epoch = epoch_;
    stats.lr = lr;
    stats.loss = loss_acc / static_cast<double>(seen);
    stats.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    stats.eval_acc = -1.0;
    if (eval_clips && !eval_clips->empty()) {
      stats.eval_acc = evaluate(model_, *eval_clips).accuracy;
    }
    result.epochs.push_back(stats);
    if (log) {
      (*log) << "epoch " << stats.epoch << " lr " << stats.lr << " loss " << stats.loss
             << " train_acc " << stats.train_acc;
      if (stats.eval_acc >= 0.0) (*log) << " eval_acc " << stats.eval_acc;
      (*log) << "\n";
      log->flush();
    }
    if (cfg_.stop_train_acc > 0.0 && stats.train_acc >= cfg_.stop_train_acc &&
        (cfg_.stop_eval_acc <= 0.0 ||
         (stats.eval_acc >= 0.0 && stats.eval_acc >= cfg_.stop_eval_acc))) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

EvalResult evaluate(Model& model, const std::vector<AlignedClip>& clips,
                    const std::vector<int>* stream_subset) {
  if (clips.empty()) throw Error("usage", "evaluate: empty corpus");
  EvalResult result;
  result.classes = model.cfg.classes;
  result.confusion.assign(static_cast<size_t>(model.cfg.classes) * model.cfg.classes, 0);

  constexpr size_t kEvalBatch = 16;
  int64_t correct = 0;
  for (size_t at = 0; at < clips.size(); at += kEvalBatch) {
    const size_t take = std::min(kEvalBatch, clips.size() - at);
    std::vector<const AlignedClip*> batch;
    for (size_t i = 0; i < take; ++i) batch.push_back(&clips[at + i]);
    const Tensor probs = model.forward_probs(batch, false, stream_subset);
    for (size_t i = 0; i < take; ++i) {
      const int truth = clips[at + i].label;
      if (truth < 0 || truth >= model.cfg.classes) {
        throw Error("format", "evaluate: label outside the configured class count");
      }
      int arg = 0;
      for (int k = 1; k < model.cfg.classes; ++k) {
        if (probs[static_cast<int64_t>(i) * model.cfg.classes + k] >
            probs[static_cast<int64_t>(i) * model.cfg.classes + arg]) {
          arg = k;
        }
      }
      result.confusion[static_cast<size_t>(truth * model.cfg.classes + arg)]++;
      if (arg == truth) ++correct;
    }
  }
  result.count = static_cast<int64_t>(clips.size());
  result.accuracy = static_cast<double>(correct) / static_cast<double>(result.count);
  return result;
}

std::vector<int> parse_stream_subset(const std::string& names) {
  std::vector<int> subset;
  for (char c : names) {
    switch (c) {
      case 'A': case 'a': subset.push_back(0); break;
      case 'B': case 'b': subset.push_back(1); break;
      case 'C': case 'c': subset.push_back(2); break;
      case ',': case ' ': case '+': break;
      default:
        throw Error("usage", "stream subset must name streams A, B, C");
    }
  }
  if (subset.empty()) throw Error("usage", "empty stream subset");
  std::sort(subset.begin(), subset.end());
  subset.erase(std::unique(subset.begin(), subset.end()), subset.end());
  return subset;
}

namespace {

PartitionedAdjacency tiny_adjacency(int nodes) {
  BodyGraph g;
  g.kind = GraphKind::Intra;
  g.node_count = nodes;
  for (int i = 0; i + 1 < nodes; ++i) g.edges.emplace_back(i, i + 1);
  std::vector<Point3> pose;
  for (int i = 0; i < nodes; ++i) {
    pose.push_back({0.3 * i, 0.1 * i * i, 0.0});
  }
  PartitionedAdjacency adj = partition_spatial(g, pose);
  normalize_adjacency(adj, 1e-3);
  return adj;
}

Tensor rand_input(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = d(rng);
  return t;
}

void check_param(std::vector<GradCheckItem>& out, const std::string& name, Var& slot,
                 const std::function<Var()>& forward) {
  const Tensor at = slot.value();
  const Var keep = slot;
  const double err = finite_diff_check(
      [&](const Var& v) {
        slot = v;
        return ops::sum_all(forward());
      },
      at);
  slot = keep;
  out.push_back({name, err});
}

void gradcheck_agc(std::vector<GradCheckItem>& out, std::mt19937_64& rng) {
  const PartitionedAdjacency adj = tiny_adjacency(5);
  AgcLayer layer;
  layer.init(3, 4, adj, rng, true);
  // Nonzero learned adjacency so its path is generic.
  for (auto& b : layer.bk) init_uniform(b.mutable_value(), 5, rng);
  const Tensor x = rand_input({2, 3, 4, 5}, rng);
  auto fwd = [&] { return layer.forward(Var::constant(x), true); };

  out.push_back({"agc.input", finite_diff_check(
      [&](const Var& v) { return ops::sum_all(layer.forward(v, true)); }, x)});
  check_param(out, "agc.w0.weight", layer.wk[0].w, fwd);
  check_param(out, "agc.b_adj0", layer.bk[0], fwd);
  check_param(out, "agc.b_adj2", layer.bk[2], fwd);
  check_param(out, "agc.emb_src0.weight", layer.emb_src[0].w, fwd);
  check_param(out, "agc.emb_dst1.weight", layer.emb_dst[1].w, fwd);
  check_param(out, "agc.bn.gamma", layer.bn.gamma, fwd);
  check_param(out, "agc.res.weight", layer.res->w, fwd);
}

void gradcheck_tgc(std::vector<GradCheckItem>& out, std::mt19937_64& rng) {
  TgcLayer layer;
  layer.init(4, 2, 5, rng, true);
  const Tensor x = rand_input({2, 4, 8, 3}, rng);
  auto fwd = [&] { return layer.forward(Var::constant(x), true); };

  out.push_back({"tgc.input", finite_diff_check(
      [&](const Var& v) { return ops::sum_all(layer.forward(v, true)); }, x)});
  check_param(out, "tgc.expand.weight", layer.expand.w, fwd);
  check_param(out, "tgc.depth.weight", layer.dw_w, fwd);
  check_param(out, "tgc.project.weight", layer.project.w, fwd);
  check_param(out, "tgc.project.bias", layer.project.b, fwd);
  check_param(out, "tgc.res.weight", layer.res->w, fwd);
}

void gradcheck_att(std::vector<GradCheckItem>& out, std::mt19937_64& rng) {
  AttLayer layer;
  layer.init(4, rng);
  const Tensor x = rand_input({2, 4, 6, 5}, rng);
  auto fwd = [&] { return layer.forward(Var::constant(x)); };

  out.push_back({"att.input", finite_diff_check(
      [&](const Var& v) { return ops::sum_all(layer.forward(v)); }, x)});
  check_param(out, "att.fcn.weight", layer.fcn.w, fwd);
  check_param(out, "att.gate_t.weight", layer.gate_t.w, fwd);
  check_param(out, "att.gate_v.weight", layer.gate_v.w, fwd);
}

}  // namespace

std::vector<GradCheckItem> run_gradcheck(const std::string& which) {
  std::vector<GradCheckItem> out;
  std::mt19937_64 rng(1234);
  const bool all = which == "all";
  if (all || which == "agc") gradcheck_agc(out, rng);
  if (all || which == "tgc") gradcheck_tgc(out, rng);
  if (all || which == "att") gradcheck_att(out, rng);
  if (out.empty()) throw Error("usage", "gradcheck: unknown layer " + which);
  return out;
}

std::vector<AlignedClip> make_synthetic_corpus(int classes, int per_class, uint64_t seed) {
  if (classes < 1 || classes > synthetic_class_count()) {
    throw Error("usage", "make_synthetic_corpus: class count outside the catalog");
  }
  std::vector<AlignedClip> clips;
  for (int cls = 0; cls < classes; ++cls) {
    for (int i = 0; i < per_class; ++i) {
      const SkeletonClip raw =
          generate_synthetic_clip(cls, seed + static_cast<uint64_t>(i) * 1000003ULL);
      clips.push_back(to_aligned(align_clip_length(select_two_bodies(raw))));
    }
  }
  return clips;
}

void split_corpus(const std::vector<AlignedClip>& all, double train_fraction,
                  std::vector<AlignedClip>* train_out, std::vector<AlignedClip>* eval_out) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0) {
    throw Error("usage", "split_corpus: fraction must be in (0,1)");
  }
  int max_label = 0;
  for (const AlignedClip& c : all) max_label = std::max(max_label, c.label);
  for (int cls = 0; cls <= max_label; ++cls) {
    std::vector<const AlignedClip*> of_class;
    for (const AlignedClip& c : all) {
      if (c.label == cls) of_class.push_back(&c);
    }
    const size_t cut = static_cast<size_t>(std::llround(of_class.size() * train_fraction));
    for (size_t i = 0; i < of_class.size(); ++i) {
      (i < cut ? train_out : eval_out)->push_back(*of_class[i]);
    }
  }
}

}  // namespace egcn
