#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "egcn/model.hpp"

namespace egcn {

struct TrainConfig {
  int epochs = 50;
  int warmup_epochs = 10;
  double peak_lr = 0.1;
  double momentum = 0.9;  // Nesterov
  double weight_decay = 1e-4;
  int batch_size = 32;
  int micro_batch = 2;  // gradient-accumulation slice; BN statistics are per slice
  uint64_t seed = 0;
  double stop_train_acc = 0.0;  // early stop once BOTH thresholds are met; 0 disables
  double stop_eval_acc = 0.0;

  void validate() const;
};

/// Linear warmup to peak_lr over warmup_epochs, then single-cycle cosine
/// decay to zero at the final epoch.
double lr_at(int epoch, const TrainConfig& cfg);

struct EpochStats {
  int epoch;
  double lr;
  double loss;       // mean cross entropy per clip per stream
  double train_acc;  // fused top-1 over the epoch's batches
  double eval_acc;   // -1 when no held-out set
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  bool stopped_early = false;
};

struct EvalResult {
  double accuracy = 0.0;
  int classes = 0;
  int64_t count = 0;
  std::vector<int64_t> confusion;  // classes x classes, row = true label

  int64_t confusion_at(int truth, int pred) const {
    return confusion[static_cast<size_t>(truth * classes + pred)];
  }
};

class Trainer {
 public:
  Trainer(Model& model, TrainConfig cfg);

  /// One Nesterov SGD step over a batch (gradient accumulation across
  /// micro-batches). Returns the batch loss; adds fused top-1 hits to
  /// *correct when given.
  double train_step(const std::vector<const AlignedClip*>& batch, double lr,
                    int* correct = nullptr);

  TrainResult train(const std::vector<AlignedClip>& train_clips,
                    const std::vector<AlignedClip>* eval_clips, std::ostream* log);

  const TrainConfig& config() const { return cfg_; }

 private:
  Model& model_;
  TrainConfig cfg_;
  std::vector<Var> params_;
  std::vector<char> decay_;
  std::vector<Tensor> velocity_;
  int epoch_ = 0;
};

EvalResult evaluate(Model& model, const std::vector<AlignedClip>& clips,
                    const std::vector<int>* stream_subset = nullptr);

/// Stream subset given as indices into model.streams ("A,B,C" -> 0,1,2).
std::vector<int> parse_stream_subset(const std::string& names);

struct GradCheckItem {
  std::string name;
  double max_err;
};
/// Central-difference checks of the three layer types on tiny double
/// precision configurations. `which` is agc, tgc, att, or all.
std::vector<GradCheckItem> run_gradcheck(const std::string& which);

/// Deterministic synthetic corpus: `per_class` clips for each catalog class.
std::vector<AlignedClip> make_synthetic_corpus(int classes, int per_class, uint64_t seed);

/// Stratified split preserving generation order within each class.
void split_corpus(const std::vector<AlignedClip>& all, double train_fraction,
                  std::vector<AlignedClip>* train_out, std::vector<AlignedClip>* eval_out);

}  // namespace egcn
