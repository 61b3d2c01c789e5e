#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "egcn/features.hpp"
#include "egcn/graph.hpp"
#include "egcn/layers.hpp"
#include "egcn/skeleton.hpp"

namespace egcn {

struct BlockRow {
  int width = 0;
  int stride = 1;
  int tgc_depth = 0;  // temporal layers in the block; the first carries the stride
  bool att = false;
};

struct StreamSpec {
  std::string name;
  GraphKind graph = GraphKind::Intra;
  std::vector<BranchKind> branches;
  int stem_width = 0;
  std::vector<BlockRow> blocks;
};

struct ModelConfig {
  int phi = 0;
  double alpha = 1.2;
  double beta_scale = 1.35;
  int classes = 26;
  int temporal_kernel = 5;
  bool residual = true;
  double width_scale = 1.0;  // reduced variants for desk-scale training
  double adjacency_beta = 1e-3;
  std::vector<StreamSpec> streams;

  std::string model_name() const;
  /// Stream widths with width_scale and the compound width multiplier applied.
  int resolved_width(int base_width) const;
  int resolved_depth(int base_depth) const;
  void validate() const;

  static ModelConfig b0(int classes = 26);
};

/// Width and depth compound scaling: widths scale by alpha^phi (rounded to
/// the nearest multiple of 4), per-block temporal depths by beta^phi
/// (rounded to the nearest integer, minimum 1).
ModelConfig scale_config(const ModelConfig& base, int phi);

void save_config(const ModelConfig& cfg, const std::string& path);
ModelConfig load_config(const std::string& path);

struct Block {
  AgcLayer agc;
  std::vector<TgcLayer> tgcs;
  std::optional<AttLayer> att;
};

struct BranchStack {
  BranchKind kind = BranchKind::J1;
  BatchNorm input_bn;
  AgcLayer stem;
};

struct StreamNet {
  std::string name;
  GraphKind graph = GraphKind::Intra;
  int V = 0, M = 0;
  std::vector<BranchStack> branches;
  std::vector<Block> main;
  Var fc_w, fc_b;

  /// branch_blocks[i] is (N*M, C_i, T, V); returns logits (N, classes).
  /// diag_first_nan, when set, receives the first layer whose output went
  /// non-finite (forward continues so the caller can report it).
  Var forward_logits(const std::vector<Tensor>& branch_blocks, bool training,
                     std::string* diag_first_nan = nullptr);
  void visit(const ParamVisitor& pv, const StateVisitor& sv);
};

struct Model {
  ModelConfig cfg;
  PartitionedAdjacency adj_intra, adj_inter;
  std::vector<StreamNet> streams;

  static Model build(const ModelConfig& cfg, uint64_t seed);

  void visit_params(const ParamVisitor& pv);
  void visit_state(const StateVisitor& sv);
  int64_t parameter_count();

  /// Per-stream class probabilities for a batch of clips; streams not in
  /// `subset` (when given) are skipped. Fused output averages the rest.
  Tensor forward_probs(const std::vector<const AlignedClip*>& clips, bool training,
                       const std::vector<int>* subset = nullptr);

  struct Prediction {
    int label;
    std::vector<double> probs;
  };
  Prediction predict(const AlignedClip& clip);

  void save_checkpoint(const std::string& path);
  void load_checkpoint(const std::string& path);
};

}  // namespace egcn
