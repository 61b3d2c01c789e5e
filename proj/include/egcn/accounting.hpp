#pragma once

#include <string>
#include <vector>

#include "egcn/model.hpp"

namespace egcn {

struct CostItem {
  std::string name;
  int64_t params = 0;
  double flops = 0.0;
  double flops_ck = 0.0;  // data-driven similarity share, itemized
};

/// Static parameter/FLOP budget of a built model at a canonical input
/// (batch of one clip, both bodies). One multiply-accumulate counts as one
/// FLOP; elementwise maps and batch norm cost one per output element,
/// softmax three; convolution cost is out_elems * taps * C_in/groups with
/// biases not counted.
struct CostReport {
  std::string model_name;
  int T = kAlignedFrames;
  std::vector<CostItem> layers;   // hierarchical names, e.g. "intra/block2/tgc0"
  std::vector<CostItem> streams;  // per-stream totals
  CostItem total;
  std::string convention =
      "MAC=1; conv = out_elems*taps*Cin/groups (bias uncounted); "
      "elementwise and batch norm 1/elem; softmax 3/elem";
};

CostReport count_costs(Model& model, int T = kAlignedFrames);
CostReport count_parameters(Model& model);
CostReport count_flops(Model& model, int T = kAlignedFrames);

std::string report_text(const CostReport& r, bool per_layer = false);
std::string report_json(const CostReport& r);

}  // namespace egcn
