#include "egcn/model.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace egcn {

using nlohmann::json;

std::string ModelConfig::model_name() const {
  return "3s-EGCN-IIG (B" + std::to_string(phi) + ")";
}

int ModelConfig::resolved_width(int base_width) const {
  double w = base_width * width_scale;
  if (phi > 0) {
    w *= std::pow(alpha, phi);
    return std::max(4, static_cast<int>(std::llround(w / 4.0)) * 4);
  }
  return std::max(1, static_cast<int>(std::llround(w)));
}

int ModelConfig::resolved_depth(int base_depth) const {
  if (base_depth < 1) return 0;
  if (phi == 0) return base_depth;
  return std::max(1, static_cast<int>(std::llround(base_depth * std::pow(beta_scale, phi))));
}

void ModelConfig::validate() const {
  if (phi < 0) throw Error("usage", "config: phi must be >= 0");
  if (classes < 2) throw Error("usage", "config: classes must be >= 2");
  if (temporal_kernel != 5 && temporal_kernel != 9) {
    throw Error("usage", "config: temporal kernel must be 5 or 9");
  }
  if (streams.empty()) throw Error("usage", "config: no streams");
  for (const StreamSpec& s : streams) {
    if (s.branches.empty()) throw Error("usage", "config: stream without branches");
    if (s.blocks.empty()) throw Error("usage", "config: stream without blocks");
    for (const BranchKind b : s.branches) {
      if (branch_graph(b) != s.graph) {
        throw Error("usage", "config: branch " + std::string(branch_name(b)) +
                                 " does not match the stream graph");
      }
      if (branch_channels(b) != branch_channels(s.branches[0])) {
        throw Error("usage", "config: branch channel widths differ within a stream");
      }
    }
    for (const BlockRow& r : s.blocks) {
      if (r.stride != 1 && r.tgc_depth < 1) {
        throw Error("usage", "config: a strided block needs a temporal layer");
      }
    }
  }
}

ModelConfig ModelConfig::b0(int classes) {
  ModelConfig cfg;
  cfg.classes = classes;
  StreamSpec intra;
  intra.name = "intra";
  intra.graph = GraphKind::Intra;
  intra.branches = {BranchKind::J1, BranchKind::V1, BranchKind::B1};
  intra.stem_width = 64;
  intra.blocks = {{84, 1, 0, true}, {96, 2, 1, true}, {124, 2, 1, true}, {20, 1, 2, true}};

  StreamSpec inter1;
  inter1.name = "inter1";
  inter1.graph = GraphKind::Inter;
  inter1.branches = {BranchKind::J2, BranchKind::V2};
  inter1.stem_width = 60;
  inter1.blocks = {{60, 1, 0, true}, {80, 2, 1, true}, {112, 2, 1, true}, {40, 1, 1, true}};

  StreamSpec inter2;
  inter2.name = "inter2";
  inter2.graph = GraphKind::Inter;
  inter2.branches = {BranchKind::B2};
  inter2.stem_width = 52;
  inter2.blocks = {{64, 1, 0, true}, {60, 2, 1, true}, {120, 2, 1, true}, {24, 1, 0, true}};

  cfg.streams = {intra, inter1, inter2};
  return cfg;
}

ModelConfig scale_config(const ModelConfig& base, int phi) {
  if (phi < 0) throw Error("usage", "scale_config: phi must be >= 0");
  ModelConfig out = base;
  out.phi = phi;
  return out;
}

namespace {

std::string graph_name(GraphKind g) { return g == GraphKind::Intra ? "intra" : "inter"; }

GraphKind graph_from_name(const std::string& s) {
  if (s == "intra") return GraphKind::Intra;
  if (s == "inter") return GraphKind::Inter;
  throw Error("format", "config: unknown graph kind " + s);
}

}  // namespace

void save_config(const ModelConfig& cfg, const std::string& path) {
  json j;
  j["name"] = "3s-EGCN-IIG";
  j["phi"] = cfg.phi;
  j["alpha"] = cfg.alpha;
  j["beta"] = cfg.beta_scale;
  j["classes"] = cfg.classes;
  j["temporal_kernel"] = cfg.temporal_kernel;
  j["residual"] = cfg.residual;
  j["width_scale"] = cfg.width_scale;
  j["adjacency_beta"] = cfg.adjacency_beta;
  j["streams"] = json::array();
  for (const StreamSpec& s : cfg.streams) {
    json js;
    js["name"] = s.name;
    js["graph"] = graph_name(s.graph);
    js["branches"] = json::array();
    for (BranchKind b : s.branches) js["branches"].push_back(branch_name(b));
    js["stem"] = s.stem_width;
    js["blocks"] = json::array();
    for (const BlockRow& r : s.blocks) {
      js["blocks"].push_back({{"width", r.width},
                              {"stride", r.stride},
                              {"tgc", r.tgc_depth},
                              {"att", r.att}});
    }
    j["streams"].push_back(js);
  }
  std::ofstream f(path);
  if (!f) throw Error("io", "cannot write config file: " + path);
  f << j.dump(2) << "\n";
}

ModelConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("io", "cannot open config file: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw Error("format", "config parse failed: " + std::string(e.what()));
  }
  ModelConfig cfg;
  try {
    cfg.phi = j.value("phi", 0);
    cfg.alpha = j.value("alpha", 1.2);
    cfg.beta_scale = j.value("beta", 1.35);
    cfg.classes = j.value("classes", 26);
    cfg.temporal_kernel = j.value("temporal_kernel", 5);
    cfg.residual = j.value("residual", true);
    cfg.width_scale = j.value("width_scale", 1.0);
    cfg.adjacency_beta = j.value("adjacency_beta", 1e-3);
    cfg.streams.clear();
    for (const json& js : j.at("streams")) {
      StreamSpec s;
      s.name = js.at("name").get<std::string>();
      s.graph = graph_from_name(js.at("graph").get<std::string>());
      for (const json& b : js.at("branches")) {
        s.branches.push_back(branch_from_name(b.get<std::string>()));
      }
      s.stem_width = js.at("stem").get<int>();
      for (const json& r : js.at("blocks")) {
        s.blocks.push_back({r.at("width").get<int>(), r.value("stride", 1),
                            r.value("tgc", 0), r.value("att", false)});
      }
      cfg.streams.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw Error("format", "config field error: " + std::string(e.what()));
  }
  cfg.validate();
  return cfg;
}

Var StreamNet::forward_logits(const std::vector<Tensor>& branch_blocks, bool training,
                              std::string* diag_first_nan) {
  if (branch_blocks.size() != branches.size()) {
    throw Error("shape", "stream " + name + ": expected " +
                             std::to_string(branches.size()) + " branch blocks, got " +
                             std::to_string(branch_blocks.size()));
  }
  auto diag = [&](const char* where, const Var& v) {
    if (diag_first_nan && diag_first_nan->empty() && !v.value().all_finite()) {
      *diag_first_nan = name + "/" + where;
    }
  };

  std::vector<Var> fused;
  for (size_t i = 0; i < branches.size(); ++i) {
    BranchStack& stack = branches[i];
    Var x = Var::constant(branch_blocks[i]);
    x = stack.input_bn.forward(x, training);
    x = stack.stem.forward(x, training);
    diag((std::string("branch_") + branch_name(stack.kind)).c_str(), x);
    fused.push_back(x);
  }
  Var y = fused.size() == 1 ? fused[0] : ops::concat(fused, 1);

  for (size_t bi = 0; bi < main.size(); ++bi) {
    Block& block = main[bi];
    y = block.agc.forward(y, training);
    for (TgcLayer& tgc : block.tgcs) y = tgc.forward(y, training);
    if (block.att) y = block.att->forward(y);
    diag(("block" + std::to_string(bi)).c_str(), y);
  }

  // Global average pool over (T,V), then over the M graphs of each clip.
  y = ops::mean_axis(ops::mean_axis(y, 3), 2);  // (N*M, C)
  const int64_t NM = y.shape()[0];
  const int64_t C = y.shape()[1];
  y = ops::mean_axis(ops::reshape(y, {NM / M, M, C}), 1);  // (N, C)
  Var logits = ops::linear(y, fc_w, fc_b);
  diag("classifier", logits);
  return logits;
}

void StreamNet::visit(const ParamVisitor& pv, const StateVisitor& sv) {
  for (BranchStack& stack : branches) {
    const std::string bp = name + ".branch_" + branch_name(stack.kind);
    stack.input_bn.visit(bp + ".input_bn", pv, sv);
    stack.stem.visit(bp + ".stem", pv, sv);
  }
  for (size_t bi = 0; bi < main.size(); ++bi) {
    const std::string mp = name + ".block" + std::to_string(bi);
    main[bi].agc.visit(mp + ".agc", pv, sv);
    for (size_t ti = 0; ti < main[bi].tgcs.size(); ++ti) {
      main[bi].tgcs[ti].visit(mp + ".tgc" + std::to_string(ti), pv, sv);
    }
    if (main[bi].att) main[bi].att->visit(mp + ".att", pv);
  }
  pv(name + ".fc.weight", fc_w, true);
  pv(name + ".fc.bias", fc_b, false);
}

Model Model::build(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  m.adj_intra = build_adjacency(GraphKind::Intra, cfg.adjacency_beta);
  m.adj_inter = build_adjacency(GraphKind::Inter, cfg.adjacency_beta);
  std::mt19937_64 rng(seed ^ 0xE6C5ULL);

  for (const StreamSpec& spec : cfg.streams) {
    StreamNet net;
    net.name = spec.name;
    net.graph = spec.graph;
    net.V = spec.graph == GraphKind::Intra ? kNumJoints : 2 * kNumJoints;
    net.M = spec.graph == GraphKind::Intra ? 2 : 1;
    const PartitionedAdjacency& adj =
        spec.graph == GraphKind::Intra ? m.adj_intra : m.adj_inter;

    const int stem = cfg.resolved_width(spec.stem_width);
    for (BranchKind kind : spec.branches) {
      BranchStack stack;
      stack.kind = kind;
      stack.input_bn.init(branch_channels(kind));
      stack.stem.init(branch_channels(kind), stem, adj, rng, cfg.residual);
      net.branches.push_back(std::move(stack));
    }

    int width = stem * static_cast<int>(spec.branches.size());
    for (const BlockRow& row : spec.blocks) {
      Block block;
      const int w = cfg.resolved_width(row.width);
      block.agc.init(width, w, adj, rng, cfg.residual);
      width = w;
      const int depth = cfg.resolved_depth(row.tgc_depth);
      for (int d = 0; d < depth; ++d) {
        TgcLayer tgc;
        tgc.init(w, d == 0 ? row.stride : 1, cfg.temporal_kernel, rng, cfg.residual);
        block.tgcs.push_back(std::move(tgc));
      }
      if (row.att) {
        block.att.emplace();
        block.att->init(w, rng);
      }
      net.main.push_back(std::move(block));
    }

    Tensor wt({cfg.classes, width});
    init_uniform(wt, width, rng);
    net.fc_w = Var::leaf(std::move(wt), true);
    Tensor bt({cfg.classes});
    init_uniform(bt, width, rng);
    net.fc_b = Var::leaf(std::move(bt), true);
    m.streams.push_back(std::move(net));
  }
  return m;
}

void Model::visit_params(const ParamVisitor& pv) {
  StateVisitor noop = [](const std::string&, Tensor&) {};
  for (StreamNet& s : streams) s.visit(pv, noop);
}

void Model::visit_state(const StateVisitor& sv) {
  ParamVisitor noop = [](const std::string&, Var&, bool) {};
  for (StreamNet& s : streams) s.visit(noop, sv);
}

int64_t Model::parameter_count() {
  int64_t total = 0;
  visit_params([&](const std::string&, Var& v, bool) { total += v.size(); });
  return total;
}

Tensor Model::forward_probs(const std::vector<const AlignedClip*>& clips, bool training,
                            const std::vector<int>* subset) {
  const int64_t N = static_cast<int64_t>(clips.size());
  Tensor fused({N, cfg.classes});
  int used = 0;
  for (size_t si = 0; si < streams.size(); ++si) {
    if (subset && std::find(subset->begin(), subset->end(), static_cast<int>(si)) ==
                      subset->end()) {
      continue;
    }
    StreamNet& net = streams[si];
    std::vector<Tensor> blocks;
    for (const BranchStack& stack : net.branches) {
      blocks.push_back(batch_branch_block(clips, stack.kind));
    }
    const Var probs = ops::softmax(net.forward_logits(blocks, training));
    for (int64_t i = 0; i < fused.size(); ++i) fused[i] += probs.value()[i];
    ++used;
  }
  if (used == 0) throw Error("usage", "forward_probs: empty stream subset");
  for (int64_t i = 0; i < fused.size(); ++i) fused[i] /= used;
  return fused;
}

Model::Prediction Model::predict(const AlignedClip& clip) {
  if (static_cast<int>(clip.xyz.size()) != 2 * kAlignedFrames * 25 * 3) {
    throw Error("format", "predict: clip is not aligned");
  }
  const std::vector<const AlignedClip*> one = {&clip};
  const Tensor probs = forward_probs(one, false);
  Prediction p;
  p.probs.assign(probs.data(), probs.data() + probs.size());
  p.label = 0;
  for (size_t k = 1; k < p.probs.size(); ++k) {
    if (p.probs[k] > p.probs[static_cast<size_t>(p.label)]) p.label = static_cast<int>(k);
  }
  return p;
}

namespace {

struct Record {
  std::string name;
  Tensor* tensor;
};

std::vector<Record> checkpoint_records(Model& m) {
  std::vector<Record> records;
  m.visit_params([&](const std::string& name, Var& v, bool) {
    records.push_back({name, &v.mutable_value()});
  });
  m.visit_state([&](const std::string& name, Tensor& t) { records.push_back({name, &t}); });
  return records;
}

}  // namespace

void Model::save_checkpoint(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("io", "cannot write checkpoint: " + path);
  auto records = checkpoint_records(*this);
  f << "EGCN-CKPT v1 count=" << records.size() << "\n";
  for (const Record& r : records) {
    f << r.name << " " << r.tensor->ndim();
    for (int64_t d : r.tensor->shape()) f << " " << d;
    f << "\n";
    f.write(reinterpret_cast<const char*>(r.tensor->data()),
            static_cast<std::streamsize>(r.tensor->size() * sizeof(double)));
  }
  if (!f) throw Error("io", "short write to checkpoint: " + path);
}

void Model::load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("io", "cannot open checkpoint: " + path);
  std::string header;
  if (!std::getline(f, header) || header.rfind("EGCN-CKPT v1", 0) != 0) {
    throw Error("format", "not an EGCN checkpoint: " + path);
  }
  size_t count = 0;
  {
    const size_t pos = header.find("count=");
    if (pos == std::string::npos) throw Error("format", "checkpoint header lacks count");
    count = std::stoull(header.substr(pos + 6));
  }
  auto records = checkpoint_records(*this);
  std::map<std::string, Tensor*> by_name;
  for (const Record& r : records) by_name[r.name] = r.tensor;
  if (count != records.size()) {
    throw Error("format", "checkpoint has " + std::to_string(count) + " records, model needs " +
                              std::to_string(records.size()));
  }
  for (size_t i = 0; i < count; ++i) {
    std::string line;
    if (!std::getline(f, line)) throw Error("format", "truncated checkpoint: " + path);
    std::istringstream ss(line);
    std::string name;
    int ndim;
    if (!(ss >> name >> ndim)) throw Error("format", "bad checkpoint record header");
    Shape shape(static_cast<size_t>(ndim));
    for (int d = 0; d < ndim; ++d) {
      if (!(ss >> shape[static_cast<size_t>(d)])) {
        throw Error("format", "bad checkpoint record shape");
      }
    }
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error("format", "unexpected checkpoint record: " + name);
    if (it->second->shape() != shape) {
      throw Error("format", "checkpoint shape mismatch for " + name + ": file " +
                                shape_str(shape) + ", model " + shape_str(it->second->shape()));
    }
    if (!f.read(reinterpret_cast<char*>(it->second->data()),
                static_cast<std::streamsize>(it->second->size() * sizeof(double)))) {
      throw Error("format", "truncated checkpoint data: " + path);
    }
  }
}

}  // namespace egcn
