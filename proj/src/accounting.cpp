#include "egcn/accounting.hpp"

#include <json.hpp>

#include <cstdio>
#include <sstream>

namespace egcn {

namespace {

int64_t conv_params(int64_t cin, int64_t cout, int64_t taps = 1, int64_t groups = 1) {
  return cout * (cin / groups) * taps + cout;  // bias always present
}

double conv_flops(int64_t cin, int64_t cout, int64_t T, int64_t V, int64_t M,
                  int64_t taps = 1, int64_t groups = 1) {
  return static_cast<double>(cout) * T * V * M * ((cin / groups) * taps);
}

double elems(int64_t c, int64_t T, int64_t V, int64_t M) {
  return static_cast<double>(c) * T * V * M;
}

struct LayerCounter {
  std::vector<CostItem>& out;

  CostItem& item(const std::string& name) {
    out.push_back({name, 0, 0.0, 0.0});
    return out.back();
  }

  void input_bn(const std::string& name, int64_t c, int64_t T, int64_t V, int64_t M) {
    CostItem& it = item(name);
    it.params = 2 * c;
    it.flops = elems(c, T, V, M);
  }

  void agc(const std::string& name, const AgcLayer& l, int64_t T, int64_t V, int64_t M) {
    CostItem& it = item(name);
    const int64_t cin = l.cin, cout = l.cout, cp = l.cprime;
    it.params += kKernels * conv_params(cin, cout);      // W_k
    it.params += kKernels * 2 * conv_params(cin, cp);    // embeddings
    it.params += kKernels * V * V;                       // B_k
    it.params += 2 * cout;                               // batch norm
    const bool res_conv = l.res.has_value();
    if (res_conv) it.params += conv_params(cin, cout) + 2 * cout;

    double fck = 0.0, f = 0.0;
    for (int k = 0; k < kKernels; ++k) {
      fck += 2.0 * conv_flops(cin, cp, T, V, M);                    // zeta/eta
      fck += static_cast<double>(M) * V * V * (cp * T);             // similarity
      fck += 3.0 * M * V * V;                                       // softmax
      fck += 2.0 * M * V * V;                                       // A+B+C adds
      f += static_cast<double>(M) * T * V * V * cin;                // x @ adjacency
      f += conv_flops(cin, cout, T, V, M);                          // W_k
    }
    f += 2.0 * elems(cout, T, V, M);  // sum of three kernel branches
    f += 2.0 * elems(cout, T, V, M);  // batch norm + activation
    if (l.enable_skip) {
      if (res_conv) f += conv_flops(cin, cout, T, V, M) + elems(cout, T, V, M);
      f += elems(cout, T, V, M);  // skip add
    }
    it.flops = f + fck;
    it.flops_ck = fck;
  }

  // Returns the output length.
  int64_t tgc(const std::string& name, const TgcLayer& l, int64_t T, int64_t V, int64_t M) {
    CostItem& it = item(name);
    const int64_t c = l.channels, mid = 2 * c, taps = l.taps;
    const int64_t T2 = (T - 1) / l.stride + 1;
    it.params += conv_params(c, mid) + 2 * mid;              // expand + bn
    it.params += conv_params(mid, mid, taps, mid) + 2 * mid; // depthwise + bn
    it.params += conv_params(mid, c) + 2 * c;                // project + bn
    const bool res_conv = l.res.has_value();
    if (res_conv) it.params += conv_params(c, c) + 2 * c;

    double f = conv_flops(c, mid, T, V, M) + 2.0 * elems(mid, T, V, M);
    f += conv_flops(mid, mid, T2, V, M, taps, mid) + 2.0 * elems(mid, T2, V, M);
    f += conv_flops(mid, c, T2, V, M) + elems(c, T2, V, M);
    if (l.enable_skip) {
      if (res_conv) f += conv_flops(c, c, T2, V, M) + elems(c, T2, V, M);
      f += elems(c, T2, V, M);  // skip add
    }
    it.flops = f;
    return T2;
  }

  void att(const std::string& name, const AttLayer& l, int64_t T, int64_t V, int64_t M) {
    CostItem& it = item(name);
    const int64_t c = l.channels, cr = l.inner;
    it.params = conv_params(c, cr) + 2 * conv_params(cr, c);
    double f = 2.0 * elems(c, T, V, M);                       // two pools
    f += static_cast<double>(cr) * c * (T + V) * M;           // descriptor map
    f += static_cast<double>(cr) * (T + V) * M;               // hardswish
    f += static_cast<double>(c) * cr * T * M + static_cast<double>(c) * cr * V * M;
    f += static_cast<double>(c) * (T + V) * M;                // sigmoids
    f += 2.0 * elems(c, T, V, M);                             // gate product + apply
    it.flops = f;
  }

  void head(const std::string& name, int64_t c, int64_t classes, int64_t T, int64_t V,
            int64_t M) {
    CostItem& it = item(name);
    it.params = c * classes + classes;
    it.flops = elems(c, T, V, M)                       // global average pool
               + static_cast<double>(c) * classes      // classifier
               + 3.0 * classes;                        // stream softmax
  }
};

}  // namespace

CostReport count_costs(Model& model, int T) {
  CostReport report;
  report.model_name = model.cfg.model_name();
  report.T = T;

  int64_t check_total = 0;
  for (StreamNet& net : model.streams) {
    LayerCounter counter{report.layers};
    const size_t first = report.layers.size();
    const int64_t V = net.V, M = net.M;

    for (BranchStack& stack : net.branches) {
      const std::string bp = net.name + "/branch_" + branch_name(stack.kind);
      counter.input_bn(bp + "/input_bn", branch_channels(stack.kind), T, V, M);
      counter.agc(bp + "/stem", stack.stem, T, V, M);
    }
    int64_t t = T;
    int64_t width = 0;
    for (size_t bi = 0; bi < net.main.size(); ++bi) {
      const Block& block = net.main[bi];
      const std::string mp = net.name + "/block" + std::to_string(bi);
      counter.agc(mp + "/agc", block.agc, t, V, M);
      for (size_t ti = 0; ti < block.tgcs.size(); ++ti) {
        t = counter.tgc(mp + "/tgc" + std::to_string(ti), block.tgcs[ti], t, V, M);
      }
      if (block.att) counter.att(mp + "/att", *block.att, t, V, M);
      width = block.agc.cout;
    }
    counter.head(net.name + "/head", width, model.cfg.classes, t, V, M);

    CostItem stream_total{net.name, 0, 0.0, 0.0};
    for (size_t i = first; i < report.layers.size(); ++i) {
      stream_total.params += report.layers[i].params;
      stream_total.flops += report.layers[i].flops;
      stream_total.flops_ck += report.layers[i].flops_ck;
    }
    report.streams.push_back(stream_total);
    report.total.params += stream_total.params;
    report.total.flops += stream_total.flops;
    report.total.flops_ck += stream_total.flops_ck;

    int64_t actual = 0;
    StateVisitor snoop = [](const std::string&, Tensor&) {};
    net.visit([&](const std::string&, Var& v, bool) { actual += v.size(); }, snoop);
    check_total += actual;
    if (actual != stream_total.params) {
      throw Error("numeric", "accounting drift in stream " + net.name + ": counted " +
                                 std::to_string(stream_total.params) + ", model holds " +
                                 std::to_string(actual));
    }
  }
  report.total.name = "total";
  (void)check_total;
  return report;
}

CostReport count_parameters(Model& model) { return count_costs(model); }

CostReport count_flops(Model& model, int T) { return count_costs(model, T); }

std::string report_text(const CostReport& r, bool per_layer) {
  std::ostringstream out;
  char buf[160];
  out << r.model_name << "  (T=" << r.T << ", one clip)\n";
  std::snprintf(buf, sizeof buf, "%-28s %12s %12s %12s\n", "stream", "#Param (M)",
                "FLOPs (G)", "Ck part (G)");
  out << buf;
  for (const CostItem& s : r.streams) {
    std::snprintf(buf, sizeof buf, "%-28s %12.4f %12.4f %12.4f\n", s.name.c_str(),
                  s.params / 1e6, s.flops / 1e9, s.flops_ck / 1e9);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-28s %12.4f %12.4f %12.4f\n", "total",
                r.total.params / 1e6, r.total.flops / 1e9, r.total.flops_ck / 1e9);
  out << buf;
  if (per_layer) {
    out << "\n";
    std::snprintf(buf, sizeof buf, "%-44s %10s %14s %14s\n", "layer", "#Param", "FLOPs",
                  "Ck FLOPs");
    out << buf;
    for (const CostItem& l : r.layers) {
      std::snprintf(buf, sizeof buf, "%-44s %10lld %14.0f %14.0f\n", l.name.c_str(),
                    static_cast<long long>(l.params), l.flops, l.flops_ck);
      out << buf;
    }
  }
  out << "convention: " << r.convention << "\n";
  return out.str();
}

std::string report_json(const CostReport& r) {
  nlohmann::json j;
  j["model"] = r.model_name;
  j["T"] = r.T;
  j["convention"] = r.convention;
  auto jitem = [](const CostItem& it) {
    return nlohmann::json{{"name", it.name},
                          {"params", it.params},
                          {"flops", it.flops},
                          {"flops_ck", it.flops_ck}};
  };
  j["streams"] = nlohmann::json::array();
  for (const CostItem& s : r.streams) j["streams"].push_back(jitem(s));
  j["layers"] = nlohmann::json::array();
  for (const CostItem& l : r.layers) j["layers"].push_back(jitem(l));
  j["total"] = jitem(r.total);
  return j.dump(2);
}

}  // namespace egcn
