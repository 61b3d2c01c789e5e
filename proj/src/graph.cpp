#include "egcn/graph.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "egcn/autodiff.hpp"

namespace egcn {

const std::vector<std::pair<int, int>>& ntu_tree() {
  static const std::vector<std::pair<int, int>> tree = {
      {kSpineBase, kSpineMid},   {kSpineMid, kSpineShoulder},
      {kNeck, kSpineShoulder},   {kHead, kNeck},
      {kLShoulder, kSpineShoulder}, {kLElbow, kLShoulder},
      {kLWrist, kLElbow},        {kLHand, kLWrist},
      {kRShoulder, kSpineShoulder}, {kRElbow, kRShoulder},
      {kRWrist, kRElbow},        {kRHand, kRWrist},
      {kLHip, kSpineBase},       {kLKnee, kLHip},
      {kLAnkle, kLKnee},         {kLFoot, kLAnkle},
      {kRHip, kSpineBase},       {kRKnee, kRHip},
      {kRAnkle, kRKnee},         {kRFoot, kRAnkle},
      {kLHandTip, kLThumb},      {kLThumb, kLHand},
      {kRHandTip, kRThumb},      {kRThumb, kRHand},
  };
  return tree;
}

const std::array<int, kNumJoints>& ntu_parent() {
  static const std::array<int, kNumJoints> parents = [] {
    std::array<int, kNumJoints> p{};
    p[kSpineShoulder] = kSpineShoulder;  // root
    for (const auto& [child, parent] : ntu_tree()) p[static_cast<size_t>(child)] = parent;
    return p;
  }();
  return parents;
}

const std::array<int, 6>& representative_joints() {
  static const std::array<int, 6> reps = {kHead, kSpineMid, kLHand, kRHand, kLFoot, kRFoot};
  return reps;
}

const std::vector<Point3>& canonical_pose() {
  static const std::vector<Point3> pose = {
      {0.00, 0.90, 0.00},   // spine base
      {0.00, 1.06, 0.00},   // spine mid
      {0.00, 1.42, 0.00},   // neck
      {0.00, 1.56, 0.02},   // head
      {0.18, 1.32, 0.00},   // l shoulder
      {0.26, 1.06, 0.00},   // l elbow
      {0.30, 0.84, 0.02},   // l wrist
      {0.32, 0.76, 0.04},   // l hand
      {-0.18, 1.32, 0.00},  // r shoulder
      {-0.26, 1.06, 0.00},  // r elbow
      {-0.30, 0.84, 0.02},  // r wrist
      {-0.32, 0.76, 0.04},  // r hand
      {0.09, 0.86, 0.00},   // l hip
      {0.11, 0.46, 0.00},   // l knee
      {0.12, 0.08, 0.00},   // l ankle
      {0.13, 0.02, 0.10},   // l foot
      {-0.09, 0.86, 0.00},  // r hip
      {-0.11, 0.46, 0.00},  // r knee
      {-0.12, 0.08, 0.00},  // r ankle
      {-0.13, 0.02, 0.10},  // r foot
      {0.00, 1.30, 0.00},   // spine shoulder
      {0.34, 0.68, 0.06},   // l hand tip
      {0.30, 0.72, 0.08},   // l thumb
      {-0.34, 0.68, 0.06},  // r hand tip
      {-0.30, 0.72, 0.08},  // r thumb
  };
  return pose;
}

std::vector<Point3> canonical_pair_pose(double separation) {
  std::vector<Point3> out;
  out.reserve(2 * kNumJoints);
  const double half = separation / 2.0;
  for (const Point3& p : canonical_pose()) {
    out.push_back({p[0], p[1], p[2] + half});
  }
  for (const Point3& p : canonical_pose()) {
    // Second person faces the first: yaw by pi.
    out.push_back({-p[0], p[1], -p[2] - half});
  }
  return out;
}

std::vector<int> BodyGraph::degrees() const {
  std::vector<int> deg(static_cast<size_t>(node_count), 0);
  for (const auto& [a, b] : edges) {
    deg[static_cast<size_t>(a)]++;
    deg[static_cast<size_t>(b)]++;
  }
  return deg;
}

BodyGraph build_intra_graph() {
  BodyGraph g;
  g.kind = GraphKind::Intra;
  g.node_count = kNumJoints;
  g.edges = ntu_tree();
  return g;
}

BodyGraph build_inter_graph() {
  BodyGraph g;
  g.kind = GraphKind::Inter;
  g.node_count = 2 * kNumJoints;
  for (const auto& [a, b] : ntu_tree()) {
    g.edges.emplace_back(a, b);
    g.edges.emplace_back(a + kNumJoints, b + kNumJoints);
  }
  for (int ra : representative_joints()) {
    g.representatives_a.push_back(ra);
    g.representatives_b.push_back(ra + kNumJoints);
  }
  for (int ra : representative_joints()) {
    for (int rb : representative_joints()) {
      g.edges.emplace_back(ra, rb + kNumJoints);
      g.virtual_edge_count++;
    }
  }
  return g;
}

PartitionedAdjacency partition_spatial(const BodyGraph& g,
                                       const std::vector<Point3>& reference_pose) {
  const int V = g.node_count;
  if (static_cast<int>(reference_pose.size()) != V) {
    throw Error("shape", "partition_spatial: reference pose has " +
                             std::to_string(reference_pose.size()) + " points, graph has " +
                             std::to_string(V) + " nodes");
  }
  for (const Point3& p : reference_pose) {
    for (double c : p) {
      if (!std::isfinite(c)) throw Error("numeric", "partition_spatial: non-finite reference pose");
    }
  }

  Point3 cog = {0.0, 0.0, 0.0};
  for (const Point3& p : reference_pose) {
    for (int c = 0; c < 3; ++c) cog[static_cast<size_t>(c)] += p[static_cast<size_t>(c)];
  }
  for (int c = 0; c < 3; ++c) cog[static_cast<size_t>(c)] /= static_cast<double>(V);

  std::vector<double> dist(static_cast<size_t>(V));
  for (int i = 0; i < V; ++i) {
    const Point3& p = reference_pose[static_cast<size_t>(i)];
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double d = p[static_cast<size_t>(c)] - cog[static_cast<size_t>(c)];
      s += d * d;
    }
    dist[static_cast<size_t>(i)] = std::sqrt(s);
  }

  PartitionedAdjacency out;
  out.node_count = V;
  for (auto& b : out.binary) b = Tensor({V, V});

  for (int i = 0; i < V; ++i) out.binary[0].at({i, i}) = 1.0;

  bool any_unbalanced = false;
  for (const auto& [a, b] : g.edges) {
    const size_t k = dist[static_cast<size_t>(a)] != dist[static_cast<size_t>(b)] ? 1 : 2;
    if (k == 1) any_unbalanced = true;
    out.binary[k].at({a, b}) = 1.0;
    out.binary[k].at({b, a}) = 1.0;
  }
  out.degenerate_pose = !any_unbalanced && !g.edges.empty();
  return out;
}

void normalize_adjacency(PartitionedAdjacency& p, double beta) {
  if (beta <= 0.0) throw Error("usage", "normalize_adjacency: beta must be positive");
  p.beta = beta;
  const int64_t V = p.node_count;
  for (size_t k = 0; k < kKernels; ++k) {
    const Tensor& a = p.binary[k];
    Tensor lam({V});
    for (int64_t i = 0; i < V; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < V; ++j) s += a[i * V + j];
      lam[i] = s + beta;
    }
    Tensor norm({V, V});
    for (int64_t i = 0; i < V; ++i) {
      for (int64_t j = 0; j < V; ++j) {
        const double v = a[i * V + j];
        if (v != 0.0) norm[i * V + j] = v / std::sqrt(lam[i] * lam[j]);
      }
    }
    p.lambda[k] = std::move(lam);
    p.normalized[k] = std::move(norm);
  }
}

PartitionedAdjacency build_adjacency(GraphKind kind, double beta) {
  PartitionedAdjacency p =
      kind == GraphKind::Intra
          ? partition_spatial(build_intra_graph(), canonical_pose())
          : partition_spatial(build_inter_graph(), canonical_pair_pose());
  normalize_adjacency(p, beta);
  return p;
}

void dump_adjacency(const PartitionedAdjacency& p, const std::string& dir,
                    const std::string& prefix) {
  std::filesystem::create_directories(dir);
  const int64_t V = p.node_count;
  for (size_t k = 0; k < kKernels; ++k) {
    const std::pair<const char*, const Tensor*> mats[] = {
        {"binary", &p.binary[k]}, {"normalized", &p.normalized[k]}};
    for (const auto& [tag, mat] : mats) {
      std::ofstream f(dir + "/" + prefix + "_" + tag + "_k" + std::to_string(k) + ".txt");
      if (!f) throw Error("io", "dump_adjacency: cannot write to " + dir);
      for (int64_t i = 0; i < V; ++i) {
        for (int64_t j = 0; j < V; ++j) {
          f << (*mat)[i * V + j] << (j + 1 == V ? '\n' : ' ');
        }
      }
    }
  }
}

}  // namespace egcn
