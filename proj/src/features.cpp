#include "egcn/features.hpp"

#include <cmath>

#include "egcn/autodiff.hpp"

namespace egcn {

namespace {

constexpr int kT = kAlignedFrames;

int layout_nodes(GraphKind g) { return g == GraphKind::Intra ? kNumJoints : 2 * kNumJoints; }
int layout_graphs(GraphKind g) { return g == GraphKind::Intra ? 2 : 1; }

// coordinate of node v in the given layout at frame t, channel c
double node_coord(const AlignedClip& clip, GraphKind layout, int t, int v, int c) {
  if (layout == GraphKind::Intra) return 0.0;  // unused; intra indexes bodies directly
  const int m = v / kNumJoints;
  return clip.coord(m, t, v % kNumJoints, c);
}

}  // namespace

const char* branch_name(BranchKind kind) {
  switch (kind) {
    case BranchKind::J1: return "J1";
    case BranchKind::V1: return "V1";
    case BranchKind::B1: return "B1";
    case BranchKind::J2: return "J2";
    case BranchKind::V2: return "V2";
    case BranchKind::B2: return "B2";
  }
  return "?";
}

BranchKind branch_from_name(const std::string& name) {
  for (BranchKind k : {BranchKind::J1, BranchKind::V1, BranchKind::B1, BranchKind::J2,
                       BranchKind::V2, BranchKind::B2}) {
    if (name == branch_name(k)) return k;
  }
  throw Error("usage", "unknown branch name: " + name);
}

int branch_channels(BranchKind kind) { return kind == BranchKind::B2 ? 6 : 3; }

GraphKind branch_graph(BranchKind kind) {
  switch (kind) {
    case BranchKind::J1:
    case BranchKind::V1:
    case BranchKind::B1: return GraphKind::Intra;
    default: return GraphKind::Inter;
  }
}

BranchInput joint_feature(const AlignedClip& clip, GraphKind layout) {
  const int V = layout_nodes(layout);
  const int M = layout_graphs(layout);
  BranchInput out{layout == GraphKind::Intra ? BranchKind::J1 : BranchKind::J2,
                  Tensor({3, kT, V, M})};
  Tensor& f = out.values;
  for (int c = 0; c < 3; ++c) {
    for (int t = 0; t < kT; ++t) {
      for (int v = 0; v < V; ++v) {
        if (layout == GraphKind::Intra) {
          for (int m = 0; m < M; ++m) {
            f.at({c, t, v, m}) = clip.coord(m, t, v, c);
          }
        } else {
          f.at({c, t, v, 0}) = node_coord(clip, layout, t, v, c);
        }
      }
    }
  }
  return out;
}

BranchInput velocity_feature(const AlignedClip& clip, GraphKind layout) {
  BranchInput out = joint_feature(clip, layout);
  out.kind = layout == GraphKind::Intra ? BranchKind::V1 : BranchKind::V2;
  Tensor& f = out.values;
  const int V = static_cast<int>(f.dim(2));
  const int M = static_cast<int>(f.dim(3));
  // Difference in place, back to front; frame 0 becomes zero.
  for (int c = 0; c < 3; ++c) {
    for (int t = kT - 1; t >= 0; --t) {
      for (int v = 0; v < V; ++v) {
        for (int m = 0; m < M; ++m) {
          f.at({c, t, v, m}) = t == 0 ? 0.0 : f.at({c, t, v, m}) - f.at({c, t - 1, v, m});
        }
      }
    }
  }
  return out;
}

BranchInput bone_feature(const AlignedClip& clip) {
  const auto& parent = ntu_parent();
  BranchInput out{BranchKind::B1, Tensor({3, kT, kNumJoints, 2})};
  Tensor& f = out.values;
  for (int c = 0; c < 3; ++c) {
    for (int t = 0; t < kT; ++t) {
      for (int v = 0; v < kNumJoints; ++v) {
        const int p = parent[static_cast<size_t>(v)];
        for (int m = 0; m < 2; ++m) {
          f.at({c, t, v, m}) = p == v ? 0.0 : clip.coord(m, t, v, c) - clip.coord(m, t, p, c);
        }
      }
    }
  }
  return out;
}

BranchInput relative_distance_feature(const AlignedClip& clip) {
  const auto& reps = representative_joints();
  const int V = 2 * kNumJoints;
  BranchInput out{BranchKind::B2, Tensor({6, kT, V, 1})};
  Tensor& f = out.values;
  for (int t = 0; t < kT; ++t) {
    for (int v = 0; v < V; ++v) {
      const int p = v / kNumJoints;
      const int other = 1 - p;
      const int j = v % kNumJoints;
      for (int k = 0; k < 6; ++k) {
        const int r = reps[static_cast<size_t>(k)];
        double d2 = 0.0;
        for (int c = 0; c < 3; ++c) {
          const double d = clip.coord(p, t, j, c) - clip.coord(other, t, r, c);
          d2 += d * d;
        }
        f.at({k, t, v, 0}) = std::sqrt(d2);
      }
    }
  }
  return out;
}

BranchInput compute_branch(const AlignedClip& clip, BranchKind kind) {
  switch (kind) {
    case BranchKind::J1: return joint_feature(clip, GraphKind::Intra);
    case BranchKind::V1: return velocity_feature(clip, GraphKind::Intra);
    case BranchKind::B1: return bone_feature(clip);
    case BranchKind::J2: return joint_feature(clip, GraphKind::Inter);
    case BranchKind::V2: return velocity_feature(clip, GraphKind::Inter);
    case BranchKind::B2: return relative_distance_feature(clip);
  }
  throw Error("usage", "compute_branch: bad branch kind");
}

Tensor assemble_stream_input(const std::vector<BranchInput>& branches) {
  if (branches.empty()) throw Error("shape", "assemble_stream_input: no branches");
  const Shape& s0 = branches[0].values.shape();
  for (const BranchInput& b : branches) {
    if (b.values.shape() != s0) {
      throw Error("shape", "assemble_stream_input: mixed layouts " + shape_str(s0) +
                               " vs " + shape_str(b.values.shape()));
    }
  }
  const int64_t I = static_cast<int64_t>(branches.size());
  Tensor out({I, s0[0], s0[1], s0[2], s0[3]});
  const int64_t per = branches[0].values.size();
  for (int64_t i = 0; i < I; ++i) {
    std::copy(branches[static_cast<size_t>(i)].values.data(),
              branches[static_cast<size_t>(i)].values.data() + per, out.data() + i * per);
  }
  return out;
}

Tensor batch_branch_block(const std::vector<const AlignedClip*>& clips, BranchKind kind) {
  if (clips.empty()) throw Error("usage", "batch_branch_block: empty batch");
  const GraphKind layout = branch_graph(kind);
  const int64_t C = branch_channels(kind);
  const int64_t V = layout_nodes(layout);
  const int64_t M = layout_graphs(layout);
  const int64_t N = static_cast<int64_t>(clips.size());
  Tensor out({N * M, C, kT, V});
  for (int64_t n = 0; n < N; ++n) {
    const BranchInput b = compute_branch(*clips[static_cast<size_t>(n)], kind);
    for (int64_t m = 0; m < M; ++m) {
      double* dst = out.data() + ((n * M + m) * C) * kT * V;
      for (int64_t c = 0; c < C; ++c) {
        for (int64_t t = 0; t < kT; ++t) {
          for (int64_t v = 0; v < V; ++v) {
            dst[(c * kT + t) * V + v] = b.values[((c * kT + t) * V + v) * M + m];
          }
        }
      }
    }
  }
  return out;
}

}  // namespace egcn
