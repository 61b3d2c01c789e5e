#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "egcn/tensor.hpp"

namespace egcn {

inline constexpr int kNumJoints = 25;  // per body
inline constexpr int kKernels = 3;     // spatial partition subsets

enum class GraphKind { Intra, Inter };

/// NTU RGB+D joint indices, 0-based.
enum NtuJoint : int {
  kSpineBase = 0, kSpineMid = 1, kNeck = 2, kHead = 3,
  kLShoulder = 4, kLElbow = 5, kLWrist = 6, kLHand = 7,
  kRShoulder = 8, kRElbow = 9, kRWrist = 10, kRHand = 11,
  kLHip = 12, kLKnee = 13, kLAnkle = 14, kLFoot = 15,
  kRHip = 16, kRKnee = 17, kRAnkle = 18, kRFoot = 19,
  kSpineShoulder = 20, kLHandTip = 21, kLThumb = 22,
  kRHandTip = 23, kRThumb = 24,
};

using Point3 = std::array<double, 3>;

/// Kinematic tree as (child, parent) pairs, rooted at the spine-shoulder joint.
const std::vector<std::pair<int, int>>& ntu_tree();

/// parent[j] of each joint for bone vectors; parent[root] == root.
const std::array<int, kNumJoints>& ntu_parent();

/// Head, torso (mid spine), both hands, both feet.
const std::array<int, 6>& representative_joints();

/// Neutral standing pose (25 points, meters, y up, facing +z). Static
/// reference for spatial partitioning and the synthetic generator's rest pose.
const std::vector<Point3>& canonical_pose();

/// Two canonical bodies facing each other across `separation` meters (50 points).
std::vector<Point3> canonical_pair_pose(double separation = 1.0);

struct BodyGraph {
  GraphKind kind = GraphKind::Intra;
  int node_count = 0;
  std::vector<std::pair<int, int>> edges;  // undirected
  int virtual_edge_count = 0;              // inter kind only
  /// Representative joints as graph node ids, person A then person B (inter).
  std::vector<int> representatives_a, representatives_b;

  std::vector<int> degrees() const;
};

BodyGraph build_intra_graph();
BodyGraph build_inter_graph();

struct PartitionedAdjacency {
  int node_count = 0;
  double beta = 1e-3;
  std::array<Tensor, kKernels> binary;      // subset adjacency, 1/0
  std::array<Tensor, kKernels> lambda;      // row sums + beta, (V)
  std::array<Tensor, kKernels> normalized;  // Lambda^-1/2 * binary * Lambda^-1/2
  bool degenerate_pose = false;
};

/// Spatial-configuration partition against a reference pose: subset 0 holds
/// the self connections, subset 1 the edges whose endpoints sit at strictly
/// different distances from the center of gravity, subset 2 the equidistant
/// ties. Edges enter a subset with both orientations, keeping each binary
/// matrix symmetric. A degenerate pose (all nodes coincident) sends every
/// edge to subset 2 and sets the warning flag.
PartitionedAdjacency partition_spatial(const BodyGraph& g,
                                       const std::vector<Point3>& reference_pose);

void normalize_adjacency(PartitionedAdjacency& p, double beta = 1e-3);

/// Partition against the canonical pose and normalize.
PartitionedAdjacency build_adjacency(GraphKind kind, double beta = 1e-3);

/// Plain-text dump of the binary and normalized matrices for inspection.
void dump_adjacency(const PartitionedAdjacency& p, const std::string& dir,
                    const std::string& prefix);

}  // namespace egcn
