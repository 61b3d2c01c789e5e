#pragma once

#include <string>
#include <vector>

#include "egcn/graph.hpp"
#include "egcn/skeleton.hpp"
#include "egcn/tensor.hpp"

namespace egcn {

/// The six branch inputs: J/V/B1 on the intra graph (25 nodes, two graphs),
/// J2/V2/B2 on the inter graph (50 nodes, one graph).
enum class BranchKind { J1, V1, B1, J2, V2, B2 };

const char* branch_name(BranchKind kind);
BranchKind branch_from_name(const std::string& name);
int branch_channels(BranchKind kind);    // 3, except B2 = 6
GraphKind branch_graph(BranchKind kind);

struct BranchInput {
  BranchKind kind;
  Tensor values;  // (C, T, V, M)
};

BranchInput joint_feature(const AlignedClip& clip, GraphKind layout);
BranchInput velocity_feature(const AlignedClip& clip, GraphKind layout);
/// Vector from each joint to its single parent on the kinematic tree;
/// the root joint maps to zero. Intra layout only.
BranchInput bone_feature(const AlignedClip& clip);
/// Six channels per inter-graph node: Euclidean distances from the node to
/// the OTHER person's representative joints (head, torso, hands, feet order).
BranchInput relative_distance_feature(const AlignedClip& clip);

BranchInput compute_branch(const AlignedClip& clip, BranchKind kind);

/// Stacks branches sharing (C,T,V,M) into an (I,C,T,V,M) block.
Tensor assemble_stream_input(const std::vector<BranchInput>& branches);

/// Network-facing batch block for one branch: (N*M, C, T, V).
Tensor batch_branch_block(const std::vector<const AlignedClip*>& clips, BranchKind kind);

}  // namespace egcn
