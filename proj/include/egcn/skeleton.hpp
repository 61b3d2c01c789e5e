#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace egcn {

inline constexpr int kAlignedFrames = 150;
inline constexpr int kMaxBodies = 2;

struct BodyTrack {
  long long tracking_id = 0;
  std::vector<double> xyz;  // (T, 25, 3); zeros where the body is absent

  double& coord(int t, int j, int c) { return xyz[static_cast<size_t>((t * 25 + j) * 3 + c)]; }
  double coord(int t, int j, int c) const { return xyz[static_cast<size_t>((t * 25 + j) * 3 + c)]; }
};

struct SkeletonClip {
  int frames = 0;
  int label = -1;
  int dropped_bodies = 0;  // body instances beyond the first two tracking ids
  std::vector<BodyTrack> tracks;
};

/// Parses the NTU RGB+D .skeleton text layout. Bodies beyond the two
/// smallest tracking ids are dropped and counted in dropped_bodies.
SkeletonClip parse_skeleton_file(std::istream& in);
SkeletonClip parse_skeleton_file(const std::string& path);

/// Writes the clip back in the same text layout (full double precision).
void serialize_skeleton(const SkeletonClip& clip, std::ostream& out);

/// Zero-pads short clips at the end, center-crops long ones.
SkeletonClip align_clip_length(const SkeletonClip& clip, int target = kAlignedFrames);

/// Exactly two body slots ordered by total motion energy (descending,
/// ties by tracking id ascending); a missing second body is all zeros.
SkeletonClip select_two_bodies(const SkeletonClip& clip);

/// Action class parsed from an NTU-style file name (trailing "A<nnn>"),
/// as a zero-based label. Returns -1 when absent.
int label_from_filename(const std::string& name);

// Synthetic two-person catalog. Classes share the same per-body
// articulation statistics and differ only in the relative motion of the
// two bodies, plus a random per-clip rigid placement.
int synthetic_class_count();
const char* synthetic_class_name(int cls);
SkeletonClip generate_synthetic_clip(int cls, uint64_t seed);

/// Aligned two-body clip, the unit of the preprocessed corpus.
struct AlignedClip {
  int label = -1;
  std::vector<double> xyz;  // (M=2, T=150, V=25, 3)

  double& coord(int m, int t, int v, int c) {
    return xyz[static_cast<size_t>((((m * kAlignedFrames) + t) * 25 + v) * 3 + c)];
  }
  double coord(int m, int t, int v, int c) const {
    return xyz[static_cast<size_t>((((m * kAlignedFrames) + t) * 25 + v) * 3 + c)];
  }
};

AlignedClip to_aligned(const SkeletonClip& clip);

/// Corpus file: one text header line, then per clip a little-endian int32
/// label followed by float32 coordinates in (m,t,v,c) order.
void save_corpus(const std::vector<AlignedClip>& clips, const std::string& path);
std::vector<AlignedClip> load_corpus(const std::string& path);

}  // namespace egcn
