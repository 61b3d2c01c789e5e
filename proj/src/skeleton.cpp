#include "egcn/skeleton.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "egcn/autodiff.hpp"
#include "egcn/graph.hpp"

static_assert(std::endian::native == std::endian::little,
              "corpus and checkpoint files are little-endian");

namespace egcn {

namespace {

struct LineReader {
  std::istream& in;
  int line_no = 0;
  bool next(std::string& out) {
    while (std::getline(in, out)) {
      ++line_no;
      if (!out.empty() && out.back() == '\r') out.pop_back();
      if (!out.empty()) return true;
    }
    return false;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw Error("format", "skeleton parse: " + msg + " (line " + std::to_string(line_no) + ")");
  }
};

long long parse_int(LineReader& r, const std::string& line, const char* what) {
  std::istringstream ss(line);
  long long v;
  if (!(ss >> v)) r.fail(std::string("expected ") + what);
  return v;
}

struct RawBody {
  long long id;
  std::array<double, 75> xyz;
};

}  // namespace

SkeletonClip parse_skeleton_file(std::istream& in) {
  LineReader r{in};
  std::string line;
  if (!r.next(line)) r.fail("empty file");
  const long long frames = parse_int(r, line, "frame count");
  if (frames <= 0) r.fail("frame count must be positive");

  std::vector<std::vector<RawBody>> per_frame(static_cast<size_t>(frames));
  for (long long t = 0; t < frames; ++t) {
    if (!r.next(line)) r.fail("truncated file: missing body count");
    const long long bodies = parse_int(r, line, "body count");
    if (bodies < 0) r.fail("negative body count");
    for (long long b = 0; b < bodies; ++b) {
      if (!r.next(line)) r.fail("truncated file: missing body metadata");
      const long long id = parse_int(r, line, "tracking id");
      if (!r.next(line)) r.fail("truncated file: missing joint count");
      const long long joints = parse_int(r, line, "joint count");
      if (joints != 25) r.fail("joint count must be 25, got " + std::to_string(joints));
      RawBody body;
      body.id = id;
      for (int j = 0; j < 25; ++j) {
        if (!r.next(line)) r.fail("truncated file: missing joint line");
        std::istringstream ss(line);
        for (int c = 0; c < 3; ++c) {
          double v;
          if (!(ss >> v)) r.fail("non-numeric coordinate");
          if (!std::isfinite(v)) r.fail("non-finite coordinate");
          body.xyz[static_cast<size_t>(j * 3 + c)] = v;
        }
      }
      per_frame[static_cast<size_t>(t)].push_back(body);
    }
  }

  // Keep the two smallest tracking ids; count everything else as dropped.
  std::vector<long long> ids;
  for (const auto& frame : per_frame) {
    for (const RawBody& b : frame) {
      if (std::find(ids.begin(), ids.end(), b.id) == ids.end()) ids.push_back(b.id);
    }
  }
  std::sort(ids.begin(), ids.end());
  if (ids.size() > kMaxBodies) ids.resize(kMaxBodies);

  SkeletonClip clip;
  clip.frames = static_cast<int>(frames);
  for (long long id : ids) {
    BodyTrack track;
    track.tracking_id = id;
    track.xyz.assign(static_cast<size_t>(frames) * 75, 0.0);
    clip.tracks.push_back(std::move(track));
  }
  for (long long t = 0; t < frames; ++t) {
    for (const RawBody& b : per_frame[static_cast<size_t>(t)]) {
      auto it = std::find(ids.begin(), ids.end(), b.id);
      if (it == ids.end()) {
        clip.dropped_bodies++;
        continue;
      }
      BodyTrack& track = clip.tracks[static_cast<size_t>(it - ids.begin())];
      std::copy(b.xyz.begin(), b.xyz.end(), track.xyz.begin() + t * 75);
    }
  }
  return clip;
}

SkeletonClip parse_skeleton_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("io", "cannot open skeleton file: " + path);
  SkeletonClip clip = parse_skeleton_file(f);
  clip.label = label_from_filename(path);
  return clip;
}

void serialize_skeleton(const SkeletonClip& clip, std::ostream& out) {
  char buf[64];
  out << clip.frames << "\n";
  for (int t = 0; t < clip.frames; ++t) {
    out << clip.tracks.size() << "\n";
    for (const BodyTrack& track : clip.tracks) {
      out << track.tracking_id << " 0 0 0 0 0 0 0 0 2\n25\n";
      for (int j = 0; j < 25; ++j) {
        for (int c = 0; c < 3; ++c) {
          std::snprintf(buf, sizeof buf, "%.17g", track.coord(t, j, c));
          out << buf << ' ';
        }
        out << "0 0 0 0 1 0 0 0 2\n";
      }
    }
  }
}

SkeletonClip align_clip_length(const SkeletonClip& clip, int target) {
  if (clip.frames < 1 || clip.tracks.empty()) {
    throw Error("format", "align_clip_length: empty clip");
  }
  if (target < 1) throw Error("usage", "align_clip_length: target must be positive");
  SkeletonClip out;
  out.frames = target;
  out.label = clip.label;
  out.dropped_bodies = clip.dropped_bodies;
  const int start = clip.frames > target ? (clip.frames - target) / 2 : 0;
  const int copy = std::min(clip.frames, target);
  for (const BodyTrack& track : clip.tracks) {
    BodyTrack t2;
    t2.tracking_id = track.tracking_id;
    t2.xyz.assign(static_cast<size_t>(target) * 75, 0.0);
    std::copy(track.xyz.begin() + static_cast<size_t>(start) * 75,
              track.xyz.begin() + static_cast<size_t>(start + copy) * 75, t2.xyz.begin());
    out.tracks.push_back(std::move(t2));
  }
  return out;
}

SkeletonClip select_two_bodies(const SkeletonClip& clip) {
  if (clip.tracks.empty()) throw Error("format", "select_two_bodies: clip has no body tracks");
  struct Ranked {
    double energy;
    size_t index;
    long long id;
  };
  std::vector<Ranked> ranked;
  for (size_t i = 0; i < clip.tracks.size(); ++i) {
    const BodyTrack& track = clip.tracks[i];
    double e = 0.0;
    for (int t = 1; t < clip.frames; ++t) {
      for (int j = 0; j < 25; ++j) {
        double d2 = 0.0;
        for (int c = 0; c < 3; ++c) {
          const double d = track.coord(t, j, c) - track.coord(t - 1, j, c);
          d2 += d * d;
        }
        e += std::sqrt(d2);
      }
    }
    ranked.push_back({e, i, track.tracking_id});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.energy != b.energy) return a.energy > b.energy;
    return a.id < b.id;
  });

  SkeletonClip out;
  out.frames = clip.frames;
  out.label = clip.label;
  out.dropped_bodies = clip.dropped_bodies;
  for (size_t s = 0; s < kMaxBodies; ++s) {
    if (s < ranked.size()) {
      out.tracks.push_back(clip.tracks[ranked[s].index]);
    } else {
      BodyTrack empty;
      empty.tracking_id = -1;
      empty.xyz.assign(static_cast<size_t>(clip.frames) * 75, 0.0);
      out.tracks.push_back(std::move(empty));
    }
  }
  return out;
}

int label_from_filename(const std::string& name) {
  // Trailing "A<nnn>" before the extension, NTU naming convention.
  const size_t dot = name.find_last_of('.');
  const std::string stem = dot == std::string::npos ? name : name.substr(0, dot);
  const size_t a = stem.find_last_of('A');
  if (a == std::string::npos || a + 1 >= stem.size()) return -1;
  int value = 0;
  for (size_t i = a + 1; i < stem.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(stem[i]))) return -1;
    value = value * 10 + (stem[i] - '0');
  }
  return value - 1;
}

int synthetic_class_count() { return 4; }

const char* synthetic_class_name(int cls) {
  static const char* names[] = {"approach", "retreat", "circle", "sway"};
  if (cls < 0 || cls >= synthetic_class_count()) {
    throw Error("usage", "unknown synthetic class " + std::to_string(cls));
  }
  return names[cls];
}

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

SkeletonClip generate_synthetic_clip(int cls, uint64_t seed) {
  synthetic_class_name(cls);  // validates the class index
  std::mt19937_64 rng(splitmix64(seed * 7919 + static_cast<uint64_t>(cls)));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  constexpr double pi = std::numbers::pi;

  const int T = 110 + static_cast<int>(rng() % 61);
  const double yaw_g = uni(rng) * 2.0 * pi;
  const double off_x = uni(rng) * 2.0 - 1.0;
  const double off_z = uni(rng) * 2.0 - 1.0;
  const double psi0 = uni(rng) * 2.0 * pi;
  const double phase = uni(rng) * 2.0 * pi;
  const double amp = 0.05 + 0.06 * uni(rng);
  const double omega = 2.0 * pi * (1.2 + uni(rng)) / 30.0;
  const double orbit_total = 0.9 + 0.4 * uni(rng);
  std::uniform_real_distribution<double> noise(-0.008, 0.008);

  SkeletonClip clip;
  clip.frames = T;
  clip.label = cls;
  for (int b = 0; b < 2; ++b) {
    BodyTrack track;
    track.tracking_id = b + 1;
    track.xyz.assign(static_cast<size_t>(T) * 75, 0.0);
    clip.tracks.push_back(std::move(track));
  }

  const auto& rest = canonical_pose();
  for (int t = 0; t < T; ++t) {
    const double u = T > 1 ? static_cast<double>(t) / (T - 1) : 0.0;
    double dist = 0.0, psi = psi0;
    switch (cls) {
      case 0: dist = 2.2 + (0.7 - 2.2) * u; break;              // approach
      case 1: dist = 0.7 + (2.2 - 0.7) * u; break;              // retreat
      case 2: dist = 1.4; psi = psi0 + orbit_total * u; break;  // circle
      default: dist = 1.45 + 0.6 * std::sin(2.0 * pi * 1.5 * u + phase); break;  // sway
    }
    const double ux = std::cos(psi), uz = std::sin(psi);
    for (int b = 0; b < 2; ++b) {
      const double side = b == 0 ? 1.0 : -1.0;
      const double cx = side * ux * dist / 2.0;
      const double cz = side * uz * dist / 2.0;
      // Face the partner.
      const double fyaw = std::atan2(-side * ux, -side * uz);
      const double cf = std::cos(fyaw), sf = std::sin(fyaw);
      const double sphase = phase + (b == 0 ? 0.0 : pi / 2.0);
      const double arm = amp * std::sin(omega * t + sphase);
      const double leg = 0.5 * amp * std::sin(omega * t + sphase + pi / 2.0);
      const double bob = 0.02 * std::sin(2.0 * omega * t + sphase);
      for (int j = 0; j < 25; ++j) {
        double lx = rest[static_cast<size_t>(j)][0];
        double ly = rest[static_cast<size_t>(j)][1] + bob;
        double lz = rest[static_cast<size_t>(j)][2];
        switch (j) {
          case kLElbow: lz += 0.5 * arm; break;
          case kLWrist: case kLHand: case kLHandTip: case kLThumb: lz += arm; break;
          case kRElbow: lz -= 0.5 * arm; break;
          case kRWrist: case kRHand: case kRHandTip: case kRThumb: lz -= arm; break;
          case kLKnee: case kLAnkle: case kLFoot: lz += leg; break;
          case kRKnee: case kRAnkle: case kRFoot: lz -= leg; break;
          default: break;
        }
        // Body yaw, then pair placement, then the global rigid transform.
        const double wx = cf * lx + sf * lz + cx;
        const double wy = ly;
        const double wz = -sf * lx + cf * lz + cz;
        const double gx = std::cos(yaw_g) * wx + std::sin(yaw_g) * wz + off_x;
        const double gz = -std::sin(yaw_g) * wx + std::cos(yaw_g) * wz + off_z;
        BodyTrack& track = clip.tracks[static_cast<size_t>(b)];
        track.coord(t, j, 0) = gx + noise(rng);
        track.coord(t, j, 1) = wy + noise(rng);
        track.coord(t, j, 2) = gz + noise(rng);
      }
    }
  }
  return clip;
}

AlignedClip to_aligned(const SkeletonClip& clip) {
  if (clip.frames != kAlignedFrames) {
    throw Error("format", "to_aligned: clip has " + std::to_string(clip.frames) +
                              " frames, expected " + std::to_string(kAlignedFrames));
  }
  if (clip.tracks.size() != kMaxBodies) {
    throw Error("format", "to_aligned: clip must have exactly two body slots");
  }
  AlignedClip out;
  out.label = clip.label;
  out.xyz.assign(static_cast<size_t>(2) * kAlignedFrames * 25 * 3, 0.0);
  for (int m = 0; m < 2; ++m) {
    for (int t = 0; t < kAlignedFrames; ++t) {
      for (int v = 0; v < 25; ++v) {
        for (int c = 0; c < 3; ++c) {
          out.coord(m, t, v, c) = clip.tracks[static_cast<size_t>(m)].coord(t, v, c);
        }
      }
    }
  }
  return out;
}

void save_corpus(const std::vector<AlignedClip>& clips, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("io", "cannot write corpus file: " + path);
  f << "EGCN-CORPUS v1 count=" << clips.size() << " T=" << kAlignedFrames
    << " V=25 M=2 dtype=f32\n";
  std::vector<float> buf;
  for (const AlignedClip& clip : clips) {
    const int32_t label = clip.label;
    f.write(reinterpret_cast<const char*>(&label), sizeof label);
    buf.assign(clip.xyz.begin(), clip.xyz.end());
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!f) throw Error("io", "short write to corpus file: " + path);
}

std::vector<AlignedClip> load_corpus(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("io", "cannot open corpus file: " + path);
  std::string header;
  if (!std::getline(f, header)) throw Error("format", "corpus file has no header");
  size_t count = 0;
  {
    std::istringstream ss(header);
    std::string magic, version, field;
    ss >> magic >> version;
    if (magic != "EGCN-CORPUS" || version != "v1") {
      throw Error("format", "not an EGCN corpus file: " + path);
    }
    while (ss >> field) {
      if (field.rfind("count=", 0) == 0) count = std::stoull(field.substr(6));
    }
  }
  std::vector<AlignedClip> clips;
  clips.reserve(count);
  const size_t n = static_cast<size_t>(2) * kAlignedFrames * 25 * 3;
  std::vector<float> buf(n);
  for (size_t i = 0; i < count; ++i) {
    int32_t label;
    if (!f.read(reinterpret_cast<char*>(&label), sizeof label) ||
        !f.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(n * sizeof(float)))) {
      throw Error("format", "truncated corpus file: " + path);
    }
    AlignedClip clip;
    clip.label = label;
    clip.xyz.assign(buf.begin(), buf.end());
    clips.push_back(std::move(clip));
  }
  return clips;
}

}  // namespace egcn
