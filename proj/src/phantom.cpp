// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "calcseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>

#include "calcseg/error.hpp"
#include "calcseg/random.hpp"

namespace calcseg {

using nlohmann::json;

namespace {

constexpr std::uint8_t kBackground = 0;
constexpr std::uint8_t kBone = 1;
constexpr std::uint8_t kLesion = 2;
constexpr std::uint8_t kDistractor = 3;

constexpr int kNeighbours[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};

using Vec3 = std::array<double, 3>;

double draw(Rng& rng, const Range& r) { return uniform(rng, r[0], r[1]); }

std::size_t draw_count(Rng& rng, const CountRange& r) {
  return r[0] + static_cast<std::size_t>(uniform_index(rng, r[1] - r[0] + 1));
}

Vec3 random_direction(Rng& rng) {
  const double z = uniform(rng, -1.0, 1.0);
  const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {z, r * std::cos(phi), r * std::sin(phi)};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

class Builder {
 public:
  Builder(const PhantomSpec& spec, Rng& rng)
      : spec_(spec), rng_(rng), kind_(spec.size, spec.spacing, kBackground), hu_(spec.size, spec.spacing, 0.0f) {}

  Vec3 mm(std::size_t d, std::size_t h, std::size_t w) const {
    return {d * spec_.spacing[0], h * spec_.spacing[1], w * spec_.spacing[2]};
  }

  Vec3 random_point() {
    Vec3 p{};
    for (int a = 0; a < 3; ++a) p[a] = uniform(rng_, 0.0, (spec_.size[a] - 1) * spec_.spacing[a]);
    return p;
  }

  void background() {
    const double base = draw(rng_, spec_.background_hu);
    std::array<Vec3, 3> freq{};
    std::array<double, 3> phase{};
    for (int k = 0; k < 3; ++k) {
      for (int a = 0; a < 3; ++a) freq[k][a] = uniform(rng_, -0.15, 0.15);
      phase[k] = uniform(rng_, 0.0, 2.0 * std::numbers::pi);
    }
    const double amp = 0.25 * (spec_.background_hu[1] - spec_.background_hu[0]) / 3.0;
    for (std::size_t d = 0; d < spec_.size[0]; ++d) {
      for (std::size_t h = 0; h < spec_.size[1]; ++h) {
        for (std::size_t w = 0; w < spec_.size[2]; ++w) {
          const Vec3 p = mm(d, h, w);
          double v = base;
          for (int k = 0; k < 3; ++k) v += amp * std::cos(dot(freq[k], p) + phase[k]);
          hu_.at(d, h, w) = static_cast<float>(std::clamp(v, spec_.background_hu[0], spec_.background_hu[1]));
        }
      }
    }
  }

  void tube() {
    const Vec3 c = random_point();
    const Vec3 u = random_direction(rng_);
    const double r = draw(rng_, spec_.tube_radius_mm);
    const auto value = static_cast<float>(draw(rng_, spec_.bone_hu));
    paint_bone([&](const Vec3& p) {
      const Vec3 q{p[0] - c[0], p[1] - c[1], p[2] - c[2]};
      const double t = dot(q, u);
      return dot(q, q) - t * t <= r * r;
    }, value);
  }

  void plate() {
    const Vec3 c = random_point();
    const Vec3 n = random_direction(rng_);
    const double half = 0.5 * draw(rng_, spec_.plate_thickness_mm);
    const double extent = uniform(rng_, 10.0, 25.0);
    const auto value = static_cast<float>(draw(rng_, spec_.bone_hu));
    paint_bone([&](const Vec3& p) {
      const Vec3 q{p[0] - c[0], p[1] - c[1], p[2] - c[2]};
      const double t = dot(q, n);
      return std::abs(t) <= half && dot(q, q) - t * t <= extent * extent;
    }, value);
  }

  // Returns true and paints the lesion if placement succeeded.
  bool lesion(bool adjacent) {
    const Vec3 semi{draw(rng_, spec_.lesion_radius_mm), draw(rng_, spec_.lesion_radius_mm),
                    draw(rng_, spec_.lesion_radius_mm)};
    Extent3 centre{};
    if (adjacent) {
      const auto& cands = surface_candidates();
      if (cands.empty()) return false;
      centre = cands[uniform_index(rng_, cands.size())];
    } else {
      for (int a = 0; a < 3; ++a) {
        centre[a] = spec_.margin[a] + uniform_index(rng_, spec_.size[a] - 2 * spec_.margin[a]);
      }
      if (kind_.at(centre[0], centre[1], centre[2]) != kBackground) return false;
    }
    // Rasterize the ellipsoid over its bounding box.
    std::vector<Extent3> voxels;
    std::array<long, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      const long reach = static_cast<long>(std::ceil(semi[a] / spec_.spacing[a]));
      lo[a] = static_cast<long>(centre[a]) - reach;
      hi[a] = static_cast<long>(centre[a]) + reach;
    }
    bool touches_bone = false;
    for (long d = lo[0]; d <= hi[0]; ++d) {
      for (long h = lo[1]; h <= hi[1]; ++h) {
        for (long w = lo[2]; w <= hi[2]; ++w) {
          double q = 0.0;
          const long idx[3] = {d, h, w};
          for (int a = 0; a < 3; ++a) {
            const double x = (idx[a] - static_cast<long>(centre[a])) * spec_.spacing[a] / semi[a];
            q += x * x;
          }
          if (q > 1.0) continue;
          for (int a = 0; a < 3; ++a) {
            if (idx[a] < static_cast<long>(spec_.margin[a]) ||
                idx[a] >= static_cast<long>(spec_.size[a] - spec_.margin[a])) {
              return false;
            }
          }
          const Extent3 v{static_cast<std::size_t>(d), static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
          const std::uint8_t k = kind_.at(v[0], v[1], v[2]);
          if (k == kBone) {
            touches_bone = true;
            continue;
          }
          if (k == kLesion) return false;
          voxels.push_back(v);
        }
      }
    }
    if (!adjacent && touches_bone) return false;
    voxels = component_of(voxels, centre);
    for (const Extent3& v : voxels) {
      for (const auto& n : kNeighbours) {
        const long nd = static_cast<long>(v[0]) + n[0];
        const long nh = static_cast<long>(v[1]) + n[1];
        const long nw = static_cast<long>(v[2]) + n[2];
        if (!inside(nd, nh, nw)) continue;
        const std::uint8_t k = kind_.at(nd, nh, nw);
        if (k == kLesion) return false;
        if (k == kBone && !adjacent) return false;
      }
    }
    const auto value = static_cast<float>(draw(rng_, spec_.lesion_hu));
    for (const Extent3& v : voxels) {
      kind_.at(v[0], v[1], v[2]) = kLesion;
      hu_.at(v[0], v[1], v[2]) = value;
    }
    surface_.clear();
    return true;
  }

  void distractor() {
    const Vec3 c = random_point();
    const double r = uniform(rng_, 1.0, 3.0);
    const auto value = static_cast<float>(draw(rng_, spec_.distractor_hu));
    for_each_voxel([&](std::size_t d, std::size_t h, std::size_t w) {
      const Vec3 p = mm(d, h, w);
      const Vec3 q{p[0] - c[0], p[1] - c[1], p[2] - c[2]};
      if (dot(q, q) <= r * r && kind_.at(d, h, w) == kBackground) {
        kind_.at(d, h, w) = kDistractor;
        hu_.at(d, h, w) = value;
      }
    });
  }

  void noise_and_clamp() {
    for (std::size_t i = 0; i < hu_.size(); ++i) {
      double v = hu_.data[i] + spec_.noise_sd * standard_normal(rng_);
      switch (kind_.data[i]) {
        case kLesion:
        case kBone:
          v = std::max(v, static_cast<double>(kCalcificationFloor));
          break;
        default:
          v = std::min(v, static_cast<double>(kSoftTissueCeiling));
          break;
      }
      hu_.data[i] = static_cast<float>(v);
    }
  }

  Phantom finish(std::size_t lesions, std::size_t adjacent) {
    Phantom p;
    p.volume = std::move(hu_);
    p.label = LabelVolume(spec_.size, spec_.spacing, 0);
    for (std::size_t i = 0; i < p.label.size(); ++i) p.label.data[i] = kind_.data[i] == kLesion ? 1 : 0;
    p.lesions = lesions;
    p.bone_adjacent = adjacent;
    return p;
  }

 private:
  static constexpr float kCalcificationFloor = 131.0f;
  static constexpr float kSoftTissueCeiling = 130.0f;

  bool inside(long d, long h, long w) const {
    return d >= 0 && h >= 0 && w >= 0 && d < static_cast<long>(spec_.size[0]) &&
           h < static_cast<long>(spec_.size[1]) && w < static_cast<long>(spec_.size[2]);
  }

  template <typename F>
  void for_each_voxel(F&& f) {
    for (std::size_t d = 0; d < spec_.size[0]; ++d) {
      for (std::size_t h = 0; h < spec_.size[1]; ++h) {
        for (std::size_t w = 0; w < spec_.size[2]; ++w) f(d, h, w);
      }
    }
  }

  template <typename Pred>
  void paint_bone(Pred&& pred, float value) {
    for_each_voxel([&](std::size_t d, std::size_t h, std::size_t w) {
      if (pred(mm(d, h, w))) {
        kind_.at(d, h, w) = kBone;
        hu_.at(d, h, w) = value;
      }
    });
    surface_.clear();
  }

  // Non-bone voxels inside the margin box that share a face with bone.
  const std::vector<Extent3>& surface_candidates() {
    if (!surface_.empty()) return surface_;
    for (std::size_t d = spec_.margin[0]; d < spec_.size[0] - spec_.margin[0]; ++d) {
      for (std::size_t h = spec_.margin[1]; h < spec_.size[1] - spec_.margin[1]; ++h) {
        for (std::size_t w = spec_.margin[2]; w < spec_.size[2] - spec_.margin[2]; ++w) {
          if (kind_.at(d, h, w) != kBackground) continue;
          for (const auto& n : kNeighbours) {
            if (kind_.at(d + n[0], h + n[1], w + n[2]) == kBone) {
              surface_.push_back({d, h, w});
              break;
            }
          }
        }
      }
    }
    return surface_;
  }

  // Voxels of `set` 6-connected to `seed` (which is always in the set).
  std::vector<Extent3> component_of(const std::vector<Extent3>& set, const Extent3& seed) {
    std::vector<std::uint8_t> in(kind_.size(), 0);
    for (const Extent3& v : set) in[kind_.index(v[0], v[1], v[2])] = 1;
    std::vector<Extent3> out;
    std::queue<Extent3> q;
    q.push(seed);
    in[kind_.index(seed[0], seed[1], seed[2])] = 0;
    while (!q.empty()) {
      const Extent3 v = q.front();
      q.pop();
      out.push_back(v);
      for (const auto& n : kNeighbours) {
        const long d = static_cast<long>(v[0]) + n[0];
        const long h = static_cast<long>(v[1]) + n[1];
        const long w = static_cast<long>(v[2]) + n[2];
        if (!inside(d, h, w)) continue;
        const std::size_t i = kind_.index(d, h, w);
        if (!in[i]) continue;
        in[i] = 0;
        q.push({static_cast<std::size_t>(d), static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  const PhantomSpec& spec_;
  Rng& rng_;
  Grid<std::uint8_t> kind_;
  Volume hu_;
  std::vector<Extent3> surface_;
};

void check_range(const Range& r, const char* field) {
  if (!(r[0] <= r[1]) || !std::isfinite(r[0]) || !std::isfinite(r[1])) {
    throw ConfigError(std::string("phantom field '") + field + "' must be an ordered finite [lo, hi] pair");
  }
}

void check_count(const CountRange& r, const char* field) {
  if (r[0] > r[1]) throw ConfigError(std::string("phantom field '") + field + "' must satisfy lo <= hi");
}

template <typename A>
A read_pair(const json& j, const char* key, A fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<A>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("phantom field '") + key + "': " + e.what());
  }
}

}  // namespace

void validate(const PhantomSpec& s) {
  for (int a = 0; a < 3; ++a) {
    if (s.size[a] == 0) throw ConfigError("phantom field 'size' must be positive");
    if (!(s.spacing[a] > 0.0)) throw ConfigError("phantom field 'spacing' must be positive");
    if (s.margin[a] < 1) throw ConfigError("phantom field 'margin' must be >= 1 voxel per axis");
    if (2 * s.margin[a] + 1 > s.size[a]) throw ConfigError("phantom field 'margin' leaves no interior");
  }
  check_range(s.tube_radius_mm, "tube_radius_mm");
  check_range(s.plate_thickness_mm, "plate_thickness_mm");
  check_range(s.lesion_radius_mm, "lesion_radius_mm");
  check_range(s.lesion_hu, "lesion_hu");
  check_range(s.bone_hu, "bone_hu");
  check_range(s.background_hu, "background_hu");
  check_range(s.distractor_hu, "distractor_hu");
  check_count(s.tubes, "tubes");
  check_count(s.plates, "plates");
  check_count(s.lesions, "lesions");
  check_count(s.distractors, "distractors");
  if (!(s.lesion_radius_mm[0] > 0.0)) throw ConfigError("phantom field 'lesion_radius_mm' must be positive");
  if (!(s.lesion_hu[0] > kCalcificationHu)) {
    throw ConfigError("phantom field 'lesion_hu' must start above " + std::to_string(kCalcificationHu) + " HU");
  }
  if (!(s.bone_hu[0] > kCalcificationHu)) throw ConfigError("phantom field 'bone_hu' must start above the threshold");
  if (!(s.background_hu[1] <= kCalcificationHu) || !(s.distractor_hu[1] <= kCalcificationHu)) {
    throw ConfigError("phantom fields 'background_hu' and 'distractor_hu' must stay at or below the threshold");
  }
  if (!(s.bone_adjacent_fraction >= 0.0 && s.bone_adjacent_fraction <= 1.0)) {
    throw ConfigError("phantom field 'bone_adjacent_fraction' must lie in [0, 1]");
  }
  if (!(s.noise_sd >= 0.0)) throw ConfigError("phantom field 'noise_sd' must be >= 0");
  if (s.bone_adjacent_fraction > 0.0 && s.lesions[1] > 0 && s.tubes[1] + s.plates[1] == 0) {
    throw ConfigError("phantom field 'bone_adjacent_fraction' needs at least one bone structure");
  }
}

PhantomSpec parse_phantom_spec(const json& j) {
  if (!j.is_object()) throw ConfigError("phantom spec must be a JSON object");
  PhantomSpec s;
  s.size = read_pair(j, "size", s.size);
  s.spacing = read_pair(j, "spacing_mm", s.spacing);
  s.tubes = read_pair(j, "tubes", s.tubes);
  s.tube_radius_mm = read_pair(j, "tube_radius_mm", s.tube_radius_mm);
  s.plates = read_pair(j, "plates", s.plates);
  s.plate_thickness_mm = read_pair(j, "plate_thickness_mm", s.plate_thickness_mm);
  s.lesions = read_pair(j, "lesions", s.lesions);
  s.lesion_radius_mm = read_pair(j, "lesion_radius_mm", s.lesion_radius_mm);
  s.bone_adjacent_fraction = read_pair(j, "bone_adjacent_fraction", s.bone_adjacent_fraction);
  s.lesion_hu = read_pair(j, "lesion_hu", s.lesion_hu);
  s.bone_hu = read_pair(j, "bone_hu", s.bone_hu);
  s.background_hu = read_pair(j, "background_hu", s.background_hu);
  s.distractors = read_pair(j, "distractors", s.distractors);
  s.distractor_hu = read_pair(j, "distractor_hu", s.distractor_hu);
  s.noise_sd = read_pair(j, "noise_sd", s.noise_sd);
  s.margin = read_pair(j, "margin", s.margin);
  s.seed = read_pair(j, "seed", s.seed);
  s.max_retries = read_pair(j, "max_retries", s.max_retries);
  validate(s);
  return s;
}

json to_json(const PhantomSpec& s) {
  return json{{"size", s.size},
              {"spacing_mm", s.spacing},
              {"tubes", s.tubes},
              {"tube_radius_mm", s.tube_radius_mm},
              {"plates", s.plates},
              {"plate_thickness_mm", s.plate_thickness_mm},
              {"lesions", s.lesions},
              {"lesion_radius_mm", s.lesion_radius_mm},
              {"bone_adjacent_fraction", s.bone_adjacent_fraction},
              {"lesion_hu", s.lesion_hu},
              {"bone_hu", s.bone_hu},
              {"background_hu", s.background_hu},
              {"distractors", s.distractors},
              {"distractor_hu", s.distractor_hu},
              {"noise_sd", s.noise_sd},
              {"margin", s.margin},
              {"seed", s.seed},
              {"max_retries", s.max_retries}};
}

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t index) {
  validate(spec);
  Rng rng = derive_stream(spec.seed, index);
  Builder b(spec, rng);
  b.background();
  const std::size_t tubes = draw_count(rng, spec.tubes);
  const std::size_t plates = draw_count(rng, spec.plates);
  for (std::size_t i = 0; i < tubes; ++i) b.tube();
  for (std::size_t i = 0; i < plates; ++i) b.plate();

  const std::size_t lesions = draw_count(rng, spec.lesions);
  std::size_t adjacent = 0;
  for (std::size_t i = 0; i < lesions; ++i) {
    const bool want_adjacent = uniform01(rng) < spec.bone_adjacent_fraction;
    std::size_t tries = 0;
    while (!b.lesion(want_adjacent)) {
      if (++tries >= spec.max_retries) {
        throw GenerationError("phantom " + std::to_string(index) + ": could not place lesion " + std::to_string(i + 1) +
                              (want_adjacent ? " next to bone" : " away from bone") + " after " +
                              std::to_string(spec.max_retries) + " attempts");
      }
    }
    adjacent += want_adjacent ? 1 : 0;
  }
  const std::size_t distractors = draw_count(rng, spec.distractors);
  for (std::size_t i = 0; i < distractors; ++i) b.distractor();
  b.noise_and_clamp();
  return b.finish(lesions, adjacent);
}

std::size_t count_components(const LabelVolume& label) {
  std::vector<std::uint8_t> seen(label.size(), 0);
  std::size_t count = 0;
  const Extent3& s = label.dims;
  for (std::size_t start = 0; start < label.size(); ++start) {
    if (!label.data[start] || seen[start]) continue;
    ++count;
    std::queue<std::size_t> q;
    q.push(start);
    seen[start] = 1;
    while (!q.empty()) {
      const std::size_t i = q.front();
      q.pop();
      const long d = static_cast<long>(i / (s[1] * s[2]));
      const long h = static_cast<long>(i / s[2] % s[1]);
      const long w = static_cast<long>(i % s[2]);
      for (const auto& n : kNeighbours) {
        const long nd = d + n[0], nh = h + n[1], nw = w + n[2];
        if (nd < 0 || nh < 0 || nw < 0 || nd >= static_cast<long>(s[0]) || nh >= static_cast<long>(s[1]) ||
            nw >= static_cast<long>(s[2])) {
          continue;
        }
        const std::size_t j = label.index(nd, nh, nw);
        if (label.data[j] && !seen[j]) {
          seen[j] = 1;
          q.push(j);
        }
      }
    }
  }
  return count;
}

}  // namespace calcseg
