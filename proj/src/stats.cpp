// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "calcseg/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "calcseg/error.hpp"

namespace calcseg::stats {

Overlap overlap(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) {
    throw ContractError("overlap: masks have " + std::to_string(a.size()) + " and " + std::to_string(b.size()) +
                        " voxels");
  }
  Overlap o;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0;
    const bool y = b[i] != 0;
    o.size_a += x;
    o.size_b += y;
    o.intersection += x && y;
  }
  return o;
}

double dice(const Overlap& o) {
  const std::size_t denom = o.size_a + o.size_b;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(o.intersection) / static_cast<double>(denom);
}

double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) { return dice(overlap(a, b)); }

double absolute_dice(std::span<const Overlap> pairs) {
  std::size_t inter = 0;
  std::size_t denom = 0;
  for (const Overlap& o : pairs) {
    inter += o.intersection;
    denom += o.size_a + o.size_b;
  }
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(denom);
}

std::array<std::vector<std::size_t>, 4> quarter_partition(std::span<const double> gt_volume,
                                                          std::span<const std::string> ids) {
  const std::size_t n = gt_volume.size();
  if (ids.size() != n) throw ContractError("quarter_partition: volumes and ids differ in length");
  if (n < 4) throw ContractError("quarter_partition: needs at least 4 images, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (gt_volume[i] != gt_volume[j]) return gt_volume[i] < gt_volume[j];
    return ids[i] < ids[j];
  });
  std::array<std::vector<std::size_t>, 4> q;
  for (std::size_t g = 0; g < 4; ++g) {
    for (std::size_t r = g * n / 4; r < (g + 1) * n / 4; ++r) q[g].push_back(order[r]);
  }
  return q;
}

std::array<double, 4> quarter_dice(std::span<const double> dice_scores, std::span<const double> gt_volume,
                                   std::span<const std::string> ids) {
  if (dice_scores.size() != gt_volume.size()) throw ContractError("quarter_dice: scores and volumes differ in length");
  const auto q = quarter_partition(gt_volume, ids);
  std::array<double, 4> out{};
  for (std::size_t g = 0; g < 4; ++g) {
    double s = 0.0;
    for (std::size_t i : q[g]) s += dice_scores[i];
    out[g] = s / static_cast<double>(q[g].size());
  }
  return out;
}

double mean(std::span<const double> v) {
  if (v.empty()) throw ContractError("mean of an empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd(std::span<const double> v) {
  if (v.size() < 2) throw ContractError("sd needs at least 2 values");
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double icc(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (y.size() != n) throw ContractError("icc: samples differ in length");
  if (n < 3) throw ContractError("icc: needs at least 3 pairs, got " + std::to_string(n));
  const double nd = static_cast<double>(n);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) grand += x[i] + y[i];
  grand /= 2.0 * nd;
  double ssr = 0.0;
  double sst = 0.0;
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double row = 0.5 * (x[i] + y[i]);
    ssr += 2.0 * (row - grand) * (row - grand);
    sst += (x[i] - grand) * (x[i] - grand) + (y[i] - grand) * (y[i] - grand);
    mx += x[i];
    my += y[i];
  }
  mx /= nd;
  my /= nd;
  if (sst == 0.0) throw NumericError("icc: zero total variance, coefficient undefined");
  const double ssc = nd * ((mx - grand) * (mx - grand) + (my - grand) * (my - grand));
  const double sse = std::max(0.0, sst - ssr - ssc);
  const double msr = ssr / (nd - 1.0);
  const double msc = ssc;  // k - 1 = 1
  const double mse = sse / (nd - 1.0);
  const double denom = msr + mse + (2.0 / nd) * (msc - mse);
  if (denom == 0.0) throw NumericError("icc: degenerate variance components");
  return (msr - mse) / denom;
}

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("incomplete beta: shape parameters must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw DomainError("incomplete beta: x must lie in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  // Continued fraction converges quickly for x < (a+1)/(a+b+2); use symmetry otherwise.
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - regularized_incomplete_beta(b, a, 1.0 - x);
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  double f = 1.0;
  double c = 1.0;
  double d = 0.0;
  for (int i = 0; i <= 400; ++i) {
    const int m = i / 2;
    double num;
    if (i == 0) {
      num = 1.0;
    } else if (i % 2 == 0) {
      num = (m * (b - m) * x) / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
    } else {
      num = -((a + m) * (a + b + m) * x) / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
    }
    d = 1.0 + num * d;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    c = 1.0 + num / c;
    if (std::abs(c) < kTiny) c = kTiny;
    const double cd = c * d;
    f *= cd;
    if (std::abs(1.0 - cd) < kEps) return std::exp(ln_front) * (f - 1.0) / a;
  }
  throw NumericError("incomplete beta: continued fraction did not converge");
}

double student_t_two_sided(double t, double df) {
  if (!(df > 0.0)) throw DomainError("student t: degrees of freedom must be positive");
  if (std::isinf(t)) return 0.0;
  return regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

TTest paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("paired_ttest: samples differ in length");
  if (a.size() < 2) throw ContractError("paired_ttest: needs at least 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double s = sd(d);
  if (s == 0.0) throw NumericError("paired_ttest: differences have zero variance");
  TTest r;
  r.df = a.size() - 1;
  r.t = mean(d) / (s / std::sqrt(static_cast<double>(a.size())));
  r.p = student_t_two_sided(r.t, static_cast<double>(r.df));
  return r;
}

double volume_mm3(std::span<const std::uint8_t> mask, const Spacing& spacing) {
  for (double s : spacing) {
    if (!(s > 0.0)) throw ContractError("volume_mm3: spacing must be positive");
  }
  std::size_t n = 0;
  for (std::uint8_t v : mask) n += v != 0;
  return static_cast<double>(n) * spacing[0] * spacing[1] * spacing[2];
}

namespace {

// Bin of every point by rank, plus the edges.
std::vector<std::size_t> rank_bins(std::span<const double> v, std::size_t bins, std::vector<double>& edges) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<std::size_t> bin(n);
  edges.assign(bins + 1, 0.0);
  for (std::size_t r = 0; r < n; ++r) bin[order[r]] = r * bins / n;
  if (n > 0) {
    edges[0] = v[order[0]];
    edges[bins] = v[order[n - 1]];
    for (std::size_t k = 1; k < bins; ++k) {
      const std::size_t r = (k * n + bins - 1) / bins;  // first rank in bin k
      edges[k] = r < n ? v[order[r]] : edges[bins];
    }
  }
  return bin;
}

}  // namespace

Hist2d hist2d_equal_count(std::span<const double> x, std::span<const double> y, std::size_t bins) {
  if (x.size() != y.size()) throw ContractError("hist2d: samples differ in length");
  if (bins < 1) throw ContractError("hist2d: bins must be >= 1");
  Hist2d h;
  h.bins = bins;
  const auto bx = rank_bins(x, bins, h.x_edges);
  const auto by = rank_bins(y, bins, h.y_edges);
  h.counts.assign(bins * bins, 0);
  for (std::size_t i = 0; i < x.size(); ++i) ++h.counts[bx[i] * bins + by[i]];
  return h;
}

}  // namespace calcseg::stats
