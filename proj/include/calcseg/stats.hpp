// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "calcseg/volume_io.hpp"

namespace calcseg::stats {

struct Overlap {
  std::size_t intersection = 0;
  std::size_t size_a = 0;
  std::size_t size_b = 0;
};

/// Counts for two aligned binary masks. Nonzero entries are foreground.
Overlap overlap(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// 2|a∩b| / (|a| + |b|); 1 when both masks are empty.
double dice(const Overlap& o);
double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// Dice pooled over images: 2 Σ|a∩b| / Σ(|a| + |b|). 1 when everything is empty.
double absolute_dice(std::span<const Overlap> pairs);

/// Image indices of the four volume quarters: images sorted by ground-truth
/// volume (ties by id), group g holding sorted ranks [floor(g n/4), floor((g+1) n/4)).
std::array<std::vector<std::size_t>, 4> quarter_partition(std::span<const double> gt_volume,
                                                          std::span<const std::string> ids);

/// Mean Dice within each quarter. Needs at least 4 images.
std::array<double, 4> quarter_dice(std::span<const double> dice, std::span<const double> gt_volume,
                                   std::span<const std::string> ids);

double mean(std::span<const double> v);
/// Sample standard deviation (n - 1 denominator).
double sd(std::span<const double> v);

/// Two-way, absolute-agreement, single-rater ICC for two raters:
/// (MSR - MSE) / (MSR + MSE + (2/n)(MSC - MSE)). Throws NumericError when the
/// total variance is zero.
double icc(std::span<const double> x, std::span<const double> y);

struct TTest {
  double t = 0.0;
  double p = 1.0;
  std::size_t df = 0;
};

/// Two-sided paired t-test on a - b. Throws NumericError if the differences
/// have zero variance.
TTest paired_ttest(std::span<const double> a, std::span<const double> b);

/// I_x(a, b) by Lentz's continued fraction.
double regularized_incomplete_beta(double a, double b, double x);

/// Two-sided p-value of Student's t with df degrees of freedom.
double student_t_two_sided(double t, double df);

double volume_mm3(std::span<const std::uint8_t> mask, const Spacing& spacing);

/// Equal-count 2D histogram: each axis is binned by rank so every marginal
/// bin holds n/bins points (within one). counts is row-major [x_bin][y_bin].
struct Hist2d {
  std::size_t bins = 0;
  std::vector<double> x_edges;  // bins + 1 entries, first and last are min and max
  std::vector<double> y_edges;
  std::vector<std::size_t> counts;
};

Hist2d hist2d_equal_count(std::span<const double> x, std::span<const double> y, std::size_t bins);

}  // namespace calcseg::stats
