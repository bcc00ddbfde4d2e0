// Copyright 2026 The calcseg Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance driver. Prints one PASS/FAIL line per criterion and exits
// non-zero if any selected criterion fails. The end-to-end criteria go
// through the same entry point as the command-line tool.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <CLI11.hpp>
#include <json.hpp>

#include "calcseg/dataset.hpp"
#include "calcseg/error.hpp"
#include "calcseg/gradcheck.hpp"
#include "calcseg/kernels/conv.hpp"
#include "calcseg/layers.hpp"
#include "calcseg/network.hpp"
#include "calcseg/objective.hpp"
#include "calcseg/phantom.hpp"
#include "calcseg/stats.hpp"
#include "cli.hpp"
#include "unit/oracles.hpp"

using namespace calcseg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path g_work;

// Runs the command-line entry point; throws with its stderr on failure.
std::string cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != kExitOk) {
    std::string cmd;
    for (const auto& a : args) cmd += a + " ";
    throw std::runtime_error("'" + cmd + "' exited " + std::to_string(code) + ": " + err.str());
  }
  return out.str();
}

std::string config(const std::string& name) { return oracle::source_path("configs/" + name); }

// Generates the benchmark phantoms into dir unless a manifest is already there.
void ensure_dataset(const fs::path& dir, std::size_t count, const std::vector<std::string>& split = {}) {
  if (fs::exists(dir / kManifestName)) return;
  std::vector<std::string> args{"generate", "--spec", config("phantom_benchmark.json"), "--count",
                                std::to_string(count), "--out", dir.string()};
  if (!split.empty()) {
    args.push_back("--split");
    args.insert(args.end(), split.begin(), split.end());
  }
  cli(args);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

// ---- criteria ----

Outcome gradients() {
  const auto t0 = Clock::now();
  const auto checks = run_gradcheck_suite(1);
  double worst = 0.0;
  std::string failed;
  for (const auto& c : checks) {
    worst = std::max(worst, c.report.max_rel_error);
    if (!gradcheck_passed(c, 1e-5)) failed += " " + c.name;
  }
  const double t = seconds_since(t0);
  const bool ok = failed.empty() && !checks.empty() && t < 300.0;
  return {ok, std::to_string(checks.size()) + " checks, max rel err " + fmt("%.2e", worst) + ", " + fmt("%.1f", t) +
                  " s" + (failed.empty() ? "" : ", failed:" + failed)};
}

Outcome conv_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  std::vector<kernels::Isa> isas{kernels::Isa::scalar};
  if (kernels::detected_isa() == kernels::Isa::avx2) isas.push_back(kernels::Isa::avx2);
  const kernels::Isa saved = kernels::active_isa();
  const int n_cases = 24;
  float worst = 0.0f;
  for (int n = 0; n < n_cases; ++n) {
    const std::size_t c = pick(1, 4), k = pick(1, 6);
    Extent3 in{}, kern{}, stride{};
    for (int a = 0; a < 3; ++a) {
      kern[a] = pick(1, 3);
      stride[a] = pick(1, 2);
      in[a] = kern[a] + pick(0, 10);
    }
    in[2] += pick(0, 16);
    const auto x = oracle::random_tensor<float>({c, in[0], in[1], in[2]}, rng);
    const auto w = oracle::random_tensor<float>({k, c, kern[0], kern[1], kern[2]}, rng);
    const auto b = oracle::random_tensor<float>({k}, rng);
    const auto want = oracle::conv3d(x, w, &b, stride);
    for (kernels::Isa isa : isas) {
      kernels::set_isa(isa);
      const auto got = layers::conv3d_valid(constant(x), constant(w), constant(b), stride).value();
      if (got.shape() != want.shape()) {
        kernels::set_isa(saved);
        return {false, "shape mismatch in case " + std::to_string(n)};
      }
      for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
    }
  }
  kernels::set_isa(saved);
  const double t = seconds_since(t0);
  return {worst < 1e-5f && t < 60.0, std::to_string(n_cases) + " cases x " + std::to_string(isas.size()) +
                                         " isa, max |d| " + fmt("%.2e", worst) + ", " + fmt("%.2f", t) + " s"};
}

Outcome receptive_field() {
  const std::string out = cli({"rf", "--config", config("reference.json")});
  const std::string first = out.substr(0, out.find('\n'));
  return {first == "85 85 37", "printed '" + first + "'"};
}

Outcome masking() {
  const NetworkConfig cfg = load_network_config(config("benchmark_net.json"));
  Network<double> net = Network<double>::build(cfg, 3);
  PhantomSpec spec;
  spec.size = {24, 64, 64};
  spec.margin = {4, 12, 12};
  spec.seed = 5;
  std::size_t trials = 0, identical = 0, inside_changes = 0;
  for (std::uint64_t idx = 0; idx < 3; ++idx) {
    const Phantom ph = generate_phantom(spec, idx);
    Tensor<double> x(Shape{1, spec.size[0], spec.size[1], spec.size[2]});
    for (std::size_t i = 0; i < ph.volume.size(); ++i) x[i] = ph.volume.data[i];
    Rng rng = derive_stream(idx, 2);
    const auto r = net.forward(x, layers::Mode::train, rng);
    const Extent3 o = r.geometry.out, off = r.geometry.label_offset;
    Tensor<double> y(Shape{1, o[0], o[1], o[2]});
    std::vector<float> hu(y.size());
    for (std::size_t d = 0; d < o[0]; ++d)
      for (std::size_t h = 0; h < o[1]; ++h)
        for (std::size_t w = 0; w < o[2]; ++w) {
          const std::size_t i = (d * o[1] + h) * o[2] + w;
          y[i] = ph.label.at(d + off[0], h + off[1], w + off[2]);
          hu[i] = ph.volume.at(d + off[0], h + off[1], w + off[2]);
        }
    const std::vector<std::uint8_t> mask = intensity_mask(hu);
    std::vector<Tensor<double>> logits{r.logit.value()};
    for (const auto& a : r.aux_logit) logits.push_back(a.value());

    auto loss = [&](const std::vector<Tensor<double>>& z, const Tensor<double>& lab, double pw) {
      const auto main = masked_weighted_bce(constant(z[0]), lab, mask, pw).loss;
      std::vector<Var<double>> aux;
      for (std::size_t h = 1; h < z.size(); ++h) aux.push_back(masked_weighted_bce(constant(z[h]), lab, mask, pw).loss);
      const std::vector<double> wts(kAuxHeads, 0.7);
      return total_loss<double>(main, aux, wts).value().item();
    };
    for (double pw : {1.0, 1000.0}) {
      const double before = loss(logits, y, pw);
      std::mt19937_64 g(idx * 31 + static_cast<std::uint64_t>(pw));
      std::normal_distribution<double> big(0.0, 500.0);
      auto z = logits;
      auto lab = y;
      for (std::size_t i = 0; i < lab.size(); ++i) {
        if (mask[i]) continue;
        for (auto& t : z) t[i] = big(g);
        lab[i] = 1.0 - lab[i];
      }
      const double after = loss(z, lab, pw);
      ++trials;
      identical += std::memcmp(&before, &after, sizeof before) == 0;
      // The check must be able to fail: an inside-mask change moves the loss.
      const auto in = std::find(mask.begin(), mask.end(), 1);
      if (in != mask.end()) {
        z[0][static_cast<std::size_t>(in - mask.begin())] += 1.0;
        inside_changes += loss(z, lab, pw) != after;
      }
    }
  }
  return {identical == trials && inside_changes == trials,
          std::to_string(identical) + "/" + std::to_string(trials) + " bit-identical after outside-mask perturbation, " +
              std::to_string(inside_changes) + "/" + std::to_string(trials) + " changed by an inside-mask perturbation"};
}

Outcome dropout_skip() {
  std::mt19937_64 rng(12);
  const std::size_t f = 4;
  layers::BNState<double> s1(f), s2(f);
  BlockParams<double> p;
  p.bn1 = &s1;
  p.bn2 = &s2;
  p.bn1_gamma = constant(oracle::random_tensor<double>({f}, rng, 0.5, 1.5));
  p.bn1_beta = constant(oracle::random_tensor<double>({f}, rng));
  p.bn2_gamma = constant(oracle::random_tensor<double>({f}, rng, 0.5, 1.5));
  p.bn2_beta = constant(oracle::random_tensor<double>({f}, rng));
  p.w1 = constant(oracle::random_tensor<double>({f, f, 1, 3, 3}, rng));
  p.w2 = constant(oracle::random_tensor<double>({f, f, 3, 3, 3}, rng));
  p.b2 = constant(oracle::random_tensor<double>({f}, rng));
  BlockSpec spec;
  spec.kind = BlockKind::residual;
  spec.convs[0] = ConvSpec{f, {1, 3, 3}, {1, 1, 1}};
  spec.convs[1] = ConvSpec{f, {3, 3, 3}, {1, 1, 1}};
  spec.dropout = DropoutSpec{DropoutPosition::pre_add, 0.5, layers::DropoutVariant::element};
  const Extent3 out{4, 6, 7};
  const auto x = oracle::random_tensor<double>({f, out[0] + 2, out[1] + 4, out[2] + 4}, rng);
  const std::vector<std::uint8_t> drop_all(f * out[0] * out[1] * out[2], 0);
  Rng unused(0);

  Tape<double> tape;
  const auto xv = tape.leaf(x);
  const auto y = apply_block(spec, p, xv, layers::Mode::train, unused, &drop_all);
  const auto cropped = layers::crop_center(constant(x), out).value();
  const bool skip_only = y.value() == cropped;
  const auto g = tape.backward(reduce_sum(y));
  double grad_norm = 0.0;
  for (double v : g[xv].data()) grad_norm += std::abs(v);

  spec.kind = BlockKind::plain;
  const auto z = apply_block(spec, p, constant(x), layers::Mode::train, unused, &drop_all).value();
  const bool plain_zero = z == Tensor<double>(z.shape(), 0.0);
  return {skip_only && grad_norm > 0.0 && plain_zero,
          std::string("residual output ") + (skip_only ? "equals" : "differs from") + " cropped input, |dL/dx|_1 " +
              fmt("%.3g", grad_norm) + ", plain output " + (plain_zero ? "zero" : "nonzero")};
}

Outcome schedules() {
  const ScheduleSet s;
  using K = ScheduleKind;
  struct Want {
    K kind;
    long epoch;
    double value;
    const char* label;
  };
  const Want wants[] = {{K::lr, 10, 0.1, "lr(10)"},         {K::lr, 11, 0.01, "lr(11)"},
                        {K::momentum, 11, 0.99, "momentum(11)"}, {K::pos_weight, 5, 1000.0, "pos_weight(5)"},
                        {K::pos_weight, 6, 1.0, "pos_weight(6)"}, {K::aux, 0, 1.0, "aux(0)"},
                        {K::aux, 25, 0.5, "aux(25)"},       {K::aux, 50, 0.0, "aux(50)"}};
  std::string bad;
  for (const Want& w : wants) {
    if (schedule_value(s, w.kind, w.epoch) != w.value) bad += std::string(" ") + w.label;
  }
  return {bad.empty(), bad.empty() ? "8 values exact" : "wrong:" + bad};
}

Outcome stats_oracles() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  auto track = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  std::mt19937_64 g(99);

  // Dice and absolute Dice against set counting.
  std::vector<stats::Overlap> overlaps;
  std::size_t pooled_i = 0, pooled_ab = 0;
  for (int rep = 0; rep < 12; ++rep) {
    std::bernoulli_distribution pa(0.2 + 0.05 * rep), pb(0.3);
    std::vector<std::uint8_t> a(500), b(500);
    std::size_t both = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = pa(g);
      b[i] = pb(g);
      both += a[i] & b[i];
      na += a[i];
      nb += b[i];
    }
    track(stats::dice(a, b), 2.0 * both / double(na + nb));
    overlaps.push_back({both, na, nb});
    pooled_i += both;
    pooled_ab += na + nb;
  }
  track(stats::absolute_dice(overlaps), 2.0 * pooled_i / double(pooled_ab));

  // Quarters: brute force over the sorted order.
  std::vector<double> vol, score;
  std::vector<std::string> ids;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 19; ++i) {
    vol.push_back(std::floor(u(g) * 8.0));  // ties on purpose
    score.push_back(u(g));
    ids.push_back("p" + std::to_string(100 - i));
  }
  std::vector<std::size_t> order(vol.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return std::tie(vol[i], ids[i]) < std::tie(vol[j], ids[j]); });
  const auto q = stats::quarter_dice(score, vol, ids);
  for (std::size_t k = 0; k < 4; ++k) {
    const std::size_t lo = k * order.size() / 4, hi = (k + 1) * order.size() / 4;
    double s = 0.0;
    for (std::size_t r = lo; r < hi; ++r) s += score[order[r]];
    track(q[k], s / double(hi - lo));
  }

  // ICC: a frozen value and the two-way ANOVA mean squares.
  const std::vector<double> x{12, 40, 33, 7, 51, 26, 18}, y{10, 44, 30, 9, 47, 29, 15};
  track(stats::icc(x, y), 0.9804303378444162);
  {
    const double n = double(x.size()), k = 2.0;
    double grand = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) grand += (x[i] + y[i]) / (n * k);
    double ssr = 0.0, ssc = 0.0, sst = 0.0;
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double row = (x[i] + y[i]) / 2.0;
      ssr += k * (row - grand) * (row - grand);
      sst += (x[i] - grand) * (x[i] - grand) + (y[i] - grand) * (y[i] - grand);
    }
    ssc = n * ((mx - grand) * (mx - grand) + (my - grand) * (my - grand));
    const double msr = ssr / (n - 1), msc = ssc / (k - 1), mse = (sst - ssr - ssc) / ((n - 1) * (k - 1));
    track(stats::icc(x, y), (msr - mse) / (msr + (k - 1) * mse + k * (msc - mse) / n));
  }

  // Paired t-test: frozen values and Boost's t distribution.
  const std::vector<double> a{0.81, 0.77, 0.92, 0.65, 0.88, 0.71, 0.95, 0.83};
  const std::vector<double> b{0.79, 0.70, 0.90, 0.69, 0.80, 0.66, 0.91, 0.84};
  const stats::TTest t = stats::paired_ttest(a, b);
  track(t.t, 2.025037084548936);
  track(t.p, 0.08251481561442396);
  {
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) d.push_back(a[i] - b[i]);
    const double n = double(d.size());
    const double m = std::accumulate(d.begin(), d.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : d) ss += (v - m) * (v - m);
    const double tv = m / std::sqrt(ss / (n - 1) / n);
    const double pv = 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(n - 1), std::abs(tv)));
    track(t.t, tv);
    track(t.p, pv);
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && secs < 60.0, "max |d| " + fmt("%.2e", worst) + ", " + fmt("%.2f", secs) + " s"};
}

Outcome benchmark() {
  const auto t0 = Clock::now();
  const fs::path root = g_work / "benchmark";
  fs::remove_all(root);
  const fs::path data = root / "data", run = root / "run", pred = root / "pred";
  ensure_dataset(data, 60);
  cli({"train", "--config", config("benchmark_train.json"), "--data", data.string(), "--out", run.string()});
  cli({"infer", "--checkpoint", (run / "best.ckpt").string(), "--data", data.string(), "--split", "test", "--out",
       pred.string()});
  cli({"evaluate", "--pred", pred.string(), "--data", data.string(), "--split", "test"});
  const json rep = read_json(pred / "eval_report.json");
  const double t = seconds_since(t0);
  const double dice = rep.at("mean_dice").get<double>();
  const double icc = rep.at("icc").is_null() ? -1.0 : rep.at("icc").get<double>();
  const std::size_t images = rep.at("images").get<std::size_t>();
  const long epochs = read_json(run / "run_manifest.json").at("config").at("epochs").get<long>();
  return {images == 10 && epochs <= 50 && dice >= 0.80 && icc >= 0.90 && t <= 3600.0,
          std::to_string(images) + " test images, " + std::to_string(epochs) + " epochs, mean Dice " +
              fmt("%.4f", dice) + ", ICC " + fmt("%.4f", icc) + ", " + fmt("%.0f", t) + " s"};
}

// Recomputes every aggregate of the ablation report from its per-image rows.
Outcome ablation() {
  const fs::path root = g_work / "ablation";
  fs::remove_all(root);
  const fs::path data = root / "data", out = root / "out";
  ensure_dataset(data, 60);
  cli({"ablate", "--config", config("ablate.json"), "--data", data.string(), "--out", out.string()});
  const json rep = read_json(out / "ablation.json");
  const std::string table = slurp(out / "ablation.txt");

  struct Row {
    std::vector<std::string> id;
    std::vector<double> inter, pred, truth, dice, truth_mm3;
  };
  std::map<std::string, Row> rows;
  std::istringstream csv(slurp(out / "ablation_images.csv"));
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 8) return {false, "malformed csv line: " + line};
    Row& r = rows[f[0]];
    r.id.push_back(f[1]);
    r.inter.push_back(std::stod(f[2]));
    r.pred.push_back(std::stod(f[3]));
    r.truth.push_back(std::stod(f[4]));
    r.dice.push_back(std::stod(f[5]));
    r.truth_mm3.push_back(std::stod(f[7]));
  }

  const std::vector<std::string> expected{"plain", "+deep supervision", "+masked objective", "+pre_add dropout ResNet"};
  if (rep.at("rows").size() != expected.size()) return {false, "expected 4 rows"};
  double worst = 0.0;
  auto track = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  const Row* prev = nullptr;
  std::string problems;
  for (std::size_t k = 0; k < expected.size(); ++k) {
    const json& j = rep.at("rows")[k];
    const std::string name = j.at("name");
    if (name != expected[k]) problems += " row " + std::to_string(k + 1) + " is '" + name + "'";
    if (table.find(name) == std::string::npos) problems += " table lacks '" + name + "'";
    const Row& r = rows[name];
    const std::size_t n = r.dice.size();
    if (n == 0 || j.at("images").get<std::size_t>() != n) {
      problems += " image count mismatch for '" + name + "'";
      continue;
    }
    double si = 0.0, sab = 0.0, m = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      si += r.inter[i];
      sab += r.pred[i] + r.truth[i];
      const double d = r.pred[i] + r.truth[i] == 0.0 ? 1.0 : 2.0 * r.inter[i] / (r.pred[i] + r.truth[i]);
      track(r.dice[i], d);
      m += d / double(n);
    }
    double v = 0.0;
    for (double d : r.dice) v += (d - m) * (d - m) / double(n - 1);
    track(j.at("absolute_dice").get<double>(), sab == 0.0 ? 1.0 : 2.0 * si / sab);
    track(j.at("mean_dice").get<double>(), m);
    track(j.at("sd_dice").get<double>(), std::sqrt(v));
    if (n >= 4) {
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::tie(r.truth_mm3[a], r.id[a]) < std::tie(r.truth_mm3[b], r.id[b]);
      });
      for (std::size_t g = 0; g < 4; ++g) {
        double s = 0.0;
        for (std::size_t i = g * n / 4; i < (g + 1) * n / 4; ++i) s += r.dice[order[i]];
        track(j.at("quarter_dice")[g].get<double>(), s / double((g + 1) * n / 4 - g * n / 4));
      }
    }
    if (prev) {
      if (prev->id != r.id) problems += " rows score different images";
      std::vector<double> d;
      for (std::size_t i = 0; i < n; ++i) d.push_back(r.dice[i] - prev->dice[i]);
      const double dm = std::accumulate(d.begin(), d.end(), 0.0) / double(n);
      double ss = 0.0;
      for (double x : d) ss += (x - dm) * (x - dm);
      if (ss == 0.0) {
        if (!j.at("p_vs_previous").is_null()) problems += " p present without variance";
      } else {
        const double t = dm / std::sqrt(ss / double(n - 1) / double(n));
        const double p =
            2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(double(n - 1)), std::abs(t)));
        if (j.at("p_vs_previous").is_null()) {
          problems += " missing p for '" + name + "'";
        } else {
          track(j.at("t_vs_previous").get<double>(), t);
          track(j.at("p_vs_previous").get<double>(), p);
        }
      }
    } else if (!j.at("p_vs_previous").is_null()) {
      problems += " first row has a p value";
    }
    prev = &r;
  }
  const bool ok = problems.empty() && worst < 1e-9;
  return {ok, "4 rows recomputed from per-image csv, max |d| " + fmt("%.2e", worst) + problems};
}

// Generates, trains and infers twice under --deterministic and compares
// every file the two runs wrote.
Outcome determinism() {
  const fs::path root = g_work / "determinism";
  fs::remove_all(root);
  // Both runs use the same directory, because manifests record their paths.
  const fs::path dir = root / "run";
  for (const char* run : {"a", "b"}) {
    const std::vector<std::string> common{"--deterministic", "--seed", "13"};
    auto with = [&](std::vector<std::string> args) {
      args.insert(args.begin(), common.begin(), common.end());
      return cli(args);
    };
    with({"generate", "--spec", config("phantom_benchmark.json"), "--count", "5", "--split", "3", "1", "1", "--out",
          (dir / "data").string()});
    with({"train", "--config", config("benchmark_train.json"), "--data", (dir / "data").string(), "--out",
          (dir / "run").string(), "--epochs", "2"});
    with({"infer", "--checkpoint", (dir / "run" / "best.ckpt").string(), "--data", (dir / "data").string(),
          "--split", "all", "--out", (dir / "pred").string()});
    fs::rename(dir, root / run);
  }
  std::size_t files = 0;
  std::string differ;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), root / "a");
    const fs::path other = root / "b" / rel;
    ++files;
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) differ += " " + rel.string();
  }
  std::size_t files_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "b")) files_b += e.is_regular_file();
  const bool ok = differ.empty() && files == files_b && files > 0;
  return {ok, std::to_string(files) + " files compared" + (differ.empty() ? ", all byte-identical" : ", differ:" + differ)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"calcseg acceptance criteria"};
  std::vector<std::string> only;
  std::string work = "acceptance_work";
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--work", work, "Scratch directory for generated data and runs");
  CLI11_PARSE(app, argc, argv);
  g_work = fs::absolute(work);

  const std::vector<std::pair<std::string, Outcome (*)()>> criteria{
      {"gradients", gradients},     {"conv_oracle", conv_oracle}, {"receptive_field", receptive_field},
      {"masking", masking},         {"dropout_skip", dropout_skip}, {"schedules", schedules},
      {"stats", stats_oracles},     {"benchmark", benchmark},     {"ablation", ablation},
      {"determinism", determinism}};
  for (const auto& name : only) {
    if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == name; })) {
      std::cerr << "unknown criterion " << name << "\n";
      return 2;
    }
  }
  bool all = true;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
