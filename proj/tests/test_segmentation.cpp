#include <gtest/gtest.h>

#include <cmath>

#include "burstscan/segmentation.hpp"
#include "burstscan/synthetic.hpp"

using namespace burstscan;

namespace {

StreamSeries make(std::vector<std::int64_t> y, std::vector<std::int64_t> n, std::vector<int> offsets = {},
                  std::string tag = "T") {
  std::vector<Date> d;
  for (std::size_t i = 0; i < y.size(); ++i)
    d.push_back(Date{std::chrono::year{2000} / 1 / 1} +
                std::chrono::days{offsets.empty() ? static_cast<int>(i) : offsets[i]});
  return StreamSeries(std::move(tag), d, y, n);
}

double logit(double p) { return std::log(p / (1 - p)); }

// theta_t = a + b t with n documents a day
StreamSeries linear_theta_stream(std::size_t len, std::int64_t n, double a, double b, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<std::int64_t> y(len), tot(len, n);
  for (std::size_t t = 0; t < len; ++t) y[t] = sample_binomial(rng, n, expit(a + b * static_cast<double>(t)));
  return make(y, tot);
}

double max_second_difference(std::span<const double> th) {
  double m = 0.0;
  for (std::size_t t = 0; t + 2 < th.size(); ++t) m = std::max(m, std::abs(th[t + 2] - 2 * th[t + 1] + th[t]));
  return m;
}

SolverConfig traced() {
  SolverConfig c;
  c.record_trace = true;
  return c;
}

}  // namespace

TEST(Objective, Examples) {
  const auto s = make({1, 3}, {2, 4});
  const std::vector<double> th{0, 1}, flat{0.4, 0.4};
  const PenaltySpec l1{PenaltyKind::fused_l1, {}}, l0{PenaltyKind::fused_l0, {}};
  EXPECT_DOUBLE_EQ(objective(s, th, l1, 0.0), nll(s, th));
  EXPECT_DOUBLE_EQ(objective(s, flat, l1, 3.0), nll(s, flat));
  EXPECT_DOUBLE_EQ(objective(s, flat, l0, 3.0), nll(s, flat));
  EXPECT_DOUBLE_EQ(objective(s, th, l1, 2.0), nll(s, th) + 2.0);
  EXPECT_DOUBLE_EQ(objective(s, th, l0, 2.0), nll(s, th) + 2.0);
}

TEST(PenaltySpec, ParsesNamesAndRejectsMismatch) {
  EXPECT_EQ(parse_penalty_kind("l0"), PenaltyKind::fused_l0);
  EXPECT_EQ(parse_penalty_kind("l1"), PenaltyKind::fused_l1);
  EXPECT_EQ(parse_penalty_kind("tf"), PenaltyKind::trend_l1);
  EXPECT_THROW(parse_penalty_kind("l2"), std::invalid_argument);
  const auto s = make({1, 1, 1}, {2, 2, 2});
  EXPECT_THROW(fit_segmentation(s, {PenaltyKind::fused_l1, {1}}, 1.0), DimensionError);
  EXPECT_THROW(fit_segmentation(s, {PenaltyKind::pruned, {}}, 1.0), std::invalid_argument);
  EXPECT_THROW(fit_segmentation(make({1, 1}, {2, 2}), {PenaltyKind::trend_l1, {}}, 1.0), DimensionError);
  EXPECT_THROW(fit_segmentation(s, {}, -1.0), std::invalid_argument);
  EXPECT_THROW(fit_segmentation(StreamSeries{}, {}, 1.0), EmptySeriesError);
}

TEST(FitSegmentation, ZeroLambdaIsPointwiseMle) {
  const auto s = make({3, 7, 1, 40, 0, 9}, {10, 10, 20, 50, 5, 9});
  for (auto kind : {PenaltyKind::fused_l0, PenaltyKind::fused_l1, PenaltyKind::trend_l1}) {
    const auto fit = fit_segmentation(s, {kind, {}}, 0.0);
    for (std::size_t t = 0; t < s.size(); ++t) {
      const double p = static_cast<double>(s[t].y) / static_cast<double>(s[t].n);
      EXPECT_NEAR(fit.theta_hat[t], logit_clamped(p), 1e-6);
    }
    EXPECT_EQ(fit.theta_hat[4], -kThetaClamp);
    EXPECT_EQ(fit.theta_hat[5], kThetaClamp);
  }
}

TEST(FitSegmentation, HugeLambdaGivesTheGlobalMle) {
  const auto s = gen_stream(benchmark_spec(3));
  const auto g = global_proportion(s);
  for (auto kind : {PenaltyKind::fused_l0, PenaltyKind::fused_l1}) {
    const auto fit = fit_segmentation(s, {kind, {}}, 1e6);
    for (double th : fit.theta_hat) ASSERT_NEAR(th, logit(g.p_bar), 1e-4);
    EXPECT_TRUE(extract_jumps(fit).empty());
  }
}

TEST(FitSegmentation, TracesAreMonotone) {
  const auto s = gen_stream(benchmark_spec(4));
  for (auto kind : {PenaltyKind::fused_l0, PenaltyKind::fused_l1}) {
    for (double lam : {0.5, 5.0, 50.0}) {
      const auto fit = fit_segmentation(s, {kind, {}}, lam, traced());
      const auto rep = convergence_report(fit);
      EXPECT_TRUE(rep.monotone) << to_string(kind) << " lambda " << lam << " max increase " << rep.max_increase;
      EXPECT_TRUE(fit.converged);
    }
  }
  const auto tf = fit_trend_filter(linear_theta_stream(300, 200, -1.0, 0.005, 5), 50.0, traced());
  EXPECT_TRUE(convergence_report(tf).monotone);
}

TEST(FitSegmentation, FiniteTimeBoundAlongL0Traces) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto s = gen_stream(benchmark_spec(seed));
    for (double lam : {1.0, 5.0, 20.0}) {
      const auto fit = fit_segmentation(s, {PenaltyKind::fused_l0, {}}, lam, traced());
      const auto rep = convergence_report(fit);
      EXPECT_TRUE(rep.finite_time_bound) << rep.min_step_sq << " > " << rep.finite_time_rhs;
      EXPECT_GT(rep.steps, 0);
    }
  }
}

TEST(FitSegmentation, ConvergenceReportNeedsTrace) {
  const auto fit = fit_segmentation(make({1, 2}, {3, 3}), {}, 1.0);
  EXPECT_THROW(convergence_report(fit), SolverError);
}

TEST(FitSegmentation, L0FitIsStationary) {
  const auto s = gen_stream(benchmark_spec(6));
  const auto fit = fit_segmentation(s, {PenaltyKind::fused_l0, {}}, 5.0);
  SolverConfig one;
  one.max_iter = 1;
  const auto again = fit_segmentation(s, {PenaltyKind::fused_l0, {}}, 5.0, one, fit.theta_hat);
  double sq = 0.0;
  for (std::size_t t = 0; t < s.size(); ++t) sq += std::pow(again.theta_hat[t] - fit.theta_hat[t], 2);
  EXPECT_LE(std::sqrt(sq), std::sqrt(SolverConfig{}.eps_stationary));
}

TEST(FitSegmentation, L1ReachesTheSameOptimumFromAnyStart) {
  const auto s = linear_theta_stream(200, 50, 0.2, 0.0, 7);
  const PenaltySpec pen{PenaltyKind::fused_l1, {}};
  const auto a = fit_segmentation(s, pen, 3.0);
  const std::vector<double> start(s.size(), -2.0);
  const auto b = fit_segmentation(s, pen, 3.0, {}, start);
  EXPECT_NEAR(objective(s, a.theta_hat, pen, 3.0), objective(s, b.theta_hat, pen, 3.0), 1e-5);
  SolverConfig half;
  half.max_iter = 20;
  SolverConfig full;
  full.max_iter = 40;
  EXPECT_LE(objective(s, fit_segmentation(s, pen, 3.0, full).theta_hat, pen, 3.0),
            objective(s, fit_segmentation(s, pen, 3.0, half).theta_hat, pen, 3.0));
}

TEST(FitSegmentation, InvariantToTag) {
  const auto s = gen_null_stream(100, 50, 0.3, 3, "A");
  const auto a = fit_segmentation(s, {}, 2.0), b = fit_segmentation(s.with_tag("B"), {}, 2.0);
  EXPECT_EQ(a.theta_hat, b.theta_hat);
}

// Doubling every gap halves the l1 penalty, so the fit must match the
// unit-spacing fit at half the lambda.
TEST(FitSegmentation, WeightedL1MatchesRescaledLambda) {
  const auto base = gen_null_stream(120, 60, 0.4, 9);
  std::vector<std::int64_t> y, n;
  std::vector<int> off;
  for (std::size_t t = 0; t < base.size(); ++t) {
    y.push_back(base[t].y);
    n.push_back(base[t].n);
    off.push_back(static_cast<int>(2 * t));
  }
  const auto wide = make(y, n, off);
  const auto a = fit_segmentation(wide, PenaltySpec::for_series(PenaltyKind::fused_l1, wide), 4.0);
  const auto b = fit_segmentation(base, {PenaltyKind::fused_l1, {}}, 2.0);
  for (std::size_t t = 0; t < base.size(); ++t) EXPECT_NEAR(a.theta_hat[t], b.theta_hat[t], 1e-8);
}

TEST(FitSegmentation, BenchmarkJumpsRecovered) {
  const auto s = gen_stream(benchmark_spec(1));
  const auto fit = fit_segmentation(s, {PenaltyKind::fused_l0, {}}, 5.0);
  const auto jumps = extract_jumps(fit);
  for (std::size_t truth : {199u, 499u, 549u}) {
    bool hit = false;
    for (const auto& j : jumps) hit |= j.index + 10 >= truth && j.index <= truth + 10;
    EXPECT_TRUE(hit) << "no jump near gap " << truth;
  }
}

TEST(ExtractJumps, Examples) {
  SegmentedFit fit;
  fit.p_hat = {0.3, 0.3, 0.3};
  EXPECT_TRUE(extract_jumps(fit, 1e-8).empty());
  fit.p_hat = {0.2, 0.2, 0.5, 0.5};
  const auto j = extract_jumps(fit, 1e-8);
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0].index, 1u);
  EXPECT_NEAR(j[0].magnitude, 0.3, 1e-15);
  fit.p_hat = {0.2, 0.2 + 1e-12};
  EXPECT_TRUE(extract_jumps(fit, 1e-8).empty());
}

TEST(TrendFilter, LinearThetaIsRecovered) {
  const auto s = linear_theta_stream(500, 500, -1.0, 0.004, 11);
  const auto moderate = fit_trend_filter(s, 1e4);
  EXPECT_LE(max_second_difference(moderate.theta_hat), 1e-4);
  const PenaltySpec tf{PenaltyKind::trend_l1, {}};
  EXPECT_LE(tf.value(moderate.theta_hat), 1e-4 * 500);
  const auto large = fit_trend_filter(s, 1e6);
  EXPECT_LE(max_second_difference(large.theta_hat), 1e-5);
  const auto zero = fit_trend_filter(s, 0.0);
  for (std::size_t t = 0; t < s.size(); ++t)
    EXPECT_NEAR(zero.theta_hat[t],
                logit_clamped(static_cast<double>(s[t].y) / static_cast<double>(s[t].n)), 1e-6);
}

TEST(TrendFilter, IrregularSpacingStaysAffineInCalendarTime) {
  std::vector<std::int64_t> y, n;
  std::vector<int> off;
  SplitMix64 rng(12);
  for (int t = 0, day = 0; t < 200; ++t, day += 1 + static_cast<int>(rng.below(3))) {
    off.push_back(day);
    n.push_back(400);
    y.push_back(sample_binomial(rng, 400, expit(-0.5 + 0.002 * day)));
  }
  const auto s = make(y, n, off);
  const auto fit = fit_trend_filter(s, 1e6);
  const auto sp = s.spacing();
  for (std::size_t t = 0; t + 2 < s.size(); ++t) {
    const double s1 = (fit.theta_hat[t + 1] - fit.theta_hat[t]) / sp[t];
    const double s2 = (fit.theta_hat[t + 2] - fit.theta_hat[t + 1]) / sp[t + 1];
    ASSERT_NEAR(s1, s2, 1e-6);
  }
}
