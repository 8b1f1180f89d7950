#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "dogfit/oracle.hpp"

namespace dogfit {
namespace {

GaussianMixture random_mixture(int k, std::uint64_t seed, bool labeled) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.2, 1.0);
  std::normal_distribution<double> normal;
  GaussianMixture gm;
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    gm.weights.push_back(unif(rng));
    total += gm.weights.back();
    const double mx = 1.5 * normal(rng);
    const double my = 1.5 * normal(rng);
    gm.means.emplace_back(mx, my);
    const double a = 0.4 * unif(rng);
    const double b = 0.4 * unif(rng);
    const double off = 0.3 * (unif(rng) - 0.6) * std::sqrt(a * b);
    gm.covariances.push_back(Mat2{{a, off}, {off, b}});
    if (labeled) gm.labels.push_back(i % 3);
  }
  for (double& w : gm.weights) w /= total;
  return gm;
}

// Mixture density summed term by term in extended precision.
long double direct_log_density(const GaussianMixture& gm, const Point& x) {
  long double sum = 0.0L;
  for (std::size_t k = 0; k < gm.size(); ++k) {
    const Mat2& c = gm.covariances[k];
    const long double det = static_cast<long double>(c(0, 0)) * c(1, 1) -
                            static_cast<long double>(c(0, 1)) * c(1, 0);
    const long double dx = x.x() - gm.means[k].x();
    const long double dy = x.y() - gm.means[k].y();
    const long double q = (c(1, 1) * dx * dx - 2.0L * c(0, 1) * dx * dy + c(0, 0) * dy * dy) / det;
    sum += gm.weights[k] * std::exp(-0.5L * q) / (2.0L * std::numbers::pi_v<long double> *
                                                 std::sqrt(det));
  }
  return std::log(sum);
}

TEST(Mixture, ValidationCatchesBrokenInvariants) {
  GaussianMixture gm = random_mixture(3, 1, true);
  EXPECT_NO_THROW(gm.validate());
  GaussianMixture bad = gm;
  bad.weights[0] += 0.01;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = gm;
  bad.covariances[1] = Mat2{{1.0, 2.0}, {2.0, 1.0}};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = gm;
  bad.covariances[1](0, 1) = 0.3;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = gm;
  bad.labels.pop_back();
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  EXPECT_THROW(GaussianMixture{}.validate(), std::invalid_argument);
}

TEST(SampleMixture, SingleComponentMeanWithinBound) {
  const Mat2 cov{{0.5, 0.1}, {0.1, 0.3}};
  const GaussianMixture gm{{1.0}, {Point(2.0, -1.0)}, {cov}, {}};
  const int n = 4000;
  const SampleBatch b = sample_mixture(gm, n, 3);
  Point mean = Point::Zero();
  for (const auto& p : b.points) mean += p;
  mean /= n;
  const double bound = 3.0 * std::sqrt(cov.trace() / n);
  EXPECT_LT((mean - gm.means[0]).norm(), bound);
  for (const auto& l : b.labels) EXPECT_FALSE(l.has_value());
}

TEST(SampleMixture, ZeroWeightComponentNeverDrawn) {
  const GaussianMixture gm{{1.0, 0.0},
                           {Point(0, 0), Point(50, 50)},
                           {Mat2::Identity() * 0.1, Mat2::Identity() * 0.1},
                           {4, 7}};
  const SampleBatch b = sample_mixture(gm, 2000, 1);
  for (const auto& p : b.points) EXPECT_LT(p.norm(), 5.0);
  for (const auto& l : b.labels) EXPECT_EQ(l, Label{4});
}

TEST(SampleMixture, ProportionsWithinBinomialInterval) {
  const GaussianMixture gm{{0.3, 0.7},
                           {Point(-3, 0), Point(3, 0)},
                           {Mat2::Identity() * 0.1, Mat2::Identity() * 0.1},
                           {0, 1}};
  const SampleBatch b = sample_mixture(gm, 10000, 8);
  int zeros = 0;
  for (const auto& l : b.labels) zeros += *l == 0;
  EXPECT_NEAR(zeros / 10000.0, 0.3, 0.02);
  EXPECT_EQ(sample_mixture(gm, 50, 8).points, sample_mixture(gm, 50, 8).points);
}

TEST(AnalyticEps, StandardGaussianMatchesMonteCarloRegression) {
  const NoiseSchedule s = make_schedule();
  const GaussianMixture gm{{1.0}, {Point::Zero()}, {Mat2::Identity()}, {}};
  for (int t : {50, 400, 900}) {
    std::mt19937_64 rng(t);
    std::normal_distribution<double> normal;
    // E[eps | x_t] is linear in x_t; its slope is E[eps x_t] / E[x_t^2].
    double num = 0.0, den = 0.0;
    for (int i = 0; i < 1000000; ++i) {
      const double x0 = normal(rng);
      const double e = normal(rng);
      const double xt = std::sqrt(s.alpha_bar(t)) * x0 + s.sigma(t) * e;
      num += e * xt;
      den += xt * xt;
    }
    const double slope = num / den;
    const Point probe(0.8, -1.3);
    const Point eps = analytic_eps(gm, probe, t, s);
    EXPECT_NEAR(eps.x(), slope * probe.x(), 0.01) << "t=" << t;
    EXPECT_NEAR(eps.y(), slope * probe.y(), 0.01) << "t=" << t;
    EXPECT_NEAR((eps - s.sigma(t) * probe).norm(), 0.0, 1e-12);
  }
}

TEST(AnalyticEps, SymmetryCenters) {
  const NoiseSchedule s = make_schedule();
  const Point mu(0.7, -0.4);
  const GaussianMixture one{{1.0}, {mu}, {Mat2{{0.2, 0.05}, {0.05, 0.1}}}, {}};
  for (int t : {1, 300, 1000}) {
    EXPECT_LT(analytic_eps(one, std::sqrt(s.alpha_bar(t)) * mu, t, s).norm(), 1e-12);
  }
  const GaussianMixture two{{0.5, 0.5},
                            {mu, -mu},
                            {Mat2::Identity() * 0.1, Mat2::Identity() * 0.1},
                            {}};
  for (int t : {1, 300, 1000}) EXPECT_LT(analytic_eps(two, Point::Zero(), t, s).norm(), 1e-12);
}

TEST(AnalyticEps, ScoreIdentityAgainstFiniteDifferences) {
  const NoiseSchedule s = make_schedule();
  const GaussianMixture gm = random_mixture(4, 5, false);
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> tdist(1, 1000);
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int probe = 0; probe < 100; ++probe) {
    const int t = tdist(rng);
    const double a = 1.5 * normal(rng);
    const double b = 1.5 * normal(rng);
    const Point x(a, b);
    const GaussianMixture pt = diffuse(gm, s.alpha_bar(t));
    const double h = 1e-4;
    Point fd;
    for (int d = 0; d < 2; ++d) {
      Point xp = x, xm = x;
      xp[d] += h;
      xm[d] -= h;
      fd[d] = (log_density(pt, xp) - log_density(pt, xm)) / (2 * h);
    }
    const Point from_eps = -analytic_eps(gm, x, t, s) / s.sigma(t);
    worst = std::max(worst, (from_eps - fd).norm() / std::max(fd.norm(), 1e-8));
  }
  EXPECT_LT(worst, 1e-3);
}

// Bayes: p_t(x) = sum_c p(c) p_t(x|c), hence grad log p_t = sum_c p(c|x_t)
// grad log p_t(x|c). The conditional predictions weighted by the label
// posterior therefore reproduce the unconditional one.
TEST(AnalyticEps, ConditionalsRecombineToMarginal) {
  const NoiseSchedule s = make_schedule();
  const GaussianMixture gm = random_mixture(6, 9, true);
  std::mt19937_64 rng(10);
  std::normal_distribution<double> normal;
  for (int t : {1, 10, 250, 700, 1000}) {
    for (int i = 0; i < 20; ++i) {
      const double a = normal(rng);
      const double b = normal(rng);
      const Point x(a, b);
      const auto post = label_posterior(gm, x, t, s);
      double total = 0.0;
      Point mix = Point::Zero();
      for (int c = 0; c < gm.num_classes(); ++c) {
        mix += post[c] * analytic_eps(gm, x, t, s, Label{c});
        total += post[c];
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
      EXPECT_LT((mix - analytic_eps(gm, x, t, s)).norm(), 1e-6);
    }
  }
}

TEST(AnalyticEps, ConditionWithoutMatchingComponentRejected) {
  const NoiseSchedule s = make_schedule();
  const GaussianMixture gm = random_mixture(3, 2, true);
  EXPECT_THROW(analytic_eps(gm, Point(0, 0), 10, s, Label{5}), std::invalid_argument);
  const GaussianMixture unlabeled = random_mixture(3, 2, false);
  EXPECT_THROW(analytic_eps(unlabeled, Point(0, 0), 10, s, Label{0}), std::invalid_argument);
  EXPECT_THROW(restrict_to_label(gm, 9), std::invalid_argument);
}

TEST(AnalyticEps, BatchedOracleMatchesPointwise) {
  const NoiseSchedule s = make_schedule();
  const GaussianMixture gm = random_mixture(5, 4, true);
  const EpsFn f = oracle_eps_fn(gm, s);
  const std::vector<Point> x = {Point(0.1, 0.2), Point(-1, 1), Point(2, 0.5)};
  const std::vector<Label> labels = {Label{}, Label{1}, Label{2}};
  std::vector<Point> out(3);
  f(x, 123, labels, out);
  for (int i = 0; i < 3; ++i) {
    EXPECT_LT((out[i] - analytic_eps(gm, x[i], 123, s, labels[i])).norm(), 1e-14);
  }
}

TEST(LogDensity, StandardGaussianAtOrigin) {
  const GaussianMixture gm{{1.0}, {Point::Zero()}, {Mat2::Identity()}, {}};
  EXPECT_NEAR(log_density(gm, Point::Zero()), -std::log(2.0 * std::numbers::pi), 1e-14);
}

TEST(LogDensity, PermutationInvariant) {
  const GaussianMixture gm = random_mixture(5, 12, true);
  GaussianMixture perm;
  for (int k : {3, 0, 4, 1, 2}) {
    perm.weights.push_back(gm.weights[k]);
    perm.means.push_back(gm.means[k]);
    perm.covariances.push_back(gm.covariances[k]);
    perm.labels.push_back(gm.labels[k]);
  }
  for (const Point& x : {Point(0, 0), Point(1.5, -2), Point(-3, 0.2)}) {
    EXPECT_NEAR(log_density(gm, x), log_density(perm, x), 1e-12);
  }
}

TEST(LogDensity, MatchesExtendedPrecisionSum) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 20; ++trial) {
    const GaussianMixture gm = random_mixture(4, 100 + trial, false);
    const double a = 2 * normal(rng);
    const double b = 2 * normal(rng);
    const Point x(a, b);
    const double ref = static_cast<double>(direct_log_density(gm, x));
    EXPECT_NEAR(log_density(gm, x), ref, 1e-10 * std::max(1.0, std::abs(ref)));
  }
}

TEST(LogDensity, StableFarFromAllComponents) {
  const GaussianMixture gm{{0.5, 0.5},
                           {Point(0, 0), Point(1, 0)},
                           {Mat2::Identity() * 0.01, Mat2::Identity() * 0.01},
                           {}};
  const double v = log_density(gm, Point(40, 40));
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_LT(v, -1e4);
  const auto r = responsibilities(gm, Point(40, 40));
  EXPECT_NEAR(r[0] + r[1], 1.0, 1e-12);
}

}  // namespace
}  // namespace dogfit
