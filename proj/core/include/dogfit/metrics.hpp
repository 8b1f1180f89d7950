#pragma once

#include <cstdint>
#include <span>

#include "dogfit/oracle.hpp"
#include "dogfit/types.hpp"

namespace dogfit {

struct MetricsReport {
  double frechet = 0.0;
  double mmd2 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double support_frac = 0.0;
  std::int64_t n_gen = 0;
  std::int64_t n_real = 0;
  /// Set when a covariance needed the 1e-8 ridge.
  bool frechet_regularized = false;
  /// Points dropped from the k-NN manifolds because their radius was 0.
  std::int64_t knn_excluded = 0;
};

struct GaussianFit {
  Point mean;
  Mat2 cov;
};

/// Sample mean and unbiased (n - 1) covariance.
GaussianFit fit_gaussian(std::span<const Point> pts);

/// Frechet distance between two Gaussians; the 2x2 matrix square root is taken
/// in closed form. Sets *regularized when a ridge had to be added.
double frechet_between(const GaussianFit& a, const GaussianFit& b, bool* regularized = nullptr);
double frechet_gaussian(std::span<const Point> a, std::span<const Point> b,
                        bool* regularized = nullptr);

/// Median pairwise distance over the pooled sets (strided subsample of at most
/// 2000 points).
double median_bandwidth(std::span<const Point> a, std::span<const Point> b);
/// Biased V-statistic MMD^2 with k(x,y) = exp(-|x-y|^2 / (2 h^2)). A
/// non-positive bandwidth selects the median heuristic.
double mmd_rbf(std::span<const Point> a, std::span<const Point> b, double bandwidth = 0.0);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  std::int64_t excluded_real = 0;
  std::int64_t excluded_gen = 0;
};

/// k-NN manifold precision/recall: a point is covered by a set when it lies
/// within the k-th-neighbour radius of some member of that set.
PrecisionRecall precision_recall_knn(std::span<const Point> real, std::span<const Point> gen,
                                     int k);

/// Fraction of `gen` whose target log-density reaches the `quantile` level of
/// log-densities over `reference_n` fresh target draws.
double target_support_fraction(std::span<const Point> gen, const GaussianMixture& target,
                               double quantile, int reference_n = 10000,
                               std::uint64_t seed = 0x5eed);

struct EvalSettings {
  int k = 5;
  double quantile = 0.05;
  /// <= 0 selects the median heuristic.
  double bandwidth = 0.0;
  int support_reference_n = 10000;
};

MetricsReport evaluate(std::span<const Point> real, std::span<const Point> gen,
                       const GaussianMixture& target, const EvalSettings& settings,
                       std::uint64_t seed);

}  // namespace dogfit
