#pragma once

// Closed-form noise predictor for Gaussian-mixture data. Under the forward
// process each component k stays Gaussian:
//   x_t | k ~ N(sqrt(ab) mu_k, ab Sigma_k + (1 - ab) I),
// so the posterior-mean noise eps* = -sigma_t grad log p_t(x_t) is exact.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dogfit/diffusion.hpp"
#include "dogfit/types.hpp"

namespace dogfit {

struct GaussianMixture {
  std::vector<double> weights;
  std::vector<Point> means;
  std::vector<Mat2> covariances;
  /// Per-component class index; empty for an unlabeled mixture.
  std::vector<int> labels;

  std::size_t size() const { return weights.size(); }
  bool labeled() const { return !labels.empty(); }
  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
  /// Number of distinct classes (max label + 1), 0 when unlabeled.
  int num_classes() const;
};

/// Mixture of the x_t marginals at cumulative signal level `alpha_bar`.
GaussianMixture diffuse(const GaussianMixture& gm, double alpha_bar);

/// Components restricted to class `label`, weights renormalized.
GaussianMixture restrict_to_label(const GaussianMixture& gm, int label);

SampleBatch sample_mixture(const GaussianMixture& gm, int n, std::uint64_t seed);

/// Which component generated each point would have been most responsible.
std::vector<int> assign_components(const GaussianMixture& gm, std::span<const Point> points);

double log_density(const GaussianMixture& gm, const Point& x);
/// Component responsibilities p(k | x), computed with a max shift.
std::vector<double> responsibilities(const GaussianMixture& gm, const Point& x);
/// grad_x log p(x).
Point score(const GaussianMixture& gm, const Point& x);

/// Exact eps*(x_t, t) for the mixture, optionally conditioned on a label.
Point analytic_eps(const GaussianMixture& gm, const Point& x_t, int t, const NoiseSchedule& sched,
                   const Label& condition = std::nullopt);

/// Posterior over class labels p(c | x_t) at step t, indexed by class.
std::vector<double> label_posterior(const GaussianMixture& gm, const Point& x_t, int t,
                                    const NoiseSchedule& sched);

/// Batched analytic_eps with per-point labels, for use as a sampler EpsFn.
EpsFn oracle_eps_fn(const GaussianMixture& gm, const NoiseSchedule& sched);

}  // namespace dogfit
