#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dogfit/types.hpp"

namespace dogfit {

/// Discrete linear-beta schedule. Step indices are 1-based: t in [1, T].
class NoiseSchedule {
 public:
  int T() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const { return betas_[idx(t)]; }
  double alpha(int t) const { return alphas_[idx(t)]; }
  double alpha_bar(int t) const { return alpha_bars_[idx(t)]; }
  double sigma(int t) const { return sigmas_[idx(t)]; }

  /// Continuous training time in [0,1] to a schedule index.
  int index_from_norm(double t_norm) const;
  /// Inverse of index_from_norm on the grid: (t - 1) / (T - 1).
  double norm_from_index(int t) const;

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  friend NoiseSchedule make_schedule(int, double, double);
  std::size_t idx(int t) const;

  std::vector<double> betas_, alphas_, alpha_bars_, sigmas_;
};

NoiseSchedule make_schedule(int T = 1000, double beta_min = 1e-4, double beta_max = 0.02);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
Point forward_noise(const Point& x0, int t, const Point& eps, const NoiseSchedule& sched);

/// Batched noise prediction: fills `out` with eps(x[i], t | labels[i]).
using EpsFn = std::function<void(std::span<const Point> x, int t, std::span<const Label> labels,
                                 std::span<Point> out)>;

/// Ancestral sampler from t = T down to t = 1 with reverse variance beta_t.
/// One sample per entry of `labels`.
SampleBatch ddpm_sample(const EpsFn& eps_fn, std::span<const Label> labels,
                        const NoiseSchedule& sched, std::uint64_t seed);
SampleBatch ddpm_sample(const EpsFn& eps_fn, int n, const NoiseSchedule& sched,
                        std::uint64_t seed);

/// Deterministic (eta = 0) sampler over `num_steps` evenly spaced indices.
SampleBatch ddim_sample(const EpsFn& eps_fn, std::span<const Label> labels, int num_steps,
                        const NoiseSchedule& sched, std::uint64_t seed);
SampleBatch ddim_sample(const EpsFn& eps_fn, int n, int num_steps, const NoiseSchedule& sched,
                        std::uint64_t seed);

/// Descending index set visited by ddim_sample, first element T, last 1.
std::vector<int> ddim_timesteps(int T, int num_steps);

}  // namespace dogfit
