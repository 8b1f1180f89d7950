#include "dogfit/diffusion.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace dogfit {

void SampleBatch::validate() const {
  if (points.size() != labels.size()) {
    throw std::invalid_argument("sample batch points/labels length mismatch");
  }
  for (const auto& p : points) {
    if (!p.allFinite()) throw std::invalid_argument("sample batch holds a non-finite point");
  }
}

std::size_t NoiseSchedule::idx(int t) const {
  if (t < 1 || t > T()) {
    throw std::out_of_range("schedule index " + std::to_string(t) + " outside [1, " +
                            std::to_string(T()) + "]");
  }
  return static_cast<std::size_t>(t - 1);
}

int NoiseSchedule::index_from_norm(double t_norm) const {
  if (!(t_norm >= 0.0 && t_norm <= 1.0)) throw std::out_of_range("t_norm outside [0,1]");
  return static_cast<int>(std::lround(t_norm * (T() - 1))) + 1;
}

double NoiseSchedule::norm_from_index(int t) const {
  idx(t);
  return static_cast<double>(t - 1) / static_cast<double>(T() - 1);
}

NoiseSchedule make_schedule(int T, double beta_min, double beta_max) {
  if (T < 2) throw std::invalid_argument("schedule needs T >= 2");
  if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0)) {
    throw std::invalid_argument("schedule needs 0 < beta_min < beta_max < 1");
  }
  NoiseSchedule s;
  s.betas_.resize(T);
  s.alphas_.resize(T);
  s.alpha_bars_.resize(T);
  s.sigmas_.resize(T);
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    const double beta = beta_min + (beta_max - beta_min) * i / (T - 1);
    prod *= 1.0 - beta;
    s.betas_[i] = beta;
    s.alphas_[i] = 1.0 - beta;
    s.alpha_bars_[i] = prod;
    s.sigmas_[i] = std::sqrt(1.0 - prod);
  }
  return s;
}

Point forward_noise(const Point& x0, int t, const Point& eps, const NoiseSchedule& sched) {
  return std::sqrt(sched.alpha_bar(t)) * x0 + sched.sigma(t) * eps;
}

namespace {

std::vector<Point> initial_noise(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::vector<Point> x(n);
  for (auto& p : x) {
    p[0] = normal(rng);
    p[1] = normal(rng);
  }
  return x;
}

void predict(const EpsFn& eps_fn, std::span<const Point> x, int t,
             std::span<const Label> labels, std::span<Point> out) {
  eps_fn(x, t, labels, out);
  for (const auto& e : out) {
    if (!e.allFinite()) {
      throw SamplingError("non-finite noise prediction at step " + std::to_string(t), t);
    }
  }
}

}  // namespace

SampleBatch ddpm_sample(const EpsFn& eps_fn, std::span<const Label> labels,
                        const NoiseSchedule& sched, std::uint64_t seed) {
  if (labels.empty()) throw std::invalid_argument("ddpm_sample needs n >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<Point> x = initial_noise(labels.size(), rng);
  std::vector<Point> eps(x.size());
  for (int t = sched.T(); t >= 1; --t) {
    predict(eps_fn, x, t, labels, eps);
    const double coef = sched.beta(t) / sched.sigma(t);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
    const double noise_scale = std::sqrt(sched.beta(t));
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = inv_sqrt_alpha * (x[i] - coef * eps[i]);
      if (t > 1) {
        const double z0 = normal(rng);
        const double z1 = normal(rng);
        x[i] += noise_scale * Point(z0, z1);
      }
    }
  }
  SampleBatch out{std::move(x), {labels.begin(), labels.end()}, seed};
  return out;
}

SampleBatch ddpm_sample(const EpsFn& eps_fn, int n, const NoiseSchedule& sched,
                        std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("ddpm_sample needs n >= 1");
  const std::vector<Label> labels(n);
  return ddpm_sample(eps_fn, labels, sched, seed);
}

std::vector<int> ddim_timesteps(int T, int num_steps) {
  if (num_steps < 1 || num_steps > T) {
    throw std::invalid_argument("ddim num_steps must lie in [1, T]");
  }
  if (num_steps == 1) return {T};
  std::vector<int> ts(num_steps);
  for (int i = 0; i < num_steps; ++i) {
    const double pos = 1.0 + static_cast<double>(T - 1) * (num_steps - 1 - i) / (num_steps - 1);
    ts[i] = static_cast<int>(std::lround(pos));
  }
  return ts;
}

SampleBatch ddim_sample(const EpsFn& eps_fn, std::span<const Label> labels, int num_steps,
                        const NoiseSchedule& sched, std::uint64_t seed) {
  if (labels.empty()) throw std::invalid_argument("ddim_sample needs n >= 1");
  const std::vector<int> ts = ddim_timesteps(sched.T(), num_steps);
  std::mt19937_64 rng(seed);
  std::vector<Point> x = initial_noise(labels.size(), rng);
  std::vector<Point> eps(x.size());
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    predict(eps_fn, x, t, labels, eps);
    const double ab = sched.alpha_bar(t);
    const double ab_prev = k + 1 < ts.size() ? sched.alpha_bar(ts[k + 1]) : 1.0;
    const double sqrt_ab = std::sqrt(ab);
    const double sigma = sched.sigma(t);
    const double sqrt_ab_prev = std::sqrt(ab_prev);
    const double sigma_prev = std::sqrt(1.0 - ab_prev);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const Point x0 = (x[i] - sigma * eps[i]) / sqrt_ab;
      x[i] = sqrt_ab_prev * x0 + sigma_prev * eps[i];
    }
  }
  SampleBatch out{std::move(x), {labels.begin(), labels.end()}, seed};
  return out;
}

SampleBatch ddim_sample(const EpsFn& eps_fn, int n, int num_steps, const NoiseSchedule& sched,
                        std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("ddim_sample needs n >= 1");
  const std::vector<Label> labels(n);
  return ddim_sample(eps_fn, labels, num_steps, sched, seed);
}

}  // namespace dogfit
