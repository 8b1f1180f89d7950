#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dogfit/diffusion.hpp"
#include "dogfit/neural.hpp"
#include "dogfit/types.hpp"

namespace dogfit {

enum class Method { kNone, kCfg, kDog, kMg, kDogfit, kDogfitControl };

std::string to_string(Method m);
Method method_from_string(std::string_view s);
/// Methods whose guidance needs an unconditional branch of the fine-tuned model.
bool needs_labels(Method m);
/// Number of denoiser evaluations per point per sampling step.
int passes_per_step(Method m);

struct GuidanceConfig {
  Method method = Method::kNone;
  /// Guidance strength for fixed-w methods, and the sampling-time w.
  double w = 1.5;
  /// Decay rate of the shifted exponential used to draw training-time w.
  double lambda = 3.0;
  /// Late start: guidance only at training steps s > tau_s.
  std::int64_t tau_s = 0;
  /// Cut-off: guidance only at normalized times t < tau_c.
  double tau_c = 1.0;
  double label_dropout = 0.0;

  void validate() const;
};

Point cfg_combine(const Point& eps_c, const Point& eps_u, double w);
Point dog_combine(const Point& eps_c_target, const Point& eps_u_source, double w);
/// eps + (w - 1) * (eps_c - eps_u). The offset enters as a constant; callers pass
/// values that carry no gradient.
Point mg_target(const Point& eps, const Point& eps_c, const Point& eps_u, double w);
Point dogfit_target(const Point& eps, const Point& eps_c_target, const Point& eps_u_source,
                    double w);

/// Inverse-CDF map of a uniform draw in [0,1) to w = 1 + z, z ~ Exp(lambda).
double w_from_uniform(double lambda, double u);
double sample_w(double lambda, std::mt19937_64& rng);
/// P(W <= w) = 1 - exp(-lambda (w - 1)); 0 for w < 1.
double w_cdf(double lambda, double w);

/// Guidance gate: late start s > tau_s and cut-off t_norm < tau_c.
bool schedule_active(std::int64_t s, double t_norm, const GuidanceConfig& cfg);

/// Counts of the training-time w draws in fixed-width bins starting at 1.
struct WHistogram {
  double bin_width = 0.25;
  std::vector<std::int64_t> counts = std::vector<std::int64_t>(16, 0);
  std::int64_t overflow = 0;
  std::int64_t total = 0;

  void add(double w);
  /// Fraction of draws with w < upper; `upper` must sit on a bin edge.
  double fraction_below(double upper) const;
};

struct TrainState {
  TrainState(nn::Denoiser model, std::shared_ptr<const nn::Denoiser> source,
             nn::AdamConfig adam, std::int64_t total_steps, std::uint64_t seed);

  std::int64_t step = 0;
  std::int64_t total_steps = 0;
  nn::Denoiser model;
  std::shared_ptr<const nn::Denoiser> source;
  nn::OptimState opt;
  std::mt19937_64 rng;

  WHistogram w_hist;
  std::int64_t skipped_steps = 0;
  int consecutive_nonfinite = 0;
  /// Step at which the w-modulation label table was last frozen; -1 if never.
  std::int64_t modulation_frozen_at = -1;
};

struct StepResult {
  double loss = 0.0;
  bool skipped = false;
  /// Samples of the batch whose target carried a guidance offset.
  int guided = 0;
};

/// Raised after repeated non-finite losses.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One guided fine-tuning step on a minibatch of (x0, c).
StepResult train_step(TrainState& state, const SampleBatch& batch, const GuidanceConfig& cfg,
                      const NoiseSchedule& sched);

struct GuidanceModels {
  std::shared_ptr<const nn::Denoiser> fine_tuned;
  std::shared_ptr<const nn::Denoiser> source;
};

/// Sampling-time noise prediction for a method, with a ledger of denoiser
/// evaluations (counted per point). Copies share the ledger.
class GuidedEps {
 public:
  GuidedEps(Method method, GuidanceModels models, double w, const NoiseSchedule& sched);

  void operator()(std::span<const Point> x, int t, std::span<const Label> labels,
                  std::span<Point> out) const;
  EpsFn as_eps_fn() const;

  Method method() const { return method_; }
  std::int64_t forward_passes() const { return *passes_; }
  void reset_ledger() { *passes_ = 0; }

 private:
  std::vector<Point> run(const nn::Denoiser& model, std::span<const Point> x, double t_norm,
                         std::span<const Label> labels, double w) const;

  Method method_;
  GuidanceModels models_;
  double w_;
  double t_denominator_;
  std::shared_ptr<std::int64_t> passes_;
};

/// Single-point form of GuidedEps.
Point guided_sampler_eps(Method method, const GuidanceModels& models, const Label& c, double w,
                         const Point& x, double t_norm);

}  // namespace dogfit
