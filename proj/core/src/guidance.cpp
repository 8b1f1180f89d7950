#include "dogfit/guidance.hpp"

#include <cmath>
#include <stdexcept>

namespace dogfit {

std::string to_string(Method m) {
  switch (m) {
    case Method::kNone: return "none";
    case Method::kCfg: return "cfg";
    case Method::kDog: return "dog";
    case Method::kMg: return "mg";
    case Method::kDogfit: return "dogfit";
    case Method::kDogfitControl: return "dogfit_control";
  }
  return "unknown";
}

Method method_from_string(std::string_view s) {
  for (Method m : {Method::kNone, Method::kCfg, Method::kDog, Method::kMg, Method::kDogfit,
                   Method::kDogfitControl}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown guidance method '" + std::string(s) + "'");
}

bool needs_labels(Method m) { return m == Method::kCfg || m == Method::kMg; }

int passes_per_step(Method m) { return m == Method::kCfg || m == Method::kDog ? 2 : 1; }

void GuidanceConfig::validate() const {
  if (!(w >= 1.0) || !std::isfinite(w)) throw std::invalid_argument("guidance w must be >= 1");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw std::invalid_argument("guidance lambda must be > 0");
  }
  if (!(tau_c >= 0.0 && tau_c <= 1.0)) throw std::invalid_argument("tau_c must lie in [0,1]");
  if (tau_s < 0) throw std::invalid_argument("tau_s must be non-negative");
  if (!(label_dropout >= 0.0 && label_dropout < 1.0)) {
    throw std::invalid_argument("label_dropout must lie in [0,1)");
  }
}

Point cfg_combine(const Point& eps_c, const Point& eps_u, double w) {
  return eps_c + (w - 1.0) * (eps_c - eps_u);
}

Point dog_combine(const Point& eps_c_target, const Point& eps_u_source, double w) {
  return eps_c_target + (w - 1.0) * (eps_c_target - eps_u_source);
}

Point mg_target(const Point& eps, const Point& eps_c, const Point& eps_u, double w) {
  return eps + (w - 1.0) * (eps_c - eps_u);
}

Point dogfit_target(const Point& eps, const Point& eps_c_target, const Point& eps_u_source,
                    double w) {
  return eps + (w - 1.0) * (eps_c_target - eps_u_source);
}

double w_from_uniform(double lambda, double u) {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
  return 1.0 - std::log1p(-u) / lambda;
}

double sample_w(double lambda, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  return w_from_uniform(lambda, unif(rng));
}

double w_cdf(double lambda, double w) {
  if (w < 1.0) return 0.0;
  return -std::expm1(-lambda * (w - 1.0));
}

bool schedule_active(std::int64_t s, double t_norm, const GuidanceConfig& cfg) {
  return s > cfg.tau_s && t_norm < cfg.tau_c;
}

void WHistogram::add(double w) {
  ++total;
  const double pos = (w - 1.0) / bin_width;
  if (pos < 0.0) throw std::invalid_argument("sampled w below 1");
  const auto bin = static_cast<std::size_t>(pos);
  if (bin < counts.size()) ++counts[bin];
  else ++overflow;
}

double WHistogram::fraction_below(double upper) const {
  if (total == 0) return 0.0;
  const auto bins = static_cast<std::size_t>(std::lround((upper - 1.0) / bin_width));
  std::int64_t n = 0;
  for (std::size_t i = 0; i < std::min(bins, counts.size()); ++i) n += counts[i];
  if (bins > counts.size()) n += overflow;
  return static_cast<double>(n) / static_cast<double>(total);
}

TrainState::TrainState(nn::Denoiser model_in, std::shared_ptr<const nn::Denoiser> source_in,
                       nn::AdamConfig adam, std::int64_t total, std::uint64_t seed)
    : total_steps(total),
      model(std::move(model_in)),
      source(std::move(source_in)),
      opt(model.params(), adam),
      rng(seed) {
  if (source && !source->frozen()) {
    throw std::invalid_argument("train state requires a frozen source snapshot");
  }
}

namespace {

std::vector<Point> forward_subset(const nn::Denoiser& model, const nn::DenoiserBatch& full,
                                  const std::vector<std::size_t>& idx, bool null_labels,
                                  double w) {
  nn::DenoiserBatch sub;
  sub.reserve(idx.size());
  for (std::size_t i : idx) {
    sub.push_back(full.x[i], full.t_norm[i], null_labels ? Label{} : full.labels[i], w);
  }
  return model.forward(sub);
}

}  // namespace

StepResult train_step(TrainState& state, const SampleBatch& batch, const GuidanceConfig& cfg,
                      const NoiseSchedule& sched) {
  cfg.validate();
  batch.validate();
  if (batch.size() == 0) throw std::invalid_argument("train_step needs a nonempty batch");
  if (state.step >= state.total_steps) throw std::logic_error("training already complete");
  const Method m = cfg.method;
  const bool uses_source = m == Method::kDogfit || m == Method::kDogfitControl;
  if (uses_source && !state.source) {
    throw std::invalid_argument(to_string(m) + " training needs the frozen source model");
  }
  if (needs_labels(m) && !(cfg.label_dropout > 0.0)) {
    throw std::invalid_argument(to_string(m) +
                                " training needs label_dropout > 0 to learn a null-label branch");
  }
  if (m == Method::kDogfitControl && !state.model.arch().w_conditioning) {
    throw std::invalid_argument("dogfit_control needs a w-conditioned denoiser");
  }

  const std::int64_t s = state.step + 1;
  if (m == Method::kDogfitControl && s > cfg.tau_s && state.modulation_frozen_at < cfg.tau_s) {
    state.model.refreeze_label_modulation();
    state.modulation_frozen_at = s - 1;
  }

  // Every method draws the same per-sample stream so runs with equal seeds
  // see identical data, noise and times.
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal;
  const std::size_t n = batch.size();
  nn::DenoiserBatch input;
  input.reserve(n);
  std::vector<Point> eps(n);
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t_norm = unif(state.rng);
    const double e0 = normal(state.rng);
    const double e1 = normal(state.rng);
    const double u_drop = unif(state.rng);
    const double u_w = unif(state.rng);
    eps[i] = Point(e0, e1);
    w[i] = m == Method::kDogfitControl ? w_from_uniform(cfg.lambda, u_w) : cfg.w;
    if (m == Method::kDogfitControl) state.w_hist.add(w[i]);
    const Label c = u_drop < cfg.label_dropout ? Label{} : batch.labels[i];
    const int t_idx = sched.index_from_norm(t_norm);
    const Point x_t = forward_noise(batch.points[i], t_idx, eps[i], sched);
    input.push_back(x_t, t_norm, c, m == Method::kDogfitControl ? w[i] : 1.0);
  }

  const nn::TrainingPass pass(state.model, input);
  std::vector<Point> target = eps;
  std::vector<std::size_t> active;
  if (m == Method::kMg || m == Method::kDogfit || m == Method::kDogfitControl) {
    for (std::size_t i = 0; i < n; ++i) {
      if (schedule_active(s, input.t_norm[i], cfg)) active.push_back(i);
    }
  }
  if (!active.empty()) {
    // Offsets are plain values: nothing below feeds the backward pass.
    if (m == Method::kMg) {
      const auto eps_u = forward_subset(state.model, input, active, true, 1.0);
      for (std::size_t j = 0; j < active.size(); ++j) {
        const std::size_t i = active[j];
        target[i] = mg_target(eps[i], pass.output()[i], eps_u[j], w[i]);
      }
    } else {
      const auto eps_src = forward_subset(*state.source, input, active, true, 1.0);
      std::vector<Point> eps_c;
      if (m == Method::kDogfitControl) {
        eps_c = forward_subset(state.model, input, active, false, 1.0);
      } else {
        for (std::size_t i : active) eps_c.push_back(pass.output()[i]);
      }
      for (std::size_t j = 0; j < active.size(); ++j) {
        const std::size_t i = active[j];
        target[i] = dogfit_target(eps[i], eps_c[j], eps_src[j], w[i]);
      }
    }
  }

  nn::LossGrad lg = pass.backward(target);
  StepResult result{lg.loss, false, static_cast<int>(active.size())};
  state.step = s;
  const bool finite = std::isfinite(lg.loss) &&
                      nn::adam_step(state.opt, state.model.mutable_params(), lg.grad);
  if (!finite) {
    result.skipped = true;
    ++state.skipped_steps;
    if (++state.consecutive_nonfinite >= 10) {
      throw TrainingAborted("10 consecutive non-finite training steps ending at step " +
                            std::to_string(s));
    }
  } else {
    state.consecutive_nonfinite = 0;
  }
  return result;
}

GuidedEps::GuidedEps(Method method, GuidanceModels models, double w, const NoiseSchedule& sched)
    : method_(method),
      models_(std::move(models)),
      w_(w),
      t_denominator_(static_cast<double>(sched.T() - 1)),
      passes_(std::make_shared<std::int64_t>(0)) {
  if (!models_.fine_tuned) throw std::invalid_argument("guided sampling needs the fine-tuned model");
  if (method == Method::kDog && !models_.source) {
    throw std::invalid_argument("dog sampling needs the frozen source model");
  }
  if (!(w >= 1.0)) throw std::invalid_argument("guidance w must be >= 1");
  if (method == Method::kDogfitControl && !models_.fine_tuned->arch().w_conditioning) {
    throw std::invalid_argument("dogfit_control sampling needs a w-conditioned model");
  }
}

std::vector<Point> GuidedEps::run(const nn::Denoiser& model, std::span<const Point> x,
                                  double t_norm, std::span<const Label> labels, double w) const {
  nn::DenoiserBatch b;
  b.x.assign(x.begin(), x.end());
  b.t_norm.assign(x.size(), t_norm);
  b.labels.assign(labels.begin(), labels.end());
  b.w.assign(x.size(), w);
  *passes_ += static_cast<std::int64_t>(x.size());
  return model.forward(b);
}

void GuidedEps::operator()(std::span<const Point> x, int t, std::span<const Label> labels,
                           std::span<Point> out) const {
  const double t_norm = static_cast<double>(t - 1) / t_denominator_;
  const nn::Denoiser& ft = *models_.fine_tuned;
  const std::vector<Label> nulls(x.size());
  switch (method_) {
    case Method::kCfg: {
      const auto c = run(ft, x, t_norm, labels, 1.0);
      const auto u = run(ft, x, t_norm, nulls, 1.0);
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = cfg_combine(c[i], u[i], w_);
      break;
    }
    case Method::kDog: {
      const auto c = run(ft, x, t_norm, labels, 1.0);
      const auto u = run(*models_.source, x, t_norm, nulls, 1.0);
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = dog_combine(c[i], u[i], w_);
      break;
    }
    case Method::kDogfitControl: {
      const auto c = run(ft, x, t_norm, labels, w_);
      std::copy(c.begin(), c.end(), out.begin());
      break;
    }
    default: {
      const auto c = run(ft, x, t_norm, labels, 1.0);
      std::copy(c.begin(), c.end(), out.begin());
      break;
    }
  }
}

EpsFn GuidedEps::as_eps_fn() const {
  return [self = *this](std::span<const Point> x, int t, std::span<const Label> labels,
                        std::span<Point> out) { self(x, t, labels, out); };
}

Point guided_sampler_eps(Method method, const GuidanceModels& models, const Label& c, double w,
                         const Point& x, double t_norm) {
  if (!models.fine_tuned) throw std::invalid_argument("guided sampling needs the fine-tuned model");
  const nn::Denoiser& ft = *models.fine_tuned;
  switch (method) {
    case Method::kCfg:
      return cfg_combine(ft.forward(x, t_norm, c, 1.0), ft.forward(x, t_norm, std::nullopt, 1.0), w);
    case Method::kDog:
      if (!models.source) throw std::invalid_argument("dog sampling needs the frozen source model");
      return dog_combine(ft.forward(x, t_norm, c, 1.0),
                         models.source->forward(x, t_norm, std::nullopt, 1.0), w);
    case Method::kDogfitControl:
      return ft.forward(x, t_norm, c, w);
    default:
      return ft.forward(x, t_norm, c, 1.0);
  }
}

}  // namespace dogfit
