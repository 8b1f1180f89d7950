#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dogfit/domains.hpp"
#include "dogfit/guidance.hpp"
#include "dogfit/metrics.hpp"

namespace dogfit::harness {

struct ScheduleParams {
  int T = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;
};

struct ModelParams {
  std::vector<int> hidden = {128, 128, 128, 128};
  int embed_dim = 64;
};

struct PretrainParams {
  std::int64_t steps = 30000;
  int batch_size = 256;
  double lr = 1e-3;
  /// Final learning rate as a fraction of lr (cosine decay); 1 keeps it constant.
  double lr_final_frac = 0.05;
  double label_dropout = 0.1;
  std::uint64_t seed = 0;
  double gate_threshold = 0.15;
  int gate_probes = 1000;
};

struct FinetuneParams {
  std::int64_t steps = 8000;
  int batch_size = 64;
  double lr = 1e-4;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
};

struct SamplingParams {
  /// "ddim" (deterministic) or "ddpm" (ancestral).
  std::string sampler = "ddim";
  int steps = 50;
  int n = 5000;
  /// When nonempty, run_suite emits one row per step count per method.
  std::vector<int> step_sweep;
  /// Sampling-time w grid for the dogfit_control trade-off sweep.
  std::vector<double> w_sweep = {1.0, 1.25, 1.5, 1.75, 2.0};
};

struct EvalParams {
  int k = 5;
  double quantile = 0.05;
  double bandwidth = 0.0;
  int n_real = 5000;
  int support_reference_n = 10000;
};

struct VerifyParams {
  int probes = 1000;
  std::vector<double> internalization_w = {1.25, 1.5, 2.0};
  /// Fraction of the trained prediction range allowed as line-fit residual.
  double linearity_tolerance = 0.10;
  bool ablation = false;
};

struct ExperimentConfig {
  DomainSpec domain;
  std::uint64_t data_seed = 0;
  ScheduleParams schedule;
  ModelParams model;
  PretrainParams pretrain;
  FinetuneParams finetune;
  /// Shared guidance defaults; `methods` lists the methods under test.
  GuidanceConfig guidance{Method::kNone, 1.5, 3.0, -1, 0.5, 0.1};
  std::vector<Method> methods = {Method::kNone,  Method::kCfg,    Method::kDog,
                                 Method::kMg,    Method::kDogfit, Method::kDogfitControl};
  /// Per-method field overrides, applied on top of `guidance`.
  std::map<Method, GuidanceConfig> overrides;
  SamplingParams sampling;
  EvalParams eval;
  VerifyParams verify;
  std::filesystem::path output_dir = "runs/default";

  void validate() const;
  /// Fully resolved guidance for one method: tau_s < 0 resolves to S/2, and
  /// label dropout is only kept for methods that need a null-label branch.
  GuidanceConfig guidance_for(Method m) const;
};

/// Parses TOML text. Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig parse_config(std::string_view toml_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Deterministic TOML rendering of every resolved field.
std::string canonical_text(const ExperimentConfig& cfg);
/// 64-bit FNV-1a of canonical_text().
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string hex64(std::uint64_t v);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace dogfit::harness
