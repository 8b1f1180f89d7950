#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dogfit/diffusion.hpp"
#include "dogfit/domains.hpp"
#include "dogfit/guidance.hpp"
#include "dogfit/harness/config.hpp"
#include "dogfit/metrics.hpp"
#include "dogfit/neural.hpp"

namespace dogfit::harness {

/// Line-oriented log shared by everything that reports on a run. Writes are
/// serialized; lines go to the file (if open) and to `echo` (if set).
class RunLog {
 public:
  RunLog() = default;
  explicit RunLog(const std::filesystem::path& file, std::ostream* echo = nullptr);

  void line(const std::string& msg);
  const std::vector<std::string>& lines() const { return lines_; }

 private:
  std::mutex mu_;
  std::ofstream file_;
  std::ostream* echo_ = nullptr;
  std::vector<std::string> lines_;
};

class UnsupportedPairing : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws UnsupportedPairing for label-dependent methods on an unlabeled target.
void check_method_supported(const DomainSpec& domain, Method m);

struct Testbed {
  DomainPair pair;
  NoiseSchedule sched;
};

Testbed make_testbed(const ExperimentConfig& cfg);

nn::Architecture source_architecture(const ExperimentConfig& cfg);

/// Mean L2 distance between the model's prediction and the analytic eps of
/// the mixture, over random (x_t, t) probes with alternating labeled and
/// null conditions.
double oracle_gap(const nn::Denoiser& model, const GaussianMixture& gm, const NoiseSchedule& sched,
                  int probes, std::uint64_t seed);

/// Probe states on the target data: x_t at normalized times drawn from
/// [0, tau_c), with the data point's label.
nn::DenoiserBatch probe_batch(const Testbed& bed, int probes, double tau_c, std::uint64_t seed);

struct InternalizationGap {
  double w = 1.0;
  /// Mean |eps(x,c,w) - dog_combine(eps(x,c,1), eps_source(x), w)|.
  double gap_dog = 0.0;
  /// Mean |eps(x,c,w) - cfg_combine(eps(x,c,1), eps(x,null,1), w)|.
  double gap_cfg = 0.0;
};

std::vector<InternalizationGap> internalization_gaps(const nn::Denoiser& control,
                                                     const nn::Denoiser& source,
                                                     const nn::DenoiserBatch& probes,
                                                     const std::vector<double>& ws);

/// Mean over probes of the worst per-coordinate residual of a least-squares
/// line through eps(w), w on a 9-point grid over [1,2], relative to that
/// coordinate's range.
double linearity_residual(const nn::Denoiser& control, const nn::DenoiserBatch& probes);

struct PretrainResult {
  std::shared_ptr<const nn::Denoiser> model;
  double oracle_gap = 0.0;
  bool gate_passed = false;
  double final_loss = 0.0;
  std::uint64_t checksum = 0;
};

PretrainResult pretrain(const ExperimentConfig& cfg, const Testbed& bed, RunLog* log = nullptr);

struct FinetuneResult {
  GuidanceConfig guidance;
  std::uint64_t seed = 0;
  std::shared_ptr<const nn::Denoiser> model;
  WHistogram w_hist;
  std::int64_t skipped_steps = 0;
  /// Mean loss over the last 100 steps.
  double final_loss = 0.0;
  std::uint64_t checksum = 0;
};

/// Called after every fine-tuning step with the updated state.
using StepObserver = std::function<void(const TrainState&)>;

/// Fine-tunes a copy of `source` on the target data. Class embeddings are
/// reinitialized; dogfit_control also gains w-conditioning.
FinetuneResult finetune(const ExperimentConfig& cfg, const Testbed& bed,
                        std::shared_ptr<const nn::Denoiser> source, const GuidanceConfig& guidance,
                        std::uint64_t seed, RunLog* log = nullptr,
                        const StepObserver& on_step = {});

/// Labels given to generated points: drawn from the target class proportions,
/// or all null on an unlabeled target.
std::vector<Label> sampling_labels(const ExperimentConfig& cfg, const Testbed& bed, int n,
                                   std::uint64_t seed);

struct SampleRequest {
  Method method = Method::kNone;
  double w = 1.5;
  std::string sampler = "ddim";
  int steps = 50;
  int n = 5000;
  std::uint64_t seed = 0;
};

struct SampleResult {
  SampleBatch batch;
  std::int64_t fwd_passes = 0;
  double wall_ms = 0.0;
};

SampleResult generate(const ExperimentConfig& cfg, const Testbed& bed, const GuidanceModels& models,
                      const SampleRequest& req);

/// Fresh draws from the target mixture used as the real set in evaluation.
SampleBatch reference_set(const ExperimentConfig& cfg, const Testbed& bed, std::uint64_t seed);

EvalSettings eval_settings(const ExperimentConfig& cfg);

struct ResultRow {
  std::string run_id;
  Method method = Method::kNone;
  std::uint64_t seed = 0;
  double w = 1.0;
  double lambda = 0.0;
  std::int64_t tau_s = 0;
  double tau_c = 1.0;
  std::string sampler;
  int steps = 0;
  std::int64_t n_gen = 0;
  double frechet = 0.0;
  double mmd2 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double support_frac = 0.0;
  std::int64_t fwd_passes = 0;
  double wall_ms = 0.0;
};

const std::vector<std::string>& csv_columns();
void write_rows(std::ostream& os, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_rows(std::istream& is);

struct SummaryRow {
  Method method = Method::kNone;
  double w = 1.0;
  std::string sampler;
  int steps = 0;
  int n_seeds = 0;
  double frechet_mean = 0.0, frechet_sd = 0.0;
  double mmd2_mean = 0.0, mmd2_sd = 0.0;
  double precision_mean = 0.0, precision_sd = 0.0;
  double recall_mean = 0.0, recall_sd = 0.0;
  double support_frac_mean = 0.0, support_frac_sd = 0.0;
  double fwd_passes_mean = 0.0;
};

/// Mean and sample standard deviation over seeds, grouped by (method, w,
/// sampler, steps) in first-appearance order.
std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows);
void write_summary(std::ostream& os, const std::vector<SummaryRow>& rows);

struct Check {
  std::string name;
  bool passed = false;
  bool fatal = true;
  bool skipped = false;
  double measured = 0.0;
  double threshold = 0.0;
  std::string detail;
};

struct VerificationReport {
  std::vector<Check> checks;
  /// True when every executed fatal check passed.
  bool all_passed() const;
};

void write_report(std::ostream& os, const VerificationReport& report);

struct SuiteResult {
  std::vector<ResultRow> rows;
  std::vector<SummaryRow> summary;
  /// Run ids excluded from the summary (invalid source, sampling failure).
  std::vector<std::string> invalid;
};

/// Owns a testbed and caches trained models. When an output directory is set,
/// checkpoints are also cached on disk, keyed by a hash of everything that
/// determines them.
class Experiment {
 public:
  Experiment(ExperimentConfig cfg, std::optional<std::filesystem::path> out_dir,
             std::ostream* echo = nullptr);

  const ExperimentConfig& config() const { return cfg_; }
  const Testbed& testbed() const { return bed_; }
  RunLog& log() { return *log_; }
  const std::optional<std::filesystem::path>& out_dir() const { return out_; }

  const PretrainResult& source();
  /// Fine-tune for `method` using the config's resolved guidance (or `custom`).
  const FinetuneResult& finetuned(Method method, std::uint64_t seed,
                                  std::optional<GuidanceConfig> custom = std::nullopt);
  GuidanceModels models_for(const FinetuneResult& ft);

  /// Sample and evaluate one (method, seed, w, steps) cell. The sampled batch
  /// is returned through `samples` when requested.
  ResultRow run(Method method, std::uint64_t seed, double w, int steps,
                SampleBatch* samples = nullptr,
                std::optional<GuidanceConfig> custom = std::nullopt);

  /// Every configured (method, seed), plus one row per step count per method
  /// in step-sweep mode. Writes results.csv, summary.csv and per-run
  /// artifacts when an output directory is set.
  SuiteResult run_suite();

  VerificationReport verify();

 private:
  std::string training_key(const GuidanceConfig& g, std::uint64_t seed) const;
  std::optional<std::filesystem::path> checkpoint_path(const std::string& key) const;
  void write_run_artifact(const ResultRow& row, const SampleBatch& samples,
                          const FinetuneResult& ft);

  ExperimentConfig cfg_;
  std::optional<std::filesystem::path> out_;
  std::unique_ptr<RunLog> log_;
  Testbed bed_;
  std::optional<PretrainResult> source_;
  std::map<std::string, FinetuneResult> finetunes_;
};

std::string make_run_id(Method method, std::uint64_t seed, double w, const std::string& sampler,
                        int steps);

struct ReplayOutcome {
  ResultRow stored;
  ResultRow replayed;
  double max_abs_diff = 0.0;
  bool matches = false;
};

/// Re-executes a stored run from the canonical config saved next to it,
/// without any checkpoint cache, and compares every metric column.
ReplayOutcome replay(const std::filesystem::path& suite_dir, const std::string& run_id,
                     double tolerance = 1e-6);
/// Several runs replayed in one fresh experiment, so shared models are
/// retrained once.
std::vector<ReplayOutcome> replay(const std::filesystem::path& suite_dir,
                                  const std::vector<std::string>& run_ids,
                                  double tolerance = 1e-6);

/// Derives an independent 64-bit stream seed from a base seed and a tag.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

}  // namespace dogfit::harness
