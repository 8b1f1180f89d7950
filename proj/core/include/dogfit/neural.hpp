#pragma once

// Dense feed-forward noise predictor with hand-written reverse-mode gradients
// and an Adam optimizer. Parameters are stored as float32; reductions over the
// batch (loss, bias and embedding gradients) accumulate in float64.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dogfit/types.hpp"

namespace dogfit::nn {

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
  bool trainable = true;

  std::size_t size() const;
  bool operator==(const TensorSpec&) const = default;
};

/// Flat float32 storage for every tensor of a model, in declared layout order.
class ParamVector {
 public:
  ParamVector() = default;
  /// Zero-initialized storage for `layout`.
  explicit ParamVector(std::vector<TensorSpec> layout);

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }
  const std::vector<TensorSpec>& layout() const { return layout_; }
  std::size_t size() const { return values_.size(); }

  bool has(std::string_view name) const;
  std::size_t offset(std::string_view name) const;
  const TensorSpec& spec(std::string_view name) const;
  std::span<float> tensor(std::string_view name);
  std::span<const float> tensor(std::string_view name) const;

  bool congruent(const ParamVector& other) const { return layout_ == other.layout_; }
  bool all_finite() const;
  /// FNV-1a over the raw bytes of the values.
  std::uint64_t checksum() const;

  bool operator==(const ParamVector&) const = default;

 private:
  std::size_t index_of(std::string_view name) const;

  std::vector<TensorSpec> layout_;
  std::vector<std::size_t> offsets_;
  std::vector<float> values_;
};

enum class Activation { kSilu, kTanh };

std::string to_string(Activation a);
Activation activation_from_string(std::string_view s);

struct Architecture {
  int data_dim = kDataDim;
  std::vector<int> hidden = {128, 128, 128, 128};
  Activation activation = Activation::kSilu;
  /// Width of the condition embedding (sinusoidal time + label + w modulation).
  int embed_dim = 64;
  double max_period = 10000.0;
  /// t_norm is multiplied by this before the sinusoidal embedding.
  double time_scale = 1000.0;
  int num_classes = 0;
  bool w_conditioning = false;

  /// Rows of the label table: one per class plus the trailing null row.
  int label_rows() const { return num_classes + 1; }
  int input_dim() const { return data_dim + embed_dim; }
  std::vector<TensorSpec> layout() const;

  nlohmann::json to_json() const;
  static Architecture from_json(const nlohmann::json& j);
  bool operator==(const Architecture&) const = default;
};

/// Structure-of-arrays batch of denoiser inputs.
struct DenoiserBatch {
  std::vector<Point> x;
  std::vector<double> t_norm;
  std::vector<Label> labels;
  std::vector<double> w;

  std::size_t size() const { return x.size(); }
  void push_back(const Point& xi, double ti, const Label& ci, double wi);
  void reserve(std::size_t n);
};

class Denoiser {
 public:
  /// Randomly initialized model.
  Denoiser(Architecture arch, std::uint64_t seed);
  Denoiser(Architecture arch, ParamVector params, bool frozen = false);

  const Architecture& arch() const { return arch_; }
  const ParamVector& params() const { return params_; }
  /// Throws std::logic_error on a frozen snapshot.
  ParamVector& mutable_params();
  bool frozen() const { return frozen_; }

  Point forward(const Point& x, double t_norm, const Label& c, double w) const;
  std::vector<Point> forward(const DenoiserBatch& batch) const;

  /// Resizes the label table to `num_classes` freshly drawn rows. The null row
  /// is carried over from the current table.
  void reset_label_embeddings(int num_classes, std::uint64_t seed);
  /// Adds the zero-initialized w projection and a frozen copy of the label
  /// table. No-op when already enabled.
  void enable_w_conditioning();
  /// Re-copies the current label table into the frozen modulation table.
  void refreeze_label_modulation();

 private:
  Architecture arch_;
  ParamVector params_;
  bool frozen_ = false;
};

/// Value-equal copy that can no longer be trained.
Denoiser snapshot_frozen(const Denoiser& model);

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

/// Mean over the batch of the squared L2 distance to `target`, and its
/// gradient with respect to every trainable parameter.
LossGrad loss_and_grad(const Denoiser& model, const DenoiserBatch& batch,
                       std::span<const Point> target);

/// Forward pass that keeps its activations so that targets built from the
/// (detached) output can be fed straight into the backward pass.
class TrainingPass {
 public:
  TrainingPass(const Denoiser& model, const DenoiserBatch& batch);
  ~TrainingPass();
  TrainingPass(TrainingPass&&) noexcept;
  TrainingPass& operator=(TrainingPass&&) noexcept;

  const std::vector<Point>& output() const;
  LossGrad backward(std::span<const Point> target) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Float64 evaluation of the same graph on explicitly supplied parameters.
/// Used for gradient verification, where float32 finite differences are too
/// coarse. `grad` may be empty to skip the backward pass.
double evaluate_f64(const Architecture& arch, std::span<const double> params,
                    const DenoiserBatch& batch, std::span<const Point> target,
                    std::span<double> grad);

std::vector<double> sinusoidal_embedding(double t_norm, int dim, double max_period,
                                         double time_scale);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimState {
  OptimState() = default;
  OptimState(const ParamVector& params, AdamConfig config);

  std::vector<float> first_moment;
  std::vector<float> second_moment;
  std::int64_t step_count = 0;
  AdamConfig config;
  std::vector<std::string> warnings;
};

/// One bias-corrected Adam update. Returns false (and records a warning) when
/// the gradient holds a non-finite value; nothing is modified in that case.
bool adam_step(OptimState& opt, ParamVector& params, const ParamVector& grad);

// Checkpoint: "DGF1", uint32 LE length, UTF-8 JSON descriptor, then float32 LE
// values in layout order.
std::string encode_checkpoint(const Denoiser& model);
Denoiser decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Denoiser& model);
Denoiser load_checkpoint(const std::filesystem::path& path);

}  // namespace dogfit::nn
