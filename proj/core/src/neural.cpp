#include "dogfit/neural.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

namespace dogfit::nn {

namespace {

constexpr char kMagic[4] = {'D', 'G', 'F', '1'};
constexpr int kFormatVersion = 1;

std::uint64_t fnv1a(const void* data, std::size_t n,
                    std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

int label_row(const Architecture& arch, const Label& c) {
  if (!c) return arch.num_classes;
  if (*c < 0 || *c >= arch.num_classes) {
    throw std::invalid_argument("unknown label index " + std::to_string(*c) +
                                " (num_classes = " + std::to_string(arch.num_classes) + ")");
  }
  return *c;
}

void validate_batch(const Architecture& arch, const DenoiserBatch& batch) {
  const std::size_t n = batch.size();
  if (batch.t_norm.size() != n || batch.labels.size() != n || batch.w.size() != n) {
    throw std::invalid_argument("denoiser batch fields have mismatched lengths");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!batch.x[i].allFinite()) {
      throw std::invalid_argument("non-finite x_t at batch index " + std::to_string(i));
    }
    const double t = batch.t_norm[i];
    if (!std::isfinite(t) || t < 0.0 || t > 1.0) {
      throw std::invalid_argument("t_norm outside [0,1] at batch index " + std::to_string(i));
    }
    if (!std::isfinite(batch.w[i])) {
      throw std::invalid_argument("non-finite w at batch index " + std::to_string(i));
    }
    if (arch.w_conditioning && batch.w[i] < 1.0) {
      throw std::invalid_argument("w < 1 with w-conditioning enabled");
    }
  }
}

// Offsets of each named tensor inside a flat parameter array laid out by
// Architecture::layout().
struct Offsets {
  std::size_t label_embed = 0;
  std::size_t w_proj = 0;
  std::size_t label_frozen = 0;
  std::vector<std::size_t> weight;
  std::vector<std::size_t> bias;
  std::size_t total = 0;

  explicit Offsets(const Architecture& arch) {
    std::size_t off = 0;
    for (const auto& spec : arch.layout()) {
      const std::string& n = spec.name;
      if (n == "label_embed") label_embed = off;
      else if (n == "w_proj") w_proj = off;
      else if (n == "label_frozen") label_frozen = off;
      else if (n.ends_with(".weight")) weight.push_back(off);
      else if (n.ends_with(".bias")) bias.push_back(off);
      off += spec.size();
    }
    total = off;
  }
};

template <class S>
S activate(Activation a, S z) {
  if (a == Activation::kTanh) return std::tanh(z);
  return z / (S(1) + std::exp(-z));
}

template <class S>
S activate_grad(Activation a, S z) {
  if (a == Activation::kTanh) {
    const S th = std::tanh(z);
    return S(1) - th * th;
  }
  const S s = S(1) / (S(1) + std::exp(-z));
  return s * (S(1) + z * (S(1) - s));
}

// The whole forward/backward graph, generic over the scalar so the same code
// path serves float32 training and float64 gradient verification.
template <class S>
class Graph {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  using ConstRowMap = Eigen::Map<const RowMat>;
  using ConstVecMap = Eigen::Map<const Vec>;

  Graph(const Architecture& arch, std::span<const S> params, const DenoiserBatch& batch)
      : arch_(arch), params_(params), off_(arch) {
    if (params.size() != off_.total) {
      throw std::invalid_argument("parameter array does not match architecture layout");
    }
    validate_batch(arch, batch);
    const int n = static_cast<int>(batch.size());
    if (n == 0) throw std::invalid_argument("empty denoiser batch");
    const int d = arch.data_dim;
    const int e = arch.embed_dim;

    rows_.resize(n);
    wm1_.resize(n);
    Mat h0(arch.input_dim(), n);
    for (int b = 0; b < n; ++b) {
      rows_[b] = label_row(arch, batch.labels[b]);
      wm1_[b] = batch.w[b] - 1.0;
      for (int k = 0; k < d; ++k) h0(k, b) = static_cast<S>(batch.x[b][k]);
      const auto sin_emb =
          sinusoidal_embedding(batch.t_norm[b], e, arch.max_period, arch.time_scale);
      const S* label = &params_[off_.label_embed + std::size_t(rows_[b]) * e];
      for (int k = 0; k < e; ++k) h0(d + k, b) = static_cast<S>(sin_emb[k]) + label[k];
      if (arch.w_conditioning) {
        const S* frozen = &params_[off_.label_frozen + std::size_t(rows_[b]) * e];
        const S* proj = &params_[off_.w_proj];
        const S scale = static_cast<S>(wm1_[b]);
        for (int k = 0; k < e; ++k) h0(d + k, b) += scale * proj[k] * frozen[k];
      }
    }
    acts_.push_back(std::move(h0));

    const std::size_t layers = arch.hidden.size() + 1;
    for (std::size_t l = 0; l < layers; ++l) {
      const auto [w, bias] = layer(l);
      Mat z = w * acts_.back();
      z.colwise() += bias;
      if (l + 1 == layers) {
        acts_.push_back(std::move(z));
      } else {
        Mat a = z.unaryExpr([this](S v) { return activate(arch_.activation, v); });
        pre_.push_back(std::move(z));
        acts_.push_back(std::move(a));
      }
    }
  }

  const Mat& output() const { return acts_.back(); }

  std::vector<Point> output_points() const {
    const Mat& out = output();
    std::vector<Point> pts(out.cols());
    for (Eigen::Index b = 0; b < out.cols(); ++b) {
      for (int k = 0; k < arch_.data_dim; ++k) pts[b][k] = static_cast<double>(out(k, b));
    }
    return pts;
  }

  /// Returns the loss; writes the gradient into `grad` when it is non-empty.
  double backward(std::span<const Point> target, std::span<S> grad) const {
    const Mat& out = output();
    const Eigen::Index n = out.cols();
    if (static_cast<Eigen::Index>(target.size()) != n) {
      throw std::invalid_argument("target length does not match batch");
    }
    Mat d_out(out.rows(), n);
    double loss = 0.0;
    for (Eigen::Index b = 0; b < n; ++b) {
      for (int k = 0; k < arch_.data_dim; ++k) {
        const double r = static_cast<double>(out(k, b)) - target[b][k];
        loss += r * r;
        d_out(k, b) = static_cast<S>(2.0 * r / static_cast<double>(n));
      }
    }
    loss /= static_cast<double>(n);
    if (grad.empty()) return loss;
    if (grad.size() != off_.total) throw std::invalid_argument("gradient size mismatch");
    std::fill(grad.begin(), grad.end(), S(0));

    Mat delta = std::move(d_out);
    const std::size_t layers = arch_.hidden.size() + 1;
    for (std::size_t l = layers; l-- > 0;) {
      if (l + 1 < layers) {
        delta = delta.cwiseProduct(pre_[l].unaryExpr(
            [this](S v) { return activate_grad(arch_.activation, v); }));
      }
      const Mat& input = acts_[l];
      const Eigen::Index out_dim = delta.rows();
      Eigen::Map<RowMat> gw(&grad[off_.weight[l]], out_dim, input.rows());
      gw.noalias() = delta * input.transpose();
      const Eigen::VectorXd gb = delta.template cast<double>().rowwise().sum();
      for (Eigen::Index i = 0; i < out_dim; ++i) grad[off_.bias[l] + i] = static_cast<S>(gb[i]);
      delta = (layer(l).first.transpose() * delta).eval();
    }

    // delta now holds d loss / d h0; route the embedding rows back.
    const int d = arch_.data_dim;
    const int e = arch_.embed_dim;
    std::vector<double> g_label(std::size_t(arch_.label_rows()) * e, 0.0);
    std::vector<double> g_proj(arch_.w_conditioning ? e : 0, 0.0);
    for (Eigen::Index b = 0; b < n; ++b) {
      double* gl = &g_label[std::size_t(rows_[b]) * e];
      for (int k = 0; k < e; ++k) gl[k] += static_cast<double>(delta(d + k, b));
      if (arch_.w_conditioning) {
        const S* frozen = &params_[off_.label_frozen + std::size_t(rows_[b]) * e];
        for (int k = 0; k < e; ++k) {
          g_proj[k] += wm1_[b] * static_cast<double>(frozen[k]) *
                       static_cast<double>(delta(d + k, b));
        }
      }
    }
    for (std::size_t i = 0; i < g_label.size(); ++i) {
      grad[off_.label_embed + i] = static_cast<S>(g_label[i]);
    }
    for (std::size_t i = 0; i < g_proj.size(); ++i) {
      grad[off_.w_proj + i] = static_cast<S>(g_proj[i]);
    }
    return loss;
  }

 private:
  std::pair<ConstRowMap, ConstVecMap> layer(std::size_t l) const {
    const Eigen::Index in = acts_[l].rows();
    const Eigen::Index out =
        l < arch_.hidden.size() ? arch_.hidden[l] : static_cast<Eigen::Index>(arch_.data_dim);
    return {ConstRowMap(&params_[off_.weight[l]], out, in),
            ConstVecMap(&params_[off_.bias[l]], out)};
  }

  const Architecture& arch_;
  std::span<const S> params_;
  Offsets off_;
  std::vector<int> rows_;
  std::vector<double> wm1_;
  std::vector<Mat> pre_;
  std::vector<Mat> acts_;
};

}  // namespace

std::size_t TensorSpec::size() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

ParamVector::ParamVector(std::vector<TensorSpec> layout) : layout_(std::move(layout)) {
  std::size_t off = 0;
  for (const auto& spec : layout_) {
    offsets_.push_back(off);
    off += spec.size();
  }
  values_.assign(off, 0.0f);
}

std::size_t ParamVector::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < layout_.size(); ++i) {
    if (layout_[i].name == name) return i;
  }
  throw std::out_of_range("no tensor named '" + std::string(name) + "'");
}

bool ParamVector::has(std::string_view name) const {
  return std::any_of(layout_.begin(), layout_.end(),
                     [&](const TensorSpec& s) { return s.name == name; });
}

std::size_t ParamVector::offset(std::string_view name) const { return offsets_[index_of(name)]; }

const TensorSpec& ParamVector::spec(std::string_view name) const { return layout_[index_of(name)]; }

std::span<float> ParamVector::tensor(std::string_view name) {
  const std::size_t i = index_of(name);
  return std::span<float>(values_).subspan(offsets_[i], layout_[i].size());
}

std::span<const float> ParamVector::tensor(std::string_view name) const {
  const std::size_t i = index_of(name);
  return std::span<const float>(values_).subspan(offsets_[i], layout_[i].size());
}

bool ParamVector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](float v) { return std::isfinite(v); });
}

std::uint64_t ParamVector::checksum() const {
  return fnv1a(values_.data(), values_.size() * sizeof(float));
}

std::string to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "silu"; }

Activation activation_from_string(std::string_view s) {
  if (s == "silu") return Activation::kSilu;
  if (s == "tanh") return Activation::kTanh;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

std::vector<TensorSpec> Architecture::layout() const {
  if (data_dim < 1 || embed_dim < 2 || embed_dim % 2 != 0 || num_classes < 0) {
    throw std::invalid_argument("invalid denoiser architecture");
  }
  std::vector<TensorSpec> specs;
  specs.push_back({"label_embed", {label_rows(), embed_dim}, true});
  if (w_conditioning) {
    specs.push_back({"w_proj", {embed_dim}, true});
    specs.push_back({"label_frozen", {label_rows(), embed_dim}, false});
  }
  int in = input_dim();
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    if (hidden[l] < 1) throw std::invalid_argument("hidden width must be positive");
    const std::string p = "fc" + std::to_string(l);
    specs.push_back({p + ".weight", {hidden[l], in}, true});
    specs.push_back({p + ".bias", {hidden[l]}, true});
    in = hidden[l];
  }
  specs.push_back({"out.weight", {data_dim, in}, true});
  specs.push_back({"out.bias", {data_dim}, true});
  return specs;
}

nlohmann::json Architecture::to_json() const {
  return {{"data_dim", data_dim},
          {"hidden", hidden},
          {"activation", to_string(activation)},
          {"embed_dim", embed_dim},
          {"max_period", max_period},
          {"time_scale", time_scale},
          {"num_classes", num_classes},
          {"w_conditioning", w_conditioning}};
}

Architecture Architecture::from_json(const nlohmann::json& j) {
  Architecture a;
  a.data_dim = j.at("data_dim").get<int>();
  a.hidden = j.at("hidden").get<std::vector<int>>();
  a.activation = activation_from_string(j.at("activation").get<std::string>());
  a.embed_dim = j.at("embed_dim").get<int>();
  a.max_period = j.at("max_period").get<double>();
  a.time_scale = j.at("time_scale").get<double>();
  a.num_classes = j.at("num_classes").get<int>();
  a.w_conditioning = j.at("w_conditioning").get<bool>();
  return a;
}

void DenoiserBatch::push_back(const Point& xi, double ti, const Label& ci, double wi) {
  x.push_back(xi);
  t_norm.push_back(ti);
  labels.push_back(ci);
  w.push_back(wi);
}

void DenoiserBatch::reserve(std::size_t n) {
  x.reserve(n);
  t_norm.reserve(n);
  labels.reserve(n);
  w.reserve(n);
}

std::vector<double> sinusoidal_embedding(double t_norm, int dim, double max_period,
                                         double time_scale) {
  const int half = dim / 2;
  std::vector<double> emb(dim);
  const double t = t_norm * time_scale;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(max_period) * i / half);
    emb[i] = std::cos(t * freq);
    emb[half + i] = std::sin(t * freq);
  }
  return emb;
}

Denoiser::Denoiser(Architecture arch, std::uint64_t seed)
    : arch_(std::move(arch)), params_(arch_.layout()) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> label_init(0.0f, 0.5f);
  for (float& v : params_.tensor("label_embed")) v = label_init(rng);
  if (arch_.w_conditioning) refreeze_label_modulation();
  int in = arch_.input_dim();
  for (std::size_t l = 0; l <= arch_.hidden.size(); ++l) {
    const bool last = l == arch_.hidden.size();
    const std::string p = last ? "out" : "fc" + std::to_string(l);
    const float bound = 1.0f / std::sqrt(static_cast<float>(in));
    std::uniform_real_distribution<float> u(-bound, bound);
    for (float& v : params_.tensor(p + ".weight")) v = u(rng);
    for (float& v : params_.tensor(p + ".bias")) v = u(rng);
    if (!last) in = arch_.hidden[l];
  }
}

Denoiser::Denoiser(Architecture arch, ParamVector params, bool frozen)
    : arch_(std::move(arch)), params_(std::move(params)), frozen_(frozen) {
  if (params_.layout() != arch_.layout()) {
    throw std::invalid_argument("parameter layout does not match architecture");
  }
  if (!params_.all_finite()) throw std::invalid_argument("non-finite parameter values");
}

ParamVector& Denoiser::mutable_params() {
  if (frozen_) throw std::logic_error("attempt to modify a frozen denoiser snapshot");
  return params_;
}

Point Denoiser::forward(const Point& x, double t_norm, const Label& c, double w) const {
  DenoiserBatch batch;
  batch.push_back(x, t_norm, c, w);
  return forward(batch).front();
}

std::vector<Point> Denoiser::forward(const DenoiserBatch& batch) const {
  const Graph<float> g(arch_, params_.values(), batch);
  return g.output_points();
}

void Denoiser::reset_label_embeddings(int num_classes, std::uint64_t seed) {
  if (frozen_) throw std::logic_error("attempt to modify a frozen denoiser snapshot");
  if (num_classes < 0) throw std::invalid_argument("num_classes must be non-negative");
  const int e = arch_.embed_dim;
  const auto old_label = params_.tensor("label_embed");
  const std::vector<float> null_row(old_label.end() - e, old_label.end());

  Architecture next = arch_;
  next.num_classes = num_classes;
  ParamVector fresh(next.layout());
  for (const auto& spec : params_.layout()) {
    if (spec.name == "label_embed" || spec.name == "label_frozen") continue;
    const auto src = params_.tensor(spec.name);
    std::copy(src.begin(), src.end(), fresh.tensor(spec.name).begin());
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> init(0.0f, 0.5f);
  auto label = fresh.tensor("label_embed");
  for (std::size_t i = 0; i < std::size_t(num_classes) * e; ++i) label[i] = init(rng);
  std::copy(null_row.begin(), null_row.end(), label.end() - e);
  arch_ = next;
  params_ = std::move(fresh);
  if (arch_.w_conditioning) refreeze_label_modulation();
}

void Denoiser::enable_w_conditioning() {
  if (frozen_) throw std::logic_error("attempt to modify a frozen denoiser snapshot");
  if (arch_.w_conditioning) return;
  Architecture next = arch_;
  next.w_conditioning = true;
  ParamVector fresh(next.layout());
  for (const auto& spec : params_.layout()) {
    const auto src = params_.tensor(spec.name);
    std::copy(src.begin(), src.end(), fresh.tensor(spec.name).begin());
  }
  arch_ = next;
  params_ = std::move(fresh);
  refreeze_label_modulation();
}

void Denoiser::refreeze_label_modulation() {
  if (frozen_) throw std::logic_error("attempt to modify a frozen denoiser snapshot");
  if (!arch_.w_conditioning) return;
  const auto src = params_.tensor("label_embed");
  std::copy(src.begin(), src.end(), params_.tensor("label_frozen").begin());
}

Denoiser snapshot_frozen(const Denoiser& model) {
  return Denoiser(model.arch(), model.params(), /*frozen=*/true);
}

// Owns copies of the architecture and parameters so the pass stays valid if
// the model is updated or destroyed before backward().
struct TrainingPass::Impl {
  Impl(const Denoiser& m, const DenoiserBatch& b)
      : arch(m.arch()), layout(m.params().layout()),
        params(m.params().values().begin(), m.params().values().end()),
        graph(arch, params, b), out(graph.output_points()) {}
  Architecture arch;
  std::vector<TensorSpec> layout;
  std::vector<float> params;
  Graph<float> graph;
  std::vector<Point> out;
};

TrainingPass::TrainingPass(const Denoiser& model, const DenoiserBatch& batch)
    : impl_(std::make_unique<Impl>(model, batch)) {}
TrainingPass::~TrainingPass() = default;
TrainingPass::TrainingPass(TrainingPass&&) noexcept = default;
TrainingPass& TrainingPass::operator=(TrainingPass&&) noexcept = default;

const std::vector<Point>& TrainingPass::output() const { return impl_->out; }

LossGrad TrainingPass::backward(std::span<const Point> target) const {
  LossGrad r{0.0, ParamVector(impl_->layout)};
  r.loss = impl_->graph.backward(target, r.grad.values());
  return r;
}

LossGrad loss_and_grad(const Denoiser& model, const DenoiserBatch& batch,
                       std::span<const Point> target) {
  if (target.size() != batch.size()) {
    throw std::invalid_argument("target length does not match batch");
  }
  return TrainingPass(model, batch).backward(target);
}

double evaluate_f64(const Architecture& arch, std::span<const double> params,
                    const DenoiserBatch& batch, std::span<const Point> target,
                    std::span<double> grad) {
  const Graph<double> g(arch, params, batch);
  return g.backward(target, grad);
}

OptimState::OptimState(const ParamVector& params, AdamConfig cfg)
    : first_moment(params.size(), 0.0f), second_moment(params.size(), 0.0f), config(cfg) {}

bool adam_step(OptimState& opt, ParamVector& params, const ParamVector& grad) {
  if (!params.congruent(grad) || opt.first_moment.size() != params.size() ||
      opt.second_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state, params and grad are not congruent");
  }
  if (!grad.all_finite()) {
    opt.warnings.push_back("non-finite gradient at optimizer step " +
                           std::to_string(opt.step_count + 1) + "; update skipped");
    return false;
  }
  const auto& c = opt.config;
  opt.step_count += 1;
  const double t = static_cast<double>(opt.step_count);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);

  auto p = params.values();
  const auto g = grad.values();
  std::size_t off = 0;
  for (const auto& spec : params.layout()) {
    const std::size_t end = off + spec.size();
    if (spec.trainable) {
      for (std::size_t i = off; i < end; ++i) {
        const double gi = g[i];
        const double m = c.beta1 * opt.first_moment[i] + (1.0 - c.beta1) * gi;
        const double v = c.beta2 * opt.second_moment[i] + (1.0 - c.beta2) * gi * gi;
        opt.first_moment[i] = static_cast<float>(m);
        opt.second_moment[i] = static_cast<float>(v);
        const double update = c.lr * (m / bc1) / (std::sqrt(v / bc2) + c.eps);
        p[i] = static_cast<float>(p[i] - update);
      }
    }
    off = end;
  }
  return true;
}

std::string encode_checkpoint(const Denoiser& model) {
  nlohmann::json layout = nlohmann::json::array();
  for (const auto& s : model.params().layout()) {
    layout.push_back({{"name", s.name}, {"shape", s.shape}, {"trainable", s.trainable}});
  }
  const nlohmann::json desc = {{"format_version", kFormatVersion},
                               {"arch", model.arch().to_json()},
                               {"frozen", model.frozen()},
                               {"layout", layout}};
  const std::string text = desc.dump();
  const auto len = static_cast<std::uint32_t>(text.size());

  std::string out(kMagic, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  out += text;
  for (float v : model.params().values()) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  return out;
}

Denoiser decode_checkpoint(std::string_view bytes) {
  auto byte = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i])); };
  auto u32 = [&](std::size_t i) {
    return byte(i) | (byte(i + 1) << 8) | (byte(i + 2) << 16) | (byte(i + 3) << 24);
  };
  if (bytes.size() < 8 || bytes.substr(0, 4) != std::string_view(kMagic, 4)) {
    throw std::runtime_error("not a DGF1 checkpoint");
  }
  const std::uint32_t len = u32(4);
  if (bytes.size() < 8 + std::size_t(len)) throw std::runtime_error("truncated checkpoint header");
  const auto desc = nlohmann::json::parse(bytes.substr(8, len));
  if (desc.at("format_version").get<int>() != kFormatVersion) {
    throw std::runtime_error("unsupported checkpoint version");
  }
  const Architecture arch = Architecture::from_json(desc.at("arch"));
  std::vector<TensorSpec> layout;
  for (const auto& s : desc.at("layout")) {
    layout.push_back({s.at("name").get<std::string>(), s.at("shape").get<std::vector<int>>(),
                      s.at("trainable").get<bool>()});
  }
  if (layout != arch.layout()) throw std::runtime_error("checkpoint layout disagrees with arch");
  ParamVector params(layout);
  const std::size_t base = 8 + std::size_t(len);
  if (bytes.size() != base + params.size() * 4) {
    throw std::runtime_error("checkpoint payload has wrong length");
  }
  auto values = params.values();
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = std::bit_cast<float>(u32(base + 4 * i));
  return Denoiser(arch, std::move(params), desc.at("frozen").get<bool>());
}

void save_checkpoint(const std::filesystem::path& path, const Denoiser& model) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(model);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Denoiser load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace dogfit::nn
