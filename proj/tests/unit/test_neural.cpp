#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "dogfit/neural.hpp"

namespace dogfit::nn {
namespace {

Architecture small_arch(bool w_cond = false, Activation act = Activation::kSilu) {
  Architecture a;
  a.hidden = {24, 24};
  a.embed_dim = 8;
  a.num_classes = 3;
  a.activation = act;
  a.w_conditioning = w_cond;
  return a;
}

DenoiserBatch random_batch(int n, int num_classes, bool vary_w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> label(-1, num_classes - 1);
  DenoiserBatch b;
  for (int i = 0; i < n; ++i) {
    const double x0 = normal(rng);
    const double x1 = normal(rng);
    const int c = label(rng);
    b.push_back(Point(x0, x1), unif(rng), c < 0 ? Label{} : Label{c},
                vary_w ? 1.0 + 2.0 * unif(rng) : 1.0);
  }
  return b;
}

std::vector<Point> random_targets(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<Point> t;
  for (int i = 0; i < n; ++i) {
    const double a = normal(rng);
    const double b = normal(rng);
    t.emplace_back(a, b);
  }
  return t;
}

// Independent evaluation of the network written as plain loops over the
// documented layout, in double precision.
Point straight_line_forward(const Denoiser& m, const Point& x, double t_norm, const Label& c,
                            double w) {
  const Architecture& a = m.arch();
  const ParamVector& p = m.params();
  const int e = a.embed_dim;
  const int row = c ? *c : a.num_classes;
  std::vector<double> h(a.data_dim + e);
  h[0] = x.x();
  h[1] = x.y();
  const auto label = p.tensor("label_embed");
  for (int k = 0; k < e / 2; ++k) {
    const double freq = std::exp(-std::log(a.max_period) * k / (e / 2));
    const double arg = t_norm * a.time_scale * freq;
    h[2 + k] = std::cos(arg) + label[row * e + k];
    h[2 + e / 2 + k] = std::sin(arg) + label[row * e + e / 2 + k];
  }
  if (a.w_conditioning) {
    const auto proj = p.tensor("w_proj");
    const auto frozen = p.tensor("label_frozen");
    for (int k = 0; k < e; ++k) h[2 + k] += (w - 1.0) * proj[k] * frozen[row * e + k];
  }
  for (std::size_t l = 0; l <= a.hidden.size(); ++l) {
    const bool last = l == a.hidden.size();
    const std::string name = last ? "out" : "fc" + std::to_string(l);
    const auto W = p.tensor(name + ".weight");
    const auto b = p.tensor(name + ".bias");
    const int out = static_cast<int>(b.size());
    const int in = static_cast<int>(h.size());
    std::vector<double> z(out);
    for (int i = 0; i < out; ++i) {
      double s = b[i];
      for (int j = 0; j < in; ++j) s += static_cast<double>(W[i * in + j]) * h[j];
      if (!last) {
        s = a.activation == Activation::kSilu ? s / (1.0 + std::exp(-s)) : std::tanh(s);
      }
      z[i] = s;
    }
    h = std::move(z);
  }
  return Point(h[0], h[1]);
}

std::vector<double> to_double(const ParamVector& p) {
  return std::vector<double>(p.values().begin(), p.values().end());
}

TEST(ParamVector, LengthIsSumOfShapeProducts) {
  const Architecture a = small_arch(true);
  const ParamVector p(a.layout());
  std::size_t total = 0;
  for (const auto& s : a.layout()) {
    std::size_t prod = 1;
    for (int d : s.shape) prod *= static_cast<std::size_t>(d);
    total += prod;
  }
  EXPECT_EQ(p.size(), total);
  EXPECT_EQ(p.spec("label_embed").shape[0], a.num_classes + 1);
  EXPECT_FALSE(p.spec("label_frozen").trainable);
}

TEST(Denoiser, OutputIndependentOfWWithoutConditioning) {
  const Denoiser m(small_arch(false), 7);
  const Point x(0.1, -0.4);
  EXPECT_EQ(m.forward(x, 0.3, Label{1}, 1.0), m.forward(x, 0.3, Label{1}, 5.0));
}

TEST(Denoiser, ZeroParamsGiveZeroOutput) {
  const Architecture a = small_arch(true);
  const Denoiser m(a, ParamVector(a.layout()));
  const Point y = m.forward(Point(2.0, -3.0), 0.7, Label{2}, 1.7);
  EXPECT_EQ(y, Point::Zero());
}

TEST(Denoiser, MatchesStraightLineReimplementation) {
  for (bool w_cond : {false, true}) {
    Denoiser m(small_arch(w_cond), 42);
    if (w_cond) {
      // Give the modulation path nonzero weights so it is exercised.
      std::mt19937_64 rng(3);
      std::normal_distribution<float> n(0.0f, 0.3f);
      for (float& v : m.mutable_params().tensor("w_proj")) v = n(rng);
    }
    const Point x(0.3, -0.7);
    for (const Label& c : {Label{}, Label{0}, Label{2}}) {
      const Point got = m.forward(x, 0.5, c, 1.6);
      const Point ref = straight_line_forward(m, x, 0.5, c, 1.6);
      EXPECT_NEAR(got.x(), ref.x(), 1e-5);
      EXPECT_NEAR(got.y(), ref.y(), 1e-5);
    }
  }
}

TEST(Denoiser, BatchForwardMatchesSinglePoint) {
  const Denoiser m(small_arch(true), 5);
  const DenoiserBatch b = random_batch(9, 3, true, 11);
  const auto out = m.forward(b);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const Point one = m.forward(b.x[i], b.t_norm[i], b.labels[i], b.w[i]);
    EXPECT_NEAR((out[i] - one).norm(), 0.0, 1e-6);
  }
}

TEST(Denoiser, RejectsInvalidInputs) {
  const Denoiser plain(small_arch(false), 1);
  const Denoiser cond(small_arch(true), 1);
  const Point nan_x(std::nan(""), 0.0);
  EXPECT_THROW(plain.forward(nan_x, 0.5, Label{}, 1.0), std::invalid_argument);
  EXPECT_THROW(plain.forward(Point(0, 0), 1.5, Label{}, 1.0), std::invalid_argument);
  EXPECT_THROW(plain.forward(Point(0, 0), -0.1, Label{}, 1.0), std::invalid_argument);
  EXPECT_THROW(plain.forward(Point(0, 0), 0.5, Label{3}, 1.0), std::invalid_argument);
  EXPECT_THROW(plain.forward(Point(0, 0), 0.5, Label{-2}, 1.0), std::invalid_argument);
  EXPECT_THROW(cond.forward(Point(0, 0), 0.5, Label{0}, 0.5), std::invalid_argument);
  EXPECT_NO_THROW(cond.forward(Point(0, 0), 0.5, Label{0}, 1.0));
}

TEST(Denoiser, EnablingWConditioningStartsAsIdentity) {
  Denoiser m(small_arch(false), 9);
  const Point before = m.forward(Point(0.2, 0.9), 0.25, Label{1}, 1.0);
  m.enable_w_conditioning();
  EXPECT_TRUE(m.arch().w_conditioning);
  EXPECT_EQ(m.forward(Point(0.2, 0.9), 0.25, Label{1}, 1.0), before);
  EXPECT_EQ(m.forward(Point(0.2, 0.9), 0.25, Label{1}, 3.0), before);
}

TEST(Denoiser, ResetLabelsKeepsNullRowAndResizes) {
  Denoiser m(small_arch(true), 2);
  const int e = m.arch().embed_dim;
  const auto old = m.params().tensor("label_embed");
  const std::vector<float> null_row(old.end() - e, old.end());
  m.reset_label_embeddings(5, 77);
  EXPECT_EQ(m.arch().num_classes, 5);
  const auto now = m.params().tensor("label_embed");
  EXPECT_EQ(now.size(), static_cast<std::size_t>(6 * e));
  EXPECT_TRUE(std::equal(null_row.begin(), null_row.end(), now.end() - e));
  // Modulation table follows the new label table.
  const auto frozen = m.params().tensor("label_frozen");
  EXPECT_TRUE(std::equal(now.begin(), now.end(), frozen.begin()));
}

TEST(LossAndGrad, ZeroAtExactTarget) {
  const Denoiser m(small_arch(true), 3);
  const DenoiserBatch b = random_batch(6, 3, true, 4);
  const auto target = m.forward(b);
  const LossGrad lg = loss_and_grad(m, b, target);
  EXPECT_EQ(lg.loss, 0.0);
  for (float g : lg.grad.values()) EXPECT_EQ(g, 0.0f);
}

TEST(LossAndGrad, RejectsShapeMismatch) {
  const Denoiser m(small_arch(), 3);
  const DenoiserBatch b = random_batch(4, 3, false, 4);
  const auto target = random_targets(3, 1);
  EXPECT_THROW(loss_and_grad(m, b, target), std::invalid_argument);
  EXPECT_THROW(loss_and_grad(m, DenoiserBatch{}, {}), std::invalid_argument);
}

// One hidden unit, batch of one: every gradient written out by hand.
TEST(LossAndGrad, MatchesHandDerivedChainRule) {
  Architecture a;
  a.hidden = {1};
  a.embed_dim = 2;
  a.num_classes = 0;
  Denoiser m(a, 0);
  auto& p = m.mutable_params();
  const std::vector<float> label = {0.2f, -0.1f};
  const std::vector<float> w1 = {0.5f, -0.3f, 0.8f, 0.1f};
  const float b1 = 0.05f;
  const std::vector<float> w2 = {1.2f, -0.7f};
  const std::vector<float> b2 = {0.1f, 0.2f};
  std::copy(label.begin(), label.end(), p.tensor("label_embed").begin());
  std::copy(w1.begin(), w1.end(), p.tensor("fc0.weight").begin());
  p.tensor("fc0.bias")[0] = b1;
  std::copy(w2.begin(), w2.end(), p.tensor("out.weight").begin());
  std::copy(b2.begin(), b2.end(), p.tensor("out.bias").begin());

  const double x0 = 0.4, x1 = -1.1, t = 0.0;  // t = 0: cos(0) = 1, sin(0) = 0
  const double target0 = 0.3, target1 = -0.2;
  const double h[4] = {x0, x1, 1.0 + label[0], 0.0 + label[1]};
  double z = b1;
  for (int j = 0; j < 4; ++j) z += w1[j] * h[j];
  const double sig = 1.0 / (1.0 + std::exp(-z));
  const double act = z * sig;
  const double dact = sig * (1.0 + z * (1.0 - sig));
  const double o0 = w2[0] * act + b2[0], o1 = w2[1] * act + b2[1];
  const double g0 = 2.0 * (o0 - target0), g1 = 2.0 * (o1 - target1);
  const double loss = (o0 - target0) * (o0 - target0) + (o1 - target1) * (o1 - target1);
  const double dz = (w2[0] * g0 + w2[1] * g1) * dact;

  DenoiserBatch b;
  b.push_back(Point(x0, x1), t, Label{}, 1.0);
  const std::vector<Point> target = {Point(target0, target1)};
  const LossGrad lg = loss_and_grad(m, b, target);
  EXPECT_NEAR(lg.loss, loss, 1e-6);
  const auto gw2 = lg.grad.tensor("out.weight");
  EXPECT_NEAR(gw2[0], g0 * act, 1e-5);
  EXPECT_NEAR(gw2[1], g1 * act, 1e-5);
  EXPECT_NEAR(lg.grad.tensor("out.bias")[0], g0, 1e-5);
  EXPECT_NEAR(lg.grad.tensor("out.bias")[1], g1, 1e-5);
  const auto gw1 = lg.grad.tensor("fc0.weight");
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(gw1[j], dz * h[j], 1e-5);
  EXPECT_NEAR(lg.grad.tensor("fc0.bias")[0], dz, 1e-5);
  const auto gl = lg.grad.tensor("label_embed");
  EXPECT_NEAR(gl[0], dz * w1[2], 1e-5);
  EXPECT_NEAR(gl[1], dz * w1[3], 1e-5);
}

struct FdCase {
  bool w_cond;
  Activation act;
};

class FiniteDifference : public ::testing::TestWithParam<FdCase> {};

TEST_P(FiniteDifference, AnalyticMatchesCentralDifferences) {
  const FdCase fc = GetParam();
  Denoiser m(small_arch(fc.w_cond, fc.act), 21);
  if (fc.w_cond) {
    std::mt19937_64 rng(8);
    std::normal_distribution<float> n(0.0f, 0.3f);
    for (float& v : m.mutable_params().tensor("w_proj")) v = n(rng);
  }
  ASSERT_LE(m.params().size(), 5000u);
  const DenoiserBatch b = random_batch(8, 3, fc.w_cond, 13);
  const auto target = random_targets(8, 14);
  std::vector<double> theta = to_double(m.params());
  std::vector<double> grad(theta.size());
  evaluate_f64(m.arch(), theta, b, target, grad);

  std::vector<std::size_t> trainable;
  for (const auto& spec : m.params().layout()) {
    if (!spec.trainable) continue;
    const std::size_t off = m.params().offset(spec.name);
    for (std::size_t i = 0; i < spec.size(); ++i) trainable.push_back(off + i);
  }
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> pick(0, trainable.size() - 1);
  double worst = 0.0;
  for (int probe = 0; probe < 100; ++probe) {
    const std::size_t i = trainable[pick(rng)];
    const double h = 1e-4 * (1.0 + std::abs(theta[i]));
    const double saved = theta[i];
    theta[i] = saved + h;
    const double lp = evaluate_f64(m.arch(), theta, b, target, {});
    theta[i] = saved - h;
    const double lm = evaluate_f64(m.arch(), theta, b, target, {});
    theta[i] = saved;
    const double fd = (lp - lm) / (2.0 * h);
    const double rel = std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
    worst = std::max(worst, rel);
  }
  EXPECT_LT(worst, 1e-4);

  // The float32 training path agrees with the float64 reference.
  const LossGrad lg = loss_and_grad(m, b, target);
  double max_abs = 0.0, max_diff = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    max_abs = std::max(max_abs, std::abs(grad[i]));
    max_diff = std::max(max_diff, std::abs(grad[i] - lg.grad.values()[i]));
  }
  EXPECT_LT(max_diff, 1e-4 * max_abs);
}

INSTANTIATE_TEST_SUITE_P(Variants, FiniteDifference,
                         ::testing::Values(FdCase{false, Activation::kSilu},
                                           FdCase{true, Activation::kSilu},
                                           FdCase{false, Activation::kTanh},
                                           FdCase{true, Activation::kTanh}));

TEST(LossAndGrad, FrozenModulationTableGetsNoGradient) {
  Denoiser m(small_arch(true), 4);
  for (float& v : m.mutable_params().tensor("w_proj")) v = 0.5f;
  const DenoiserBatch b = random_batch(8, 3, true, 5);
  const LossGrad lg = loss_and_grad(m, b, random_targets(8, 6));
  for (float g : lg.grad.tensor("label_frozen")) EXPECT_EQ(g, 0.0f);
  double wsum = 0.0;
  for (float g : lg.grad.tensor("w_proj")) wsum += std::abs(g);
  EXPECT_GT(wsum, 0.0);
}

TEST(TrainingPass, BackwardMatchesLossAndGrad) {
  const Denoiser m(small_arch(true), 6);
  const DenoiserBatch b = random_batch(5, 3, true, 7);
  const auto target = random_targets(5, 8);
  const TrainingPass pass(m, b);
  EXPECT_EQ(pass.output(), m.forward(b));
  const LossGrad a = pass.backward(target);
  const LossGrad c = loss_and_grad(m, b, target);
  EXPECT_EQ(a.loss, c.loss);
  EXPECT_EQ(a.grad, c.grad);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  Denoiser m(small_arch(), 1);
  const ParamVector before = m.params();
  OptimState opt(m.params(), AdamConfig{});
  ParamVector zero(m.params().layout());
  ASSERT_TRUE(adam_step(opt, m.mutable_params(), zero));
  EXPECT_EQ(m.params(), before);
  EXPECT_EQ(opt.step_count, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamVector p({TensorSpec{"x", {1}, true}});
  p.values()[0] = 1.0f;
  ParamVector g(p.layout());
  g.values()[0] = 1.0f;
  OptimState opt(p, AdamConfig{0.1});
  ASSERT_TRUE(adam_step(opt, p, g));
  // m_hat = 1, v_hat = 1: step = lr * 1 / (1 + eps).
  EXPECT_NEAR(p.values()[0], 0.9, 1e-6);
}

TEST(Adam, TwoStepsDifferFromOneDoubledStep) {
  ParamVector p1({TensorSpec{"x", {1}, true}});
  p1.values()[0] = 1.0f;
  ParamVector p2 = p1;
  ParamVector g(p1.layout());
  g.values()[0] = 1.0f;
  ParamVector g2(p1.layout());
  g2.values()[0] = 2.0f;
  OptimState a(p1, AdamConfig{0.1});
  OptimState b(p2, AdamConfig{0.1});
  adam_step(a, p1, g);
  adam_step(a, p1, g);
  adam_step(b, p2, g2);
  EXPECT_NE(p1.values()[0], p2.values()[0]);
  // Sequential semantics: two unit steps move about 2 lr, the doubled step about 1 lr.
  EXPECT_NEAR(p1.values()[0], 0.8, 1e-5);
  EXPECT_NEAR(p2.values()[0], 0.9, 1e-5);
}

TEST(Adam, NonFiniteGradientIsSkippedWithWarning) {
  Denoiser m(small_arch(), 1);
  const ParamVector before = m.params();
  OptimState opt(m.params(), AdamConfig{});
  ParamVector g(m.params().layout());
  g.values()[3] = std::numeric_limits<float>::infinity();
  EXPECT_FALSE(adam_step(opt, m.mutable_params(), g));
  EXPECT_EQ(m.params(), before);
  EXPECT_EQ(opt.step_count, 0);
  EXPECT_EQ(opt.warnings.size(), 1u);
}

TEST(Adam, NonTrainableTensorsStayFixed) {
  Denoiser m(small_arch(true), 1);
  const auto frozen_before = std::vector<float>(m.params().tensor("label_frozen").begin(),
                                                m.params().tensor("label_frozen").end());
  OptimState opt(m.params(), AdamConfig{0.1});
  ParamVector g(m.params().layout());
  for (float& v : g.values()) v = 1.0f;
  adam_step(opt, m.mutable_params(), g);
  const auto after = m.params().tensor("label_frozen");
  EXPECT_TRUE(std::equal(frozen_before.begin(), frozen_before.end(), after.begin()));
}

void train_steps(Denoiser& m, OptimState& opt, int steps, std::uint64_t seed) {
  for (int s = 0; s < steps; ++s) {
    const DenoiserBatch b = random_batch(16, 3, m.arch().w_conditioning, seed + s);
    const LossGrad lg = loss_and_grad(m, b, random_targets(16, seed + 1000 + s));
    adam_step(opt, m.mutable_params(), lg.grad);
  }
}

TEST(Snapshot, UnaffectedByTrainingTheOriginal) {
  Denoiser m(small_arch(), 12);
  const Denoiser snap = snapshot_frozen(m);
  EXPECT_TRUE(snap.frozen());
  const Point x(0.5, 0.5);
  EXPECT_EQ(snap.forward(x, 0.4, Label{1}, 1.0), m.forward(x, 0.4, Label{1}, 1.0));
  const Point before = snap.forward(x, 0.4, Label{1}, 1.0);
  OptimState opt(m.params(), AdamConfig{1e-2});
  train_steps(m, opt, 100, 1);
  EXPECT_EQ(snap.forward(x, 0.4, Label{1}, 1.0), before);
  EXPECT_NE(m.forward(x, 0.4, Label{1}, 1.0), before);
  const Denoiser snap2 = snapshot_frozen(snap);
  EXPECT_EQ(snap2.params(), snap.params());
  EXPECT_EQ(snap2.arch(), snap.arch());
  Denoiser copy = snap;
  EXPECT_THROW(copy.mutable_params(), std::logic_error);
}

TEST(Determinism, SameSeedSameTrajectory) {
  Denoiser a(small_arch(true), 17), b(small_arch(true), 17);
  EXPECT_EQ(a.params(), b.params());
  OptimState oa(a.params(), AdamConfig{}), ob(b.params(), AdamConfig{});
  train_steps(a, oa, 20, 3);
  train_steps(b, ob, 20, 3);
  EXPECT_EQ(a.params(), b.params());
  EXPECT_EQ(a.params().checksum(), b.params().checksum());
  EXPECT_NE(Denoiser(small_arch(true), 18).params(), Denoiser(small_arch(true), 17).params());
}

TEST(Checkpoint, RoundTripIsExact) {
  Denoiser m(small_arch(true), 31);
  const std::string bytes = encode_checkpoint(m);
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(bytes.substr(0, 4), "DGF1");
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= std::uint32_t(static_cast<unsigned char>(bytes[4 + i])) << (8 * i);
  EXPECT_EQ(bytes.size(), 8u + len + 4u * m.params().size());
  const auto desc = nlohmann::json::parse(bytes.substr(8, len));
  EXPECT_EQ(Architecture::from_json(desc.at("arch")), m.arch());
  // First value sits right after the descriptor, little-endian.
  float first = 0.0f;
  std::memcpy(&first, bytes.data() + 8 + len, 4);
  EXPECT_EQ(first, m.params().values()[0]);

  const Denoiser back = decode_checkpoint(bytes);
  EXPECT_EQ(back.arch(), m.arch());
  EXPECT_EQ(back.params(), m.params());
}

TEST(Checkpoint, RejectsCorruptInput) {
  const Denoiser m(small_arch(), 2);
  std::string bytes = encode_checkpoint(m);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_ANY_THROW(decode_checkpoint(bad_magic));
  EXPECT_ANY_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)));
  EXPECT_ANY_THROW(decode_checkpoint(""));
}

TEST(SinusoidalEmbedding, CosThenSinHalves) {
  const auto e = sinusoidal_embedding(0.0, 8, 10000.0, 1000.0);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(e[i], 1.0);
    EXPECT_EQ(e[4 + i], 0.0);
  }
  const auto f = sinusoidal_embedding(0.5, 4, 10000.0, 1000.0);
  EXPECT_NEAR(f[0], std::cos(500.0), 1e-12);
  EXPECT_NEAR(f[3], std::sin(500.0 * std::exp(-std::log(10000.0) / 2)), 1e-12);
}

}  // namespace
}  // namespace dogfit::nn
