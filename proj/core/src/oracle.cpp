#include "dogfit/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace dogfit {

void GaussianMixture::validate() const {
  if (weights.empty()) throw std::invalid_argument("mixture has no components");
  if (means.size() != weights.size() || covariances.size() != weights.size()) {
    throw std::invalid_argument("mixture weights/means/covariances lengths differ");
  }
  if (!labels.empty() && labels.size() != weights.size()) {
    throw std::invalid_argument("mixture labels length differs from component count");
  }
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("mixture weight is negative or NaN");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("mixture weights do not sum to 1");
  for (const auto& c : covariances) {
    if (std::abs(c(0, 1) - c(1, 0)) > 1e-12 || c(0, 0) <= 0.0 || c.determinant() <= 0.0) {
      throw std::invalid_argument("mixture covariance is not symmetric positive definite");
    }
  }
  for (int l : labels) {
    if (l < 0) throw std::invalid_argument("mixture label must be non-negative");
  }
}

int GaussianMixture::num_classes() const {
  if (labels.empty()) return 0;
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

GaussianMixture diffuse(const GaussianMixture& gm, double alpha_bar) {
  GaussianMixture out = gm;
  const double s = std::sqrt(alpha_bar);
  for (std::size_t k = 0; k < gm.size(); ++k) {
    out.means[k] = s * gm.means[k];
    out.covariances[k] = alpha_bar * gm.covariances[k] + (1.0 - alpha_bar) * Mat2::Identity();
  }
  return out;
}

GaussianMixture restrict_to_label(const GaussianMixture& gm, int label) {
  if (!gm.labeled()) throw std::invalid_argument("conditioning on an unlabeled mixture");
  GaussianMixture out;
  double total = 0.0;
  for (std::size_t k = 0; k < gm.size(); ++k) {
    if (gm.labels[k] != label) continue;
    out.weights.push_back(gm.weights[k]);
    out.means.push_back(gm.means[k]);
    out.covariances.push_back(gm.covariances[k]);
    out.labels.push_back(label);
    total += gm.weights[k];
  }
  if (out.weights.empty() || total <= 0.0) {
    throw std::invalid_argument("no mixture component carries label " + std::to_string(label));
  }
  for (double& w : out.weights) w /= total;
  return out;
}

SampleBatch sample_mixture(const GaussianMixture& gm, int n, std::uint64_t seed) {
  gm.validate();
  if (n < 1) throw std::invalid_argument("sample_mixture needs n >= 1");
  std::mt19937_64 rng(seed);
  std::discrete_distribution<int> pick(gm.weights.begin(), gm.weights.end());
  std::normal_distribution<double> normal;
  std::vector<Mat2> chol(gm.size());
  for (std::size_t k = 0; k < gm.size(); ++k) chol[k] = gm.covariances[k].llt().matrixL();

  SampleBatch batch;
  batch.seed = seed;
  batch.points.reserve(n);
  batch.labels.reserve(n);
  for (int i = 0; i < n; ++i) {
    const int k = pick(rng);
    const double z0 = normal(rng);
    const double z1 = normal(rng);
    batch.points.push_back(gm.means[k] + chol[k] * Point(z0, z1));
    batch.labels.push_back(gm.labeled() ? Label(gm.labels[k]) : std::nullopt);
  }
  return batch;
}

namespace {

double log_gauss(const Point& x, const Point& mean, const Mat2& cov) {
  const Point d = x - mean;
  const double det = cov.determinant();
  const Point sol = cov.inverse() * d;
  return -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * d.dot(sol);
}

std::vector<double> log_terms(const GaussianMixture& gm, const Point& x) {
  std::vector<double> lt(gm.size());
  for (std::size_t k = 0; k < gm.size(); ++k) {
    lt[k] = gm.weights[k] > 0.0
                ? std::log(gm.weights[k]) + log_gauss(x, gm.means[k], gm.covariances[k])
                : -std::numeric_limits<double>::infinity();
  }
  return lt;
}

}  // namespace

std::vector<double> responsibilities(const GaussianMixture& gm, const Point& x) {
  std::vector<double> r = log_terms(gm, x);
  const double mx = *std::max_element(r.begin(), r.end());
  double sum = 0.0;
  for (double& v : r) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : r) v /= sum;
  return r;
}

double log_density(const GaussianMixture& gm, const Point& x) {
  const std::vector<double> lt = log_terms(gm, x);
  const double mx = *std::max_element(lt.begin(), lt.end());
  if (!std::isfinite(mx)) return mx;
  double sum = 0.0;
  for (double v : lt) sum += std::exp(v - mx);
  return mx + std::log(sum);
}

std::vector<int> assign_components(const GaussianMixture& gm, std::span<const Point> points) {
  std::vector<int> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::vector<double> lt = log_terms(gm, points[i]);
    out[i] = static_cast<int>(std::max_element(lt.begin(), lt.end()) - lt.begin());
  }
  return out;
}

Point score(const GaussianMixture& gm, const Point& x) {
  const std::vector<double> r = responsibilities(gm, x);
  Point g = Point::Zero();
  for (std::size_t k = 0; k < gm.size(); ++k) {
    if (r[k] == 0.0) continue;
    g -= r[k] * (gm.covariances[k].inverse() * (x - gm.means[k]));
  }
  return g;
}

Point analytic_eps(const GaussianMixture& gm, const Point& x_t, int t, const NoiseSchedule& sched,
                   const Label& condition) {
  const double ab = sched.alpha_bar(t);
  const GaussianMixture marginal =
      diffuse(condition ? restrict_to_label(gm, *condition) : gm, ab);
  return -sched.sigma(t) * score(marginal, x_t);
}

std::vector<double> label_posterior(const GaussianMixture& gm, const Point& x_t, int t,
                                    const NoiseSchedule& sched) {
  if (!gm.labeled()) throw std::invalid_argument("label posterior of an unlabeled mixture");
  const std::vector<double> r = responsibilities(diffuse(gm, sched.alpha_bar(t)), x_t);
  std::vector<double> post(gm.num_classes(), 0.0);
  for (std::size_t k = 0; k < gm.size(); ++k) post[gm.labels[k]] += r[k];
  return post;
}

EpsFn oracle_eps_fn(const GaussianMixture& gm, const NoiseSchedule& sched) {
  gm.validate();
  return [gm, sched](std::span<const Point> x, int t, std::span<const Label> labels,
                      std::span<Point> out) {
    const double ab = sched.alpha_bar(t);
    const double sigma = sched.sigma(t);
    const GaussianMixture uncond = diffuse(gm, ab);
    std::vector<std::optional<GaussianMixture>> by_label(gm.num_classes());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const Label& c = labels[i];
      if (!c) {
        out[i] = -sigma * score(uncond, x[i]);
        continue;
      }
      if (*c < 0 || *c >= gm.num_classes()) {
        throw std::invalid_argument("oracle asked for unknown label " + std::to_string(*c));
      }
      auto& slot = by_label[*c];
      if (!slot) slot = diffuse(restrict_to_label(gm, *c), ab);
      out[i] = -sigma * score(*slot, x[i]);
    }
  };
}

}  // namespace dogfit
