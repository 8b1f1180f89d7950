#include "dogfit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/LU>

namespace dogfit {

GaussianFit fit_gaussian(std::span<const Point> pts) {
  if (pts.size() < 3) throw std::invalid_argument("Gaussian fit needs at least dim + 1 points");
  Point mean = Point::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Mat2 cov = Mat2::Zero();
  for (const auto& p : pts) {
    const Point d = p - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(pts.size() - 1);
  return {mean, cov};
}

namespace {

// Adds a ridge to covariances that are not safely positive definite.
Mat2 conditioned(const Mat2& c, bool& flagged) {
  if (c.determinant() > 1e-12 && c.trace() > 0.0) return c;
  flagged = true;
  return c + 1e-8 * Mat2::Identity();
}

}  // namespace

double frechet_between(const GaussianFit& a, const GaussianFit& b, bool* regularized) {
  bool flagged = false;
  const Mat2 ca = conditioned(a.cov, flagged);
  const Mat2 cb = conditioned(b.cov, flagged);
  if (regularized) *regularized = flagged;
  // tr sqrt(M) for a 2x2 M with non-negative real spectrum: sqrt(tr M + 2 sqrt(det M)).
  const Mat2 m = ca * cb;
  const double det = std::max(m.determinant(), 0.0);
  const double tr_sqrt = std::sqrt(std::max(m.trace() + 2.0 * std::sqrt(det), 0.0));
  const double d = (a.mean - b.mean).squaredNorm() + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
  return std::max(d, 0.0);
}

double frechet_gaussian(std::span<const Point> a, std::span<const Point> b, bool* regularized) {
  return frechet_between(fit_gaussian(a), fit_gaussian(b), regularized);
}

double median_bandwidth(std::span<const Point> a, std::span<const Point> b) {
  constexpr std::size_t kMaxPooled = 2000;
  std::vector<Point> pooled;
  const std::size_t total = a.size() + b.size();
  const std::size_t stride = std::max<std::size_t>(1, (total + kMaxPooled - 1) / kMaxPooled);
  for (std::size_t i = 0; i < total; i += stride) pooled.push_back(i < a.size() ? a[i] : b[i - a.size()]);
  std::vector<double> d;
  d.reserve(pooled.size() * (pooled.size() - 1) / 2);
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    for (std::size_t j = i + 1; j < pooled.size(); ++j) d.push_back((pooled[i] - pooled[j]).norm());
  }
  if (d.empty()) return 1.0;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0.0 ? *mid : 1.0;
}

namespace {

double mean_kernel(std::span<const Point> x, std::span<const Point> y, double inv_two_h2) {
  double sum = 0.0;
  for (const auto& p : x) {
    double row = 0.0;
    for (const auto& q : y) row += std::exp(-(p - q).squaredNorm() * inv_two_h2);
    sum += row;
  }
  return sum / (static_cast<double>(x.size()) * static_cast<double>(y.size()));
}

}  // namespace

double mmd_rbf(std::span<const Point> a, std::span<const Point> b, double bandwidth) {
  if (a.empty() || b.empty()) throw std::invalid_argument("mmd needs nonempty sets");
  const double h = bandwidth > 0.0 ? bandwidth : median_bandwidth(a, b);
  const double inv = 1.0 / (2.0 * h * h);
  return mean_kernel(a, a, inv) + mean_kernel(b, b, inv) - 2.0 * mean_kernel(a, b, inv);
}

namespace {

// Squared distance to the k-th nearest other member of `pts`.
std::vector<double> knn_radii_sq(std::span<const Point> pts, int k) {
  std::vector<double> radii(pts.size());
  std::vector<double> best;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    best.assign(k, std::numeric_limits<double>::infinity());
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (j == i) continue;
      const double d = (pts[i] - pts[j]).squaredNorm();
      if (d < best.back()) {
        auto pos = std::upper_bound(best.begin(), best.end(), d);
        best.insert(pos, d);
        best.pop_back();
      }
    }
    radii[i] = best.back();
  }
  return radii;
}

// Fraction of `probe` inside the union of balls around `manifold`.
double coverage(std::span<const Point> manifold, const std::vector<double>& radii_sq,
                std::span<const Point> probe) {
  std::size_t inside = 0;
  for (const auto& q : probe) {
    for (std::size_t i = 0; i < manifold.size(); ++i) {
      if (radii_sq[i] > 0.0 && (q - manifold[i]).squaredNorm() <= radii_sq[i]) {
        ++inside;
        break;
      }
    }
  }
  return static_cast<double>(inside) / static_cast<double>(probe.size());
}

}  // namespace

PrecisionRecall precision_recall_knn(std::span<const Point> real, std::span<const Point> gen,
                                     int k) {
  if (k < 1 || static_cast<std::size_t>(k) >= std::min(real.size(), gen.size())) {
    throw std::invalid_argument("precision/recall needs 1 <= k < min(n_real, n_gen)");
  }
  const auto real_r = knn_radii_sq(real, k);
  const auto gen_r = knn_radii_sq(gen, k);
  PrecisionRecall pr;
  pr.excluded_real = std::count(real_r.begin(), real_r.end(), 0.0);
  pr.excluded_gen = std::count(gen_r.begin(), gen_r.end(), 0.0);
  pr.precision = coverage(real, real_r, gen);
  pr.recall = coverage(gen, gen_r, real);
  return pr;
}

double target_support_fraction(std::span<const Point> gen, const GaussianMixture& target,
                               double quantile, int reference_n, std::uint64_t seed) {
  if (!(quantile > 0.0 && quantile < 1.0)) throw std::invalid_argument("quantile must lie in (0,1)");
  if (gen.empty()) return 0.0;
  const SampleBatch ref = sample_mixture(target, reference_n, seed);
  std::vector<double> ld(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) ld[i] = log_density(target, ref.points[i]);
  std::sort(ld.begin(), ld.end());
  const auto pos = static_cast<std::size_t>(std::floor(quantile * static_cast<double>(ld.size() - 1)));
  const double threshold = ld[pos];
  std::size_t inside = 0;
  for (const auto& p : gen) {
    if (log_density(target, p) >= threshold) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(gen.size());
}

MetricsReport evaluate(std::span<const Point> real, std::span<const Point> gen,
                       const GaussianMixture& target, const EvalSettings& settings,
                       std::uint64_t seed) {
  MetricsReport r;
  r.n_gen = static_cast<std::int64_t>(gen.size());
  r.n_real = static_cast<std::int64_t>(real.size());
  r.frechet = frechet_gaussian(real, gen, &r.frechet_regularized);
  r.mmd2 = mmd_rbf(real, gen, settings.bandwidth);
  const PrecisionRecall pr = precision_recall_knn(real, gen, settings.k);
  r.precision = pr.precision;
  r.recall = pr.recall;
  r.knn_excluded = pr.excluded_real + pr.excluded_gen;
  r.support_frac =
      target_support_fraction(gen, target, settings.quantile, settings.support_reference_n, seed);
  return r;
}

}  // namespace dogfit
