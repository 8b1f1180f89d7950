#include "dogfit/domains.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace dogfit {

std::string to_string(DomainKind k) {
  switch (k) {
    case DomainKind::kRingShift: return "ring_shift";
    case DomainKind::kSubsetOnly: return "subset_only";
    case DomainKind::kUnlabeledFacesAnalogue: return "unlabeled_faces_analogue";
  }
  return "unknown";
}

DomainKind domain_kind_from_string(std::string_view s) {
  for (DomainKind k : {DomainKind::kRingShift, DomainKind::kSubsetOnly,
                       DomainKind::kUnlabeledFacesAnalogue}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown domain kind '" + std::string(s) + "'");
}

void DomainSpec::validate() const {
  if (num_source_components < 2) throw std::invalid_argument("need at least 2 source components");
  if (num_target_components < 1 || num_target_components > num_source_components) {
    throw std::invalid_argument("num_target_components must lie in [1, num_source_components]");
  }
  if (!(spacing > 0.0)) throw std::invalid_argument("ring spacing must be positive");
  if (!(component_cov > 0.0)) throw std::invalid_argument("component_cov must be positive");
  if (!shift.allFinite()) throw std::invalid_argument("shift must be finite");
  if (n_target < 1 || n_target >= n_source) {
    throw std::invalid_argument("domain sizes need 1 <= n_target < n_source");
  }
}

std::vector<int> target_component_indices(const DomainSpec& spec) {
  std::vector<int> idx(spec.num_target_components);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

DomainPair build_pair(const DomainSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int k_src = spec.num_source_components;
  const double radius = spec.spacing / (2.0 * std::sin(std::numbers::pi / k_src));
  const Mat2 cov = spec.component_cov * Mat2::Identity();

  DomainPair pair;
  GaussianMixture& src = pair.source.mixture;
  for (int k = 0; k < k_src; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / k_src;
    src.weights.push_back(1.0 / k_src);
    src.means.push_back(radius * Point(std::cos(angle), std::sin(angle)));
    src.covariances.push_back(cov);
    src.labels.push_back(k);
  }

  pair.chosen = target_component_indices(spec);
  const Point shift = spec.kind == DomainKind::kSubsetOnly ? Point::Zero() : spec.shift;
  GaussianMixture& tgt = pair.target.mixture;
  const int k_tgt = spec.num_target_components;
  for (int j = 0; j < k_tgt; ++j) {
    const int k = pair.chosen[j];
    tgt.weights.push_back(1.0 / k_tgt);
    tgt.means.push_back(src.means[k] + shift);
    tgt.covariances.push_back(src.covariances[k]);
    if (spec.target_labeled()) tgt.labels.push_back(j);
  }

  pair.source.data = sample_mixture(src, spec.n_source, seed);
  pair.target.data = sample_mixture(tgt, spec.n_target, seed ^ 0x9e3779b97f4a7c15ULL);
  return pair;
}

SampleBatch minibatch(const SampleBatch& dataset, int batch_size, std::mt19937_64& rng,
                      bool with_replacement) {
  if (dataset.size() == 0) throw std::invalid_argument("minibatch from an empty dataset");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  SampleBatch out;
  out.seed = dataset.seed;
  out.points.reserve(batch_size);
  out.labels.reserve(batch_size);
  if (with_replacement) {
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
    for (int i = 0; i < batch_size; ++i) {
      const std::size_t j = pick(rng);
      out.points.push_back(dataset.points[j]);
      out.labels.push_back(dataset.labels[j]);
    }
    return out;
  }
  if (static_cast<std::size_t>(batch_size) > dataset.size()) {
    throw std::invalid_argument("batch larger than dataset without replacement");
  }
  std::vector<std::size_t> perm(dataset.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (int i = 0; i < batch_size; ++i) {
    out.points.push_back(dataset.points[perm[i]]);
    out.labels.push_back(dataset.labels[perm[i]]);
  }
  return out;
}

void write_csv(std::ostream& os, const SampleBatch& batch) {
  batch.validate();
  os << "x,y,label\n";
  os.precision(17);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    os << batch.points[i][0] << ',' << batch.points[i][1] << ',';
    if (batch.labels[i]) os << *batch.labels[i];
    os << '\n';
  }
}

SampleBatch read_csv(std::istream& is) {
  SampleBatch batch;
  std::string line;
  if (!std::getline(is, line) || line.rfind("x,y,label", 0) != 0) {
    throw std::runtime_error("sample CSV must start with header x,y,label");
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string fx, fy, fl;
    std::getline(ss, fx, ',');
    std::getline(ss, fy, ',');
    std::getline(ss, fl);
    batch.points.emplace_back(std::stod(fx), std::stod(fy));
    batch.labels.push_back(fl.empty() ? Label{} : Label(std::stoi(fl)));
  }
  return batch;
}

}  // namespace dogfit
