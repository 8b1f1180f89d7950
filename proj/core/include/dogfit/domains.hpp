#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "dogfit/oracle.hpp"
#include "dogfit/types.hpp"

namespace dogfit {

enum class DomainKind { kRingShift, kSubsetOnly, kUnlabeledFacesAnalogue };

std::string to_string(DomainKind k);
DomainKind domain_kind_from_string(std::string_view s);

/// Source ring of isotropic Gaussians and a target built from a subset of it.
///   ring_shift               subset moved by `shift`, relabeled 0..n-1
///   subset_only              subset unchanged (shift ignored)
///   unlabeled_faces_analogue ring_shift with every target label null
struct DomainSpec {
  DomainKind kind = DomainKind::kRingShift;
  int num_source_components = 8;
  int num_target_components = 3;
  /// Distance between neighbouring ring centres.
  double spacing = 1.0;
  Point shift = Point(0.3 / std::sqrt(2.0), 0.3 / std::sqrt(2.0));
  double component_cov = 0.05;
  int n_source = 50000;
  int n_target = 1500;
  bool labeled = true;

  void validate() const;
  bool target_labeled() const { return labeled && kind != DomainKind::kUnlabeledFacesAnalogue; }
};

struct Domain {
  GaussianMixture mixture;
  SampleBatch data;
};

struct DomainPair {
  Domain source;
  Domain target;
  /// Source component index behind each target component.
  std::vector<int> chosen;
};

/// Source component indices used for the target: adjacent ring components from 0.
std::vector<int> target_component_indices(const DomainSpec& spec);

DomainPair build_pair(const DomainSpec& spec, std::uint64_t seed);

/// Uniform minibatch. With replacement by default; without replacement the
/// batch is the first `batch_size` entries of a random permutation.
SampleBatch minibatch(const SampleBatch& dataset, int batch_size, std::mt19937_64& rng,
                      bool with_replacement = true);

/// CSV with header "x,y,label"; null labels are written as an empty field.
void write_csv(std::ostream& os, const SampleBatch& batch);
SampleBatch read_csv(std::istream& is);

}  // namespace dogfit
