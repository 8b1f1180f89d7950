#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace dogfit {

/// Every domain in this project lives in the plane.
inline constexpr int kDataDim = 2;

using Point = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Class label, or std::nullopt for the null (unconditional) label.
using Label = std::optional<int>;

struct SampleBatch {
  std::vector<Point> points;
  std::vector<Label> labels;
  std::uint64_t seed = 0;

  std::size_t size() const { return points.size(); }
  /// Throws if lengths differ or a point is non-finite.
  void validate() const;
};

/// Raised when a sampler's noise prediction turns non-finite.
class SamplingError : public std::runtime_error {
 public:
  SamplingError(const std::string& what, int step)
      : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

}  // namespace dogfit
