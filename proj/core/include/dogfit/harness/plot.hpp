#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dogfit/harness/experiment.hpp"
#include "dogfit/oracle.hpp"
#include "dogfit/types.hpp"

namespace dogfit::harness {

enum class PlotKind { kScatterOverlay, kTradeoffCurve, kAblationGrid };

std::string to_string(PlotKind k);
PlotKind plot_kind_from_string(std::string_view s);

struct ScatterLayer {
  std::string name;
  std::vector<Point> points;
  /// Empty picks a color from the built-in palette.
  std::string color;
};

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::string color;
};

struct Panel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

/// Generated points over contour lines of the target log-density. Each point
/// is one <circle> element. `density` may be null.
std::string scatter_overlay_svg(const std::vector<ScatterLayer>& layers,
                                const GaussianMixture* density, std::string_view title = "");

/// Line plots laid out left to right.
std::string panels_svg(const std::vector<Panel>& panels);

/// Mean precision and recall over seeds against w, one pair of curves per method.
std::string tradeoff_curve_svg(const std::vector<ResultRow>& rows);

/// `metric` (frechet, mmd2, precision, recall or support_frac) against tau_s
/// and against tau_c, averaged over seeds.
std::string ablation_grid_svg(const std::vector<ResultRow>& rows,
                              std::string_view metric = "recall");

/// Dispatches on kind for run rows; scatter_overlay needs samples and is
/// served by scatter_overlay_svg.
std::string export_plot(PlotKind kind, const std::vector<ResultRow>& rows,
                        std::string_view metric = "recall");

}  // namespace dogfit::harness
