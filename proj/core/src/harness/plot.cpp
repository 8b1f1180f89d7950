#include "dogfit/harness/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace dogfit::harness {
namespace {

constexpr double kPanelW = 640.0;
constexpr double kPanelH = 480.0;
constexpr double kLeft = 64.0;
constexpr double kRight = 24.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 52.0;

const std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                             "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  if (std::abs(v) < 1e-12) v = 0.0;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  bool empty() const { return !(lo <= hi); }
  Range padded(double frac) const {
    Range r = *this;
    if (r.empty()) return Range{0.0, 1.0};
    double span = r.hi - r.lo;
    if (span <= 0.0) span = std::max(1.0, std::abs(r.lo));
    r.lo -= frac * span;
    r.hi += frac * span;
    return r;
  }
};

std::vector<double> nice_ticks(const Range& r) {
  const double span = r.hi - r.lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (span / step <= 6.0) break;
  }
  std::vector<double> ticks;
  for (double t = std::ceil(r.lo / step) * step; t <= r.hi + 1e-9 * step; t += step) {
    ticks.push_back(t);
  }
  return ticks;
}

// Maps data coordinates into one panel's plotting rectangle.
struct Frame {
  double ox = 0.0;
  Range xr, yr;

  double px(double x) const {
    return ox + kLeft + (x - xr.lo) / (xr.hi - xr.lo) * (kPanelW - kLeft - kRight);
  }
  double py(double y) const {
    return kTop + (yr.hi - y) / (yr.hi - yr.lo) * (kPanelH - kTop - kBottom);
  }
};

void draw_axes(std::ostream& os, const Frame& f, std::string_view title, std::string_view xl,
               std::string_view yl) {
  const double x0 = f.ox + kLeft, x1 = f.ox + kPanelW - kRight;
  const double y0 = kTop, y1 = kPanelH - kBottom;
  os << "<g class=\"axes\">\n";
  os << "<rect x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\"" << num(x1 - x0)
     << "\" height=\"" << num(y1 - y0) << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (double t : nice_ticks(f.xr)) {
    const double x = f.px(t);
    os << "<line x1=\"" << num(x) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x) << "\" y2=\""
       << num(y1 + 5) << "\" stroke=\"#333\"/>"
       << "<text x=\"" << num(x) << "\" y=\"" << num(y1 + 18)
       << "\" text-anchor=\"middle\" font-size=\"11\">" << tick_label(t) << "</text>\n";
  }
  for (double t : nice_ticks(f.yr)) {
    const double y = f.py(t);
    os << "<line x1=\"" << num(x0 - 5) << "\" y1=\"" << num(y) << "\" x2=\"" << num(x0)
       << "\" y2=\"" << num(y) << "\" stroke=\"#333\"/>"
       << "<text x=\"" << num(x0 - 8) << "\" y=\"" << num(y + 4)
       << "\" text-anchor=\"end\" font-size=\"11\">" << tick_label(t) << "</text>\n";
  }
  if (!title.empty()) {
    os << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"24\" text-anchor=\"middle\" "
       << "font-size=\"14\">" << escape(title) << "</text>\n";
  }
  if (!xl.empty()) {
    os << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"" << num(kPanelH - 12)
       << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(xl) << "</text>\n";
  }
  if (!yl.empty()) {
    const double yc = (y0 + y1) / 2;
    os << "<text x=\"" << num(f.ox + 16) << "\" y=\"" << num(yc)
       << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 " << num(f.ox + 16)
       << ' ' << num(yc) << ")\">" << escape(yl) << "</text>\n";
  }
  os << "</g>\n";
}

void draw_legend(std::ostream& os, const Frame& f,
                 const std::vector<std::pair<std::string, std::string>>& entries) {
  double y = kTop + 14;
  const double x = f.ox + kPanelW - kRight - 150;
  os << "<g class=\"legend\">\n";
  for (const auto& [name, color] : entries) {
    os << "<rect x=\"" << num(x) << "\" y=\"" << num(y - 9) << "\" width=\"10\" height=\"10\" "
       << "fill=\"" << color << "\"/><text x=\"" << num(x + 16) << "\" y=\"" << num(y)
       << "\" font-size=\"11\">" << escape(name) << "</text>\n";
    y += 16;
  }
  os << "</g>\n";
}

std::string header(double width, double height) {
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\""
     << num(height) << "\" viewBox=\"0 0 " << num(width) << ' ' << num(height) << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return os.str();
}

std::string color_for(std::size_t i, const std::string& requested) {
  return requested.empty() ? kPalette[i % kPalette.size()] : requested;
}

// Marching squares on a regular grid; saddle cells are split the same way
// every time so output stays deterministic.
void contour_segments(std::ostream& os, const Frame& f, const std::vector<double>& grid, int nx,
                      int ny, double level) {
  static const int kEdges[16][4] = {{-1, -1, -1, -1}, {3, 0, -1, -1}, {0, 1, -1, -1},
                                    {3, 1, -1, -1},   {1, 2, -1, -1}, {3, 0, 1, 2},
                                    {0, 2, -1, -1},   {3, 2, -1, -1}, {2, 3, -1, -1},
                                    {0, 2, -1, -1},   {0, 1, 2, 3},   {1, 2, -1, -1},
                                    {1, 3, -1, -1},   {0, 1, -1, -1}, {0, 3, -1, -1},
                                    {-1, -1, -1, -1}};
  const double dx = (f.xr.hi - f.xr.lo) / (nx - 1);
  const double dy = (f.yr.hi - f.yr.lo) / (ny - 1);
  auto at = [&](int i, int j) { return grid[static_cast<std::size_t>(j) * nx + i]; };
  for (int j = 0; j + 1 < ny; ++j) {
    for (int i = 0; i + 1 < nx; ++i) {
      const double v[4] = {at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)};
      int idx = 0;
      for (int k = 0; k < 4; ++k) {
        if (v[k] > level) idx |= 1 << k;
      }
      if (idx == 0 || idx == 15) continue;
      const Point c[4] = {Point(f.xr.lo + i * dx, f.yr.lo + j * dy),
                          Point(f.xr.lo + (i + 1) * dx, f.yr.lo + j * dy),
                          Point(f.xr.lo + (i + 1) * dx, f.yr.lo + (j + 1) * dy),
                          Point(f.xr.lo + i * dx, f.yr.lo + (j + 1) * dy)};
      auto edge_point = [&](int e) {
        const int a = e, b = (e + 1) % 4;
        const double denom = v[b] - v[a];
        const double t = denom == 0.0 ? 0.5 : (level - v[a]) / denom;
        return Point(c[a] + t * (c[b] - c[a]));
      };
      for (int s = 0; s < 4 && kEdges[idx][s] >= 0; s += 2) {
        const Point p = edge_point(kEdges[idx][s]);
        const Point q = edge_point(kEdges[idx][s + 1]);
        os << 'M' << num(f.px(p.x())) << ' ' << num(f.py(p.y())) << 'L' << num(f.px(q.x())) << ' '
           << num(f.py(q.y()));
      }
    }
  }
}

double row_metric(const ResultRow& r, std::string_view metric) {
  if (metric == "frechet") return r.frechet;
  if (metric == "mmd2") return r.mmd2;
  if (metric == "precision") return r.precision;
  if (metric == "recall") return r.recall;
  if (metric == "support_frac") return r.support_frac;
  throw std::invalid_argument("unknown metric '" + std::string(metric) + "'");
}

// Averages metric over rows sharing x, in ascending x.
Series mean_series(const std::string& name, const std::vector<const ResultRow*>& rows,
                   double (*x_of)(const ResultRow&), std::string_view metric) {
  std::map<double, std::pair<double, int>> acc;
  for (const ResultRow* r : rows) {
    auto& a = acc[x_of(*r)];
    a.first += row_metric(*r, metric);
    a.second += 1;
  }
  Series s;
  s.name = name;
  for (const auto& [x, a] : acc) {
    s.x.push_back(x);
    s.y.push_back(a.first / a.second);
  }
  return s;
}

template <typename T>
T mode_of(const std::vector<T>& v) {
  std::map<T, int> count;
  for (const T& x : v) ++count[x];
  return std::max_element(count.begin(), count.end(),
                          [](const auto& a, const auto& b) { return a.second < b.second; })
      ->first;
}

}  // namespace

std::string to_string(PlotKind k) {
  switch (k) {
    case PlotKind::kScatterOverlay: return "scatter_overlay";
    case PlotKind::kTradeoffCurve: return "tradeoff_curve";
    case PlotKind::kAblationGrid: return "ablation_grid";
  }
  throw std::logic_error("unhandled plot kind");
}

PlotKind plot_kind_from_string(std::string_view s) {
  if (s == "scatter_overlay") return PlotKind::kScatterOverlay;
  if (s == "tradeoff_curve") return PlotKind::kTradeoffCurve;
  if (s == "ablation_grid") return PlotKind::kAblationGrid;
  throw std::invalid_argument("unknown plot kind '" + std::string(s) + "'");
}

std::string scatter_overlay_svg(const std::vector<ScatterLayer>& layers,
                                const GaussianMixture* density, std::string_view title) {
  Range xr, yr;
  for (const auto& l : layers) {
    for (const Point& p : l.points) {
      xr.add(p.x());
      yr.add(p.y());
    }
  }
  if (density) {
    for (std::size_t k = 0; k < density->size(); ++k) {
      const double sx = 3.0 * std::sqrt(density->covariances[k](0, 0));
      const double sy = 3.0 * std::sqrt(density->covariances[k](1, 1));
      xr.add(density->means[k].x() - sx);
      xr.add(density->means[k].x() + sx);
      yr.add(density->means[k].y() - sy);
      yr.add(density->means[k].y() + sy);
    }
  }
  Frame f;
  f.xr = xr.empty() ? Range{-1.0, 1.0} : xr.padded(0.05);
  f.yr = yr.empty() ? Range{-1.0, 1.0} : yr.padded(0.05);

  std::ostringstream os;
  os << header(kPanelW, kPanelH);
  draw_axes(os, f, title, "x", "y");
  if (density) {
    constexpr int kGrid = 120;
    std::vector<double> grid(static_cast<std::size_t>(kGrid) * kGrid);
    for (int j = 0; j < kGrid; ++j) {
      for (int i = 0; i < kGrid; ++i) {
        const Point p(f.xr.lo + (f.xr.hi - f.xr.lo) * i / (kGrid - 1),
                      f.yr.lo + (f.yr.hi - f.yr.lo) * j / (kGrid - 1));
        grid[static_cast<std::size_t>(j) * kGrid + i] = log_density(*density, p);
      }
    }
    // Contour levels at fixed quantiles of the density's own log-density.
    const SampleBatch ref = sample_mixture(*density, 4000, 0x9107);
    std::vector<double> ld;
    for (const Point& p : ref.points) ld.push_back(log_density(*density, p));
    std::sort(ld.begin(), ld.end());
    os << "<g class=\"contours\" fill=\"none\" stroke=\"#555\" stroke-width=\"1\">\n";
    for (double q : {0.05, 0.25, 0.5, 0.75}) {
      const double level = ld[static_cast<std::size_t>(q * (ld.size() - 1))];
      os << "<path d=\"";
      contour_segments(os, f, grid, kGrid, kGrid, level);
      os << "\"/>\n";
    }
    os << "</g>\n";
  }
  std::vector<std::pair<std::string, std::string>> legend;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const std::string color = color_for(li, layers[li].color);
    legend.emplace_back(layers[li].name, color);
    os << "<g class=\"layer\" fill=\"" << color << "\" fill-opacity=\"0.5\">\n";
    for (const Point& p : layers[li].points) {
      os << "<circle cx=\"" << num(f.px(p.x())) << "\" cy=\"" << num(f.py(p.y()))
         << "\" r=\"1.5\"/>\n";
    }
    os << "</g>\n";
  }
  if (!legend.empty()) draw_legend(os, f, legend);
  os << "</svg>\n";
  return os.str();
}

std::string panels_svg(const std::vector<Panel>& panels) {
  const std::size_t n = std::max<std::size_t>(1, panels.size());
  std::ostringstream os;
  os << header(kPanelW * static_cast<double>(n), kPanelH);
  if (panels.empty()) {
    Frame f;
    f.xr = Range{0.0, 1.0};
    f.yr = Range{0.0, 1.0};
    draw_axes(os, f, "", "", "");
  }
  for (std::size_t pi = 0; pi < panels.size(); ++pi) {
    const Panel& panel = panels[pi];
    Range xr, yr;
    for (const Series& s : panel.series) {
      for (double x : s.x) xr.add(x);
      for (double y : s.y) yr.add(y);
    }
    Frame f;
    f.ox = kPanelW * static_cast<double>(pi);
    f.xr = xr.padded(0.05);
    f.yr = yr.padded(0.08);
    draw_axes(os, f, panel.title, panel.x_label, panel.y_label);
    std::vector<std::pair<std::string, std::string>> legend;
    for (std::size_t si = 0; si < panel.series.size(); ++si) {
      const Series& s = panel.series[si];
      if (s.x.size() != s.y.size()) throw std::invalid_argument("series x/y length mismatch");
      const std::string color = color_for(si, s.color);
      legend.emplace_back(s.name, color);
      os << "<g class=\"series\" stroke=\"" << color << "\" fill=\"" << color << "\">\n";
      if (!s.x.empty()) {
        os << "<path fill=\"none\" stroke-width=\"2\" d=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          os << (i ? 'L' : 'M') << num(f.px(s.x[i])) << ' ' << num(f.py(s.y[i]));
        }
        os << "\"/>\n";
      }
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        os << "<rect x=\"" << num(f.px(s.x[i]) - 3) << "\" y=\"" << num(f.py(s.y[i]) - 3)
           << "\" width=\"6\" height=\"6\"/>\n";
      }
      os << "</g>\n";
    }
    if (!legend.empty()) draw_legend(os, f, legend);
  }
  os << "</svg>\n";
  return os.str();
}

std::string tradeoff_curve_svg(const std::vector<ResultRow>& rows) {
  std::vector<Method> methods;
  for (const ResultRow& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
      methods.push_back(r.method);
    }
  }
  Panel p;
  p.title = "precision / recall vs w";
  p.x_label = "w";
  p.y_label = "metric";
  for (Method m : methods) {
    std::vector<const ResultRow*> sel;
    for (const ResultRow& r : rows) {
      if (r.method == m) sel.push_back(&r);
    }
    auto by_w = [](const ResultRow& r) { return r.w; };
    p.series.push_back(mean_series(to_string(m) + " precision", sel, by_w, "precision"));
    p.series.push_back(mean_series(to_string(m) + " recall", sel, by_w, "recall"));
  }
  return panels_svg({p});
}

std::string ablation_grid_svg(const std::vector<ResultRow>& rows, std::string_view metric) {
  row_metric(ResultRow{}, metric);
  std::vector<Panel> panels(2);
  panels[0].title = std::string(metric) + " vs late-start step";
  panels[0].x_label = "tau_s";
  panels[0].y_label = std::string(metric);
  panels[1].title = std::string(metric) + " vs cut-off";
  panels[1].x_label = "tau_c";
  panels[1].y_label = std::string(metric);
  if (!rows.empty()) {
    std::vector<double> tau_c;
    std::vector<std::int64_t> tau_s;
    for (const ResultRow& r : rows) {
      tau_c.push_back(r.tau_c);
      tau_s.push_back(r.tau_s);
    }
    const double tc_mode = mode_of(tau_c);
    const std::int64_t ts_mode = mode_of(tau_s);
    std::vector<const ResultRow*> s_rows, c_rows;
    for (const ResultRow& r : rows) {
      if (r.tau_c == tc_mode) s_rows.push_back(&r);
      if (r.tau_s == ts_mode) c_rows.push_back(&r);
    }
    panels[0].series.push_back(mean_series(
        "tau_c=" + tick_label(tc_mode), s_rows,
        [](const ResultRow& r) { return static_cast<double>(r.tau_s); }, metric));
    panels[1].series.push_back(mean_series("tau_s=" + std::to_string(ts_mode), c_rows,
                                           [](const ResultRow& r) { return r.tau_c; }, metric));
  }
  return panels_svg(panels);
}

std::string export_plot(PlotKind kind, const std::vector<ResultRow>& rows,
                        std::string_view metric) {
  switch (kind) {
    case PlotKind::kTradeoffCurve: return tradeoff_curve_svg(rows);
    case PlotKind::kAblationGrid: return ablation_grid_svg(rows, metric);
    case PlotKind::kScatterOverlay: return scatter_overlay_svg({}, nullptr, "samples");
  }
  throw std::logic_error("unhandled plot kind");
}

}  // namespace dogfit::harness
