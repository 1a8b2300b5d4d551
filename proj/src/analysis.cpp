#include "divlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "divlab/errors.hpp"

namespace divlab {

LinearFit fit_linear_r2(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) {
    throw ContractError("fit_linear_r2: got " + std::to_string(xs.size()) + " xs but " +
                        std::to_string(ys.size()) + " ys");
  }
  const size_t n = xs.size();
  if (n < 2) {
    throw ContractError("fit_linear_r2: need at least 2 points, got " + std::to_string(n));
  }
  double mean_x = 0.0, mean_y = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mean_x += xs[i];
    mean_y += ys[i];
  }
  mean_x /= static_cast<double>(n);
  mean_y /= static_cast<double>(n);

  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mean_x;
    const double dy = ys[i] - mean_y;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) {
    throw NumericError("fit_linear_r2: degenerate variance, all xs equal");
  }
  if (syy == 0.0) {
    throw NumericError("fit_linear_r2: degenerate variance, all ys equal (SS_tot = 0)");
  }

  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = mean_y - fit.slope * mean_x;
  double ss_res = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double r = ys[i] - (fit.slope * xs[i] + fit.intercept);
    ss_res += r * r;
  }
  fit.r2 = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  return fit;
}

MeanCi confidence_interval(const std::vector<double>& samples, double level) {
  if (level != 0.95) {
    throw ConfigError("confidence_interval: only the 0.95 level is supported");
  }
  const size_t n = samples.size();
  if (n < 2) {
    throw ContractError("confidence_interval: need at least 2 samples, got " +
                        std::to_string(n));
  }
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double s : samples) {
    const double d = s - mean;
    var += d * d;
  }
  var /= static_cast<double>(n - 1);
  MeanCi ci;
  ci.mean = mean;
  ci.half_width = 1.96 * std::sqrt(var) / std::sqrt(static_cast<double>(n));
  return ci;
}

std::string format_estimate(double mean, double half_width) {
  char buf[80];
  std::snprintf(buf, sizeof(buf), "%.3g ± %.3g", mean, half_width);
  return std::string(buf);
}

namespace {

Trendline make_trendline(const std::vector<double>& xs, const std::vector<double>& ys,
                         const LinearFit& fit) {
  Trendline t;
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  t.x0 = *lo;
  t.x1 = *hi;
  t.y0 = fit.slope * t.x0 + fit.intercept;
  t.y1 = fit.slope * t.x1 + fit.intercept;
  t.residuals.reserve(ys.size());
  for (size_t i = 0; i < ys.size(); ++i) {
    t.residuals.push_back(ys[i] - (fit.slope * xs[i] + fit.intercept));
  }
  return t;
}

}  // namespace

std::vector<CorrelationReport> build_report(const std::vector<GridPoint>& grid_results) {
  std::vector<CorrelationReport> reports;
  for (const GridPoint& p : grid_results) {
    auto it = std::find_if(reports.begin(), reports.end(), [&](const CorrelationReport& r) {
      return r.learner_label == p.learner_label;
    });
    if (it == reports.end()) {
      reports.emplace_back();
      reports.back().learner_label = p.learner_label;
      it = std::prev(reports.end());
    }
    it->points.push_back(p);
  }
  for (CorrelationReport& report : reports) {
    if (report.points.size() < 3) {
      throw ContractError("build_report: learner '" + report.learner_label +
                          "' has only " + std::to_string(report.points.size()) +
                          " grid points; need at least 3 to fit a trend");
    }
    std::vector<double> xs, acc, loss;
    xs.reserve(report.points.size());
    acc.reserve(report.points.size());
    loss.reserve(report.points.size());
    for (const GridPoint& p : report.points) {
      xs.push_back(p.diversity_mean);
      acc.push_back(p.accuracy);
      loss.push_back(p.ce_loss);
    }
    const LinearFit fa = fit_linear_r2(xs, acc);
    report.slope_acc = fa.slope;
    report.intercept_acc = fa.intercept;
    report.r2_acc = fa.r2;
    report.trend_acc = make_trendline(xs, acc, fa);
    const LinearFit fl = fit_linear_r2(xs, loss);
    report.slope_loss = fl.slope;
    report.intercept_loss = fl.intercept;
    report.r2_loss = fl.r2;
    report.trend_loss = make_trendline(xs, loss, fl);
  }
  return reports;
}

}  // namespace divlab
