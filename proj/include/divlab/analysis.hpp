#pragma once

#include <string>
#include <vector>

namespace divlab {

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

// Ordinary least squares with intercept; r2 = 1 - SS_res/SS_tot, clamped to
// [0,1] against round-off.
LinearFit fit_linear_r2(const std::vector<double>& xs, const std::vector<double>& ys);

struct MeanCi {
  double mean = 0.0;
  double half_width = 0.0;
};

// Normal-approximation interval: mean +/- 1.96 * sample std / sqrt(n).
// Only the 95% level is supported.
MeanCi confidence_interval(const std::vector<double>& samples, double level = 0.95);

// Table-style rendering, e.g. "0.106 ± 0.00166".
std::string format_estimate(double mean, double half_width);

struct GridPoint {
  std::string learner_label;
  std::string dataset_id;
  double diversity_mean = 0.0;
  double diversity_ci = 0.0;
  double accuracy = 0.0;
  double acc_ci = 0.0;
  double ce_loss = 0.0;
};

// Plot-ready fit line over the diversity range plus per-point residuals.
struct Trendline {
  double x0 = 0.0, y0 = 0.0;
  double x1 = 0.0, y1 = 0.0;
  std::vector<double> residuals;
};

struct CorrelationReport {
  std::string learner_label;
  std::vector<GridPoint> points;
  double slope_acc = 0.0, intercept_acc = 0.0, r2_acc = 0.0;
  double slope_loss = 0.0, intercept_loss = 0.0, r2_loss = 0.0;
  Trendline trend_acc;
  Trendline trend_loss;
};

// One report per learner label (first-appearance order); accuracy and
// cross-entropy are fitted against diversity independently.
std::vector<CorrelationReport> build_report(const std::vector<GridPoint>& grid_results);

}  // namespace divlab
