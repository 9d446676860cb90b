#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ccgbench::metrics {

// Raised when a metric has no defined value (e.g. single-class labels).
struct UndefinedMetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Curve { roc, pr };

// Per-(method, dataset, seed) effectiveness record.
struct MetricReport {
    std::string method;
    std::string dataset;
    std::uint64_t seed = 0;
    double f1 = 0.0;
    double pa_f1 = 0.0;
    double auroc = 0.0;
    double auprc = 0.0;
    double vus_roc = 0.0;
    double vus_pr = 0.0;
    double best_threshold = 0.0;
};

// Seed aggregation: per-metric mean and (n-1)-denominator std, std = 0 for a
// single seed. mean/stddev reuse the report layout; their seed field is unused.
struct MetricAggregate {
    std::string method;
    std::string dataset;
    std::size_t seeds = 0;
    MetricReport mean;
    MetricReport stddev;
};

// Threshold-free area under ROC (Mann-Whitney with tie value 0.5) or the
// precision-recall step curve. Throws UndefinedMetricError unless both classes
// are present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels, Curve curve);

// Type-7 interpolated quantile of an unsorted sample, q in [0, 1].
double quantile(std::vector<double> values, double q);

// 200 evenly spaced quantiles in [0.50, 0.999].
std::vector<double> default_quantile_grid();

// Best point-wise F1 over thresholds taken at the given score quantiles.
// Prediction rule: score >= threshold. Ties broken toward the lower threshold.
// F1 = 0 when precision + recall = 0.
struct F1Result {
    double f1 = 0.0;
    double threshold = 0.0;
};
F1Result best_f1(const std::vector<double>& scores, const std::vector<int>& labels,
                 const std::vector<double>& grid);

// Segment-fill adjustment: every maximal contiguous label-1 segment containing
// at least one predicted positive becomes all-positive; predictions outside
// label segments are unchanged.
std::vector<int> point_adjust(const std::vector<int>& labels, const std::vector<int>& preds);

// best_f1 with each thresholded prediction point-adjusted before scoring.
double pa_best_f1(const std::vector<double>& scores, const std::vector<int>& labels,
                  const std::vector<double>& grid);

// Buffer-tolerance weights at level ell: 1 inside label segments, a linear ramp
// from 1 (distance 1) down to 1/(ell+1) (distance ell) outside, 0 elsewhere.
std::vector<double> buffered_weights(const std::vector<int>& labels, std::size_t ell);

// Weighted-label AUC where each point contributes weight w to the positive
// class and 1-w to the negative class. Exposed for oracle tests.
double weighted_auc(const std::vector<double>& scores, const std::vector<double>& weights, Curve curve);

// Volume under the buffered-AUC surface: mean of the weighted AUC over buffer
// levels 0..levels, skipping degenerate levels whose negative mass vanishes.
// vus(scores, labels, 0, curve) == auc(scores, labels, curve).
double vus(const std::vector<double>& scores, const std::vector<int>& labels, std::size_t levels, Curve curve);

struct EvalOptions {
    std::vector<double> grid = default_quantile_grid();
    std::size_t buffer_levels = 50;
};

// All six effectiveness metrics for one scored series.
MetricReport evaluate(const std::vector<double>& scores, const std::vector<int>& labels,
                      const EvalOptions& opt = {});

MetricAggregate aggregate_seeds(const std::vector<MetricReport>& reports);

}  // namespace ccgbench::metrics
