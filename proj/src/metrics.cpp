#include "ccgbench/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace ccgbench::metrics {

namespace {

constexpr std::array<double MetricReport::*, 7> kReportFields = {
    &MetricReport::f1,      &MetricReport::pa_f1,  &MetricReport::auroc,         &MetricReport::auprc,
    &MetricReport::vus_roc, &MetricReport::vus_pr, &MetricReport::best_threshold};

void check_series(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.empty()) throw std::invalid_argument("metrics: empty series");
    if (scores.size() != labels.size()) throw std::invalid_argument("metrics: scores/labels length mismatch");
    for (int y : labels)
        if (y != 0 && y != 1) throw std::invalid_argument("metrics: labels must be 0/1");
}

void require_both_classes(const std::vector<int>& labels) {
    bool pos = false, neg = false;
    for (int y : labels) (y == 1 ? pos : neg) = true;
    if (!pos || !neg) throw UndefinedMetricError("metrics: labels contain a single class");
}

std::vector<std::size_t> ascending_order(const std::vector<double>& s) {
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] < s[b]; });
    return order;
}

// Tie-aware sweep over ascending score groups. Each point carries w positive
// mass and 1-w negative mass; ties score 1/2.
double roc_sweep(const std::vector<double>& s, const std::vector<double>& w,
                 const std::vector<std::size_t>& order) {
    double total_pos = 0.0, total_neg = 0.0;
    for (double v : w) {
        total_pos += v;
        total_neg += 1.0 - v;
    }
    if (total_pos <= 0.0 || total_neg <= 0.0)
        throw UndefinedMetricError("metrics: a class has no mass");

    double num = 0.0, neg_below = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        double group_pos = 0.0, group_neg = 0.0;
        while (j < order.size() && s[order[j]] == s[order[i]]) {
            group_pos += w[order[j]];
            group_neg += 1.0 - w[order[j]];
            ++j;
        }
        num += group_pos * (neg_below + 0.5 * group_neg);
        neg_below += group_neg;
        i = j;
    }
    return num / (total_pos * total_neg);
}

// Average precision over descending distinct thresholds; step interpolation.
double ap_sweep(const std::vector<double>& s, const std::vector<double>& w,
                const std::vector<std::size_t>& order) {
    double total_pos = 0.0;
    for (double v : w) total_pos += v;
    if (total_pos <= 0.0) throw UndefinedMetricError("metrics: no positive mass");
    bool any_neg = false;
    for (double v : w)
        if (v < 1.0) any_neg = true;
    if (!any_neg) throw UndefinedMetricError("metrics: no negative mass");

    double ap = 0.0, prev_recall = 0.0, tp = 0.0, count = 0.0;
    std::size_t i = order.size();
    while (i > 0) {
        std::size_t j = i;  // group of equal scores, descending
        while (j > 0 && s[order[j - 1]] == s[order[i - 1]]) {
            tp += w[order[j - 1]];
            count += 1.0;
            --j;
        }
        const double recall = tp / total_pos;
        const double precision = tp / count;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

std::vector<double> as_weights(const std::vector<int>& labels) {
    return std::vector<double>(labels.begin(), labels.end());
}

// Distance from each point to the nearest label-1 point (0 inside segments).
std::vector<std::size_t> distance_to_segment(const std::vector<int>& labels) {
    const std::size_t n = labels.size();
    const std::size_t inf = n + 1;
    std::vector<std::size_t> d(n, inf);
    for (std::size_t t = 0; t < n; ++t)
        if (labels[t] == 1) d[t] = 0;
        else if (t > 0 && d[t - 1] != inf) d[t] = d[t - 1] + 1;
    for (std::size_t t = n; t-- > 1;)
        if (d[t - 1] != inf || d[t] != inf) d[t - 1] = std::min(d[t - 1], d[t] + 1);
    return d;
}

struct Segment {
    std::size_t begin;
    std::size_t end;  // one past the last labeled point
};

std::vector<Segment> label_segments(const std::vector<int>& labels) {
    std::vector<Segment> segs;
    std::size_t t = 0;
    while (t < labels.size()) {
        if (labels[t] == 1) {
            std::size_t e = t;
            while (e < labels.size() && labels[e] == 1) ++e;
            segs.push_back({t, e});
            t = e;
        } else {
            ++t;
        }
    }
    return segs;
}

double f1_of_counts(double tp, double fp, double fn) {
    const double denom = 2.0 * tp + fp + fn;
    return denom == 0.0 ? 0.0 : 2.0 * tp / denom;
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
    const double h = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(h);
    const double frac = h - static_cast<double>(lo);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace

double auc(const std::vector<double>& scores, const std::vector<int>& labels, Curve curve) {
    check_series(scores, labels);
    require_both_classes(labels);
    if (curve == Curve::pr) return ap_sweep(scores, as_weights(labels), ascending_order(scores));

    // Mann-Whitney via average ranks; the tie correction is the 1/2 credit.
    const std::vector<std::size_t> order = ascending_order(scores);
    double rank_sum_pos = 0.0, n_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) {
                rank_sum_pos += avg_rank;
                n_pos += 1.0;
            }
        i = j;
    }
    const double n_neg = static_cast<double>(scores.size()) - n_pos;
    const double u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    return u / (n_pos * n_neg);
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("quantile: empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile: q outside [0,1]");
    std::sort(values.begin(), values.end());
    return quantile_sorted(values, q);
}

std::vector<double> default_quantile_grid() {
    std::vector<double> grid(200);
    for (std::size_t i = 0; i < grid.size(); ++i)
        grid[i] = 0.50 + (0.999 - 0.50) * static_cast<double>(i) / 199.0;
    return grid;
}

namespace {

template <typename AdjustFn>
F1Result sweep_thresholds(const std::vector<double>& scores, const std::vector<int>& labels,
                          const std::vector<double>& grid, AdjustFn adjust) {
    check_series(scores, labels);
    require_both_classes(labels);
    if (grid.empty()) throw std::invalid_argument("best_f1: empty quantile grid");

    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());

    F1Result best;
    best.f1 = -1.0;
    std::vector<int> preds(scores.size());
    for (double q : grid) {
        if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("best_f1: quantile outside [0,1]");
        const double th = quantile_sorted(sorted, q);
        for (std::size_t t = 0; t < scores.size(); ++t) preds[t] = scores[t] >= th ? 1 : 0;
        const std::vector<int> adjusted = adjust(preds);
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t t = 0; t < scores.size(); ++t) {
            if (adjusted[t] == 1 && labels[t] == 1) ++tp;
            if (adjusted[t] == 1 && labels[t] == 0) ++fp;
            if (adjusted[t] == 0 && labels[t] == 1) ++fn;
        }
        const double f1 = f1_of_counts(tp, fp, fn);
        if (f1 > best.f1 || (f1 == best.f1 && th < best.threshold)) {
            best.f1 = f1;
            best.threshold = th;
        }
    }
    return best;
}

}  // namespace

F1Result best_f1(const std::vector<double>& scores, const std::vector<int>& labels,
                 const std::vector<double>& grid) {
    return sweep_thresholds(scores, labels, grid, [](const std::vector<int>& p) { return p; });
}

std::vector<int> point_adjust(const std::vector<int>& labels, const std::vector<int>& preds) {
    if (labels.size() != preds.size()) throw std::invalid_argument("point_adjust: length mismatch");
    std::vector<int> out = preds;
    for (const Segment& seg : label_segments(labels)) {
        bool hit = false;
        for (std::size_t t = seg.begin; t < seg.end && !hit; ++t) hit = preds[t] == 1;
        if (hit)
            for (std::size_t t = seg.begin; t < seg.end; ++t) out[t] = 1;
    }
    return out;
}

double pa_best_f1(const std::vector<double>& scores, const std::vector<int>& labels,
                  const std::vector<double>& grid) {
    return sweep_thresholds(scores, labels, grid,
                            [&](const std::vector<int>& p) { return point_adjust(labels, p); })
        .f1;
}

std::vector<double> buffered_weights(const std::vector<int>& labels, std::size_t ell) {
    for (int y : labels)
        if (y != 0 && y != 1) throw std::invalid_argument("buffered_weights: labels must be 0/1");
    const std::vector<std::size_t> dist = distance_to_segment(labels);
    std::vector<double> w(labels.size(), 0.0);
    for (std::size_t t = 0; t < labels.size(); ++t) {
        const std::size_t d = dist[t];
        if (d == 0) {
            w[t] = 1.0;
        } else if (d <= ell) {
            // Linear from 1 at d=1 down to 1/(ell+1) at d=ell; the single-step
            // buffer anchors at its far end.
            w[t] = ell == 1 ? 0.5
                            : 1.0 - static_cast<double>(ell) * static_cast<double>(d - 1) /
                                        (static_cast<double>(ell) * static_cast<double>(ell) - 1.0);
        }
    }
    return w;
}

double weighted_auc(const std::vector<double>& scores, const std::vector<double>& weights, Curve curve) {
    if (scores.empty() || scores.size() != weights.size())
        throw std::invalid_argument("weighted_auc: bad shapes");
    for (double v : weights)
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("weighted_auc: weights outside [0,1]");
    const std::vector<std::size_t> order = ascending_order(scores);
    return curve == Curve::roc ? roc_sweep(scores, weights, order) : ap_sweep(scores, weights, order);
}

double vus(const std::vector<double>& scores, const std::vector<int>& labels, std::size_t levels, Curve curve) {
    check_series(scores, labels);
    require_both_classes(labels);
    const std::vector<std::size_t> order = ascending_order(scores);

    double acc = 0.0;
    std::size_t included = 0;
    for (std::size_t ell = 0; ell <= levels; ++ell) {
        const std::vector<double> w = buffered_weights(labels, ell);
        double neg_mass = 0.0;
        for (double v : w) neg_mass += 1.0 - v;
        if (ell > 0 && neg_mass <= 0.0) continue;  // buffer swallowed every negative
        acc += curve == Curve::roc ? roc_sweep(scores, w, order) : ap_sweep(scores, w, order);
        ++included;
    }
    return acc / static_cast<double>(included);
}

MetricReport evaluate(const std::vector<double>& scores, const std::vector<int>& labels,
                      const EvalOptions& opt) {
    MetricReport r;
    const F1Result f = best_f1(scores, labels, opt.grid);
    r.f1 = f.f1;
    r.best_threshold = f.threshold;
    r.pa_f1 = pa_best_f1(scores, labels, opt.grid);
    r.auroc = auc(scores, labels, Curve::roc);
    r.auprc = auc(scores, labels, Curve::pr);
    r.vus_roc = vus(scores, labels, opt.buffer_levels, Curve::roc);
    r.vus_pr = vus(scores, labels, opt.buffer_levels, Curve::pr);
    return r;
}

MetricAggregate aggregate_seeds(const std::vector<MetricReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("aggregate_seeds: no reports");
    for (const MetricReport& r : reports)
        if (r.method != reports.front().method || r.dataset != reports.front().dataset)
            throw std::invalid_argument("aggregate_seeds: mixed method/dataset");

    MetricAggregate agg;
    agg.method = reports.front().method;
    agg.dataset = reports.front().dataset;
    agg.seeds = reports.size();
    const double n = static_cast<double>(reports.size());
    for (double MetricReport::* field : kReportFields) {
        double mu = 0.0;
        for (const MetricReport& r : reports) mu += r.*field;
        mu /= n;
        double var = 0.0;
        for (const MetricReport& r : reports) {
            const double d = r.*field - mu;
            var += d * d;
        }
        agg.mean.*field = mu;
        agg.stddev.*field = reports.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    }
    return agg;
}

}  // namespace ccgbench::metrics
