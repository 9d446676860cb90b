#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ccgbench/ccg.hpp"
#include "ccgbench/data.hpp"
#include "ccgbench/numerics.hpp"

namespace ccgbench::ccg {

std::vector<double> anomaly_score(const Matrix& x, const Matrix& xhat,
                                  const std::vector<double>* patch_cue,
                                  const std::vector<double>* assoc_cue, const CcgConfig& cfg) {
    if (!x.same_shape(xhat) || x.empty()) throw std::invalid_argument("anomaly_score: shape mismatch");
    if (cfg.use_patch_view != (patch_cue != nullptr))
        throw std::invalid_argument("anomaly_score: patch cue must match the patch view");
    if (cfg.use_temp_view != (assoc_cue != nullptr))
        throw std::invalid_argument("anomaly_score: association cue must match the temporal view");
    const std::size_t t = x.rows, c = x.cols;
    if ((patch_cue && patch_cue->size() != t) || (assoc_cue && assoc_cue->size() != t))
        throw std::invalid_argument("anomaly_score: cue length mismatch");

    std::vector<double> s(t, 0.0);
    for (std::size_t i = 0; i < t; ++i) {
        double res = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = x(i, j) - xhat(i, j);
            res += d * d;
        }
        s[i] = cfg.alpha * res;
        if (patch_cue) s[i] += cfg.delta_patch * (*patch_cue)[i];
        if (assoc_cue) s[i] += cfg.delta_temp * (*assoc_cue)[i];
    }
    return s;
}

std::vector<double> project_scores(const std::vector<std::vector<double>>& window_scores,
                                   const std::vector<std::size_t>& starts, std::size_t t_test,
                                   ScoreProjection mode, std::size_t smooth_window) {
    if (window_scores.empty() || window_scores.size() != starts.size())
        throw std::invalid_argument("project_scores: window/start count mismatch");
    if (t_test == 0) throw std::invalid_argument("project_scores: empty timeline");
    for (std::size_t w = 0; w < starts.size(); ++w)
        if (window_scores[w].empty() || starts[w] + window_scores[w].size() > t_test)
            throw std::invalid_argument("project_scores: window outside timeline");

    std::vector<std::size_t> cover(t_test, 0);
    for (std::size_t w = 0; w < starts.size(); ++w)
        for (std::size_t i = 0; i < window_scores[w].size(); ++i) ++cover[starts[w] + i];
    for (std::size_t i = 0; i < t_test; ++i)
        if (cover[i] == 0) throw std::invalid_argument("project_scores: coverage gap in timeline");

    std::vector<double> out(t_test, 0.0);
    switch (mode) {
        case ScoreProjection::mean: {
            for (std::size_t w = 0; w < starts.size(); ++w)
                for (std::size_t i = 0; i < window_scores[w].size(); ++i)
                    out[starts[w] + i] += window_scores[w][i];
            for (std::size_t i = 0; i < t_test; ++i) out[i] /= static_cast<double>(cover[i]);
            return out;
        }
        case ScoreProjection::max_smooth: {
            std::fill(out.begin(), out.end(), -std::numeric_limits<double>::infinity());
            for (std::size_t w = 0; w < starts.size(); ++w)
                for (std::size_t i = 0; i < window_scores[w].size(); ++i) {
                    const std::size_t p = starts[w] + i;
                    out[p] = std::max(out[p], window_scores[w][i]);
                }
            return numerics::moving_average(out, smooth_window);
        }
        case ScoreProjection::last: {
            // Each window lands on its final timestep; the first window fills
            // the leading positions that no window terminates on.
            std::vector<char> filled(t_test, 0);
            for (std::size_t w = 0; w < starts.size(); ++w) {
                const std::size_t end = starts[w] + window_scores[w].size() - 1;
                out[end] = window_scores[w].back();
                filled[end] = 1;
            }
            const std::size_t first_end = starts[0] + window_scores[0].size() - 1;
            for (std::size_t i = 0; i < t_test; ++i) {
                if (filled[i]) continue;
                if (i < first_end && i >= starts[0]) {
                    out[i] = window_scores[0][i - starts[0]];
                } else {
                    throw std::invalid_argument("project_scores: timestep without a terminating window");
                }
            }
            return out;
        }
    }
    throw std::invalid_argument("project_scores: unknown projection");
}

std::vector<double> score_series(const CcgModel& model, const Matrix& test) {
    const std::size_t t = model.window();
    if (test.cols != model.channels()) throw std::invalid_argument("score_series: channel mismatch");
    if (test.rows < t) throw std::invalid_argument("score_series: test split shorter than the window");

    const data::WindowBatch batch = data::make_windows(test, t, 1);
    std::vector<std::vector<double>> scores;
    scores.reserve(batch.windows.size());
    for (const Matrix& w : batch.windows) scores.push_back(model.score_window(w));
    return project_scores(scores, batch.start_indices, test.rows, model.config().score_projection,
                          model.config().smooth_window);
}

}  // namespace ccgbench::ccg
