#include "ccgbench/ccg.hpp"

#include <stdexcept>

namespace ccgbench::ccg {

std::string to_string(ScoreProjection p) {
    switch (p) {
        case ScoreProjection::mean: return "mean";
        case ScoreProjection::max_smooth: return "max_smooth";
        case ScoreProjection::last: return "last";
    }
    throw std::invalid_argument("unknown score projection");
}

ScoreProjection projection_from_string(const std::string& s) {
    if (s == "mean") return ScoreProjection::mean;
    if (s == "max_smooth") return ScoreProjection::max_smooth;
    if (s == "last") return ScoreProjection::last;
    throw std::invalid_argument("unknown score projection: " + s);
}

void CcgConfig::validate() const {
    if (active_views() == 0) throw std::invalid_argument("config: at least one view must be enabled");
    if (window < 2) throw std::invalid_argument("config: window must be >= 2");
    if (d_model == 0 || layers == 0 || heads == 0) throw std::invalid_argument("config: zero-sized model");
    if (d_model % heads != 0) throw std::invalid_argument("config: d_model must be divisible by heads");
    if (use_patch_view) {
        if (patch_len == 0 || patch_stride == 0)
            throw std::invalid_argument("config: patch_len and patch_stride must be positive");
        if (patch_len > window) throw std::invalid_argument("config: patch_len exceeds window");
        if (patch_stride > patch_len)
            throw std::invalid_argument("config: patch_stride beyond patch_len leaves uncovered timesteps");
        if (d_model % 2 != 0 || (d_model / 2) % heads != 0)
            throw std::invalid_argument("config: patch view needs d_model/2 divisible by heads");
    }
    if (use_channel_view) {
        if (rank == 0) throw std::invalid_argument("config: adjacency rank must be positive");
        if (use_spectral && (k_periods == 0 || spectral_bins == 0))
            throw std::invalid_argument("config: spectral branch needs k_periods and spectral_bins");
    }
    if (score_projection == ScoreProjection::max_smooth && (smooth_window % 2 == 0 || smooth_window == 0))
        throw std::invalid_argument("config: smooth_window must be odd");
    if (epochs == 0) throw std::invalid_argument("config: epochs must be >= 1");
    if (inject_rate < 0.0 || inject_rate > 1.0) throw std::invalid_argument("config: inject_rate outside [0,1]");
    if (mask_fraction < 0.0 || mask_fraction >= 1.0)
        throw std::invalid_argument("config: mask_fraction outside [0,1)");
    if (lambda_dag < 0.0 || lambda_freq < 0.0) throw std::invalid_argument("config: negative loss weight");
}

CcgConfig preset(const std::string& name) {
    CcgConfig cfg;  // channel + spectral, max_smooth, 2 epochs
    if (name == "default" || name == "synth") {
        cfg.score_projection = ScoreProjection::mean;
    } else if (name == "smd") {
        cfg.epochs = 1;
        cfg.score_projection = ScoreProjection::max_smooth;
    } else if (name == "msl") {
        cfg.epochs = 12;
        cfg.score_projection = ScoreProjection::mean;
    } else if (name == "smap") {
        cfg.use_patch_view = true;
        cfg.use_temp_view = true;
        cfg.epochs = 2;
        cfg.score_projection = ScoreProjection::max_smooth;
    } else if (name == "psm") {
        cfg.epochs = 12;
        cfg.score_projection = ScoreProjection::mean;
    } else if (name == "msds") {
        cfg.epochs = 8;
        cfg.score_projection = ScoreProjection::last;
    } else {
        throw std::invalid_argument("unknown preset: " + name);
    }
    cfg.validate();
    return cfg;
}

}  // namespace ccgbench::ccg
