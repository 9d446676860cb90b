#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ccgbench/autodiff.hpp"
#include "ccgbench/matrix.hpp"

namespace ccgbench::ccg {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class ScoreProjection { mean, max_smooth, last };

std::string to_string(ScoreProjection p);
ScoreProjection projection_from_string(const std::string& s);

struct CcgConfig {
    bool use_channel_view = true;
    bool use_patch_view = false;
    bool use_temp_view = false;
    bool use_spectral = true;        // spectral side branch of the channel view
    bool use_adjacency_bias = true;  // ablation: drop the log-adjacency attention bias

    std::size_t window = 100;  // T
    std::size_t d_model = 32;
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t rank = 4;           // adjacency factor rank
    std::size_t k_periods = 3;      // spectral branch period count
    std::size_t spectral_bins = 8;  // intra-period pooling grid per period
    std::size_t patch_len = 8;
    std::size_t patch_stride = 8;

    ScoreProjection score_projection = ScoreProjection::max_smooth;
    std::size_t smooth_window = 51;  // odd

    std::size_t epochs = 2;
    double inject_rate = 0.0;  // training-time outlier injection rate
    double mask_fraction = 0.15;

    double lambda_dag = 0.05;
    double lambda_freq = 0.0;
    double alpha = 1.0;
    double delta_patch = 0.5;
    double delta_temp = 0.5;

    std::size_t active_views() const {
        return (use_channel_view ? 1u : 0u) + (use_patch_view ? 1u : 0u) + (use_temp_view ? 1u : 0u);
    }
    void validate() const;  // throws std::invalid_argument
};

// Named per-dataset configurations: smd, msl, smap, psm, msds, synth, default.
CcgConfig preset(const std::string& name);

// Canonical JSON round-trip for configs (validated on parse).
std::string config_to_json(const CcgConfig& cfg);
CcgConfig config_from_json(const std::string& text);

// ---------------------------------------------------------------------------
// Adjacency
// ---------------------------------------------------------------------------

struct AdjacencyParams {
    Matrix u;             // C x r
    Matrix v;             // C x r
    double b = -1.0;      // scalar logit bias
    Matrix prior;         // C x C 0/1 mask; empty means all-ones
};

// A = sigmoid(U V^T + b) elementwise-masked by the prior. Entries in [0,1].
Matrix adjacency(const AdjacencyParams& p);

// Length-normalised acyclicity penalty (tr(exp(A o A)) - C)/C; zero exactly on
// acyclic supports.
double dag_penalty(const Matrix& a);

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

// Named parameter blocks with a stable flat view (block-major, row-major
// within a block). The flat view round-trips losslessly.
class ParamStore {
public:
    void add(const std::string& name, Matrix value);
    bool has(const std::string& name) const { return blocks_.count(name) > 0; }
    Matrix& block(const std::string& name);
    const Matrix& block(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const;  // total scalar count

    std::vector<double> flat() const;
    void set_flat(const std::vector<double>& values);

    // Flat-aligned 0/1 mask marking every scalar whose block name starts with
    // one of the prefixes.
    std::vector<char> block_mask(const std::vector<std::string>& prefixes) const;

private:
    std::vector<std::string> order_;
    std::map<std::string, Matrix> blocks_;
};

// Patch start offsets covering [0, t): multiples of the stride plus a final
// clamped patch at t - len when the strided grid stops short. Throws if t < len.
std::vector<std::size_t> patch_starts(std::size_t t, std::size_t len, std::size_t stride);

// Phase-binned periodic profile per channel: for each dominant period of the
// channel-mean series, the channel averaged by phase modulo the period, then
// adaptively pooled into a fixed bin grid. C x (k_periods * bins), zero-padded
// when fewer periods qualify.
Matrix spectral_descriptor(const Matrix& window, std::size_t k_periods, std::size_t bins);

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

class CcgModel {
public:
    // Parameter blocks are initialised from mix(seed, hash(block name)), so a
    // block's values do not depend on which other views are enabled.
    CcgModel(const CcgConfig& cfg, std::size_t channels, std::uint64_t seed);

    const CcgConfig& config() const { return cfg_; }
    std::size_t channels() const { return channels_; }
    std::size_t window() const { return cfg_.window; }
    std::uint64_t seed() const { return seed_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    struct Forward {
        std::vector<Matrix> recon;                             // fused, T x C per window
        std::map<std::string, std::vector<Matrix>> view_recon;  // channel / patch / temp
        std::vector<std::vector<double>> patch_cue;            // per window, length T
        std::vector<std::vector<double>> assoc_cue;            // per window, length T
        std::vector<Matrix> gate;                              // T x n_v; empty with one view
        Matrix adjacency;                                      // C x C; empty when view off
        std::vector<Matrix> channel_attention;                 // first window, per layer x head
    };
    Forward forward(const std::vector<Matrix>& windows) const;

    struct LossRefs {
        autodiff::NodeId total = -1;
        autodiff::NodeId rec = -1;
        autodiff::NodeId dag = -1;   // lambda_eff * h(A)^2 contribution; -1 when absent
        autodiff::NodeId freq = -1;  // lambda_freq * L_freq contribution; -1 when absent
        std::map<std::string, autodiff::NodeId> param_nodes;  // blocks used on the tape
    };
    // Builds the full training loss on the given tape. masked_inputs feed the
    // network; clean_targets drive the reconstruction error; masks[w][t] == 1
    // marks emphasised (2x weight, zeroed-input) timesteps.
    LossRefs build_loss(autodiff::Graph& g, const std::vector<Matrix>& masked_inputs,
                        const std::vector<Matrix>& clean_targets,
                        const std::vector<std::vector<char>>& masks, double lambda_dag_effective) const;

    // Per-timestep anomaly scores for one window (reconstruction residual plus
    // active-view cues).
    std::vector<double> score_window(const Matrix& window) const;

    void save_checkpoint(const std::filesystem::path& file) const;
    static CcgModel load_checkpoint(const std::filesystem::path& file);

private:
    CcgConfig cfg_;
    std::size_t channels_ = 0;
    std::uint64_t seed_ = 0;
    ParamStore params_;
    Matrix prior_;  // adjacency mask, all-ones default

    struct Build;
    Build build_graph(autodiff::Graph& g, const std::vector<Matrix>& windows,
                      std::map<std::string, autodiff::NodeId>& param_nodes) const;
};

// ---------------------------------------------------------------------------
// Loss / score plumbing
// ---------------------------------------------------------------------------

struct LossBreakdown {
    double total = 0.0;
    double rec = 0.0;
    double dag = 0.0;   // lambda_eff * h^2
    double freq = 0.0;  // lambda_freq * L_freq
};

// Value-level composite loss, mirroring CcgModel::build_loss term for term.
LossBreakdown composite_loss(const std::vector<Matrix>& x, const std::vector<Matrix>& xhat,
                             const Matrix& a, const std::vector<std::vector<char>>& masks,
                             const CcgConfig& cfg, double lambda_dag_effective);

// s_t = alpha * ||x_t - xhat_t||^2 + delta_p * c_patch_t + delta_t * c_assoc_t.
// Cues must be supplied exactly for the active views (null otherwise).
std::vector<double> anomaly_score(const Matrix& x, const Matrix& xhat,
                                  const std::vector<double>* patch_cue,
                                  const std::vector<double>* assoc_cue, const CcgConfig& cfg);

// Window scores -> timeline scores. mean: average over covering windows;
// max_smooth: max over covering windows then centered moving average;
// last: each window lands on its final timestep (the first window fills the
// leading t < T-1 positions). Throws on coverage gaps.
std::vector<double> project_scores(const std::vector<std::vector<double>>& window_scores,
                                   const std::vector<std::size_t>& starts, std::size_t t_test,
                                   ScoreProjection mode, std::size_t smooth_window);

// Stride-1 scoring of a whole test split through the model's projection.
std::vector<double> score_series(const CcgModel& model, const Matrix& test);

// ---------------------------------------------------------------------------
// Linear-AR baseline
// ---------------------------------------------------------------------------

struct LinearArModel {
    std::size_t order = 8;
    Matrix coeffs;  // order x C; row i holds the lag-(i+1) coefficient per channel
    Matrix tail;    // order x C, last training rows as the initial test context
};

// Per-channel AR(order) by ordinary least squares (no intercept); singular
// normal equations fall back to a 1e-6 ridge.
LinearArModel fit_linear_ar(const Matrix& train, std::size_t order = 8);

// Mean absolute one-step-ahead residual per test timestep.
std::vector<double> linear_ar_score(const LinearArModel& model, const Matrix& test);

// Channel-count-independent transfer: the source's coefficient rows are
// mean-pooled across channels and applied to every target channel, with the
// context tail taken from the target's train split.
LinearArModel pool_linear_ar(const LinearArModel& source, const Matrix& target_train);

}  // namespace ccgbench::ccg
