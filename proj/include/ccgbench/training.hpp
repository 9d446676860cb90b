#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ccgbench/ccg.hpp"
#include "ccgbench/matrix.hpp"

namespace ccgbench::training {

struct TrainConfig {
    std::size_t batch_size = 64;
    double lr_peak = 3e-4;
    std::size_t warmup_steps = 500;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
};

// Linear warmup to lr_peak, then cosine decay to zero over the remaining
// steps. step is 1-based. A run shorter than the warmup never leaves the ramp.
double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

// Acyclicity weight ramp: zero at the start, the target after two full epochs,
// linear in fractional epoch progress in between.
double lambda_dag_at(double epochs_completed, double target);

// Scales the vector so its l2 norm is at most max_norm; returns the factor
// applied (1.0 when already within the budget).
double clip_global_norm(std::vector<double>& grad, double max_norm);

// Decoupled-weight-decay Adam. Coordinates with trainable==0 are skipped
// entirely: no moment update, no step, no decay.
class AdamW {
public:
    AdamW(std::size_t size, const TrainConfig& cfg);
    void step(std::vector<double>& theta, const std::vector<double>& grad, double lr,
              const std::vector<char>* trainable = nullptr);
    std::size_t steps_taken() const { return t_; }

private:
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
    TrainConfig cfg_;
};

// Training-time corruption: spikes round(rate * T) timesteps (all channels) by
// 6 window-channel-stds with a random magnitude in [0.5, 1] and sign. The mask
// marks spiked timesteps; reconstruction targets stay clean.
struct Injection {
    Matrix window;
    std::vector<char> mask;
};
Injection inject_outliers(const Matrix& window, double rate, std::mt19937_64& gen);

// Denoising mask: round(fraction * T) distinct timesteps with inputs zeroed;
// those rows later carry double loss weight against clean targets.
struct MaskedWindow {
    Matrix input;
    std::vector<char> mask;
};
MaskedWindow mask_window(const Matrix& window, double fraction, std::mt19937_64& gen);

struct TraceRow {
    std::size_t step = 0;
    double total = 0.0;
    double rec = 0.0;
    double dag = 0.0;
    double freq = 0.0;
    double lr = 0.0;
    double lambda_dag = 0.0;
};

struct TrainResult {
    std::vector<TraceRow> trace;
    std::size_t total_steps = 0;
    std::size_t steps_per_epoch = 0;
    bool degenerate_warmup = false;  // run ended inside the warmup ramp
    std::vector<std::string> warnings;
};

// Full training loop: seeded shuffling, outlier injection, denoising masks,
// ramped acyclicity weight, gradient clipping, AdamW. Aborts with a
// std::runtime_error naming the offending term if the loss goes non-finite.
// epochs_override replaces the model config's epoch count when nonzero.
TrainResult train(ccg::CcgModel& model, const Matrix& train_split, std::size_t stride,
                  const TrainConfig& cfg, const std::vector<char>* trainable = nullptr,
                  std::size_t epochs_override = 0);

void write_trace(const std::filesystem::path& file, const std::vector<TraceRow>& rows);

// Central-difference gradient verification of the full composite loss.
// Samples up to samples_per_block coordinates per parameter block (all of them
// for small blocks); relative error uses max(|analytic|, |numeric|, 1e-6).
struct GradCheckReport {
    struct BlockStat {
        std::string name;
        double max_rel_err = 0.0;
        std::size_t checked = 0;
    };
    std::vector<BlockStat> blocks;
    double max_rel_err = 0.0;
};
GradCheckReport finite_diff_check(const ccg::CcgModel& model, const std::vector<Matrix>& inputs,
                                  const std::vector<Matrix>& targets,
                                  const std::vector<std::vector<char>>& masks, double lambda_dag,
                                  std::size_t samples_per_block = 200, double fd_step = 1e-4,
                                  std::uint64_t seed = 0);

}  // namespace ccgbench::training
