#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "ccgbench/data.hpp"
#include "ccgbench/rng.hpp"
#include "ccgbench/training.hpp"

namespace ccgbench::training {

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
    if (step > total_steps) throw std::invalid_argument("lr_at: step beyond total");
    // When the run ends inside the ramp the whole schedule is the ramp.
    if (step < cfg.warmup_steps || total_steps <= cfg.warmup_steps)
        return cfg.lr_peak * static_cast<double>(step) /
               static_cast<double>(std::max<std::size_t>(cfg.warmup_steps, 1));
    const double progress = static_cast<double>(step - cfg.warmup_steps) /
                            static_cast<double>(total_steps - cfg.warmup_steps);
    return cfg.lr_peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double lambda_dag_at(double epochs_completed, double target) {
    if (epochs_completed < 0.0) throw std::invalid_argument("lambda_dag_at: negative progress");
    return target * std::min(1.0, epochs_completed / 2.0);
}

double clip_global_norm(std::vector<double>& grad, double max_norm) {
    if (max_norm <= 0.0) throw std::invalid_argument("clip_global_norm: max_norm must be positive");
    double sq = 0.0;
    for (const double g : grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return 1.0;
    const double factor = max_norm / norm;
    for (double& g : grad) g *= factor;
    return factor;
}

AdamW::AdamW(std::size_t size, const TrainConfig& cfg) : m_(size, 0.0), v_(size, 0.0), cfg_(cfg) {}

void AdamW::step(std::vector<double>& theta, const std::vector<double>& grad, double lr,
                 const std::vector<char>* trainable) {
    if (theta.size() != m_.size() || grad.size() != m_.size())
        throw std::invalid_argument("adamw: size mismatch");
    if (trainable && trainable->size() != m_.size())
        throw std::invalid_argument("adamw: trainable mask size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        if (trainable && !(*trainable)[i]) continue;
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
        const double mhat = m_[i] / bc1;
        const double vhat = v_[i] / bc2;
        theta[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * theta[i]);
    }
}

Injection inject_outliers(const Matrix& window, double rate, std::mt19937_64& gen) {
    if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("inject_outliers: rate outside [0,1]");
    if (window.empty()) throw std::invalid_argument("inject_outliers: empty window");
    Injection out{window, std::vector<char>(window.rows, 0)};
    const auto k = static_cast<std::size_t>(std::llround(rate * static_cast<double>(window.rows)));
    if (k == 0) return out;

    std::vector<double> stddev(window.cols, 0.0);
    for (std::size_t c = 0; c < window.cols; ++c) {
        double mean = 0.0;
        for (std::size_t t = 0; t < window.rows; ++t) mean += window(t, c);
        mean /= static_cast<double>(window.rows);
        double var = 0.0;
        for (std::size_t t = 0; t < window.rows; ++t) {
            const double d = window(t, c) - mean;
            var += d * d;
        }
        stddev[c] = std::sqrt(var / static_cast<double>(window.rows));
    }

    for (const std::size_t t : rng::sample_indices(gen, window.rows, k)) {
        out.mask[t] = 1;
        for (std::size_t c = 0; c < window.cols; ++c) {
            const double magnitude = rng::uniform(gen, 0.5, 1.0);
            const double sign = (rng::below(gen, 2) == 0) ? 1.0 : -1.0;
            out.window(t, c) += sign * magnitude * 6.0 * stddev[c];
        }
    }
    return out;
}

MaskedWindow mask_window(const Matrix& window, double fraction, std::mt19937_64& gen) {
    if (fraction < 0.0 || fraction >= 1.0)
        throw std::invalid_argument("mask_window: fraction outside [0,1)");
    if (window.empty()) throw std::invalid_argument("mask_window: empty window");
    MaskedWindow out{window, std::vector<char>(window.rows, 0)};
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(window.rows)));
    for (const std::size_t t : rng::sample_indices(gen, window.rows, k)) {
        out.mask[t] = 1;
        for (std::size_t c = 0; c < window.cols; ++c) out.input(t, c) = 0.0;
    }
    return out;
}

TrainResult train(ccg::CcgModel& model, const Matrix& train_split, std::size_t stride,
                  const TrainConfig& cfg, const std::vector<char>* trainable,
                  std::size_t epochs_override) {
    const data::WindowBatch batch = data::make_windows(train_split, model.window(), stride);
    const std::size_t n_windows = batch.windows.size();
    const std::size_t epochs = epochs_override > 0 ? epochs_override : model.config().epochs;
    if (cfg.batch_size == 0) throw std::invalid_argument("train: zero batch size");

    TrainResult result;
    result.steps_per_epoch = (n_windows + cfg.batch_size - 1) / cfg.batch_size;
    result.total_steps = epochs * result.steps_per_epoch;
    if (result.total_steps < cfg.warmup_steps) {
        result.degenerate_warmup = true;
        result.warnings.push_back("run ends inside the warmup ramp (" +
                                  std::to_string(result.total_steps) + " steps < " +
                                  std::to_string(cfg.warmup_steps) + " warmup): peak lr never reached");
    }

    std::vector<double> theta = model.params().flat();
    AdamW opt(theta.size(), cfg);
    std::mt19937_64 gen(rng::mix(cfg.seed, 0x7261696eULL));
    const double inject_rate = model.config().inject_rate;
    const double mask_fraction = model.config().mask_fraction;
    const double lambda_target = model.config().lambda_dag;

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        const std::vector<std::size_t> order = rng::shuffled(gen, n_windows);
        for (std::size_t pos = 0; pos < n_windows; pos += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, n_windows - pos);
            std::vector<Matrix> inputs, targets;
            std::vector<std::vector<char>> masks;
            inputs.reserve(count);
            targets.reserve(count);
            masks.reserve(count);
            for (std::size_t i = 0; i < count; ++i) {
                const Matrix& clean = batch.windows[order[pos + i]];
                Matrix corrupted = clean;
                if (inject_rate > 0.0) corrupted = inject_outliers(clean, inject_rate, gen).window;
                MaskedWindow mw = mask_window(corrupted, mask_fraction, gen);
                inputs.push_back(std::move(mw.input));
                targets.push_back(clean);
                masks.push_back(std::move(mw.mask));
            }

            const double epochs_completed =
                static_cast<double>(step) / static_cast<double>(result.steps_per_epoch);
            const double lambda_eff = lambda_dag_at(epochs_completed, lambda_target);

            autodiff::Graph g(true);
            const ccg::CcgModel::LossRefs refs = model.build_loss(g, inputs, targets, masks, lambda_eff);
            ++step;

            TraceRow row;
            row.step = step;
            row.total = g.value(refs.total)(0, 0);
            row.rec = g.value(refs.rec)(0, 0);
            row.dag = refs.dag >= 0 ? g.value(refs.dag)(0, 0) : 0.0;
            row.freq = refs.freq >= 0 ? g.value(refs.freq)(0, 0) : 0.0;
            row.lambda_dag = lambda_eff;
            row.lr = lr_at(step, result.total_steps, cfg);
            // Specific parts first so the diagnostic names the actual offender.
            const std::pair<const char*, double> parts[] = {{"reconstruction", row.rec},
                                                            {"acyclicity", row.dag},
                                                            {"frequency", row.freq},
                                                            {"total", row.total}};
            for (const auto& [label, v] : parts)
                if (!std::isfinite(v))
                    throw std::runtime_error("train: non-finite " + std::string(label) +
                                             " loss at step " + std::to_string(step));

            g.backward(refs.total);

            std::vector<double> grad;
            grad.reserve(theta.size());
            for (const std::string& name : model.params().names()) {
                const auto it = refs.param_nodes.find(name);
                if (it == refs.param_nodes.end()) {
                    grad.insert(grad.end(), model.params().block(name).size(), 0.0);
                } else {
                    const Matrix& gm = g.grad(it->second);
                    grad.insert(grad.end(), gm.data.begin(), gm.data.end());
                }
            }
            if (trainable) {
                if (trainable->size() != grad.size())
                    throw std::invalid_argument("train: trainable mask size mismatch");
                for (std::size_t i = 0; i < grad.size(); ++i)
                    if (!(*trainable)[i]) grad[i] = 0.0;
            }
            clip_global_norm(grad, cfg.clip_norm);
            opt.step(theta, grad, row.lr, trainable);
            model.params().set_flat(theta);
            result.trace.push_back(row);
        }
    }
    return result;
}

void write_trace(const std::filesystem::path& file, const std::vector<TraceRow>& rows) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write trace: " + file.string());
    out << "step,total,rec,dag,freq,lr,lambda_dag\n";
    char buf[64];
    auto put = [&](double v, char sep) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf << sep;
    };
    for (const TraceRow& r : rows) {
        out << r.step << ',';
        put(r.total, ',');
        put(r.rec, ',');
        put(r.dag, ',');
        put(r.freq, ',');
        put(r.lr, ',');
        put(r.lambda_dag, '\n');
    }
}

GradCheckReport finite_diff_check(const ccg::CcgModel& model, const std::vector<Matrix>& inputs,
                                  const std::vector<Matrix>& targets,
                                  const std::vector<std::vector<char>>& masks, double lambda_dag,
                                  std::size_t samples_per_block, double fd_step, std::uint64_t seed) {
    // Work on a copy: the probe wiggles parameters in place.
    ccg::CcgModel probe = model;

    autodiff::Graph g(true);
    const ccg::CcgModel::LossRefs refs = probe.build_loss(g, inputs, targets, masks, lambda_dag);
    g.backward(refs.total);

    auto loss_value = [&]() {
        autodiff::Graph eval(false);
        const ccg::CcgModel::LossRefs r = probe.build_loss(eval, inputs, targets, masks, lambda_dag);
        return eval.value(r.total)(0, 0);
    };

    GradCheckReport report;
    std::mt19937_64 gen(rng::mix(seed, 0xfd5eedULL));
    for (const std::string& name : probe.params().names()) {
        Matrix& block = probe.params().block(name);
        const auto it = refs.param_nodes.find(name);

        GradCheckReport::BlockStat stat;
        stat.name = name;
        std::vector<std::size_t> coords;
        if (block.size() <= samples_per_block) {
            coords.resize(block.size());
            for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        } else {
            coords = rng::sample_indices(gen, block.size(), samples_per_block);
        }
        for (const std::size_t i : coords) {
            const double saved = block.data[i];
            block.data[i] = saved + fd_step;
            const double up = loss_value();
            block.data[i] = saved - fd_step;
            const double down = loss_value();
            block.data[i] = saved;
            const double numeric = (up - down) / (2.0 * fd_step);
            const double analytic = it != refs.param_nodes.end() ? g.grad(it->second).data[i] : 0.0;
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), 1e-6});
            stat.max_rel_err = std::max(stat.max_rel_err, rel);
        }
        stat.checked = coords.size();
        report.max_rel_err = std::max(report.max_rel_err, stat.max_rel_err);
        report.blocks.push_back(std::move(stat));
    }
    return report;
}

}  // namespace ccgbench::training
