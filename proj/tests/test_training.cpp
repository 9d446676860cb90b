#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ccgbench/autodiff.hpp"
#include "ccgbench/ccg.hpp"
#include "ccgbench/data.hpp"
#include "ccgbench/matrix.hpp"
#include "ccgbench/training.hpp"

using namespace ccgbench;

namespace {

std::filesystem::path scratch_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "ccgbench_training_tests";
    std::filesystem::create_directories(dir);
    return dir;
}

Matrix sine_series(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Matrix m(rows, cols);
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> noise(0.0, 0.05);
    for (std::size_t c = 0; c < cols; ++c) {
        const double freq = 2.0 * std::numbers::pi * (static_cast<double>(c) + 3.0) / 40.0;
        for (std::size_t t = 0; t < rows; ++t)
            m(t, c) = std::sin(freq * static_cast<double>(t) + 0.7 * static_cast<double>(c)) +
                      noise(gen);
    }
    return m;
}

// Channel-view-only model small enough for fast optimizer loops.
ccg::CcgConfig tiny_config() {
    ccg::CcgConfig cfg;
    cfg.window = 12;
    cfg.d_model = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.rank = 2;
    cfg.k_periods = 2;
    cfg.spectral_bins = 2;
    cfg.score_projection = ccg::ScoreProjection::mean;
    cfg.smooth_window = 5;
    cfg.epochs = 2;
    cfg.mask_fraction = 0.2;
    cfg.validate();
    return cfg;
}

std::size_t count_marks(const std::vector<char>& mask) {
    std::size_t n = 0;
    for (const char m : mask) n += m != 0;
    return n;
}

double tail_mean(const std::vector<training::TraceRow>& trace, std::size_t n,
                 double training::TraceRow::* field) {
    REQUIRE(trace.size() >= n);
    double acc = 0.0;
    for (std::size_t i = trace.size() - n; i < trace.size(); ++i) acc += trace[i].*field;
    return acc / static_cast<double>(n);
}

}  // namespace

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

TEST_CASE("learning rate ramps up then decays along a cosine") {
    training::TrainConfig cfg;
    cfg.lr_peak = 1.0;
    cfg.warmup_steps = 4;

    CHECK(training::lr_at(0, 10, cfg) == 0.0);
    CHECK(training::lr_at(1, 10, cfg) == doctest::Approx(0.25));
    CHECK(training::lr_at(2, 10, cfg) == doctest::Approx(0.5));
    CHECK(training::lr_at(4, 10, cfg) == doctest::Approx(1.0));
    CHECK(training::lr_at(7, 10, cfg) == doctest::Approx(0.5));  // cosine midpoint
    CHECK(training::lr_at(10, 10, cfg) == doctest::Approx(0.0));

    // Both formulas meet at the junction: the ramp end equals the cosine start.
    const double ramp_end = cfg.lr_peak * 4.0 / 4.0;
    CHECK(training::lr_at(4, 10, cfg) == ramp_end);

    // Nonincreasing after the peak.
    for (std::size_t s = 4; s < 40; ++s)
        CHECK(training::lr_at(s, 40, cfg) >= training::lr_at(s + 1, 40, cfg));

    // A run that ends inside the ramp stays on the ramp and never reaches peak.
    CHECK(training::lr_at(3, 3, cfg) == doctest::Approx(0.75));

    training::TrainConfig defaults;
    CHECK(training::lr_at(500, 2000, defaults) == doctest::Approx(3e-4));
    CHECK(training::lr_at(2000, 2000, defaults) == doctest::Approx(0.0));

    CHECK_THROWS_AS(training::lr_at(11, 10, cfg), std::invalid_argument);
}

TEST_CASE("acyclicity coefficient ramps over the first two epochs") {
    CHECK(training::lambda_dag_at(0.0, 0.05) == 0.0);
    CHECK(training::lambda_dag_at(0.5, 0.05) == doctest::Approx(0.0125));
    CHECK(training::lambda_dag_at(1.0, 0.05) == doctest::Approx(0.025));
    CHECK(training::lambda_dag_at(2.0, 0.05) == doctest::Approx(0.05));
    CHECK(training::lambda_dag_at(7.25, 0.05) == 0.05);

    double prev = -1.0;
    for (double p = 0.0; p <= 4.0; p += 0.125) {
        const double v = training::lambda_dag_at(p, 0.05);
        CHECK(v >= prev);
        prev = v;
    }

    CHECK_THROWS_AS(training::lambda_dag_at(-0.1, 0.05), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Clipping and the optimizer
// ---------------------------------------------------------------------------

TEST_CASE("global-norm clipping rescales only oversized gradients") {
    std::vector<double> g{6.0, 8.0};  // norm 10
    CHECK(training::clip_global_norm(g, 1.0) == doctest::Approx(0.1));
    CHECK(g[0] == doctest::Approx(0.6));
    CHECK(g[1] == doctest::Approx(0.8));
    CHECK(std::hypot(g[0], g[1]) == doctest::Approx(1.0));

    std::vector<double> small{0.3, 0.4};
    const std::vector<double> small_copy = small;
    CHECK(training::clip_global_norm(small, 1.0) == 1.0);
    CHECK(small == small_copy);

    // An infinite budget leaves any gradient bitwise untouched.
    std::vector<double> big{1e6, -2e6, 3e6};
    const std::vector<double> big_copy = big;
    CHECK(training::clip_global_norm(big, std::numeric_limits<double>::infinity()) == 1.0);
    CHECK(big == big_copy);

    // Clipping never increases the norm.
    std::mt19937_64 gen(11);
    std::normal_distribution<double> dist(0.0, 3.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> v(8);
        double sq = 0.0;
        for (double& x : v) {
            x = dist(gen);
            sq += x * x;
        }
        const double before = std::sqrt(sq);
        training::clip_global_norm(v, 1.7);
        double after_sq = 0.0;
        for (const double x : v) after_sq += x * x;
        CHECK(std::sqrt(after_sq) <= before + 1e-12);
        CHECK(std::sqrt(after_sq) <= 1.7 + 1e-12);
    }

    std::vector<double> zero{0.0, 0.0};
    CHECK(training::clip_global_norm(zero, 1.0) == 1.0);
    CHECK_THROWS_AS(training::clip_global_norm(zero, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(training::clip_global_norm(zero, -1.0), std::invalid_argument);
}

TEST_CASE("adamw applies decoupled decay and bias-corrected moments") {
    training::TrainConfig cfg;  // weight_decay 1e-4
    const double lr = 0.01;

    // Zero gradient: parameters shrink by exactly theta * lr * wd.
    training::AdamW opt(3, cfg);
    std::vector<double> theta{1.0, -2.0, 0.5};
    std::vector<double> expected = theta;
    for (double& t : expected) t -= lr * (cfg.weight_decay * t);
    opt.step(theta, {0.0, 0.0, 0.0}, lr);
    for (std::size_t i = 0; i < theta.size(); ++i) CHECK(theta[i] == expected[i]);
    CHECK(theta[0] == doctest::Approx(1.0 * (1.0 - lr * cfg.weight_decay)));
    CHECK(opt.steps_taken() == 1);

    // First step with a constant gradient moves by ~lr regardless of magnitude
    // (bias correction makes mhat/sqrt(vhat) ~ sign(grad)).
    training::TrainConfig plain = cfg;
    plain.weight_decay = 0.0;
    training::AdamW opt2(1, plain);
    std::vector<double> th{1.0};
    opt2.step(th, {2.5}, 0.1);
    CHECK(th[0] == doctest::Approx(0.9).epsilon(1e-6));

    // Frozen coordinates receive neither the gradient step nor the decay.
    training::AdamW opt3(2, cfg);
    std::vector<double> th2{1.0, 1.0};
    const std::vector<char> mask{1, 0};
    opt3.step(th2, {1.0, 1.0}, 0.1, &mask);
    CHECK(th2[0] != 1.0);
    CHECK(th2[1] == 1.0);

    std::vector<double> wrong{1.0};
    CHECK_THROWS_AS(opt3.step(wrong, {1.0}, 0.1), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Corruptions
// ---------------------------------------------------------------------------

TEST_CASE("outlier injection spikes sampled rows by three to six sigmas") {
    const Matrix w = sine_series(100, 3, 5);
    std::vector<double> sd(w.cols, 0.0);
    for (std::size_t c = 0; c < w.cols; ++c) {
        double mean = 0.0;
        for (std::size_t t = 0; t < w.rows; ++t) mean += w(t, c);
        mean /= static_cast<double>(w.rows);
        double var = 0.0;
        for (std::size_t t = 0; t < w.rows; ++t) var += (w(t, c) - mean) * (w(t, c) - mean);
        sd[c] = std::sqrt(var / static_cast<double>(w.rows));
    }

    std::mt19937_64 gen(0xabc);
    const training::Injection inj = training::inject_outliers(w, 0.2, gen);
    CHECK(count_marks(inj.mask) == 20);
    for (std::size_t t = 0; t < w.rows; ++t) {
        for (std::size_t c = 0; c < w.cols; ++c) {
            const double delta = inj.window(t, c) - w(t, c);
            if (inj.mask[t]) {
                CHECK(std::abs(delta) >= 3.0 * sd[c] - 1e-9);
                CHECK(std::abs(delta) <= 6.0 * sd[c] + 1e-9);
            } else {
                CHECK(delta == 0.0);
            }
        }
    }

    // Same generator state reproduces the same corruption.
    std::mt19937_64 gen_again(0xabc);
    const training::Injection again = training::inject_outliers(w, 0.2, gen_again);
    CHECK(again.window.data == inj.window.data);
    CHECK(again.mask == inj.mask);

    std::mt19937_64 gen_other(0xdef);
    const training::Injection other = training::inject_outliers(w, 0.2, gen_other);
    CHECK(other.mask != inj.mask);

    std::mt19937_64 gen2(1);
    const training::Injection none = training::inject_outliers(w, 0.0, gen2);
    CHECK(none.window.data == w.data);
    CHECK(count_marks(none.mask) == 0);

    const training::Injection all = training::inject_outliers(w, 1.0, gen2);
    CHECK(count_marks(all.mask) == w.rows);

    CHECK_THROWS_AS(training::inject_outliers(w, 1.5, gen2), std::invalid_argument);
    CHECK_THROWS_AS(training::inject_outliers(w, -0.1, gen2), std::invalid_argument);
}

TEST_CASE("input masking zeroes whole sampled rows") {
    Matrix w(40, 2);
    for (std::size_t t = 0; t < w.rows; ++t)
        for (std::size_t c = 0; c < w.cols; ++c)
            w(t, c) = 2.0 + std::sin(0.3 * static_cast<double>(t) + static_cast<double>(c));

    std::mt19937_64 gen(9);
    const training::MaskedWindow mw = training::mask_window(w, 0.25, gen);
    CHECK(count_marks(mw.mask) == 10);
    for (std::size_t t = 0; t < w.rows; ++t) {
        for (std::size_t c = 0; c < w.cols; ++c) {
            if (mw.mask[t])
                CHECK(mw.input(t, c) == 0.0);
            else
                CHECK(mw.input(t, c) == w(t, c));
        }
    }

    const training::MaskedWindow untouched = training::mask_window(w, 0.0, gen);
    CHECK(untouched.input.data == w.data);
    CHECK(count_marks(untouched.mask) == 0);

    CHECK_THROWS_AS(training::mask_window(w, 1.0, gen), std::invalid_argument);
    CHECK_THROWS_AS(training::mask_window(w, -0.1, gen), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// The training loop
// ---------------------------------------------------------------------------

TEST_CASE("training runs are bit-identical for a fixed seed") {
    const Matrix series = sine_series(120, 3, 4);
    const ccg::CcgConfig cfg = tiny_config();

    training::TrainConfig tc;
    tc.batch_size = 8;
    tc.warmup_steps = 4;
    tc.lr_peak = 1e-3;
    tc.seed = 3;

    ccg::CcgModel m1(cfg, 3, 42);
    ccg::CcgModel m2(cfg, 3, 42);
    const training::TrainResult r1 = training::train(m1, series, 4, tc);
    const training::TrainResult r2 = training::train(m2, series, 4, tc);

    // 28 windows at stride 4, batches of 8 -> 4 steps/epoch, 2 epochs.
    CHECK(r1.steps_per_epoch == 4);
    CHECK(r1.total_steps == 8);
    REQUIRE(r1.trace.size() == 8);
    REQUIRE(r2.trace.size() == 8);
    CHECK_FALSE(r1.degenerate_warmup);

    for (std::size_t i = 0; i < r1.trace.size(); ++i) {
        CHECK(r1.trace[i].step == i + 1);
        CHECK(r1.trace[i].total == r2.trace[i].total);
        CHECK(r1.trace[i].rec == r2.trace[i].rec);
        CHECK(r1.trace[i].dag == r2.trace[i].dag);
        CHECK(r1.trace[i].freq == r2.trace[i].freq);
        CHECK(r1.trace[i].lr == r2.trace[i].lr);
        CHECK(r1.trace[i].lambda_dag == r2.trace[i].lambda_dag);
        CHECK(std::isfinite(r1.trace[i].total));
    }
    CHECK(m1.params().flat() == m2.params().flat());

    // A different data-order seed gives a different trajectory.
    training::TrainConfig other = tc;
    other.seed = 77;
    ccg::CcgModel m3(cfg, 3, 42);
    const training::TrainResult r3 = training::train(m3, series, 4, other);
    bool any_diff = false;
    for (std::size_t i = 0; i < r3.trace.size(); ++i)
        any_diff = any_diff || r3.trace[i].total != r1.trace[i].total;
    CHECK(any_diff);

    // Schedule columns reproduce the closed forms.
    for (std::size_t i = 0; i < r1.trace.size(); ++i) {
        CHECK(r1.trace[i].lr == training::lr_at(i + 1, r1.total_steps, tc));
        CHECK(r1.trace[i].lambda_dag ==
              training::lambda_dag_at(static_cast<double>(i) / 4.0, cfg.lambda_dag));
    }
}

TEST_CASE("the dag coefficient column reaches its target from epoch two on") {
    const Matrix series = sine_series(120, 3, 4);
    const ccg::CcgConfig cfg = tiny_config();

    training::TrainConfig tc;
    tc.batch_size = 8;
    tc.warmup_steps = 4;
    tc.lr_peak = 1e-3;
    tc.seed = 3;

    ccg::CcgModel model(cfg, 3, 42);
    const training::TrainResult res = training::train(model, series, 4, tc, nullptr, 5);
    REQUIRE(res.trace.size() == 20);  // 4 steps/epoch, 5 epochs

    double prev = -1.0;
    for (std::size_t i = 0; i < res.trace.size(); ++i) {
        CHECK(res.trace[i].lambda_dag >= prev);
        prev = res.trace[i].lambda_dag;
        if (i < 8)
            CHECK(res.trace[i].lambda_dag ==
                  doctest::Approx(cfg.lambda_dag * static_cast<double>(i) / 8.0));
        else
            CHECK(res.trace[i].lambda_dag == cfg.lambda_dag);
    }
}

TEST_CASE("a run shorter than the warmup is flagged as degenerate") {
    const Matrix series = sine_series(120, 3, 4);
    const ccg::CcgConfig cfg = tiny_config();

    training::TrainConfig tc;
    tc.batch_size = 8;
    tc.seed = 3;  // warmup stays at the 500-step default

    ccg::CcgModel model(cfg, 3, 42);
    const training::TrainResult res = training::train(model, series, 4, tc, nullptr, 1);
    CHECK(res.degenerate_warmup);
    REQUIRE_FALSE(res.warnings.empty());
    CHECK(res.warnings.front().find("warmup") != std::string::npos);
    for (std::size_t i = 0; i < res.trace.size(); ++i)
        CHECK(res.trace[i].lr ==
              doctest::Approx(tc.lr_peak * static_cast<double>(i + 1) / 500.0));
}

TEST_CASE("one epoch on the synthetic suite lowers the loss") {
    data::SynthSpec spec;
    spec.channels = 4;
    spec.train_len = 600;
    spec.test_len = 120;
    spec.anomaly_segments = 3;
    const data::TimeSeriesDataset ds = data::zscore(data::make_synthetic(spec, "trend"));

    ccg::CcgConfig cfg = tiny_config();
    cfg.window = 24;
    cfg.d_model = 16;
    cfg.k_periods = 2;
    cfg.spectral_bins = 4;
    cfg.validate();

    training::TrainConfig tc;
    tc.batch_size = 8;
    tc.warmup_steps = 5;
    tc.lr_peak = 3e-3;
    tc.seed = 0;

    ccg::CcgModel model(cfg, ds.channels(), 1);
    const training::TrainResult res = training::train(model, ds.train, 2, tc, nullptr, 1);
    REQUIRE(res.trace.size() >= 20);

    CHECK(tail_mean(res.trace, 10, &training::TraceRow::total) < res.trace.front().total);
    CHECK(tail_mean(res.trace, 10, &training::TraceRow::rec) < res.trace.front().rec);
    for (const double v : model.params().flat()) REQUIRE(std::isfinite(v));
}

TEST_CASE("a poisoned parameter aborts training naming the broken part") {
    const Matrix series = sine_series(60, 3, 4);
    const ccg::CcgConfig cfg = tiny_config();

    training::TrainConfig tc;
    tc.batch_size = 8;
    tc.seed = 3;

    ccg::CcgModel model(cfg, 3, 42);
    model.params().block("ch.embed")(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(training::train(model, series, 4, tc),
                         doctest::Contains("non-finite reconstruction"), std::runtime_error);
}

TEST_CASE("frozen blocks pass through training untouched") {
    const Matrix series = sine_series(120, 3, 4);
    const ccg::CcgConfig cfg = tiny_config();

    training::TrainConfig tc;
    tc.batch_size = 8;
    tc.warmup_steps = 2;
    tc.lr_peak = 1e-3;
    tc.seed = 3;

    ccg::CcgModel model(cfg, 3, 9);
    std::map<std::string, std::vector<double>> before;
    for (const std::string& name : model.params().names())
        before[name] = model.params().block(name).data;

    const std::vector<char> mask = model.params().block_mask({"ch.adj."});
    training::train(model, series, 4, tc, &mask, 1);

    for (const std::string& name : model.params().names()) {
        const bool adj = name.rfind("ch.adj.", 0) == 0;
        if (!adj) CHECK(model.params().block(name).data == before[name]);
    }
    // The adjacency factors keep learning through the attention bias even
    // while the penalty coefficient is still ramping from zero.
    CHECK(model.params().block("ch.adj.u").data != before["ch.adj.u"]);
    CHECK(model.params().block("ch.adj.v").data != before["ch.adj.v"]);
}

TEST_CASE("trace files round-trip byte for byte") {
    std::vector<training::TraceRow> rows(3);
    rows[0] = {1, 0.1 + 0.2, 1e-17, 0.0, 0.25, 3e-4, 0.0};
    rows[1] = {2, 1.0 / 3.0, 0.125, 5e-3, 0.5, 2.9e-4, 0.0125};
    rows[2] = {3, 2.0, 1.0, 1.0 / 7.0, 0.75, 1e-4, 0.05};

    const auto file_a = scratch_dir() / "trace_a.csv";
    const auto file_b = scratch_dir() / "trace_b.csv";
    training::write_trace(file_a, rows);
    training::write_trace(file_b, rows);

    const auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    const std::string text_a = slurp(file_a);
    CHECK(text_a == slurp(file_b));

    std::istringstream in(text_a);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "step,total,rec,dag,freq,lr,lambda_dag");
    std::size_t data_lines = 0;
    while (std::getline(in, line)) {
        REQUIRE_FALSE(line.empty());
        if (data_lines == 0) {
            std::stringstream fields(line);
            std::string cell;
            std::getline(fields, cell, ',');
            CHECK(cell == "1");
            std::getline(fields, cell, ',');
            CHECK(std::strtod(cell.c_str(), nullptr) == rows[0].total);  // %.17g is lossless
            std::getline(fields, cell, ',');
            CHECK(std::strtod(cell.c_str(), nullptr) == rows[0].rec);
        }
        ++data_lines;
    }
    CHECK(data_lines == rows.size());
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

TEST_CASE("central differences match a pure quadratic to machine precision") {
    autodiff::Graph g(true);
    Matrix theta(1, 4);
    theta.data = {0.3, -1.2, 2.0, 0.7};
    const autodiff::NodeId p = g.param(theta);
    const autodiff::NodeId loss = g.sum_all(g.square(p));
    g.backward(loss);

    const double h = 1e-5;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const auto value_at = [&](double shift) {
            double acc = 0.0;
            for (std::size_t j = 0; j < theta.size(); ++j) {
                const double x = theta.data[j] + (i == j ? shift : 0.0);
                acc += x * x;
            }
            return acc;
        };
        const double numeric = (value_at(h) - value_at(-h)) / (2.0 * h);
        const double analytic = g.grad(p).data[i];
        CHECK(analytic == doctest::Approx(2.0 * theta.data[i]).epsilon(1e-12));
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        CHECK(rel < 1e-9);
    }
}

TEST_CASE("the acyclicity term alone passes a tight finite-difference check") {
    std::mt19937_64 gen(21);
    std::normal_distribution<double> dist(0.0, 0.8);
    Matrix u(4, 2), v(4, 2);
    for (double& x : u.data) x = dist(gen);
    for (double& x : v.data) x = dist(gen);
    Matrix b(1, 1);
    b(0, 0) = -0.5;
    const double lambda = 0.05;

    autodiff::Graph g(true);
    const autodiff::NodeId un = g.param(u);
    const autodiff::NodeId vn = g.param(v);
    const autodiff::NodeId bn = g.param(b);
    const autodiff::NodeId a = g.sigmoid(g.add_scalar(g.matmul(un, g.transpose(vn)), bn));
    const autodiff::NodeId loss = g.scale(g.square(g.notears_penalty(a)), lambda);
    g.backward(loss);

    const auto loss_value = [&](const Matrix& uu, const Matrix& vv, double bb) {
        const ccg::AdjacencyParams ap{uu, vv, bb, Matrix()};
        const double pen = ccg::dag_penalty(ccg::adjacency(ap));
        return lambda * pen * pen;
    };
    CHECK(g.value(loss)(0, 0) == doctest::Approx(loss_value(u, v, b(0, 0))).epsilon(1e-12));

    const double h = 1e-5;
    double max_rel = 0.0;
    const auto track = [&](double analytic, double up, double down) {
        const double numeric = (up - down) / (2.0 * h);
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        max_rel = std::max(max_rel, rel);
    };
    for (std::size_t i = 0; i < u.size(); ++i) {
        Matrix up = u, down = u;
        up.data[i] += h;
        down.data[i] -= h;
        track(g.grad(un).data[i], loss_value(up, v, b(0, 0)), loss_value(down, v, b(0, 0)));
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        Matrix up = v, down = v;
        up.data[i] += h;
        down.data[i] -= h;
        track(g.grad(vn).data[i], loss_value(u, up, b(0, 0)), loss_value(u, down, b(0, 0)));
    }
    track(g.grad(bn)(0, 0), loss_value(u, v, b(0, 0) + h), loss_value(u, v, b(0, 0) - h));
    CHECK(max_rel < 1e-6);
}

TEST_CASE("the gradient checker accepts a small three-view model") {
    ccg::CcgConfig cfg;
    cfg.use_channel_view = true;
    cfg.use_patch_view = true;
    cfg.use_temp_view = true;
    cfg.window = 12;
    cfg.d_model = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.rank = 2;
    cfg.k_periods = 2;
    cfg.spectral_bins = 2;
    cfg.patch_len = 4;
    cfg.patch_stride = 4;
    cfg.smooth_window = 5;
    cfg.lambda_freq = 0.1;
    cfg.validate();

    ccg::CcgModel model(cfg, 3, 13);
    std::vector<Matrix> targets{sine_series(12, 3, 31), sine_series(12, 3, 32)};
    std::vector<std::vector<char>> masks{std::vector<char>(12, 0), std::vector<char>(12, 0)};
    masks[0][1] = masks[0][5] = 1;
    masks[1][2] = masks[1][9] = 1;
    std::vector<Matrix> inputs = targets;
    for (std::size_t w = 0; w < inputs.size(); ++w)
        for (std::size_t t = 0; t < inputs[w].rows; ++t)
            if (masks[w][t])
                for (std::size_t c = 0; c < inputs[w].cols; ++c) inputs[w](t, c) = 0.0;

    const training::GradCheckReport report =
        training::finite_diff_check(model, inputs, targets, masks, 0.05, 25, 1e-4, 1);

    CHECK(report.max_rel_err < 1e-3);
    REQUIRE_FALSE(report.blocks.empty());

    double worst = 0.0;
    bool saw_sigma = false;
    for (const training::GradCheckReport::BlockStat& stat : report.blocks) {
        worst = std::max(worst, stat.max_rel_err);
        const std::size_t size = model.params().block(stat.name).size();
        CHECK(stat.checked == std::min<std::size_t>(size, 25));
        if (stat.name.find(".sigma") != std::string::npos) {
            saw_sigma = true;
            // The locality prior is a constant of the tape: both gradients vanish.
            CHECK(stat.max_rel_err == 0.0);
        }
    }
    CHECK(saw_sigma);
    CHECK(report.max_rel_err == worst);
    CHECK(report.blocks.size() == model.params().names().size());
}
