#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>
#include <sys/resource.h>

#include "ccgbench/bench.hpp"
#include "ccgbench/rng.hpp"

namespace ccgbench::bench {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Small utilities
// ---------------------------------------------------------------------------

std::string sanitize(const std::string& name) {
    std::string out = name;
    for (char& c : out)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
    return out;
}

void write_text(const std::filesystem::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << text;
}

std::string read_text(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void require_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key))
            throw std::invalid_argument("config: unknown key \"" + key + "\" in " + where);
    }
}

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string fmt_pm(double mean, double std) {
    return fmt("%.3f", mean) + " ± " + fmt("%.3f", std);
}

// Competition ranks over 3-decimal-rounded values, descending; NaN entries
// (failed rows) get rank 0. Ties share the displayed rank.
std::vector<std::size_t> competition_ranks(const std::vector<double>& values) {
    const auto rounded = [](double v) { return std::round(v * 1000.0) / 1000.0; };
    std::vector<std::size_t> ranks(values.size(), 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (std::isnan(values[i])) continue;
        std::size_t better = 0;
        for (std::size_t j = 0; j < values.size(); ++j)
            if (!std::isnan(values[j]) && rounded(values[j]) > rounded(values[i])) ++better;
        ranks[i] = better + 1;
    }
    return ranks;
}

// ---------------------------------------------------------------------------
// JSON <-> structs
// ---------------------------------------------------------------------------

json train_to_json(const training::TrainConfig& tc) {
    return json{{"batch_size", tc.batch_size},   {"lr_peak", tc.lr_peak},
                {"warmup_steps", tc.warmup_steps}, {"weight_decay", tc.weight_decay},
                {"beta1", tc.beta1},             {"beta2", tc.beta2},
                {"eps", tc.eps},                 {"clip_norm", tc.clip_norm}};
}

training::TrainConfig train_from_json(const json& j, const std::string& where) {
    require_keys(j,
                 {"batch_size", "lr_peak", "warmup_steps", "weight_decay", "beta1", "beta2", "eps",
                  "clip_norm"},
                 where);
    training::TrainConfig tc;
    tc.batch_size = j.value("batch_size", tc.batch_size);
    tc.lr_peak = j.value("lr_peak", tc.lr_peak);
    tc.warmup_steps = j.value("warmup_steps", tc.warmup_steps);
    tc.weight_decay = j.value("weight_decay", tc.weight_decay);
    tc.beta1 = j.value("beta1", tc.beta1);
    tc.beta2 = j.value("beta2", tc.beta2);
    tc.eps = j.value("eps", tc.eps);
    tc.clip_norm = j.value("clip_norm", tc.clip_norm);
    return tc;
}

json synth_to_json(const data::SynthSpec& s) {
    return json{{"channels", s.channels}, {"train_len", s.train_len},
                {"test_len", s.test_len}, {"seed", s.seed},
                {"noise", s.noise},       {"anomaly_segments", s.anomaly_segments}};
}

data::SynthSpec synth_from_json(const json& j, const std::string& where) {
    require_keys(j, {"channels", "train_len", "test_len", "seed", "noise", "anomaly_segments"},
                 where);
    data::SynthSpec s;
    s.channels = j.value("channels", s.channels);
    s.train_len = j.value("train_len", s.train_len);
    s.test_len = j.value("test_len", s.test_len);
    s.seed = j.value("seed", s.seed);
    s.noise = j.value("noise", s.noise);
    s.anomaly_segments = j.value("anomaly_segments", s.anomaly_segments);
    return s;
}

json msds_to_json(const data::MsdsOptions& m) {
    return json{{"hosts", m.hosts},
                {"metrics", m.metrics},
                {"timestamp_column", m.timestamp_column},
                {"drop_fraction", m.drop_fraction}};
}

data::MsdsOptions msds_from_json(const json& j, const std::string& where) {
    require_keys(j, {"hosts", "metrics", "timestamp_column", "drop_fraction"}, where);
    data::MsdsOptions m;
    m.hosts = j.value("hosts", m.hosts);
    m.metrics = j.value("metrics", m.metrics);
    m.timestamp_column = j.value("timestamp_column", m.timestamp_column);
    m.drop_fraction = j.value("drop_fraction", m.drop_fraction);
    return m;
}

json dataset_to_json(const DatasetSpec& d) {
    json j{{"name", d.name}, {"kind", d.kind}, {"train_stride", d.train_stride}};
    if (d.kind == "synthetic")
        j["synth"] = synth_to_json(d.synth);
    else
        j["root"] = d.root.generic_string();
    if (d.kind == "msds") j["msds"] = msds_to_json(d.msds);
    return j;
}

DatasetSpec dataset_from_json(const json& j) {
    require_keys(j, {"name", "kind", "root", "train_stride", "synth", "msds"}, "dataset");
    DatasetSpec d;
    d.name = j.at("name").get<std::string>();
    d.kind = j.value("kind", d.kind);
    d.train_stride = j.value("train_stride", d.train_stride);
    if (j.contains("root")) d.root = j.at("root").get<std::string>();
    if (j.contains("synth")) d.synth = synth_from_json(j.at("synth"), "dataset \"" + d.name + "\"");
    if (j.contains("msds")) d.msds = msds_from_json(j.at("msds"), "dataset \"" + d.name + "\"");
    return d;
}

TransferPolicy default_policy(MethodKind kind) {
    return kind == MethodKind::ccg_msd ? TransferPolicy::adapt : TransferPolicy::native;
}

json method_to_json(const MethodSpec& m) {
    json j{{"name", m.name}, {"kind", to_string(m.kind)}};
    switch (m.kind) {
        case MethodKind::ccg_msd:
            j["model"] = json::parse(ccg::config_to_json(m.model));
            j["optimizer"] = train_to_json(m.optimizer);
            j["policy"] = to_string(m.policy);
            break;
        case MethodKind::linear_ar:
            j["order"] = m.ar_order;
            j["policy"] = to_string(m.policy);
            break;
        case MethodKind::external:
            j["scores_dir"] = m.scores_dir.generic_string();
            break;
    }
    return j;
}

MethodSpec method_from_json(const json& j) {
    require_keys(j, {"name", "kind", "preset", "model", "optimizer", "order", "scores_dir", "policy"},
                 "method");
    MethodSpec m;
    m.name = j.at("name").get<std::string>();
    m.kind = method_kind_from_string(j.at("kind").get<std::string>());
    m.policy = j.contains("policy")
                   ? transfer_policy_from_string(j.at("policy").get<std::string>())
                   : default_policy(m.kind);
    if (m.kind == MethodKind::ccg_msd) {
        const ccg::CcgConfig base = ccg::preset(j.value("preset", "default"));
        json merged = json::parse(ccg::config_to_json(base));
        if (j.contains("model")) {
            for (const auto& [key, value] : j.at("model").items()) {
                if (!merged.contains(key))
                    throw std::invalid_argument("config: unknown model field \"" + key +
                                                "\" in method \"" + m.name + "\"");
                merged[key] = value;
            }
        }
        m.model = ccg::config_from_json(merged.dump());
        if (j.contains("optimizer"))
            m.optimizer = train_from_json(j.at("optimizer"), "method \"" + m.name + "\"");
    } else if (m.kind == MethodKind::linear_ar) {
        m.ar_order = j.value("order", m.ar_order);
    } else {
        if (!j.contains("scores_dir"))
            throw std::invalid_argument("config: external method \"" + m.name +
                                        "\" needs scores_dir");
        m.scores_dir = j.at("scores_dir").get<std::string>();
    }
    return m;
}

json config_json(const BenchConfig& cfg) {
    json j;
    j["seeds"] = cfg.seeds;
    j["test_stride"] = cfg.test_stride;
    j["vus_levels"] = cfg.vus_levels;
    j["workers"] = cfg.workers;
    j["out_dir"] = cfg.out_dir.generic_string();
    j["datasets"] = json::array();
    for (const DatasetSpec& d : cfg.datasets) j["datasets"].push_back(dataset_to_json(d));
    j["methods"] = json::array();
    for (const MethodSpec& m : cfg.methods) j["methods"].push_back(method_to_json(m));
    return j;
}

json report_json(const metrics::MetricReport& r) {
    return json{{"f1", r.f1},           {"pa_f1", r.pa_f1},   {"auroc", r.auroc},
                {"auprc", r.auprc},     {"vus_roc", r.vus_roc}, {"vus_pr", r.vus_pr},
                {"best_threshold", r.best_threshold}};
}

json cell_json(const CellResult& c) {
    json j{{"method", c.method}, {"dataset", c.dataset}, {"seed", c.seed}, {"ok", c.ok}};
    if (c.ok)
        j["metrics"] = report_json(c.report);
    else
        j["error"] = c.error;
    return j;
}

// Zero-pad or truncate columns to the requested channel count.
Matrix pad_channels(const Matrix& m, std::size_t channels) {
    if (m.cols == channels) return m;
    Matrix out(m.rows, channels);
    const std::size_t keep = std::min(m.cols, channels);
    for (std::size_t t = 0; t < m.rows; ++t)
        for (std::size_t c = 0; c < keep; ++c) out(t, c) = m(t, c);
    return out;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    for (const double x : v) acc += x;
    return acc / static_cast<double>(v.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// Enums
// ---------------------------------------------------------------------------

std::string to_string(MethodKind k) {
    switch (k) {
        case MethodKind::ccg_msd: return "ccg_msd";
        case MethodKind::linear_ar: return "linear_ar";
        default: return "external";
    }
}

MethodKind method_kind_from_string(const std::string& s) {
    if (s == "ccg_msd") return MethodKind::ccg_msd;
    if (s == "linear_ar") return MethodKind::linear_ar;
    if (s == "external") return MethodKind::external;
    throw std::invalid_argument("unknown method kind: " + s);
}

std::string to_string(TransferPolicy p) {
    switch (p) {
        case TransferPolicy::adapt: return "adapt";
        case TransferPolicy::native: return "native";
        default: return "pad";
    }
}

TransferPolicy transfer_policy_from_string(const std::string& s) {
    if (s == "adapt") return TransferPolicy::adapt;
    if (s == "native") return TransferPolicy::native;
    if (s == "pad") return TransferPolicy::pad;
    throw std::invalid_argument("unknown transfer policy: " + s);
}

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

void BenchConfig::validate() const {
    if (datasets.empty()) throw std::invalid_argument("config: no datasets");
    if (methods.empty()) throw std::invalid_argument("config: no methods");
    if (seeds.empty()) throw std::invalid_argument("config: no seeds");
    if (test_stride != 1) throw std::invalid_argument("config: the test stride is fixed at 1");
    if (workers < 1) throw std::invalid_argument("config: workers must be at least 1");

    std::set<std::string> names;
    for (const DatasetSpec& d : datasets) {
        if (d.name.empty()) throw std::invalid_argument("config: dataset without a name");
        if (!names.insert(d.name).second)
            throw std::invalid_argument("config: duplicate dataset \"" + d.name + "\"");
        if (d.kind != "csv" && d.kind != "synthetic" && d.kind != "msds")
            throw std::invalid_argument("config: dataset \"" + d.name + "\" has unknown kind \"" +
                                        d.kind + "\"");
        if (d.kind != "synthetic" && d.root.empty())
            throw std::invalid_argument("config: dataset \"" + d.name + "\" needs a root");
        if (d.train_stride < 1)
            throw std::invalid_argument("config: dataset \"" + d.name + "\" train_stride < 1");
    }
    names.clear();
    for (const MethodSpec& m : methods) {
        if (m.name.empty()) throw std::invalid_argument("config: method without a name");
        if (!names.insert(m.name).second)
            throw std::invalid_argument("config: duplicate method \"" + m.name + "\"");
        if (m.kind == MethodKind::ccg_msd) m.model.validate();
        if (m.kind == MethodKind::linear_ar && m.ar_order < 1)
            throw std::invalid_argument("config: method \"" + m.name + "\" order < 1");
        if (m.kind == MethodKind::linear_ar && m.policy != TransferPolicy::native)
            throw std::invalid_argument("config: method \"" + m.name +
                                        "\" is channel-independent; only the native policy applies");
        if (m.kind == MethodKind::external && m.scores_dir.empty())
            throw std::invalid_argument("config: method \"" + m.name + "\" needs scores_dir");
    }
    std::set<std::uint64_t> seen(seeds.begin(), seeds.end());
    if (seen.size() != seeds.size()) throw std::invalid_argument("config: duplicate seeds");
}

std::string config_to_json(const BenchConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

BenchConfig config_from_json(const std::string& text) {
    const json j = json::parse(text);
    require_keys(j, {"datasets", "methods", "seeds", "test_stride", "vus_levels", "workers",
                     "out_dir"},
                 "config");
    BenchConfig cfg;
    for (const json& d : j.at("datasets")) cfg.datasets.push_back(dataset_from_json(d));
    for (const json& m : j.at("methods")) cfg.methods.push_back(method_from_json(m));
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    cfg.test_stride = j.value("test_stride", cfg.test_stride);
    cfg.vus_levels = j.value("vus_levels", cfg.vus_levels);
    cfg.workers = j.value("workers", cfg.workers);
    if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
    cfg.validate();
    return cfg;
}

BenchConfig load_config(const std::filesystem::path& file) {
    return config_from_json(read_text(file));
}

std::string run_id(const BenchConfig& cfg) {
    // Execution details (where output goes, how many workers) do not change
    // what is computed, so they stay out of the identity hash.
    json j = config_json(cfg);
    j.erase("out_dir");
    j.erase("workers");
    const std::uint64_t h = rng::fnv1a(j.dump());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Timing helpers
// ---------------------------------------------------------------------------

double measure_throughput(const std::function<void()>& step, std::size_t samples_per_step,
                          const StepBudget& budget) {
    for (std::size_t i = 0; i < budget.warmup; ++i) step();
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < budget.measured; ++i) step();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs <= 0.0) return std::numeric_limits<double>::infinity();
    return static_cast<double>(samples_per_step * budget.measured) / secs;
}

double measure_latency_ms(const std::function<void()>& step, std::size_t items_per_step,
                          const StepBudget& budget) {
    for (std::size_t i = 0; i < budget.warmup; ++i) step();
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < budget.measured; ++i) step();
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return ms / static_cast<double>(items_per_step * budget.measured);
}

bool peak_rss_mb(double& out) {
    rusage usage{};
    if (getrusage(RUSAGE_SELF, &usage) != 0 || usage.ru_maxrss <= 0) return false;
    out = static_cast<double>(usage.ru_maxrss) / 1024.0;  // ru_maxrss is KiB on Linux
    return true;
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

namespace {
std::mutex g_data_mu;
std::mutex g_model_mu;
}  // namespace

Runner::Runner(BenchConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    id_ = run_id(cfg_);
    run_dir_ = cfg_.out_dir / id_;
    std::filesystem::create_directories(run_dir_ / "reports" / "effectiveness");
    std::filesystem::create_directories(run_dir_ / "tables");
    std::filesystem::create_directories(run_dir_ / "checkpoints");
    write_text(run_dir_ / "config.json", config_to_json(cfg_));
}

const data::TimeSeriesDataset& Runner::dataset(const std::string& name) {
    std::lock_guard<std::mutex> lock(g_data_mu);
    const auto it = datasets_.find(name);
    if (it != datasets_.end()) return it->second;

    const DatasetSpec* spec = nullptr;
    for (const DatasetSpec& d : cfg_.datasets)
        if (d.name == name) spec = &d;
    if (!spec) throw std::invalid_argument("unknown dataset: " + name);

    data::TimeSeriesDataset ds;
    if (spec->kind == "synthetic")
        ds = data::make_synthetic(spec->synth, spec->name);
    else if (spec->kind == "msds")
        ds = data::load_msds(spec->root, spec->msds);
    else
        ds = data::load_dataset(spec->root, spec->name);
    if (!ds.normalized) ds = data::zscore(std::move(ds));
    return datasets_.emplace(name, std::move(ds)).first->second;
}

const ccg::CcgModel& Runner::trained_ccg(const MethodSpec& method, const DatasetSpec& ds,
                                         std::uint64_t seed) {
    const std::string key = method.name + "|" + ds.name + "|" + std::to_string(seed);
    {
        std::lock_guard<std::mutex> lock(g_model_mu);
        const auto it = ccg_models_.find(key);
        if (it != ccg_models_.end()) return it->second;
    }

    const std::filesystem::path ckpt =
        run_dir_ / "checkpoints" /
        (sanitize(method.name) + "__" + sanitize(ds.name) + "__seed" + std::to_string(seed) +
         ".json");

    const data::TimeSeriesDataset& d = dataset(ds.name);
    if (std::filesystem::exists(ckpt)) {
        ccg::CcgModel model = ccg::CcgModel::load_checkpoint(ckpt);
        if (model.channels() != d.channels())
            throw std::runtime_error("checkpoint channel mismatch: " + ckpt.string());
        std::lock_guard<std::mutex> lock(g_model_mu);
        return ccg_models_.emplace(key, std::move(model)).first->second;
    }

    ccg::CcgModel model(method.model, d.channels(), seed);
    training::TrainConfig tc = method.optimizer;
    tc.seed = seed;
    training::train(model, d.train, ds.train_stride, tc);
    model.save_checkpoint(ckpt);
    std::lock_guard<std::mutex> lock(g_model_mu);
    return ccg_models_.emplace(key, std::move(model)).first->second;
}

const ccg::LinearArModel& Runner::trained_ar(const MethodSpec& method, const DatasetSpec& ds,
                                             std::uint64_t seed) {
    const std::string key = method.name + "|" + ds.name + "|" + std::to_string(seed);
    {
        std::lock_guard<std::mutex> lock(g_model_mu);
        const auto it = ar_models_.find(key);
        if (it != ar_models_.end()) return it->second;
    }
    const data::TimeSeriesDataset& d = dataset(ds.name);
    ccg::LinearArModel model = ccg::fit_linear_ar(d.train, method.ar_order);
    std::lock_guard<std::mutex> lock(g_model_mu);
    return ar_models_.emplace(key, std::move(model)).first->second;
}

std::vector<double> Runner::external_scores(const MethodSpec& method, const DatasetSpec& ds) {
    const data::RawCsv csv = data::read_csv(method.scores_dir / (ds.name + ".csv"));
    std::size_t col = csv.header.size();
    for (std::size_t i = 0; i < csv.header.size(); ++i)
        if (csv.header[i] == "score") col = i;
    if (col == csv.header.size())
        throw std::runtime_error("external scores for " + ds.name + " lack a \"score\" column");
    std::vector<double> scores;
    scores.reserve(csv.rows.size());
    for (const std::vector<std::string>& row : csv.rows) {
        char* end = nullptr;
        const double v = std::strtod(row[col].c_str(), &end);
        if (end == row[col].c_str())
            throw std::runtime_error("external scores for " + ds.name + ": bad number \"" +
                                     row[col] + "\"");
        scores.push_back(v);
    }
    return scores;
}

std::function<std::vector<double>(const Matrix&)> Runner::scorer(const MethodSpec& method,
                                                                 const DatasetSpec& ds,
                                                                 std::uint64_t seed) {
    switch (method.kind) {
        case MethodKind::ccg_msd: {
            const ccg::CcgModel& model = trained_ccg(method, ds, seed);
            return [&model](const Matrix& test) { return ccg::score_series(model, test); };
        }
        case MethodKind::linear_ar: {
            const ccg::LinearArModel& model = trained_ar(method, ds, seed);
            return [&model](const Matrix& test) { return ccg::linear_ar_score(model, test); };
        }
        default: {
            // A fixed score file is input-independent by construction: it covers
            // exactly the recorded test rows and cannot react to perturbations.
            std::vector<double> scores = external_scores(method, ds);
            return [scores](const Matrix& test) {
                if (test.rows != scores.size())
                    throw std::runtime_error("external scores cover " +
                                             std::to_string(scores.size()) + " rows, test has " +
                                             std::to_string(test.rows));
                return scores;
            };
        }
    }
}

CellResult Runner::evaluate_cell(const MethodSpec& method, const DatasetSpec& ds,
                                 std::uint64_t seed) {
    CellResult cell;
    cell.method = method.name;
    cell.dataset = ds.name;
    cell.seed = seed;
    try {
        const data::TimeSeriesDataset& d = dataset(ds.name);
        const auto score_fn = scorer(method, ds, seed);
        const std::vector<double> scores = score_fn(d.test);
        metrics::EvalOptions opt;
        opt.buffer_levels = cfg_.vus_levels;
        cell.report = metrics::evaluate(scores, d.test_labels, opt);
        cell.report.method = method.name;
        cell.report.dataset = ds.name;
        cell.report.seed = seed;
        cell.ok = true;
    } catch (const std::exception& e) {
        cell.error = e.what();
    }
    return cell;
}

EffectivenessResult Runner::run_effectiveness() {
    struct Job {
        const MethodSpec* method;
        const DatasetSpec* ds;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const MethodSpec& m : cfg_.methods)
        for (const DatasetSpec& d : cfg_.datasets)
            for (const std::uint64_t s : cfg_.seeds) jobs.push_back({&m, &d, s});

    EffectivenessResult result;
    result.cells.resize(jobs.size());
    const std::size_t workers = std::min<std::size_t>(cfg_.workers, jobs.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < jobs.size(); ++i)
            result.cells[i] = evaluate_cell(*jobs[i].method, *jobs[i].ds, jobs[i].seed);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1))
                    result.cells[i] = evaluate_cell(*jobs[i].method, *jobs[i].ds, jobs[i].seed);
            });
        for (std::thread& t : pool) t.join();
    }

    // Seed-level dumps, then per-(method, dataset) aggregates over the seeds
    // that succeeded.
    json combined;
    combined["cells"] = json::array();
    for (const CellResult& cell : result.cells) {
        result.all_ok = result.all_ok && cell.ok;
        const json j = cell_json(cell);
        combined["cells"].push_back(j);
        const std::filesystem::path file =
            run_dir_ / "reports" / "effectiveness" /
            (sanitize(cell.method) + "__" + sanitize(cell.dataset) + "__seed" +
             std::to_string(cell.seed) + ".json");
        write_text(file, j.dump(2) + "\n");
    }
    combined["aggregates"] = json::array();
    for (const MethodSpec& m : cfg_.methods) {
        for (const DatasetSpec& d : cfg_.datasets) {
            std::vector<metrics::MetricReport> ok_reports;
            for (const CellResult& cell : result.cells)
                if (cell.ok && cell.method == m.name && cell.dataset == d.name)
                    ok_reports.push_back(cell.report);
            if (ok_reports.empty()) continue;
            const metrics::MetricAggregate agg = metrics::aggregate_seeds(ok_reports);
            result.aggregates.push_back(agg);
            combined["aggregates"].push_back(json{{"method", agg.method},
                                                  {"dataset", agg.dataset},
                                                  {"seeds", agg.seeds},
                                                  {"mean", report_json(agg.mean)},
                                                  {"std", report_json(agg.stddev)}});
        }
    }
    write_text(run_dir_ / "reports" / "effectiveness.json", combined.dump(2) + "\n");
    return result;
}

RobustnessResult Runner::run_robustness() {
    RobustnessResult result;
    for (const MethodSpec& m : cfg_.methods) {
        RobustnessRow row;
        row.method = m.name;
        try {
            std::vector<perturb::SeedScorers> runs;
            for (const std::uint64_t seed : cfg_.seeds) {
                perturb::SeedScorers per_seed;
                per_seed.seed = seed;
                for (const DatasetSpec& dspec : cfg_.datasets) {
                    const data::TimeSeriesDataset& d = dataset(dspec.name);
                    perturb::ScorableDataset sd;
                    sd.name = dspec.name;
                    sd.test = d.test;
                    sd.labels = d.test_labels;
                    sd.score = scorer(m, dspec, seed);
                    per_seed.datasets.push_back(std::move(sd));
                }
                runs.push_back(std::move(per_seed));
            }
            row.report = perturb::robustness_suite(runs, {}, cfg_.vus_levels);
            double acc = 0.0;
            for (const perturb::Family f : perturb::kFamilies) acc += row.report.of(f).vus_mean;
            row.avg = acc / 3.0;
            row.ok = true;
        } catch (const std::exception& e) {
            row.error = e.what();
            result.all_ok = false;
        }
        result.rows.push_back(std::move(row));
    }

    std::vector<double> avgs;
    for (const RobustnessRow& row : result.rows)
        avgs.push_back(row.ok ? row.avg : std::numeric_limits<double>::quiet_NaN());
    const std::vector<std::size_t> ranks = competition_ranks(avgs);
    for (std::size_t i = 0; i < result.rows.size(); ++i) result.rows[i].rank = ranks[i];

    json out = json::array();
    for (const RobustnessRow& row : result.rows) {
        json j{{"method", row.method}, {"ok", row.ok}};
        if (!row.ok) {
            j["error"] = row.error;
        } else {
            j["clean"] = json{{"vus_mean", row.report.clean_vus_mean},
                              {"vus_std", row.report.clean_vus_std}};
            json fams;
            for (const perturb::Family f : perturb::kFamilies) {
                const perturb::FamilyOutcome& o = row.report.of(f);
                fams[perturb::to_string(f)] = json{{"vus_mean", o.vus_mean},
                                                   {"vus_std", o.vus_std},
                                                   {"retention_mean", o.retention_mean},
                                                   {"retention_std", o.retention_std},
                                                   {"per_seed_vus", o.per_seed_vus},
                                                   {"per_seed_retention", o.per_seed_retention}};
            }
            j["families"] = fams;
            j["avg"] = row.avg;
            j["rank"] = row.rank;
        }
        out.push_back(j);
    }
    write_text(run_dir_ / "reports" / "robustness.json", out.dump(2) + "\n");
    return result;
}

TransferCell Runner::evaluate_transfer_cell(const MethodSpec& method, const DatasetSpec& source,
                                            const DatasetSpec& target) {
    TransferCell cell;
    cell.source = source.name;
    cell.target = target.name;
    const std::uint64_t seed = cfg_.seeds.front();
    try {
        const data::TimeSeriesDataset& src = dataset(source.name);
        const data::TimeSeriesDataset& tgt = dataset(target.name);
        std::vector<double> scores;

        if (method.kind == MethodKind::linear_ar) {
            const ccg::LinearArModel& model = trained_ar(method, source, seed);
            if (src.channels() == tgt.channels())
                scores = ccg::linear_ar_score(model, tgt.test);
            else
                scores = ccg::linear_ar_score(ccg::pool_linear_ar(model, tgt.train), tgt.test);
        } else {
            const ccg::CcgModel& source_model = trained_ccg(method, source, seed);
            if (source.name == target.name) {
                scores = ccg::score_series(source_model, tgt.test);  // in-distribution
            } else if (method.policy == TransferPolicy::native) {
                scores = ccg::score_series(source_model, tgt.test);
            } else if (method.policy == TransferPolicy::pad) {
                scores = ccg::score_series(source_model, pad_channels(tgt.test, src.channels()));
            } else {
                // Re-initialise the channel-facing blocks for the target width,
                // carry everything else over frozen, fine-tune one epoch.
                const std::uint64_t adapt_seed = rng::mix(seed, rng::fnv1a(target.name));
                ccg::CcgModel adapted(method.model, tgt.channels(), adapt_seed);
                std::vector<std::string> tuned = {"ch.embed", "ch.adj."};
                for (const std::string& name : adapted.params().names()) {
                    if (name == "ch.embed" || name == "ch.adj.u" || name == "ch.adj.v") continue;
                    if (!source_model.params().has(name)) continue;
                    const Matrix& from = source_model.params().block(name);
                    Matrix& to = adapted.params().block(name);
                    if (from.rows == to.rows && from.cols == to.cols)
                        to = from;
                    else
                        tuned.push_back(name);  // channel-shaped: fresh init, fine-tuned
                }
                const std::vector<char> mask = adapted.params().block_mask(tuned);
                training::TrainConfig tc = method.optimizer;
                tc.seed = adapt_seed;
                const std::size_t n_windows =
                    data::make_windows(tgt.train, adapted.window(), target.train_stride)
                        .windows.size();
                const std::size_t steps = (n_windows + tc.batch_size - 1) / tc.batch_size;
                tc.warmup_steps = std::max<std::size_t>(1, steps / 10);
                training::train(adapted, tgt.train, target.train_stride, tc, &mask, 1);
                scores = ccg::score_series(adapted, tgt.test);
            }
        }

        metrics::EvalOptions opt;
        opt.buffer_levels = cfg_.vus_levels;
        cell.report = metrics::evaluate(scores, tgt.test_labels, opt);
        cell.report.method = method.name;
        cell.report.dataset = target.name;
        cell.report.seed = seed;
        cell.ok = true;
    } catch (const std::exception& e) {
        cell.error = e.what();
    }
    return cell;
}

TransferResult Runner::run_transfer() {
    TransferResult result;
    for (const MethodSpec& m : cfg_.methods) {
        if (m.kind == MethodKind::external) continue;  // nothing to transfer
        TransferMatrix matrix;
        matrix.method = m.name;
        matrix.policy = m.policy;
        for (const DatasetSpec& d : cfg_.datasets) matrix.datasets.push_back(d.name);

        std::vector<double> diag, offdiag;
        for (const DatasetSpec& source : cfg_.datasets) {
            for (const DatasetSpec& target : cfg_.datasets) {
                TransferCell cell = evaluate_transfer_cell(m, source, target);
                matrix.all_ok = matrix.all_ok && cell.ok;
                if (cell.ok)
                    (source.name == target.name ? diag : offdiag).push_back(cell.report.vus_roc);
                matrix.cells.push_back(std::move(cell));
            }
        }
        matrix.diag_mean = mean_of(diag);
        matrix.offdiag_mean = mean_of(offdiag);
        result.all_ok = result.all_ok && matrix.all_ok;
        result.matrices.push_back(std::move(matrix));
    }

    json out = json::array();
    for (const TransferMatrix& matrix : result.matrices) {
        json j{{"method", matrix.method},
               {"policy", to_string(matrix.policy)},
               {"datasets", matrix.datasets},
               {"seed", cfg_.seeds.front()}};
        j["cells"] = json::array();
        for (const TransferCell& cell : matrix.cells) {
            json c{{"source", cell.source}, {"target", cell.target}, {"ok", cell.ok}};
            if (cell.ok)
                c["metrics"] = report_json(cell.report);
            else
                c["error"] = cell.error;
            j["cells"].push_back(c);
        }
        if (!std::isnan(matrix.diag_mean)) j["diag_mean"] = matrix.diag_mean;
        if (!std::isnan(matrix.offdiag_mean)) j["offdiag_mean"] = matrix.offdiag_mean;
        out.push_back(j);
    }
    write_text(run_dir_ / "reports" / "transfer.json", out.dump(2) + "\n");
    return result;
}

EfficiencyResult Runner::run_efficiency() {
    EfficiencyResult result;

    // Standardised workload: C=38 synthetic traffic at the protocol window.
    data::SynthSpec spec;
    spec.channels = 38;
    spec.train_len = 800;
    spec.test_len = 400;
    const data::TimeSeriesDataset ds = data::zscore(data::make_synthetic(spec, "efficiency"));
    const StepBudget budget;
    constexpr std::size_t kBatch = 64;

    for (const MethodSpec& m : cfg_.methods) {
        if (m.kind == MethodKind::external) continue;  // no trainable form to measure
        EfficiencyRecord rec;
        rec.method = m.name;
        rec.warmup_steps = budget.warmup;
        rec.measured_steps = budget.measured;
        try {
            if (m.kind == MethodKind::ccg_msd) {
                ccg::CcgConfig mcfg = m.model;
                mcfg.window = 100;
                mcfg.validate();
                ccg::CcgModel model(mcfg, ds.channels(), 0);
                rec.params = model.params().size();

                const data::WindowBatch train_w = data::make_windows(ds.train, 100, 5);
                std::vector<double> theta = model.params().flat();
                training::TrainConfig tc = m.optimizer;
                training::AdamW opt(theta.size(), tc);
                std::mt19937_64 gen(0);
                std::size_t cursor = 0;
                const auto train_step = [&] {
                    std::vector<Matrix> inputs, targets;
                    std::vector<std::vector<char>> masks;
                    for (std::size_t i = 0; i < kBatch; ++i) {
                        const Matrix& w = train_w.windows[(cursor + i) % train_w.windows.size()];
                        training::MaskedWindow mw =
                            training::mask_window(w, mcfg.mask_fraction, gen);
                        inputs.push_back(std::move(mw.input));
                        targets.push_back(w);
                        masks.push_back(std::move(mw.mask));
                    }
                    cursor += kBatch;
                    autodiff::Graph g(true);
                    const ccg::CcgModel::LossRefs refs =
                        model.build_loss(g, inputs, targets, masks, mcfg.lambda_dag);
                    g.backward(refs.total);
                    std::vector<double> grad;
                    grad.reserve(theta.size());
                    for (const std::string& name : model.params().names()) {
                        const auto it = refs.param_nodes.find(name);
                        if (it == refs.param_nodes.end())
                            grad.insert(grad.end(), model.params().block(name).size(), 0.0);
                        else {
                            const Matrix& gm = g.grad(it->second);
                            grad.insert(grad.end(), gm.data.begin(), gm.data.end());
                        }
                    }
                    training::clip_global_norm(grad, tc.clip_norm);
                    opt.step(theta, grad, tc.lr_peak);
                    model.params().set_flat(theta);
                };
                rec.train_samples_per_sec = measure_throughput(train_step, kBatch, budget);

                const data::WindowBatch test_w = data::make_windows(ds.test, 100, 1);
                std::size_t icursor = 0;
                const auto infer_step = [&] {
                    for (std::size_t i = 0; i < kBatch; ++i)
                        model.score_window(
                            test_w.windows[(icursor + i) % test_w.windows.size()]);
                    icursor += kBatch;
                };
                rec.infer_ms_per_sample = measure_latency_ms(infer_step, kBatch, budget);
            } else {
                rec.params = m.ar_order * ds.channels();
                ccg::LinearArModel model = ccg::fit_linear_ar(ds.train, m.ar_order);
                const auto train_step = [&] { model = ccg::fit_linear_ar(ds.train, m.ar_order); };
                rec.train_samples_per_sec = measure_throughput(train_step, ds.train.rows, budget);
                const auto infer_step = [&] { ccg::linear_ar_score(model, ds.test); };
                rec.infer_ms_per_sample = measure_latency_ms(infer_step, ds.test.rows, budget);
            }
            rec.rss_available = peak_rss_mb(rec.peak_rss_mb);
            rec.ok = true;
        } catch (const std::exception& e) {
            rec.error = e.what();
            result.all_ok = false;
        }
        result.records.push_back(std::move(rec));
    }

    json out = json::array();
    for (const EfficiencyRecord& rec : result.records) {
        json j{{"method", rec.method}, {"ok", rec.ok}};
        if (!rec.ok) {
            j["error"] = rec.error;
        } else {
            j["params"] = rec.params;
            j["train_samples_per_sec"] = rec.train_samples_per_sec;
            j["infer_ms_per_sample"] = rec.infer_ms_per_sample;
            j["warmup_steps"] = rec.warmup_steps;
            j["measured_steps"] = rec.measured_steps;
            if (rec.rss_available) j["peak_rss_mb"] = rec.peak_rss_mb;
        }
        out.push_back(j);
    }
    write_text(run_dir_ / "reports" / "efficiency.json", out.dump(2) + "\n");
    return result;
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

namespace {

std::string markdown_table(const std::vector<std::string>& header,
                           const std::vector<std::vector<std::string>>& rows) {
    std::string out = "|";
    for (const std::string& h : header) out += " " + h + " |";
    out += "\n|";
    for (std::size_t i = 0; i < header.size(); ++i) out += " --- |";
    out += "\n";
    for (const std::vector<std::string>& row : rows) {
        out += "|";
        for (const std::string& cell : row) out += " " + cell + " |";
        out += "\n";
    }
    return out;
}

std::string csv_table(const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
    std::string out;
    for (std::size_t i = 0; i < header.size(); ++i)
        out += (i ? "," : "") + header[i];
    out += "\n";
    for (const std::vector<std::string>& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + row[i];
        out += "\n";
    }
    return out;
}

}  // namespace

void Runner::emit_report() {
    const std::filesystem::path reports = run_dir_ / "reports";
    const std::filesystem::path tables = run_dir_ / "tables";

    if (std::filesystem::exists(reports / "effectiveness.json")) {
        const json eff = json::parse(read_text(reports / "effectiveness.json"));
        std::vector<std::string> header{"method"};
        for (const DatasetSpec& d : cfg_.datasets) header.push_back(d.name);
        header.push_back("Avg");
        header.push_back("Rank");

        std::vector<std::vector<std::string>> rows;
        std::vector<double> avgs;
        for (const MethodSpec& m : cfg_.methods) {
            std::vector<std::string> row{m.name};
            double acc = 0.0;
            std::size_t found = 0;
            for (const DatasetSpec& d : cfg_.datasets) {
                std::string cell = "n/a";
                for (const json& agg : eff.at("aggregates")) {
                    if (agg.at("method") != m.name || agg.at("dataset") != d.name) continue;
                    const double mu = agg.at("mean").at("vus_roc").get<double>();
                    const double sd = agg.at("std").at("vus_roc").get<double>();
                    cell = fmt_pm(mu, sd);
                    acc += mu;
                    ++found;
                }
                row.push_back(cell);
            }
            if (found == cfg_.datasets.size()) {
                avgs.push_back(acc / static_cast<double>(found));
                row.push_back(fmt("%.3f", avgs.back()));
            } else {
                avgs.push_back(std::numeric_limits<double>::quiet_NaN());
                row.push_back("n/a");
            }
            rows.push_back(std::move(row));
        }
        const std::vector<std::size_t> ranks = competition_ranks(avgs);
        for (std::size_t i = 0; i < rows.size(); ++i)
            rows[i].push_back(ranks[i] ? std::to_string(ranks[i]) : "-");
        write_text(tables / "main.csv", csv_table(header, rows));
        write_text(tables / "main.md",
                   "# Effectiveness (VUS-ROC, mean ± std across seeds)\n\n" +
                       markdown_table(header, rows));
    }

    if (std::filesystem::exists(reports / "robustness.json")) {
        const json rob = json::parse(read_text(reports / "robustness.json"));
        const std::vector<std::string> header{"method",  "Base",       "Noise",      "Dropout",
                                              "Shift",   "Avg",        "Rank",       "ret_noise",
                                              "ret_dropout", "ret_shift"};
        std::vector<std::vector<std::string>> rows;
        for (const json& row : rob) {
            std::vector<std::string> cells{row.at("method").get<std::string>()};
            if (!row.at("ok").get<bool>()) {
                cells.insert(cells.end(), {"failed", "-", "-", "-", "-", "-", "-", "-", "-"});
            } else {
                cells.push_back(fmt_pm(row.at("clean").at("vus_mean").get<double>(),
                                       row.at("clean").at("vus_std").get<double>()));
                for (const char* fam : {"noise", "dropout", "shift"})
                    cells.push_back(
                        fmt_pm(row.at("families").at(fam).at("vus_mean").get<double>(),
                               row.at("families").at(fam).at("vus_std").get<double>()));
                cells.push_back(fmt("%.3f", row.at("avg").get<double>()));
                cells.push_back(std::to_string(row.at("rank").get<std::size_t>()));
                for (const char* fam : {"noise", "dropout", "shift"})
                    cells.push_back(
                        fmt("%.3f", row.at("families").at(fam).at("retention_mean").get<double>()));
            }
            rows.push_back(std::move(cells));
        }
        write_text(tables / "robustness.csv", csv_table(header, rows));
        write_text(tables / "robustness.md",
                   "# Robustness (absolute VUS-ROC under perturbation; retention is "
                   "diagnostic)\n\n" +
                       markdown_table(header, rows));
    }

    if (std::filesystem::exists(reports / "transfer.json")) {
        const json tr = json::parse(read_text(reports / "transfer.json"));
        for (const json& matrix : tr) {
            const std::string method = matrix.at("method").get<std::string>();
            const auto names = matrix.at("datasets").get<std::vector<std::string>>();
            std::vector<std::string> header{"source\\target"};
            header.insert(header.end(), names.begin(), names.end());
            std::vector<std::vector<std::string>> rows;
            std::size_t idx = 0;
            for (const std::string& source : names) {
                std::vector<std::string> row{source};
                for (std::size_t t = 0; t < names.size(); ++t, ++idx) {
                    const json& cell = matrix.at("cells").at(idx);
                    row.push_back(cell.at("ok").get<bool>()
                                      ? fmt("%.3f", cell.at("metrics").at("vus_roc").get<double>())
                                      : std::string("failed"));
                }
                rows.push_back(std::move(row));
            }
            if (matrix.contains("diag_mean")) {
                std::vector<std::string> row{"diagonal mean",
                                             fmt("%.3f", matrix.at("diag_mean").get<double>())};
                row.resize(header.size(), "");
                rows.push_back(std::move(row));
            }
            if (matrix.contains("offdiag_mean")) {
                std::vector<std::string> row{"off-diagonal mean",
                                             fmt("%.3f", matrix.at("offdiag_mean").get<double>())};
                row.resize(header.size(), "");
                rows.push_back(std::move(row));
            }
            const std::string stem = "transfer_" + sanitize(method);
            write_text(tables / (stem + ".csv"), csv_table(header, rows));
            write_text(tables / (stem + ".md"),
                       "# Transfer (VUS-ROC, train source -> score target, policy " +
                           matrix.at("policy").get<std::string>() + ")\n\n" +
                           markdown_table(header, rows));
        }
    }

    if (std::filesystem::exists(reports / "efficiency.json")) {
        const json ef = json::parse(read_text(reports / "efficiency.json"));
        const std::vector<std::string> header{"method", "params", "train_samples_per_sec",
                                              "infer_ms_per_sample", "peak_rss_mb"};
        std::vector<std::vector<std::string>> rows;
        for (const json& rec : ef) {
            std::vector<std::string> row{rec.at("method").get<std::string>()};
            if (!rec.at("ok").get<bool>()) {
                row.insert(row.end(), {"failed", "-", "-", "-"});
            } else {
                row.push_back(std::to_string(rec.at("params").get<std::size_t>()));
                row.push_back(fmt("%.1f", rec.at("train_samples_per_sec").get<double>()));
                row.push_back(fmt("%.4f", rec.at("infer_ms_per_sample").get<double>()));
                row.push_back(rec.contains("peak_rss_mb")
                                  ? fmt("%.1f", rec.at("peak_rss_mb").get<double>())
                                  : std::string("n/a"));
            }
            rows.push_back(std::move(row));
        }
        write_text(tables / "efficiency.csv", csv_table(header, rows));
        write_text(tables / "efficiency.md", "# Efficiency (batch 64, window 100, C=38)\n\n" +
                                                 markdown_table(header, rows));
    }
}

}  // namespace ccgbench::bench
