#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ccgbench/ccg.hpp"
#include "ccgbench/data.hpp"
#include "ccgbench/metrics.hpp"
#include "ccgbench/perturb.hpp"
#include "ccgbench/training.hpp"

namespace ccgbench::bench {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class MethodKind { ccg_msd, linear_ar, external };
std::string to_string(MethodKind k);
MethodKind method_kind_from_string(const std::string& s);

// Cross-dataset channel handling: adapt re-initialises and fine-tunes the
// channel-facing blocks on the target train split, native scores as-is
// (channel-independent methods), pad zero-pads or truncates the target's
// channels to the source count.
enum class TransferPolicy { adapt, native, pad };
std::string to_string(TransferPolicy p);
TransferPolicy transfer_policy_from_string(const std::string& s);

struct MethodSpec {
    std::string name;
    MethodKind kind = MethodKind::ccg_msd;
    ccg::CcgConfig model;                  // resolved preset + overrides
    training::TrainConfig optimizer;       // per-cell seed is filled in at run time
    std::size_t ar_order = 8;              // linear_ar
    std::filesystem::path scores_dir;      // external: <dir>/<dataset>.csv, "score" column
    TransferPolicy policy = TransferPolicy::native;
};

struct DatasetSpec {
    std::string name;
    std::string kind = "csv";  // csv | synthetic | msds
    std::filesystem::path root;
    data::SynthSpec synth;     // kind == synthetic
    data::MsdsOptions msds;    // kind == msds
    std::size_t train_stride = 5;
};

struct BenchConfig {
    std::vector<DatasetSpec> datasets;
    std::vector<MethodSpec> methods;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::size_t test_stride = 1;
    std::size_t vus_levels = 50;
    std::size_t workers = 1;
    std::filesystem::path out_dir = "out";

    void validate() const;  // throws std::invalid_argument
};

// Canonical (preset-expanded, key-sorted) JSON. Two config files that resolve
// to the same settings serialize identically and therefore share a run id.
std::string config_to_json(const BenchConfig& cfg);
BenchConfig config_from_json(const std::string& text);
BenchConfig load_config(const std::filesystem::path& file);

// FNV-1a of the canonical config, as 16 hex digits.
std::string run_id(const BenchConfig& cfg);

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct CellResult {
    std::string method;
    std::string dataset;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    metrics::MetricReport report;
};

struct EffectivenessResult {
    std::vector<CellResult> cells;  // method-major, then dataset, then seed
    std::vector<metrics::MetricAggregate> aggregates;
    bool all_ok = true;
};

struct RobustnessRow {
    std::string method;
    bool ok = false;
    std::string error;
    perturb::RobustnessReport report;
    double avg = 0.0;  // mean of the three family means
    std::size_t rank = 0;
};

struct RobustnessResult {
    std::vector<RobustnessRow> rows;
    bool all_ok = true;
};

struct TransferCell {
    std::string source;
    std::string target;
    bool ok = false;
    std::string error;
    metrics::MetricReport report;  // seed-0 metrics on the target's test split
};

struct TransferMatrix {
    std::string method;
    TransferPolicy policy = TransferPolicy::native;
    std::vector<std::string> datasets;
    std::vector<TransferCell> cells;  // row-major: source x target
    double diag_mean = 0.0;           // VUS-ROC over successful cells
    double offdiag_mean = 0.0;
    bool all_ok = true;

    const TransferCell& at(std::size_t src, std::size_t tgt) const {
        return cells[src * datasets.size() + tgt];
    }
};

struct TransferResult {
    std::vector<TransferMatrix> matrices;
    bool all_ok = true;
};

struct EfficiencyRecord {
    std::string method;
    bool ok = false;
    std::string error;
    std::size_t params = 0;
    double train_samples_per_sec = 0.0;
    double infer_ms_per_sample = 0.0;
    std::size_t warmup_steps = 0;    // as executed
    std::size_t measured_steps = 0;  // as executed
    double peak_rss_mb = 0.0;
    bool rss_available = false;
};

struct EfficiencyResult {
    std::vector<EfficiencyRecord> records;
    bool all_ok = true;
};

// ---------------------------------------------------------------------------
// Timing helpers (step accounting is part of the protocol, so it is testable
// with stub steps)
// ---------------------------------------------------------------------------

struct StepBudget {
    std::size_t warmup = 5;
    std::size_t measured = 30;
};

// Runs warmup then measured calls of step; samples_per_step * measured /
// elapsed-seconds over the measured span.
double measure_throughput(const std::function<void()>& step, std::size_t samples_per_step,
                          const StepBudget& budget = {});

// Same protocol; elapsed-milliseconds / (items_per_step * measured).
double measure_latency_ms(const std::function<void()>& step, std::size_t items_per_step,
                          const StepBudget& budget = {});

// Peak resident set size in MiB; false when the platform does not expose it.
bool peak_rss_mb(double& out);

// ---------------------------------------------------------------------------
// Orchestrator
// ---------------------------------------------------------------------------

// Owns the dataset and trained-model caches for one configured run. Anything
// sharing (method, dataset, seed) trains exactly once; checkpoints persist
// under <out>/<run-id>/checkpoints so later invocations reuse them.
class Runner {
public:
    explicit Runner(BenchConfig cfg);

    const BenchConfig& config() const { return cfg_; }
    const std::string& id() const { return id_; }
    const std::filesystem::path& run_dir() const { return run_dir_; }

    EffectivenessResult run_effectiveness();
    RobustnessResult run_robustness();
    TransferResult run_transfer();
    EfficiencyResult run_efficiency();

    // Rebuilds tables/*.{csv,md} from the JSON reports already on disk.
    void emit_report();

    // Z-scored dataset, loaded/generated once per name.
    const data::TimeSeriesDataset& dataset(const std::string& name);

    // Scoring callable for a trained (method, dataset, seed) cell.
    std::function<std::vector<double>(const Matrix&)> scorer(const MethodSpec& method,
                                                             const DatasetSpec& ds,
                                                             std::uint64_t seed);

private:
    const ccg::CcgModel& trained_ccg(const MethodSpec& method, const DatasetSpec& ds,
                                     std::uint64_t seed);
    const ccg::LinearArModel& trained_ar(const MethodSpec& method, const DatasetSpec& ds,
                                         std::uint64_t seed);
    std::vector<double> external_scores(const MethodSpec& method, const DatasetSpec& ds);
    CellResult evaluate_cell(const MethodSpec& method, const DatasetSpec& ds, std::uint64_t seed);
    TransferCell evaluate_transfer_cell(const MethodSpec& method, const DatasetSpec& source,
                                        const DatasetSpec& target);

    BenchConfig cfg_;
    std::string id_;
    std::filesystem::path run_dir_;
    std::map<std::string, data::TimeSeriesDataset> datasets_;
    std::map<std::string, ccg::CcgModel> ccg_models_;       // method|dataset|seed
    std::map<std::string, ccg::LinearArModel> ar_models_;   // method|dataset|seed
};

}  // namespace ccgbench::bench
