// Benchmark harness CLI: train/score/aggregate over a JSON-configured grid of
// methods, datasets, and seeds, with reports and tables written per run id.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ccgbench/bench.hpp"

namespace bench = ccgbench::bench;

namespace {

struct CliOptions {
    std::string config_file;
    std::vector<std::uint64_t> seeds;
    std::string out_dir;
    std::size_t workers = 0;
    std::vector<std::string> datasets;
    std::vector<std::string> methods;
};

void add_common(CLI::App* cmd, CliOptions& opt) {
    cmd->add_option("--config", opt.config_file, "JSON run configuration")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--seeds", opt.seeds, "Override the configured seed list")
        ->delimiter(',');
    cmd->add_option("--out", opt.out_dir, "Override the output directory");
    cmd->add_option("--workers", opt.workers, "Override the worker count");
    cmd->add_option("--dataset", opt.datasets, "Restrict to these datasets")->delimiter(',');
    cmd->add_option("--method", opt.methods, "Restrict to these methods")->delimiter(',');
}

bench::BenchConfig resolve(const CliOptions& opt) {
    bench::BenchConfig cfg = bench::load_config(opt.config_file);
    if (!opt.seeds.empty()) cfg.seeds = opt.seeds;
    if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
    if (opt.workers > 0) cfg.workers = opt.workers;
    if (!opt.datasets.empty()) {
        std::vector<bench::DatasetSpec> keep;
        for (const std::string& name : opt.datasets) {
            bool found = false;
            for (const bench::DatasetSpec& d : cfg.datasets)
                if (d.name == name) {
                    keep.push_back(d);
                    found = true;
                }
            if (!found) throw std::invalid_argument("--dataset: \"" + name + "\" is not configured");
        }
        cfg.datasets = std::move(keep);
    }
    if (!opt.methods.empty()) {
        std::vector<bench::MethodSpec> keep;
        for (const std::string& name : opt.methods) {
            bool found = false;
            for (const bench::MethodSpec& m : cfg.methods)
                if (m.name == name) {
                    keep.push_back(m);
                    found = true;
                }
            if (!found) throw std::invalid_argument("--method: \"" + name + "\" is not configured");
        }
        cfg.methods = std::move(keep);
    }
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multivariate time-series anomaly detection benchmark"};
    app.require_subcommand(1);

    CliOptions opt;
    CLI::App* effectiveness =
        app.add_subcommand("effectiveness", "Train and score every (method, dataset, seed) cell");
    CLI::App* robustness =
        app.add_subcommand("robustness", "Score under noise/dropout/shift perturbation ladders");
    CLI::App* transfer =
        app.add_subcommand("transfer", "Cross-dataset source -> target matrix (first seed)");
    CLI::App* efficiency =
        app.add_subcommand("efficiency", "Throughput/latency/parameter counts on a fixed workload");
    CLI::App* report = app.add_subcommand("report", "Rebuild tables from the run's JSON reports");
    for (CLI::App* cmd : {effectiveness, robustness, transfer, efficiency, report})
        add_common(cmd, opt);

    CLI11_PARSE(app, argc, argv);

    try {
        const bench::BenchConfig cfg = resolve(opt);
        bench::Runner runner(cfg);
        bool ok = true;
        if (effectiveness->parsed()) ok = runner.run_effectiveness().all_ok;
        if (robustness->parsed()) ok = runner.run_robustness().all_ok;
        if (transfer->parsed()) ok = runner.run_transfer().all_ok;
        if (efficiency->parsed()) ok = runner.run_efficiency().all_ok;
        runner.emit_report();
        std::printf("run %s -> %s\n", runner.id().c_str(), runner.run_dir().string().c_str());
        if (!ok) std::fprintf(stderr, "warning: some cells failed; see the run's reports\n");
        return ok ? 0 : 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
