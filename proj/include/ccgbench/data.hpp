#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccgbench/matrix.hpp"

namespace ccgbench::data {

// Typed load failures so callers (and tests) can tell the cases apart.
struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingFileError : LoadError {
    using LoadError::LoadError;
};
struct SchemaError : LoadError {
    using LoadError::LoadError;
};
struct LabelError : LoadError {
    using LoadError::LoadError;
};
struct EmptyJoinError : LoadError {
    using LoadError::LoadError;
};

struct NormStats {
    std::vector<double> mean;
    std::vector<double> stddev;  // floored at 1e-8
};

struct TimeSeriesDataset {
    std::string name;
    Matrix train;                  // rows = timesteps, cols = channels
    Matrix test;                   // same channel count as train
    std::vector<int> test_labels;  // 0/1, one per test row
    NormStats norm;                // train-split statistics once normalized
    bool normalized = false;

    std::size_t channels() const { return train.cols; }
};

struct WindowBatch {
    std::size_t window_len = 0;
    std::size_t channels = 0;
    std::vector<Matrix> windows;             // each window_len x channels
    std::vector<std::size_t> start_indices;  // strictly increasing by the stride
};

// Raw CSV contents: header plus string cells. Used for the MSDS raw tables
// where the timestamp column must stay a join key, not a number.
struct RawCsv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

RawCsv read_csv(const std::filesystem::path& file);

// <root>/<name>/{train.csv,test.csv,labels.csv}; train/test are headered float
// CSVs with one column per channel, labels a single headered 0/1 column.
TimeSeriesDataset load_dataset(const std::filesystem::path& root, const std::string& name);

// Per-channel standardization with train-split statistics (population std,
// floored at 1e-8). Idempotent up to floating error.
TimeSeriesDataset zscore(TimeSeriesDataset ds);

// Sliding windows over a split. Requires len >= window_len, stride >= 1.
WindowBatch make_windows(const Matrix& split, std::size_t window_len, std::size_t stride);

struct MsdsOptions {
    std::vector<std::string> hosts;                           // channel order, hosts outer
    std::vector<std::string> metrics{"cpu.user", "mem.used"};  // metrics inner
    std::string timestamp_column = "timestamp";
    double drop_fraction = 0.10;  // leading fraction removed after the join
};

// Shared-stream preprocessing: per-host duplicate timestamps averaged, hosts
// inner-joined on the timestamp key (lexicographic order, so keys must sort
// chronologically), leading floor(drop_fraction*N) rows dropped, remaining M
// rows split floor(M/2)/ceil(M/2) into train/test, z-scored with train stats.
// label_table must cover exactly the test region; the label is the OR of its
// flag columns (any column but the timestamp).
TimeSeriesDataset msds_preprocess(const std::vector<RawCsv>& host_tables, const RawCsv& label_table,
                                  const MsdsOptions& opt);

// Reads <root>/msds/raw/<host>.csv for each configured host plus
// <root>/msds/labels.csv, then runs msds_preprocess.
TimeSeriesDataset load_msds(const std::filesystem::path& root, const MsdsOptions& opt);

// Canonical serialization (train.csv/test.csv/labels.csv, %.17g floats).
// Byte-stable for identical inputs.
void save_dataset(const TimeSeriesDataset& ds, const std::filesystem::path& dir);

// Bundled synthetic suite: channels coupled through a random DAG with lagged
// weights, roots driven by sinusoids. The test split carries three anomaly
// types: point spikes, level shifts, and dependency breaks where a child
// channel's coupling is replaced by an independent smooth signal.
struct SynthSpec {
    std::size_t channels = 8;
    std::size_t train_len = 3000;
    std::size_t test_len = 3000;
    std::uint64_t seed = 7;
    double noise = 0.05;
    std::size_t anomaly_segments = 12;  // cycled through the three types
};

TimeSeriesDataset make_synthetic(const SynthSpec& spec, const std::string& name = "synth_dag");

}  // namespace ccgbench::data
