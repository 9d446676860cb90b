#include "ccgbench/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "ccgbench/rng.hpp"

namespace ccgbench::data {

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s, const std::string& context) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\r')) ++pos;
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw SchemaError("non-numeric cell '" + s + "' in " + context);
    }
}

Matrix read_float_csv(const std::filesystem::path& file, std::vector<std::string>* header_out = nullptr) {
    const RawCsv raw = read_csv(file);
    if (raw.header.empty()) throw SchemaError("empty header in " + file.string());
    Matrix m(raw.rows.size(), raw.header.size());
    for (std::size_t i = 0; i < raw.rows.size(); ++i) {
        if (raw.rows[i].size() != raw.header.size())
            throw SchemaError("row " + std::to_string(i + 2) + " has " + std::to_string(raw.rows[i].size()) +
                              " cells, expected " + std::to_string(raw.header.size()) + " in " + file.string());
        for (std::size_t j = 0; j < raw.header.size(); ++j) m(i, j) = parse_double(raw.rows[i][j], file.string());
    }
    if (header_out) *header_out = raw.header;
    return m;
}

void append_double(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
}

}  // namespace

RawCsv read_csv(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw MissingFileError("cannot open " + file.string());
    RawCsv out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
        if (first) {
            out.header = split_line(line);
            first = false;
        } else {
            out.rows.push_back(split_line(line));
        }
    }
    if (first) throw SchemaError("empty file " + file.string());
    return out;
}

TimeSeriesDataset load_dataset(const std::filesystem::path& root, const std::string& name) {
    const std::filesystem::path dir = root / name;
    TimeSeriesDataset ds;
    ds.name = name;
    ds.train = read_float_csv(dir / "train.csv");
    ds.test = read_float_csv(dir / "test.csv");
    if (ds.train.cols != ds.test.cols)
        throw SchemaError("channel mismatch: train has " + std::to_string(ds.train.cols) + " columns, test " +
                          std::to_string(ds.test.cols) + " in " + dir.string());
    if (ds.train.rows == 0 || ds.test.rows == 0) throw SchemaError("empty split in " + dir.string());

    const Matrix labels = read_float_csv(dir / "labels.csv");
    if (labels.cols != 1) throw LabelError("labels.csv must have exactly one column in " + dir.string());
    if (labels.rows != ds.test.rows)
        throw LabelError("labels.csv has " + std::to_string(labels.rows) + " rows, test has " +
                         std::to_string(ds.test.rows) + " in " + dir.string());
    ds.test_labels.resize(labels.rows);
    for (std::size_t i = 0; i < labels.rows; ++i) {
        const double v = labels(i, 0);
        if (v != 0.0 && v != 1.0) throw LabelError("label row " + std::to_string(i + 2) + " is not 0/1");
        ds.test_labels[i] = v == 1.0 ? 1 : 0;
    }
    return ds;
}

TimeSeriesDataset zscore(TimeSeriesDataset ds) {
    const std::size_t c = ds.train.cols;
    if (c == 0 || ds.train.rows == 0) throw std::invalid_argument("zscore: empty train split");
    ds.norm.mean.assign(c, 0.0);
    ds.norm.stddev.assign(c, 0.0);
    const double n = static_cast<double>(ds.train.rows);
    for (std::size_t j = 0; j < c; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < ds.train.rows; ++i) mu += ds.train(i, j);
        mu /= n;
        double var = 0.0;
        for (std::size_t i = 0; i < ds.train.rows; ++i) {
            const double d = ds.train(i, j) - mu;
            var += d * d;
        }
        var /= n;
        ds.norm.mean[j] = mu;
        ds.norm.stddev[j] = std::max(std::sqrt(var), 1e-8);
    }
    for (std::size_t i = 0; i < ds.train.rows; ++i)
        for (std::size_t j = 0; j < c; ++j) ds.train(i, j) = (ds.train(i, j) - ds.norm.mean[j]) / ds.norm.stddev[j];
    for (std::size_t i = 0; i < ds.test.rows; ++i)
        for (std::size_t j = 0; j < c; ++j) ds.test(i, j) = (ds.test(i, j) - ds.norm.mean[j]) / ds.norm.stddev[j];
    ds.normalized = true;
    return ds;
}

WindowBatch make_windows(const Matrix& split, std::size_t window_len, std::size_t stride) {
    if (window_len == 0 || stride == 0) throw std::invalid_argument("make_windows: window_len and stride must be >= 1");
    if (split.rows < window_len)
        throw std::invalid_argument("make_windows: split has " + std::to_string(split.rows) +
                                    " rows, window needs " + std::to_string(window_len));
    WindowBatch b;
    b.window_len = window_len;
    b.channels = split.cols;
    for (std::size_t start = 0; start + window_len <= split.rows; start += stride) {
        Matrix w(window_len, split.cols);
        for (std::size_t t = 0; t < window_len; ++t)
            for (std::size_t j = 0; j < split.cols; ++j) w(t, j) = split(start + t, j);
        b.windows.push_back(std::move(w));
        b.start_indices.push_back(start);
    }
    return b;
}

TimeSeriesDataset msds_preprocess(const std::vector<RawCsv>& host_tables, const RawCsv& label_table,
                                  const MsdsOptions& opt) {
    if (host_tables.size() != opt.hosts.size() || host_tables.empty())
        throw std::invalid_argument("msds_preprocess: one table per configured host required");

    const std::size_t metrics = opt.metrics.size();
    // Per host: timestamp -> averaged metric values.
    std::vector<std::map<std::string, std::vector<double>>> streams(host_tables.size());
    for (std::size_t h = 0; h < host_tables.size(); ++h) {
        const RawCsv& t = host_tables[h];
        const auto find_col = [&](const std::string& name) -> std::size_t {
            for (std::size_t j = 0; j < t.header.size(); ++j)
                if (t.header[j] == name) return j;
            throw SchemaError("host " + opt.hosts[h] + ": missing column '" + name + "'");
        };
        const std::size_t ts_col = find_col(opt.timestamp_column);
        std::vector<std::size_t> metric_cols(metrics);
        for (std::size_t m = 0; m < metrics; ++m) metric_cols[m] = find_col(opt.metrics[m]);

        std::map<std::string, std::pair<std::vector<double>, std::size_t>> acc;  // sums + count
        for (std::size_t i = 0; i < t.rows.size(); ++i) {
            if (t.rows[i].size() != t.header.size())
                throw SchemaError("host " + opt.hosts[h] + ": ragged row " + std::to_string(i + 2));
            auto& slot = acc[t.rows[i][ts_col]];
            if (slot.first.empty()) slot.first.assign(metrics, 0.0);
            for (std::size_t m = 0; m < metrics; ++m)
                slot.first[m] += parse_double(t.rows[i][metric_cols[m]], "host " + opt.hosts[h]);
            ++slot.second;
        }
        for (auto& [ts, slot] : acc) {
            std::vector<double> avg(metrics);
            for (std::size_t m = 0; m < metrics; ++m) avg[m] = slot.first[m] / static_cast<double>(slot.second);
            streams[h].emplace(ts, std::move(avg));
        }
    }

    // Inner join on the timestamp key, ordered by the key.
    std::vector<std::string> keys;
    for (const auto& [ts, vals] : streams[0]) {
        bool everywhere = true;
        for (std::size_t h = 1; h < streams.size() && everywhere; ++h) everywhere = streams[h].count(ts) > 0;
        if (everywhere) keys.push_back(ts);
    }
    if (keys.empty()) throw EmptyJoinError("msds_preprocess: no timestamp present on every host");

    const std::size_t width = host_tables.size() * metrics;
    Matrix joined(keys.size(), width);
    for (std::size_t i = 0; i < keys.size(); ++i)
        for (std::size_t h = 0; h < streams.size(); ++h) {
            const std::vector<double>& vals = streams[h].at(keys[i]);
            for (std::size_t m = 0; m < metrics; ++m) joined(i, h * metrics + m) = vals[m];
        }

    // Warmup drop, then a floor/ceil half split.
    const std::size_t drop = static_cast<std::size_t>(std::floor(opt.drop_fraction * static_cast<double>(joined.rows)));
    const std::size_t remaining = joined.rows - drop;
    if (remaining < 2) throw SchemaError("msds_preprocess: too few rows after warmup drop");
    const std::size_t train_rows = remaining / 2;
    const std::size_t test_rows = remaining - train_rows;

    TimeSeriesDataset ds;
    ds.name = "msds";
    ds.train = Matrix(train_rows, width);
    ds.test = Matrix(test_rows, width);
    for (std::size_t i = 0; i < train_rows; ++i)
        for (std::size_t j = 0; j < width; ++j) ds.train(i, j) = joined(drop + i, j);
    for (std::size_t i = 0; i < test_rows; ++i)
        for (std::size_t j = 0; j < width; ++j) ds.test(i, j) = joined(drop + train_rows + i, j);

    // Labels: one row per test timestep, OR over flag columns.
    if (label_table.rows.size() != test_rows)
        throw LabelError("msds_preprocess: label table has " + std::to_string(label_table.rows.size()) +
                         " rows, test region has " + std::to_string(test_rows));
    std::vector<std::size_t> flag_cols;
    for (std::size_t j = 0; j < label_table.header.size(); ++j)
        if (label_table.header[j] != opt.timestamp_column) flag_cols.push_back(j);
    if (flag_cols.empty()) throw LabelError("msds_preprocess: label table has no flag columns");
    ds.test_labels.resize(test_rows);
    for (std::size_t i = 0; i < test_rows; ++i) {
        if (label_table.rows[i].size() != label_table.header.size())
            throw LabelError("msds_preprocess: ragged label row " + std::to_string(i + 2));
        int flag = 0;
        for (std::size_t j : flag_cols)
            if (parse_double(label_table.rows[i][j], "label table") > 0.0) flag = 1;
        ds.test_labels[i] = flag;
    }

    return zscore(std::move(ds));
}

TimeSeriesDataset load_msds(const std::filesystem::path& root, const MsdsOptions& opt) {
    if (opt.hosts.empty()) throw std::invalid_argument("load_msds: no hosts configured");
    std::vector<RawCsv> tables;
    tables.reserve(opt.hosts.size());
    for (const std::string& host : opt.hosts) tables.push_back(read_csv(root / "msds" / "raw" / (host + ".csv")));
    const RawCsv labels = read_csv(root / "msds" / "labels.csv");
    return msds_preprocess(tables, labels, opt);
}

void save_dataset(const TimeSeriesDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto write_matrix = [&](const Matrix& m, const std::filesystem::path& file) {
        std::string out;
        for (std::size_t j = 0; j < m.cols; ++j) {
            if (j) out += ',';
            out += "c" + std::to_string(j);
        }
        out += '\n';
        for (std::size_t i = 0; i < m.rows; ++i) {
            for (std::size_t j = 0; j < m.cols; ++j) {
                if (j) out += ',';
                append_double(out, m(i, j));
            }
            out += '\n';
        }
        std::ofstream f(file, std::ios::binary);
        if (!f) throw LoadError("cannot write " + file.string());
        f << out;
    };
    write_matrix(ds.train, dir / "train.csv");
    write_matrix(ds.test, dir / "test.csv");

    std::string out = "label\n";
    for (int v : ds.test_labels) out += v ? "1\n" : "0\n";
    std::ofstream f(dir / "labels.csv", std::ios::binary);
    if (!f) throw LoadError("cannot write labels.csv");
    f << out;
}

TimeSeriesDataset make_synthetic(const SynthSpec& spec, const std::string& name) {
    if (spec.channels < 2) throw std::invalid_argument("make_synthetic: at least two channels");
    const std::size_t c = spec.channels;
    const std::size_t margin = 8;  // covers the largest coupling lag
    const std::size_t total = margin + spec.train_len + spec.test_len;

    std::mt19937_64 g(rng::mix(spec.seed, 0xDA6C0DE));

    // Random DAG: channels 0..1 are roots, later channels read 1-2 earlier ones.
    struct Edge {
        std::size_t parent;
        double weight;
        std::size_t lag;
    };
    std::vector<std::vector<Edge>> parents(c);
    for (std::size_t j = 2; j < c; ++j) {
        const std::size_t fan = 1 + rng::below(g, 2);
        for (std::size_t e = 0; e < fan; ++e) {
            Edge edge;
            edge.parent = rng::below(g, j);
            edge.weight = rng::uniform(g, 0.6, 1.0);
            edge.lag = 1 + rng::below(g, 3);
            parents[j].push_back(edge);
        }
    }

    // Per-channel seasonal components.
    std::vector<double> period(c), phase(c), own_amp(c);
    for (std::size_t j = 0; j < c; ++j) {
        period[j] = rng::uniform(g, 18.0, 60.0);
        phase[j] = rng::uniform(g, 0.0, 6.283185307179586);
        own_amp[j] = j < 2 ? rng::uniform(g, 0.9, 1.2) : rng::uniform(g, 0.15, 0.3);
    }

    Matrix x(total, c);
    for (std::size_t t = 0; t < total; ++t)
        for (std::size_t j = 0; j < c; ++j) {
            double v = own_amp[j] * std::sin(2.0 * 3.14159265358979323846 * static_cast<double>(t) / period[j] + phase[j]);
            if (!parents[j].empty()) {
                double coupled = 0.0, wsum = 0.0;
                for (const Edge& e : parents[j]) {
                    const std::size_t tt = t >= e.lag ? t - e.lag : 0;
                    coupled += e.weight * x(tt, e.parent);
                    wsum += e.weight;
                }
                v += coupled / wsum;
            }
            v += spec.noise * rng::normal(g);
            x(t, j) = v;
        }

    TimeSeriesDataset ds;
    ds.name = name;
    ds.train = Matrix(spec.train_len, c);
    ds.test = Matrix(spec.test_len, c);
    for (std::size_t t = 0; t < spec.train_len; ++t)
        for (std::size_t j = 0; j < c; ++j) ds.train(t, j) = x(margin + t, j);
    for (std::size_t t = 0; t < spec.test_len; ++t)
        for (std::size_t j = 0; j < c; ++j) ds.test(t, j) = x(margin + spec.train_len + t, j);
    ds.test_labels.assign(spec.test_len, 0);

    // Plant anomalies in the test split, cycling spike / shift / break.
    std::size_t cursor = 150;
    for (std::size_t seg = 0; seg < spec.anomaly_segments; ++seg) {
        const int kind = static_cast<int>(seg % 3);
        std::size_t len = kind == 0 ? 1 + rng::below(g, 3) : (kind == 1 ? 30 + rng::below(g, 31) : 40 + rng::below(g, 41));
        cursor += 60 + rng::below(g, 80);
        if (cursor + len + 120 >= spec.test_len) break;
        const std::size_t chan = kind == 2 && c > 2 ? 2 + rng::below(g, c - 2)  // breaks need a child channel
                                                    : rng::below(g, c);
        if (kind == 0) {
            const double amp = (rng::uniform01(g) < 0.5 ? -1.0 : 1.0) * rng::uniform(g, 2.0, 4.0);
            for (std::size_t t = cursor; t < cursor + len; ++t) ds.test(t, chan) += amp;
        } else if (kind == 1) {
            const double amp = (rng::uniform01(g) < 0.5 ? -1.0 : 1.0) * rng::uniform(g, 1.0, 2.0);
            for (std::size_t t = cursor; t < cursor + len; ++t) ds.test(t, chan) += amp;
        } else {
            // Dependency break: replace the channel with an independent smooth
            // signal of matching scale. Locally plausible, structurally wrong.
            double mu = 0.0, var = 0.0;
            for (std::size_t t = cursor; t < cursor + len; ++t) mu += ds.test(t, chan);
            mu /= static_cast<double>(len);
            for (std::size_t t = cursor; t < cursor + len; ++t) {
                const double d = ds.test(t, chan) - mu;
                var += d * d;
            }
            const double amp = std::sqrt(std::max(var / static_cast<double>(len), 0.05));
            const double p2 = period[chan] * rng::uniform(g, 1.6, 2.4);
            const double ph2 = rng::uniform(g, 0.0, 6.283185307179586);
            for (std::size_t t = cursor; t < cursor + len; ++t)
                ds.test(t, chan) = mu + amp * std::sin(2.0 * 3.14159265358979323846 * static_cast<double>(t) / p2 + ph2) +
                                   0.02 * rng::normal(g);
        }
        for (std::size_t t = cursor; t < cursor + len; ++t) ds.test_labels[t] = 1;
        cursor += len;
    }
    return ds;
}

}  // namespace ccgbench::data
