#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "ccgbench/ccg.hpp"
#include "ccgbench/numerics.hpp"
#include "ccgbench/rng.hpp"

#include <json.hpp>

namespace ccgbench::ccg {

using autodiff::Graph;
using autodiff::NodeId;

namespace {

Matrix xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& gen) {
    Matrix m(rows, cols);
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (double& x : m.data) x = rng::uniform(gen, -limit, limit);
    return m;
}

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& gen) {
    Matrix m(rows, cols);
    for (double& x : m.data) x = stddev * rng::normal(gen);
    return m;
}

// Classic sinusoidal position encoding: row p, column 2i is sin, 2i+1 is cos,
// wavelength 10000^(2i/width).
Matrix sinusoidal_pe(std::size_t positions, std::size_t width) {
    Matrix pe(positions, width);
    for (std::size_t p = 0; p < positions; ++p) {
        for (std::size_t j = 0; j < width; ++j) {
            const double expo = static_cast<double>(2 * (j / 2)) / static_cast<double>(width);
            const double angle = static_cast<double>(p) / std::pow(10000.0, expo);
            pe(p, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

bool all_ones(const Matrix& m) {
    return std::all_of(m.data.begin(), m.data.end(), [](double v) { return v == 1.0; });
}

// Largest-amplitude non-DC bins of an amplitude spectrum, ties toward the
// lower frequency; zero-amplitude bins never qualify.
std::vector<std::size_t> topk_bins(const std::vector<double>& amps, std::size_t k) {
    std::vector<std::size_t> idx;
    for (std::size_t f = 1; f < amps.size(); ++f)
        if (amps[f] > 0.0) idx.push_back(f);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return amps[a] > amps[b]; });
    if (idx.size() > k) idx.resize(k);
    return idx;
}

// cos/sin probe rows for DFT bin f of a length-t series.
void fourier_rows(std::size_t f, std::size_t t, Matrix& cos_row, Matrix& sin_row) {
    cos_row = Matrix(1, t);
    sin_row = Matrix(1, t);
    const double w = 2.0 * std::numbers::pi * static_cast<double>(f) / static_cast<double>(t);
    for (std::size_t i = 0; i < t; ++i) {
        cos_row(0, i) = std::cos(w * static_cast<double>(i));
        sin_row(0, i) = std::sin(w * static_cast<double>(i));
    }
}

}  // namespace

// Phase-binned periodic profile per channel: for each of the k dominant
// periods of the channel-mean series, average the channel by phase modulo the
// period, then adaptively pool the profile into a fixed number of bins.
Matrix spectral_descriptor(const Matrix& x, std::size_t k, std::size_t bins) {
    const std::size_t t = x.rows, c = x.cols;
    Matrix d(c, k * bins);
    std::vector<double> mean_series(t, 0.0);
    for (std::size_t i = 0; i < t; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += x(i, j);
        mean_series[i] = s / static_cast<double>(c);
    }
    const auto periods = numerics::topk_periods(numerics::rfft_amplitudes(mean_series), k);
    std::vector<double> profile;
    for (std::size_t pi = 0; pi < periods.size(); ++pi) {
        const std::size_t p = periods[pi];
        for (std::size_t ch = 0; ch < c; ++ch) {
            profile.assign(p, 0.0);
            std::vector<std::size_t> counts(p, 0);
            for (std::size_t i = 0; i < t; ++i) {
                profile[i % p] += x(i, ch);
                ++counts[i % p];
            }
            for (std::size_t phi = 0; phi < p; ++phi)
                if (counts[phi] > 0) profile[phi] /= static_cast<double>(counts[phi]);
            for (std::size_t g = 0; g < bins; ++g) {
                std::size_t lo = (g * p) / bins;
                std::size_t hi = ((g + 1) * p + bins - 1) / bins;
                hi = std::min(hi, p);
                if (lo >= hi) lo = hi - 1;
                double s = 0.0;
                for (std::size_t phi = lo; phi < hi; ++phi) s += profile[phi];
                d(ch, pi * bins + g) = s / static_cast<double>(hi - lo);
            }
        }
    }
    return d;
}

namespace {

struct PatchGeometry {
    std::vector<std::size_t> starts;
    std::vector<double> coverage;                     // per timestep, patches covering it
    std::vector<std::vector<std::size_t>> covering;   // per timestep, patch indices
};

PatchGeometry patch_geometry(std::size_t t, std::size_t len, std::size_t stride) {
    PatchGeometry geo;
    geo.starts = patch_starts(t, len, stride);
    geo.coverage.assign(t, 0.0);
    geo.covering.assign(t, {});
    for (std::size_t n = 0; n < geo.starts.size(); ++n)
        for (std::size_t i = 0; i < len; ++i) {
            geo.coverage[geo.starts[n] + i] += 1.0;
            geo.covering[geo.starts[n] + i].push_back(n);
        }
    return geo;
}

// Per-channel patches stacked channel-major: row c*N + n holds patch n of
// channel c.
Matrix patch_tokens(const Matrix& x, const PatchGeometry& geo, std::size_t len) {
    const std::size_t c = x.cols, n = geo.starts.size();
    Matrix tok(c * n, len);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t i = 0; i < len; ++i) tok(ch * n + p, i) = x(geo.starts[p] + i, ch);
    return tok;
}

// (N*len) x T coverage-averaged scatter: multiplying a row of flattened patch
// reconstructions by this matrix averages overlapping patches back onto the
// time axis.
Matrix patch_scatter(std::size_t t, const PatchGeometry& geo, std::size_t len) {
    const std::size_t n = geo.starts.size();
    Matrix s(n * len, t);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t i = 0; i < len; ++i)
            s(p * len + i, geo.starts[p] + i) = 1.0 / geo.coverage[geo.starts[p] + i];
    return s;
}

// Gaussian locality prior over attention rows: row i is exp(-(i-j)^2/(2s_i^2))
// normalised, with s_i = softplus(raw_i) + 0.1. Kept off the tape by design;
// the prior shapes the association cue, not the gradient.
Matrix locality_prior(const Matrix& sigma_raw, std::size_t t) {
    Matrix p(t, t);
    for (std::size_t i = 0; i < t; ++i) {
        const double s = softplus(sigma_raw(0, i)) + 0.1;
        double norm = 0.0;
        for (std::size_t j = 0; j < t; ++j) {
            const double d = static_cast<double>(i) - static_cast<double>(j);
            p(i, j) = std::exp(-d * d / (2.0 * s * s));
            norm += p(i, j);
        }
        for (std::size_t j = 0; j < t; ++j) p(i, j) /= norm;
    }
    return p;
}

double sym_kl_row(const Matrix& prior, const Matrix& attn, std::size_t row) {
    constexpr double eps = 1e-12;
    double acc = 0.0;
    for (std::size_t j = 0; j < prior.cols; ++j) {
        const double p = prior(row, j), s = attn(row, j);
        acc += p * std::log((p + eps) / (s + eps)) + s * std::log((s + eps) / (p + eps));
    }
    return acc;
}

}  // namespace

// ---------------------------------------------------------------------------
// Adjacency
// ---------------------------------------------------------------------------

Matrix adjacency(const AdjacencyParams& p) {
    if (p.u.rows != p.v.rows || p.u.cols != p.v.cols)
        throw std::invalid_argument("adjacency: factor shape mismatch");
    const std::size_t c = p.u.rows;
    Matrix a = matmul_plain(p.u, transposed(p.v));
    for (double& x : a.data) x = 1.0 / (1.0 + std::exp(-(x + p.b)));
    if (!p.prior.empty()) {
        if (p.prior.rows != c || p.prior.cols != c)
            throw std::invalid_argument("adjacency: prior shape mismatch");
        for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] *= p.prior.data[i];
    }
    return a;
}

double dag_penalty(const Matrix& a) {
    if (a.rows != a.cols || a.rows == 0) throw std::invalid_argument("dag_penalty: square matrix required");
    Matrix h = a;
    for (double& x : h.data) x *= x;
    const double tr = numerics::matexp_trace(h).trace;
    return (tr - static_cast<double>(a.rows)) / static_cast<double>(a.rows);
}

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

void ParamStore::add(const std::string& name, Matrix value) {
    if (blocks_.count(name) > 0) throw std::invalid_argument("duplicate parameter block: " + name);
    order_.push_back(name);
    blocks_.emplace(name, std::move(value));
}

Matrix& ParamStore::block(const std::string& name) {
    auto it = blocks_.find(name);
    if (it == blocks_.end()) throw std::out_of_range("no parameter block: " + name);
    return it->second;
}

const Matrix& ParamStore::block(const std::string& name) const {
    auto it = blocks_.find(name);
    if (it == blocks_.end()) throw std::out_of_range("no parameter block: " + name);
    return it->second;
}

std::size_t ParamStore::size() const {
    std::size_t n = 0;
    for (const auto& name : order_) n += blocks_.at(name).size();
    return n;
}

std::vector<double> ParamStore::flat() const {
    std::vector<double> out;
    out.reserve(size());
    for (const auto& name : order_) {
        const Matrix& m = blocks_.at(name);
        out.insert(out.end(), m.data.begin(), m.data.end());
    }
    return out;
}

void ParamStore::set_flat(const std::vector<double>& values) {
    if (values.size() != size()) throw std::invalid_argument("set_flat: size mismatch");
    std::size_t pos = 0;
    for (const auto& name : order_) {
        Matrix& m = blocks_.at(name);
        std::copy(values.begin() + static_cast<std::ptrdiff_t>(pos),
                  values.begin() + static_cast<std::ptrdiff_t>(pos + m.size()), m.data.begin());
        pos += m.size();
    }
}

std::vector<char> ParamStore::block_mask(const std::vector<std::string>& prefixes) const {
    std::vector<char> mask;
    mask.reserve(size());
    for (const auto& name : order_) {
        const bool hit = std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& p) {
            return name.rfind(p, 0) == 0;
        });
        mask.insert(mask.end(), blocks_.at(name).size(), hit ? 1 : 0);
    }
    return mask;
}

std::vector<std::size_t> patch_starts(std::size_t t, std::size_t len, std::size_t stride) {
    if (len == 0 || stride == 0) throw std::invalid_argument("patch_starts: zero length or stride");
    if (t < len) throw std::invalid_argument("patch_starts: window shorter than patch");
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + len <= t; s += stride) starts.push_back(s);
    if (starts.back() + len < t) starts.push_back(t - len);
    return starts;
}

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

CcgModel::CcgModel(const CcgConfig& cfg, std::size_t channels, std::uint64_t seed)
    : cfg_(cfg), channels_(channels), seed_(seed) {
    cfg_.validate();
    if (channels_ == 0) throw std::invalid_argument("model: zero channels");

    const std::size_t t = cfg_.window, d = cfg_.d_model, c = channels_;
    const std::size_t dp = d / 2;

    auto init = [&](const std::string& name, Matrix m) { params_.add(name, std::move(m)); };
    auto gen_for = [&](const std::string& name) { return std::mt19937_64(rng::mix(seed_, rng::fnv1a(name))); };
    auto xavier = [&](const std::string& name, std::size_t r0, std::size_t c0) {
        auto g = gen_for(name);
        init(name, xavier_uniform(r0, c0, g));
    };
    auto zeros = [&](const std::string& name, std::size_t r0, std::size_t c0) { init(name, Matrix(r0, c0)); };
    auto fill = [&](const std::string& name, std::size_t r0, std::size_t c0, double v) {
        init(name, Matrix(r0, c0, v));
    };
    auto encoder_blocks = [&](const std::string& view, std::size_t width) {
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            const std::string p = view + ".l" + std::to_string(l);
            fill(p + ".ln1.g", 1, width, 1.0);
            zeros(p + ".ln1.b", 1, width);
            xavier(p + ".attn.wq", width, width);
            xavier(p + ".attn.wk", width, width);
            xavier(p + ".attn.wv", width, width);
            xavier(p + ".attn.wo", width, width);
            fill(p + ".ln2.g", 1, width, 1.0);
            zeros(p + ".ln2.b", 1, width);
            xavier(p + ".ffn.w1", width, 2 * width);
            zeros(p + ".ffn.b1", 1, 2 * width);
            xavier(p + ".ffn.w2", 2 * width, width);
            zeros(p + ".ffn.b2", 1, width);
            if (view == "t") fill(p + ".sigma", 1, t, 1.0);
        }
    };

    if (cfg_.use_channel_view) {
        xavier("ch.embed", t, d);
        {
            auto g = gen_for("ch.adj.u");
            init("ch.adj.u", gaussian(c, cfg_.rank, 0.01, g));
        }
        {
            auto g = gen_for("ch.adj.v");
            init("ch.adj.v", gaussian(c, cfg_.rank, 0.01, g));
        }
        fill("ch.adj.b", 1, 1, -1.0);
        if (cfg_.use_spectral) xavier("ch.spec", cfg_.k_periods * cfg_.spectral_bins, d);
        encoder_blocks("ch", d);
        xavier("ch.head", d, t);
    }
    if (cfg_.use_patch_view) {
        xavier("p.embed", cfg_.patch_len, dp);
        encoder_blocks("p", dp);
        xavier("p.head", dp, cfg_.patch_len);
    }
    if (cfg_.use_temp_view) {
        xavier("t.embed", c, d);
        encoder_blocks("t", d);
        xavier("t.head", d, c);
    }
    if (cfg_.active_views() >= 2) {
        const std::size_t nv = cfg_.active_views();
        xavier("gate.w", nv * c, nv);
        zeros("gate.b", 1, nv);
    }
    prior_ = Matrix(c, c, 1.0);
}

// ---------------------------------------------------------------------------
// Graph builder
// ---------------------------------------------------------------------------

struct CcgModel::Build {
    std::vector<NodeId> fused;
    std::vector<NodeId> channel, patch, temp;  // per-window recon nodes; empty when view off
    std::vector<NodeId> gates;
    NodeId adjacency = -1;
    std::vector<NodeId> channel_attn;                // first window, layer-major x head
    std::vector<std::vector<NodeId>> patch_attn;     // [window][head], final layer only
    std::vector<std::vector<NodeId>> temp_attn;      // [window][layer * heads + head]
};

CcgModel::Build CcgModel::build_graph(Graph& g, const std::vector<Matrix>& windows,
                                      std::map<std::string, NodeId>& param_nodes) const {
    if (windows.empty()) throw std::invalid_argument("model: no windows");
    const std::size_t t = cfg_.window, d = cfg_.d_model, c = channels_;
    for (const Matrix& w : windows)
        if (w.rows != t || w.cols != c) throw std::invalid_argument("model: window shape mismatch");

    auto P = [&](const std::string& name) -> NodeId {
        auto it = param_nodes.find(name);
        if (it != param_nodes.end()) return it->second;
        const NodeId id = g.param(params_.block(name));
        param_nodes.emplace(name, id);
        return id;
    };

    auto encoder_layer = [&](NodeId x, const std::string& prefix, std::size_t width, NodeId bias,
                             std::vector<NodeId>* attn_sink) -> NodeId {
        const std::size_t nh = cfg_.heads, dh = width / nh;
        const NodeId ln1 = g.layer_norm(x, P(prefix + ".ln1.g"), P(prefix + ".ln1.b"));
        const NodeId q = g.matmul(ln1, P(prefix + ".attn.wq"));
        const NodeId k = g.matmul(ln1, P(prefix + ".attn.wk"));
        const NodeId v = g.matmul(ln1, P(prefix + ".attn.wv"));
        std::vector<NodeId> heads_out;
        for (std::size_t h = 0; h < nh; ++h) {
            const NodeId qh = g.slice_cols(q, h * dh, (h + 1) * dh);
            const NodeId kh = g.slice_cols(k, h * dh, (h + 1) * dh);
            const NodeId vh = g.slice_cols(v, h * dh, (h + 1) * dh);
            NodeId scores = g.scale(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
            if (bias >= 0) scores = g.add(scores, bias);
            const NodeId att = g.softmax_rows(scores);
            if (attn_sink) attn_sink->push_back(att);
            heads_out.push_back(g.matmul(att, vh));
        }
        const NodeId cat = heads_out.size() == 1 ? heads_out[0] : g.concat_cols(heads_out);
        const NodeId y = g.add(x, g.matmul(cat, P(prefix + ".attn.wo")));
        const NodeId ln2 = g.layer_norm(y, P(prefix + ".ln2.g"), P(prefix + ".ln2.b"));
        const NodeId h1 = g.gelu(g.add_rowvec(g.matmul(ln2, P(prefix + ".ffn.w1")), P(prefix + ".ffn.b1")));
        const NodeId h2 = g.add_rowvec(g.matmul(h1, P(prefix + ".ffn.w2")), P(prefix + ".ffn.b2"));
        return g.add(y, h2);
    };

    Build b;

    // The adjacency and its attention bias are window-independent: build once.
    NodeId bias = -1;
    if (cfg_.use_channel_view) {
        const NodeId logits =
            g.add_scalar(g.matmul(P("ch.adj.u"), g.transpose(P("ch.adj.v"))), P("ch.adj.b"));
        NodeId a = g.sigmoid(logits);
        if (!all_ones(prior_)) a = g.mul(a, g.constant(prior_));
        b.adjacency = a;
        // Query channel j attends key channel i through A[i][j]: transpose the
        // masked log so bias rows follow attention's query-major layout.
        if (cfg_.use_adjacency_bias) bias = g.transpose(g.log_masked(a, prior_, 1e-8, -30.0));
    }

    PatchGeometry geo;
    Matrix patch_pe, scatter;
    if (cfg_.use_patch_view) {
        geo = patch_geometry(t, cfg_.patch_len, cfg_.patch_stride);
        const Matrix pe = sinusoidal_pe(geo.starts.size(), d / 2);
        patch_pe = Matrix(c * geo.starts.size(), d / 2);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t n = 0; n < geo.starts.size(); ++n)
                for (std::size_t j = 0; j < d / 2; ++j) patch_pe(ch * geo.starts.size() + n, j) = pe(n, j);
        scatter = patch_scatter(t, geo, cfg_.patch_len);
    }
    Matrix temp_pe;
    if (cfg_.use_temp_view) temp_pe = sinusoidal_pe(t, d);

    for (std::size_t w = 0; w < windows.size(); ++w) {
        const NodeId xw = g.constant(windows[w]);
        std::vector<NodeId> views;

        if (cfg_.use_channel_view) {
            NodeId tokens = g.matmul(g.transpose(xw), P("ch.embed"));  // C x d
            if (cfg_.use_spectral) {
                const Matrix desc = spectral_descriptor(windows[w], cfg_.k_periods, cfg_.spectral_bins);
                tokens = g.add(tokens, g.matmul(g.constant(desc), P("ch.spec")));
            }
            for (std::size_t l = 0; l < cfg_.layers; ++l)
                tokens = encoder_layer(tokens, "ch.l" + std::to_string(l), d, bias,
                                       w == 0 ? &b.channel_attn : nullptr);
            const NodeId recon = g.transpose(g.matmul(tokens, P("ch.head")));  // T x C
            b.channel.push_back(recon);
            views.push_back(recon);
        }

        if (cfg_.use_patch_view) {
            const std::size_t n = geo.starts.size(), len = cfg_.patch_len, dp = d / 2;
            NodeId tokens =
                g.add(g.matmul(g.constant(patch_tokens(windows[w], geo, len)), P("p.embed")),
                      g.constant(patch_pe));  // (C*N) x dp
            b.patch_attn.emplace_back();
            for (std::size_t l = 0; l < cfg_.layers; ++l)
                tokens = encoder_layer(tokens, "p.l" + std::to_string(l), dp, -1,
                                       l + 1 == cfg_.layers ? &b.patch_attn.back() : nullptr);
            const NodeId flat = g.reshape(g.matmul(tokens, P("p.head")), c, n * len);
            const NodeId recon = g.transpose(g.matmul(flat, g.constant(scatter)));  // T x C
            b.patch.push_back(recon);
            views.push_back(recon);
        }

        if (cfg_.use_temp_view) {
            NodeId tokens = g.add(g.matmul(xw, P("t.embed")), g.constant(temp_pe));  // T x d
            b.temp_attn.emplace_back();
            for (std::size_t l = 0; l < cfg_.layers; ++l)
                tokens = encoder_layer(tokens, "t.l" + std::to_string(l), d, -1, &b.temp_attn.back());
            const NodeId recon = g.matmul(tokens, P("t.head"));  // T x C
            b.temp.push_back(recon);
            views.push_back(recon);
        }

        if (views.size() == 1) {
            b.fused.push_back(views[0]);
        } else {
            const NodeId cat = g.concat_cols(views);  // T x (nv*C), view order ch, patch, temp
            const NodeId gate = g.softmax_rows(g.add_rowvec(g.matmul(cat, P("gate.w")), P("gate.b")));
            std::vector<NodeId> weighted;
            for (std::size_t v = 0; v < views.size(); ++v)
                weighted.push_back(g.mul_colvec(views[v], g.slice_cols(gate, v, v + 1)));
            b.fused.push_back(g.sum_of(weighted));
            b.gates.push_back(gate);
        }
    }
    return b;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

CcgModel::Forward CcgModel::forward(const std::vector<Matrix>& windows) const {
    Graph g(false);
    std::map<std::string, NodeId> param_nodes;
    const Build b = build_graph(g, windows, param_nodes);

    Forward out;
    for (const NodeId id : b.fused) out.recon.push_back(g.value(id));
    auto copy_view = [&](const char* key, const std::vector<NodeId>& ids) {
        if (ids.empty()) return;
        auto& dst = out.view_recon[key];
        for (const NodeId id : ids) dst.push_back(g.value(id));
    };
    copy_view("channel", b.channel);
    copy_view("patch", b.patch);
    copy_view("temp", b.temp);
    for (const NodeId id : b.gates) out.gate.push_back(g.value(id));
    if (b.adjacency >= 0) out.adjacency = g.value(b.adjacency);
    for (const NodeId id : b.channel_attn) out.channel_attention.push_back(g.value(id));

    const std::size_t t = cfg_.window;

    if (cfg_.use_patch_view) {
        const PatchGeometry geo = patch_geometry(t, cfg_.patch_len, cfg_.patch_stride);
        const std::size_t n = geo.starts.size();
        for (std::size_t w = 0; w < windows.size(); ++w) {
            // One-minus the head-averaged self-attention diagonal, channel-
            // averaged per patch: patches that stop attending to themselves
            // read as anomalous.
            std::vector<double> diag(channels_ * n, 0.0);
            for (const NodeId att : b.patch_attn[w]) {
                const Matrix& a = g.value(att);
                for (std::size_t r = 0; r < a.rows; ++r) diag[r] += a(r, r);
            }
            const double nh = static_cast<double>(b.patch_attn[w].size());
            std::vector<double> per_patch(n, 0.0);
            for (std::size_t p = 0; p < n; ++p) {
                double s = 0.0;
                for (std::size_t ch = 0; ch < channels_; ++ch) s += diag[ch * n + p] / nh;
                per_patch[p] = 1.0 - s / static_cast<double>(channels_);
            }
            std::vector<double> cue(t, 0.0);
            for (std::size_t i = 0; i < t; ++i) {
                double s = 0.0;
                for (const std::size_t p : geo.covering[i]) s += per_patch[p];
                cue[i] = s / static_cast<double>(geo.covering[i].size());
            }
            out.patch_cue.push_back(std::move(cue));
        }
    }

    if (cfg_.use_temp_view) {
        std::vector<Matrix> priors;
        for (std::size_t l = 0; l < cfg_.layers; ++l)
            priors.push_back(locality_prior(params_.block("t.l" + std::to_string(l) + ".sigma"), t));
        for (std::size_t w = 0; w < windows.size(); ++w) {
            std::vector<double> cue(t, 0.0);
            for (std::size_t l = 0; l < cfg_.layers; ++l)
                for (std::size_t h = 0; h < cfg_.heads; ++h) {
                    const Matrix& attn = g.value(b.temp_attn[w][l * cfg_.heads + h]);
                    for (std::size_t i = 0; i < t; ++i) cue[i] += sym_kl_row(priors[l], attn, i);
                }
            const double denom = static_cast<double>(cfg_.layers * cfg_.heads);
            for (double& v : cue) v /= denom;
            out.assoc_cue.push_back(std::move(cue));
        }
    }
    return out;
}

std::vector<double> CcgModel::score_window(const Matrix& window) const {
    const Forward f = forward({window});
    return anomaly_score(window, f.recon[0], cfg_.use_patch_view ? &f.patch_cue[0] : nullptr,
                         cfg_.use_temp_view ? &f.assoc_cue[0] : nullptr, cfg_);
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

CcgModel::LossRefs CcgModel::build_loss(Graph& g, const std::vector<Matrix>& masked_inputs,
                                        const std::vector<Matrix>& clean_targets,
                                        const std::vector<std::vector<char>>& masks,
                                        double lambda_dag_effective) const {
    const std::size_t t = cfg_.window, c = channels_;
    if (masked_inputs.empty() || masked_inputs.size() != clean_targets.size() ||
        masked_inputs.size() != masks.size())
        throw std::invalid_argument("build_loss: batch size mismatch");
    for (std::size_t w = 0; w < masks.size(); ++w)
        if (masks[w].size() != t || clean_targets[w].rows != t || clean_targets[w].cols != c)
            throw std::invalid_argument("build_loss: window shape mismatch");
    if (lambda_dag_effective < 0.0) throw std::invalid_argument("build_loss: negative dag weight");

    LossRefs refs;
    const Build b = build_graph(g, masked_inputs, refs.param_nodes);

    // Masked timesteps carry double weight; the normaliser is the total weight
    // mass so the scale of the loss does not depend on the mask draw.
    double total_weight = 0.0;
    std::vector<NodeId> window_terms;
    for (std::size_t w = 0; w < masked_inputs.size(); ++w) {
        Matrix wcol(t, 1);
        for (std::size_t i = 0; i < t; ++i) {
            wcol(i, 0) = masks[w][i] ? 2.0 : 1.0;
            total_weight += wcol(i, 0);
        }
        const NodeId sq = g.square(g.sub(b.fused[w], g.constant(clean_targets[w])));
        window_terms.push_back(g.sum_all(g.mul_colvec(sq, g.constant(wcol))));
    }
    refs.rec = g.scale(window_terms.size() == 1 ? window_terms[0] : g.sum_of(window_terms),
                       1.0 / (total_weight * static_cast<double>(c)));
    refs.total = refs.rec;

    if (cfg_.use_channel_view) {
        refs.dag = g.scale(g.square(g.notears_penalty(b.adjacency)), lambda_dag_effective);
        refs.total = g.add(refs.total, refs.dag);
    }

    if (cfg_.lambda_freq > 0.0) {
        std::vector<NodeId> channel_terms;
        for (std::size_t w = 0; w < masked_inputs.size(); ++w) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                std::vector<double> col(t);
                for (std::size_t i = 0; i < t; ++i) col[i] = clean_targets[w](i, ch);
                const auto bins = topk_bins(numerics::rfft_amplitudes(col).amplitudes, cfg_.k_periods);
                if (bins.empty()) continue;  // flat channel: nothing to match
                const NodeId rec_col = g.slice_cols(b.fused[w], ch, ch + 1);
                std::vector<NodeId> diffs;
                for (const std::size_t f : bins) {
                    Matrix cos_row, sin_row;
                    fourier_rows(f, t, cos_row, sin_row);
                    double re_x = 0.0, im_x = 0.0;
                    for (std::size_t i = 0; i < t; ++i) {
                        re_x += cos_row(0, i) * col[i];
                        im_x += sin_row(0, i) * col[i];
                    }
                    const double amp_x = std::sqrt(re_x * re_x + im_x * im_x + 1e-30);
                    const NodeId re = g.matmul(g.constant(cos_row), rec_col);
                    const NodeId im = g.matmul(g.constant(sin_row), rec_col);
                    const NodeId amp = g.sqrt_of(g.shift(g.add(g.square(re), g.square(im)), 1e-30));
                    diffs.push_back(g.abs_of(g.shift(amp, -amp_x)));
                }
                channel_terms.push_back(
                    g.scale(diffs.size() == 1 ? diffs[0] : g.sum_of(diffs),
                            1.0 / static_cast<double>(diffs.size())));
            }
        }
        if (!channel_terms.empty()) {
            const NodeId raw =
                g.scale(channel_terms.size() == 1 ? channel_terms[0] : g.sum_of(channel_terms),
                        1.0 / static_cast<double>(masked_inputs.size() * c));
            refs.freq = g.scale(raw, cfg_.lambda_freq);
            refs.total = g.add(refs.total, refs.freq);
        }
    }
    return refs;
}

LossBreakdown composite_loss(const std::vector<Matrix>& x, const std::vector<Matrix>& xhat,
                             const Matrix& a, const std::vector<std::vector<char>>& masks,
                             const CcgConfig& cfg, double lambda_dag_effective) {
    if (x.empty() || x.size() != xhat.size() || x.size() != masks.size())
        throw std::invalid_argument("composite_loss: batch size mismatch");
    const std::size_t t = x[0].rows, c = x[0].cols;

    LossBreakdown out;
    double total_weight = 0.0, acc = 0.0;
    for (std::size_t w = 0; w < x.size(); ++w) {
        if (!x[w].same_shape(xhat[w]) || masks[w].size() != t)
            throw std::invalid_argument("composite_loss: window shape mismatch");
        double wsum = 0.0;
        for (std::size_t i = 0; i < t; ++i) {
            const double wt = masks[w][i] ? 2.0 : 1.0;
            total_weight += wt;
            for (std::size_t j = 0; j < c; ++j) {
                const double r = xhat[w](i, j) - x[w](i, j);
                wsum += wt * (r * r);
            }
        }
        acc += wsum;
    }
    out.rec = acc * (1.0 / (total_weight * static_cast<double>(c)));
    out.total = out.rec;

    if (cfg.use_channel_view) {
        if (a.empty()) throw std::invalid_argument("composite_loss: adjacency required for channel view");
        const double h = dag_penalty(a);
        out.dag = lambda_dag_effective * (h * h);
        out.total += out.dag;
    }

    if (cfg.lambda_freq > 0.0) {
        double sum_terms = 0.0;
        for (std::size_t w = 0; w < x.size(); ++w) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                std::vector<double> col(t);
                for (std::size_t i = 0; i < t; ++i) col[i] = x[w](i, ch);
                const auto bins = topk_bins(numerics::rfft_amplitudes(col).amplitudes, cfg.k_periods);
                if (bins.empty()) continue;
                double chan = 0.0;
                for (const std::size_t f : bins) {
                    Matrix cos_row, sin_row;
                    fourier_rows(f, t, cos_row, sin_row);
                    double re_x = 0.0, im_x = 0.0, re_h = 0.0, im_h = 0.0;
                    for (std::size_t i = 0; i < t; ++i) {
                        re_x += cos_row(0, i) * col[i];
                        im_x += sin_row(0, i) * col[i];
                        re_h += cos_row(0, i) * xhat[w](i, ch);
                        im_h += sin_row(0, i) * xhat[w](i, ch);
                    }
                    const double amp_x = std::sqrt(re_x * re_x + im_x * im_x + 1e-30);
                    const double amp_h = std::sqrt(re_h * re_h + im_h * im_h + 1e-30);
                    chan += std::abs(amp_h - amp_x);
                }
                sum_terms += chan * (1.0 / static_cast<double>(bins.size()));
            }
        }
        out.freq = (sum_terms * (1.0 / static_cast<double>(x.size() * c))) * cfg.lambda_freq;
        out.total += out.freq;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

nlohmann::json config_json(const CcgConfig& cfg) {
    return nlohmann::json{{"use_channel_view", cfg.use_channel_view},
                          {"use_patch_view", cfg.use_patch_view},
                          {"use_temp_view", cfg.use_temp_view},
                          {"use_spectral", cfg.use_spectral},
                          {"use_adjacency_bias", cfg.use_adjacency_bias},
                          {"window", cfg.window},
                          {"d_model", cfg.d_model},
                          {"layers", cfg.layers},
                          {"heads", cfg.heads},
                          {"rank", cfg.rank},
                          {"k_periods", cfg.k_periods},
                          {"spectral_bins", cfg.spectral_bins},
                          {"patch_len", cfg.patch_len},
                          {"patch_stride", cfg.patch_stride},
                          {"score_projection", to_string(cfg.score_projection)},
                          {"smooth_window", cfg.smooth_window},
                          {"epochs", cfg.epochs},
                          {"inject_rate", cfg.inject_rate},
                          {"mask_fraction", cfg.mask_fraction},
                          {"lambda_dag", cfg.lambda_dag},
                          {"lambda_freq", cfg.lambda_freq},
                          {"alpha", cfg.alpha},
                          {"delta_patch", cfg.delta_patch},
                          {"delta_temp", cfg.delta_temp}};
}

CcgConfig config_from(const nlohmann::json& j) {
    CcgConfig cfg;
    cfg.use_channel_view = j.at("use_channel_view").get<bool>();
    cfg.use_patch_view = j.at("use_patch_view").get<bool>();
    cfg.use_temp_view = j.at("use_temp_view").get<bool>();
    cfg.use_spectral = j.at("use_spectral").get<bool>();
    cfg.use_adjacency_bias = j.at("use_adjacency_bias").get<bool>();
    cfg.window = j.at("window").get<std::size_t>();
    cfg.d_model = j.at("d_model").get<std::size_t>();
    cfg.layers = j.at("layers").get<std::size_t>();
    cfg.heads = j.at("heads").get<std::size_t>();
    cfg.rank = j.at("rank").get<std::size_t>();
    cfg.k_periods = j.at("k_periods").get<std::size_t>();
    cfg.spectral_bins = j.at("spectral_bins").get<std::size_t>();
    cfg.patch_len = j.at("patch_len").get<std::size_t>();
    cfg.patch_stride = j.at("patch_stride").get<std::size_t>();
    cfg.score_projection = projection_from_string(j.at("score_projection").get<std::string>());
    cfg.smooth_window = j.at("smooth_window").get<std::size_t>();
    cfg.epochs = j.at("epochs").get<std::size_t>();
    cfg.inject_rate = j.at("inject_rate").get<double>();
    cfg.mask_fraction = j.at("mask_fraction").get<double>();
    cfg.lambda_dag = j.at("lambda_dag").get<double>();
    cfg.lambda_freq = j.at("lambda_freq").get<double>();
    cfg.alpha = j.at("alpha").get<double>();
    cfg.delta_patch = j.at("delta_patch").get<double>();
    cfg.delta_temp = j.at("delta_temp").get<double>();
    cfg.validate();
    return cfg;
}

}  // namespace

std::string config_to_json(const CcgConfig& cfg) { return config_json(cfg).dump(); }

CcgConfig config_from_json(const std::string& text) { return config_from(nlohmann::json::parse(text)); }

void CcgModel::save_checkpoint(const std::filesystem::path& file) const {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& name : params_.names()) {
        const Matrix& m = params_.block(name);
        blocks.push_back({{"name", name}, {"rows", m.rows}, {"cols", m.cols}});
    }
    const nlohmann::json j{{"format_version", 1},
                           {"kind", "ccg-msd"},
                           {"channels", channels_},
                           {"seed", seed_},
                           {"config", config_json(cfg_)},
                           {"blocks", blocks},
                           {"values", params_.flat()}};
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + file.string());
    out << j.dump(2) << '\n';
}

CcgModel CcgModel::load_checkpoint(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + file.string());
    nlohmann::json j;
    in >> j;
    if (j.at("format_version").get<int>() != 1 || j.at("kind").get<std::string>() != "ccg-msd")
        throw std::runtime_error("unsupported checkpoint format: " + file.string());
    CcgModel model(config_from(j.at("config")), j.at("channels").get<std::size_t>(),
                   j.at("seed").get<std::uint64_t>());
    const auto& blocks = j.at("blocks");
    const auto& names = model.params_.names();
    if (blocks.size() != names.size()) throw std::runtime_error("checkpoint block manifest mismatch");
    for (std::size_t i = 0; i < names.size(); ++i) {
        const Matrix& m = model.params_.block(names[i]);
        if (blocks[i].at("name").get<std::string>() != names[i] ||
            blocks[i].at("rows").get<std::size_t>() != m.rows ||
            blocks[i].at("cols").get<std::size_t>() != m.cols)
            throw std::runtime_error("checkpoint block manifest mismatch at " + names[i]);
    }
    model.params_.set_flat(j.at("values").get<std::vector<double>>());
    return model;
}

}  // namespace ccgbench::ccg
