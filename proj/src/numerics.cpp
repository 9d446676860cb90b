#include "ccgbench/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <stdexcept>

namespace ccgbench::numerics {

namespace {

constexpr double kPi = 3.14159265358979323846;

double inf_norm(const Matrix& m) {
    double best = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) row += std::fabs(m(i, j));
        best = std::max(best, row);
    }
    return best;
}

double max_abs(const Matrix& m) {
    double best = 0.0;
    for (double v : m.data) best = std::max(best, std::fabs(v));
    return best;
}

}  // namespace

MatexpResult matexp_trace(const Matrix& m, bool want_gradient) {
    if (m.rows == 0 || m.rows != m.cols) throw std::invalid_argument("matexp_trace: square matrix with C >= 1 required");
    if (!all_finite(m)) throw std::invalid_argument("matexp_trace: non-finite entries");
    const std::size_t c = m.rows;

    // Scale so the Taylor series converges fast, then square back up.
    int squarings = 0;
    double norm = inf_norm(m);
    while (norm > 0.5 && squarings < 64) {
        norm *= 0.5;
        ++squarings;
    }
    const double scale = std::ldexp(1.0, -squarings);
    Matrix ms(c, c);
    for (std::size_t i = 0; i < m.size(); ++i) ms.data[i] = m.data[i] * scale;

    Matrix e(c, c);
    for (std::size_t i = 0; i < c; ++i) e(i, i) = 1.0;
    Matrix term = e;
    // Fixed tolerance keeps the truncation error well under the 1e-12 budget
    // even after the squaring phase.
    constexpr double kTol = 1e-16;
    for (int k = 1; k <= 64; ++k) {
        term = matmul_plain(term, ms);
        for (std::size_t i = 0; i < term.size(); ++i) term.data[i] /= static_cast<double>(k);
        for (std::size_t i = 0; i < e.size(); ++i) e.data[i] += term.data[i];
        if (max_abs(term) < kTol) break;
    }
    for (int s = 0; s < squarings; ++s) e = matmul_plain(e, e);

    MatexpResult out;
    for (std::size_t i = 0; i < c; ++i) out.trace += e(i, i);
    if (want_gradient) out.gradient = transposed(e);
    return out;
}

namespace {

// In-place iterative radix-2 FFT; n must be a power of two.
void fft_pow2(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

}  // namespace

Spectrum rfft_amplitudes(const std::vector<double>& x) {
    const std::size_t n = x.size();
    if (n < 2) throw std::invalid_argument("rfft_amplitudes: series length must be >= 2");
    for (double v : x)
        if (!std::isfinite(v)) throw std::invalid_argument("rfft_amplitudes: non-finite input");

    Spectrum s;
    s.series_length = n;
    const std::size_t bins = n / 2 + 1;
    s.amplitudes.resize(bins);

    if ((n & (n - 1)) == 0) {
        std::vector<std::complex<double>> a(n);
        for (std::size_t t = 0; t < n; ++t) a[t] = std::complex<double>(x[t], 0.0);
        fft_pow2(a);
        for (std::size_t f = 0; f < bins; ++f) s.amplitudes[f] = std::abs(a[f]);
    } else {
        for (std::size_t f = 0; f < bins; ++f) {
            double re = 0.0, im = 0.0;
            for (std::size_t t = 0; t < n; ++t) {
                const double ang = -2.0 * kPi * static_cast<double>(f) * static_cast<double>(t) / static_cast<double>(n);
                re += x[t] * std::cos(ang);
                im += x[t] * std::sin(ang);
            }
            s.amplitudes[f] = std::hypot(re, im);
        }
    }
    return s;
}

std::vector<std::size_t> topk_periods(const Spectrum& s, std::size_t k) {
    if (k == 0) throw std::invalid_argument("topk_periods: k must be >= 1");
    if (s.amplitudes.empty() || s.series_length < 2) throw std::invalid_argument("topk_periods: empty spectrum");

    std::vector<std::size_t> bins;
    for (std::size_t f = 1; f < s.amplitudes.size(); ++f)
        if (s.amplitudes[f] > 0.0) bins.push_back(f);
    std::sort(bins.begin(), bins.end(), [&](std::size_t a, std::size_t b) {
        if (s.amplitudes[a] != s.amplitudes[b]) return s.amplitudes[a] > s.amplitudes[b];
        return a < b;  // tie: lower frequency wins
    });
    if (bins.size() > k) bins.resize(k);

    std::vector<std::size_t> periods(bins.size());
    for (std::size_t i = 0; i < bins.size(); ++i) periods[i] = std::max<std::size_t>(1, s.series_length / bins[i]);
    return periods;
}

std::vector<double> moving_average(const std::vector<double>& x, std::size_t window) {
    if (window == 0 || window % 2 == 0) throw std::invalid_argument("moving_average: window must be odd");
    const std::size_t n = x.size();
    std::vector<double> out(n);
    if (n == 0) return out;

    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];

    const std::size_t half = window / 2;
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t lo = t >= half ? t - half : 0;
        const std::size_t hi = std::min(n - 1, t + half);
        out[t] = (prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1);
    }
    return out;
}

}  // namespace ccgbench::numerics
