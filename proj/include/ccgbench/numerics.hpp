#pragma once

#include <cstddef>
#include <vector>

#include "ccgbench/matrix.hpp"

namespace ccgbench::numerics {

// Unnormalised forward-DFT amplitudes of a real series: |X_f| for the
// floor(n/2)+1 non-redundant bins. series_length is kept so period lookups
// stay attached to the spectrum they came from.
struct Spectrum {
    std::vector<double> amplitudes;
    std::size_t series_length = 0;
};

struct MatexpResult {
    double trace = 0.0;
    Matrix gradient;  // d trace(exp(M)) / dM = exp(M)^T, filled only on request
};

// trace(exp(m)) by scaling-and-squaring over a truncated Taylor series
// (term tolerance 1e-12). No eigendecomposition, no external solver.
MatexpResult matexp_trace(const Matrix& m, bool want_gradient = false);

// Radix-2 FFT for power-of-two lengths, direct summation otherwise.
Spectrum rfft_amplitudes(const std::vector<double>& x);

// Periods length/f of the k largest-amplitude non-DC bins, amplitude
// descending, ties toward the lower frequency. Zero-amplitude bins never
// qualify, so the result may be shorter than k.
std::vector<std::size_t> topk_periods(const Spectrum& s, std::size_t k);

// Centered box filter with edge truncation; window must be odd.
std::vector<double> moving_average(const std::vector<double>& x, std::size_t window);

}  // namespace ccgbench::numerics
