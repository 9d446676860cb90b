#include <cmath>
#include <stdexcept>
#include <vector>

#include "ccgbench/ccg.hpp"

namespace ccgbench::ccg {

namespace {

// Cholesky solve of a symmetric positive-definite system; returns false when a
// pivot collapses (rank-deficient normal equations).
bool cholesky_solve(Matrix g, std::vector<double> rhs, std::vector<double>& out) {
    const std::size_t n = g.rows;
    for (std::size_t j = 0; j < n; ++j) {
        double d = g(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= g(j, k) * g(j, k);
        if (d < 1e-12) return false;
        g(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = g(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= g(i, k) * g(j, k);
            g(i, j) = s / g(j, j);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {  // forward: L y = rhs
        double s = rhs[i];
        for (std::size_t k = 0; k < i; ++k) s -= g(i, k) * rhs[k];
        rhs[i] = s / g(i, i);
    }
    out.assign(n, 0.0);
    for (std::size_t ii = n; ii-- > 0;) {  // backward: L^T x = y
        double s = rhs[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= g(k, ii) * out[k];
        out[ii] = s / g(ii, ii);
    }
    return true;
}

}  // namespace

LinearArModel fit_linear_ar(const Matrix& train, std::size_t order) {
    if (order == 0) throw std::invalid_argument("linear_ar: zero order");
    if (train.rows <= order)
        throw std::invalid_argument("linear_ar: train split shorter than the model order");

    LinearArModel model;
    model.order = order;
    model.coeffs = Matrix(order, train.cols);
    const std::size_t n = train.rows - order;  // regression rows

    for (std::size_t ch = 0; ch < train.cols; ++ch) {
        Matrix gram(order, order);
        std::vector<double> rhs(order, 0.0);
        for (std::size_t t = order; t < train.rows; ++t) {
            for (std::size_t i = 0; i < order; ++i) {
                const double xi = train(t - 1 - i, ch);
                rhs[i] += xi * train(t, ch);
                for (std::size_t j = i; j < order; ++j) gram(i, j) += xi * train(t - 1 - j, ch);
            }
        }
        for (std::size_t i = 0; i < order; ++i)
            for (std::size_t j = 0; j < i; ++j) gram(i, j) = gram(j, i);

        std::vector<double> coef;
        if (!cholesky_solve(gram, rhs, coef)) {
            Matrix ridged = gram;
            for (std::size_t i = 0; i < order; ++i) ridged(i, i) += 1e-6 * static_cast<double>(n);
            if (!cholesky_solve(ridged, rhs, coef))
                throw std::runtime_error("linear_ar: normal equations unsolvable even with ridge");
        }
        for (std::size_t i = 0; i < order; ++i) model.coeffs(i, ch) = coef[i];
    }

    model.tail = Matrix(order, train.cols);
    for (std::size_t i = 0; i < order; ++i)
        for (std::size_t ch = 0; ch < train.cols; ++ch)
            model.tail(i, ch) = train(train.rows - order + i, ch);
    return model;
}

std::vector<double> linear_ar_score(const LinearArModel& model, const Matrix& test) {
    const std::size_t p = model.order, c = model.coeffs.cols;
    if (test.cols != c) throw std::invalid_argument("linear_ar: channel mismatch");
    if (test.rows == 0) throw std::invalid_argument("linear_ar: empty test split");
    if (model.tail.rows != p || model.tail.cols != c)
        throw std::invalid_argument("linear_ar: malformed context tail");

    // context = train tail ++ test, so even t=0 has a full lag window.
    Matrix ctx(p + test.rows, c);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) ctx(i, ch) = model.tail(i, ch);
    for (std::size_t i = 0; i < test.rows; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) ctx(p + i, ch) = test(i, ch);

    std::vector<double> scores(test.rows, 0.0);
    for (std::size_t t = 0; t < test.rows; ++t) {
        double acc = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
            double pred = 0.0;
            for (std::size_t i = 0; i < p; ++i) pred += model.coeffs(i, ch) * ctx(p + t - 1 - i, ch);
            acc += std::abs(test(t, ch) - pred);
        }
        scores[t] = acc / static_cast<double>(c);
    }
    return scores;
}

LinearArModel pool_linear_ar(const LinearArModel& source, const Matrix& target_train) {
    const std::size_t p = source.order;
    if (target_train.rows < p)
        throw std::invalid_argument("linear_ar: target train split shorter than the model order");

    LinearArModel out;
    out.order = p;
    out.coeffs = Matrix(p, target_train.cols);
    for (std::size_t i = 0; i < p; ++i) {
        double mean = 0.0;
        for (std::size_t ch = 0; ch < source.coeffs.cols; ++ch) mean += source.coeffs(i, ch);
        mean /= static_cast<double>(source.coeffs.cols);
        for (std::size_t ch = 0; ch < target_train.cols; ++ch) out.coeffs(i, ch) = mean;
    }
    out.tail = Matrix(p, target_train.cols);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t ch = 0; ch < target_train.cols; ++ch)
            out.tail(i, ch) = target_train(target_train.rows - p + i, ch);
    return out;
}

}  // namespace ccgbench::ccg
