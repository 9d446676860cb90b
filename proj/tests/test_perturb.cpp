#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "ccgbench/metrics.hpp"
#include "ccgbench/perturb.hpp"
#include "ccgbench/rng.hpp"

using namespace ccgbench;

namespace {

Matrix ramp_matrix(std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (std::size_t t = 0; t < rows; ++t)
        for (std::size_t j = 0; j < cols; ++j) m(t, j) = static_cast<double>(t) + 0.01 * static_cast<double>(j);
    return m;
}

perturb::PerturbationSpec spec_of(perturb::Family f, double strength, std::uint64_t seed = 0) {
    perturb::PerturbationSpec s;
    s.family = f;
    s.strength = strength;
    s.seed = seed;
    return s;
}

}  // namespace

TEST_CASE("zero strength is the bit-identical identity in every family") {
    const Matrix m = ramp_matrix(9, 4);
    for (perturb::Family f : perturb::kFamilies) {
        const Matrix out = perturb::apply_perturbation(m, spec_of(f, 0.0, 123));
        CHECK(out.data == m.data);
    }
}

TEST_CASE("same spec gives a bit-identical perturbed matrix") {
    const Matrix m = ramp_matrix(40, 7);
    for (perturb::Family f : perturb::kFamilies) {
        const double strength = f == perturb::Family::shift ? 3.0 : 0.25;
        const Matrix a = perturb::apply_perturbation(m, spec_of(f, strength, 777));
        const Matrix b = perturb::apply_perturbation(m, spec_of(f, strength, 777));
        CHECK(a.data == b.data);
    }
    // Different seeds decorrelate the stochastic families.
    const Matrix a = perturb::apply_perturbation(m, spec_of(perturb::Family::noise, 0.1, 1));
    const Matrix b = perturb::apply_perturbation(m, spec_of(perturb::Family::noise, 0.1, 2));
    CHECK(a.data != b.data);
}

TEST_CASE("noise preserves shape and matches the requested sigma") {
    const Matrix m = ramp_matrix(250, 48);  // 12000 entries
    const double sigma = 0.1;
    const Matrix out = perturb::apply_perturbation(m, spec_of(perturb::Family::noise, sigma, 5));
    REQUIRE(out.same_shape(m));

    double mean = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) mean += out.data[i] - m.data[i];
    mean /= static_cast<double>(m.size());
    double var = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double d = out.data[i] - m.data[i] - mean;
        var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(m.size()));
    CHECK(std::abs(sd - sigma) / sigma < 0.05);
    CHECK(std::abs(mean) < 3.0 * sigma / std::sqrt(static_cast<double>(m.size())));
    CHECK_THROWS_AS(perturb::apply_perturbation(m, spec_of(perturb::Family::noise, -0.1)), std::invalid_argument);
}

TEST_CASE("dropout zeroes exactly the rounded channel count") {
    const Matrix m = ramp_matrix(30, 10);

    const auto zeroed_channels = [&](const Matrix& out) {
        std::set<std::size_t> zeroed;
        for (std::size_t j = 0; j < out.cols; ++j) {
            bool all_zero = true;
            for (std::size_t t = 0; t < out.rows && all_zero; ++t) all_zero = out(t, j) == 0.0;
            if (all_zero) zeroed.insert(j);
        }
        return zeroed;
    };

    SUBCASE("C=10, p=0.25 -> 3 channels, others untouched") {
        const Matrix out = perturb::apply_perturbation(m, spec_of(perturb::Family::dropout, 0.25, 9));
        const std::set<std::size_t> z = zeroed_channels(out);
        CHECK(z.size() == 3);  // round-half-up(2.5)
        for (std::size_t j = 0; j < 10; ++j) {
            if (z.count(j)) continue;
            for (std::size_t t = 0; t < m.rows; ++t) CHECK(out(t, j) == m(t, j));
        }
    }
    SUBCASE("tiny positive fraction still drops one channel") {
        const Matrix out = perturb::apply_perturbation(m, spec_of(perturb::Family::dropout, 0.01, 9));
        CHECK(zeroed_channels(out).size() == 1);
    }
    SUBCASE("p=0.5 on C=3 -> round-half-up(1.5) = 2") {
        const Matrix narrow = ramp_matrix(30, 3);
        const Matrix out = perturb::apply_perturbation(narrow, spec_of(perturb::Family::dropout, 0.5, 9));
        CHECK(zeroed_channels(out).size() == 2);
    }
    SUBCASE("channel choice varies with the seed") {
        std::set<std::set<std::size_t>> seen;
        for (std::uint64_t seed = 0; seed < 12; ++seed)
            seen.insert(zeroed_channels(perturb::apply_perturbation(m, spec_of(perturb::Family::dropout, 0.25, seed))));
        CHECK(seen.size() > 1);
    }
    SUBCASE("fraction outside [0,1] rejected") {
        CHECK_THROWS_AS(perturb::apply_perturbation(m, spec_of(perturb::Family::dropout, 1.5)), std::invalid_argument);
    }
}

TEST_CASE("shift rotates forward, wrapping the tail to the front") {
    const Matrix m = ramp_matrix(5, 2);
    const Matrix out = perturb::apply_perturbation(m, spec_of(perturb::Family::shift, 2.0));
    // Forward by 2: rows become [3,4,0,1,2].
    CHECK(out(0, 0) == m(3, 0));
    CHECK(out(1, 0) == m(4, 0));
    CHECK(out(2, 0) == m(0, 0));
    CHECK(out(4, 1) == m(2, 1));

    // Rotating by T - dt undoes the rotation exactly.
    const Matrix back = perturb::apply_perturbation(out, spec_of(perturb::Family::shift, 3.0));
    CHECK(back.data == m.data);

    CHECK_THROWS_AS(perturb::apply_perturbation(m, spec_of(perturb::Family::shift, 2.5)), std::invalid_argument);
    CHECK_THROWS_AS(perturb::apply_perturbation(m, spec_of(perturb::Family::shift, -1.0)), std::invalid_argument);
}

TEST_CASE("truncating shift repeats the first row instead of wrapping") {
    const Matrix m = ramp_matrix(5, 1);
    perturb::PerturbationSpec spec = spec_of(perturb::Family::shift, 2.0);
    spec.shift_truncates = true;
    const Matrix out = perturb::apply_perturbation(m, spec);
    CHECK(out(0, 0) == m(0, 0));
    CHECK(out(1, 0) == m(0, 0));
    CHECK(out(2, 0) == m(0, 0));
    CHECK(out(3, 0) == m(1, 0));
    CHECK(out(4, 0) == m(2, 0));
}

TEST_CASE("empty input rejected") {
    CHECK_THROWS_AS(perturb::apply_perturbation(Matrix(), spec_of(perturb::Family::noise, 0.1)),
                    std::invalid_argument);
    CHECK_THROWS_AS(perturb::apply_perturbation(Matrix(5, 0), spec_of(perturb::Family::dropout, 0.5)),
                    std::invalid_argument);
}

TEST_CASE("derive_seed is stable and cell-distinct") {
    const std::uint64_t a = perturb::derive_seed(3, perturb::Family::noise, 1, 0);
    CHECK(a == perturb::derive_seed(3, perturb::Family::noise, 1, 0));
    CHECK(a != perturb::derive_seed(3, perturb::Family::noise, 2, 0));
    CHECK(a != perturb::derive_seed(3, perturb::Family::dropout, 1, 0));
    CHECK(a != perturb::derive_seed(4, perturb::Family::noise, 1, 0));
    CHECK(a != perturb::derive_seed(3, perturb::Family::noise, 1, 1));
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

namespace {

// A labeled toy dataset where score quality is controlled by the closure.
perturb::ScorableDataset toy_dataset(const std::string& name, std::uint64_t seed,
                                     std::function<std::vector<double>(const Matrix&)> score) {
    perturb::ScorableDataset ds;
    ds.name = name;
    ds.test = Matrix(60, 4);
    std::mt19937_64 g(rng::mix(404, seed));
    for (double& v : ds.test.data) v = rng::normal(g);
    ds.labels.assign(60, 0);
    for (int t = 20; t < 30; ++t) {
        ds.labels[t] = 1;
        for (std::size_t j = 0; j < 4; ++j) ds.test(t, j) += 4.0;  // visible level shift
    }
    ds.score = std::move(score);
    return ds;
}

std::vector<double> magnitude_score(const Matrix& m) {
    std::vector<double> s(m.rows, 0.0);
    for (std::size_t t = 0; t < m.rows; ++t)
        for (std::size_t j = 0; j < m.cols; ++j) s[t] += std::abs(m(t, j));
    return s;
}

}  // namespace

TEST_CASE("constant scorer retains exactly 1.0 in every family") {
    const auto constant = [](const Matrix& m) { return std::vector<double>(m.rows, 0.5); };
    perturb::SeedScorers run;
    run.seed = 0;
    run.datasets = {toy_dataset("toy", 1, constant)};
    const perturb::RobustnessReport rep = perturb::robustness_suite({run});
    for (perturb::Family f : perturb::kFamilies) {
        CHECK(rep.of(f).retention_mean == 1.0);
        CHECK(rep.of(f).retention_std == 0.0);
    }
}

TEST_CASE("single seed, dataset, and strength collapses to one vus value") {
    perturb::SeedScorers run;
    run.seed = 5;
    run.datasets = {toy_dataset("toy", 2, magnitude_score)};
    perturb::FamilyStrengths one;
    one.noise = {0.05};
    one.dropout = {0.25};
    one.shift = {2};
    const perturb::RobustnessReport rep = perturb::robustness_suite({run}, one, 10);

    // Recompute the noise cell by hand with the same derived seed.
    perturb::PerturbationSpec spec;
    spec.family = perturb::Family::noise;
    spec.strength = 0.05;
    spec.seed = perturb::derive_seed(5, perturb::Family::noise, 0, 0);
    const Matrix corrupted = perturb::apply_perturbation(run.datasets[0].test, spec);
    const double expected =
        metrics::vus(magnitude_score(corrupted), run.datasets[0].labels, 10, metrics::Curve::roc);
    CHECK(rep.of(perturb::Family::noise).vus_mean == doctest::Approx(expected).epsilon(1e-15));
    CHECK(rep.of(perturb::Family::noise).vus_std == 0.0);
    CHECK(rep.of(perturb::Family::noise).per_seed_vus.size() == 1);
}

TEST_CASE("suite aggregates across seeds with sample std") {
    std::vector<perturb::SeedScorers> runs;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        perturb::SeedScorers run;
        run.seed = seed;
        run.datasets = {toy_dataset("a", 7, magnitude_score), toy_dataset("b", 8, magnitude_score)};
        runs.push_back(std::move(run));
    }
    const perturb::RobustnessReport rep = perturb::robustness_suite(runs, {}, 10);
    CHECK(rep.clean_vus_mean > 0.8);  // the level shift is blatant
    for (perturb::Family f : perturb::kFamilies) {
        const perturb::FamilyOutcome& out = rep.of(f);
        REQUIRE(out.per_seed_vus.size() == 3);
        double mu = (out.per_seed_vus[0] + out.per_seed_vus[1] + out.per_seed_vus[2]) / 3.0;
        CHECK(out.vus_mean == doctest::Approx(mu).epsilon(1e-12));
        CHECK(out.vus_mean > 0.5);
        CHECK(out.vus_mean <= 1.0);
        CHECK(out.retention_mean == doctest::Approx(out.vus_mean / rep.clean_vus_mean).epsilon(0.05));
    }
    // Identical scorer across seeds, identical data: only the perturbation
    // seeds differ, so the stochastic families show nonzero spread.
    CHECK(rep.of(perturb::Family::noise).vus_std >= 0.0);
}
