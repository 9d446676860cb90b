#include "ccgbench/perturb.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "ccgbench/metrics.hpp"
#include "ccgbench/rng.hpp"

namespace ccgbench::perturb {

namespace {

Matrix rotated_forward(const Matrix& in, std::size_t dt) {
    Matrix out(in.rows, in.cols);
    for (std::size_t t = 0; t < in.rows; ++t) {
        const std::size_t src = (t + in.rows - dt) % in.rows;
        for (std::size_t j = 0; j < in.cols; ++j) out(t, j) = in(src, j);
    }
    return out;
}

Matrix shifted_truncating(const Matrix& in, std::size_t dt) {
    Matrix out(in.rows, in.cols);
    for (std::size_t t = 0; t < in.rows; ++t) {
        const std::size_t src = t >= dt ? t - dt : 0;
        for (std::size_t j = 0; j < in.cols; ++j) out(t, j) = in(src, j);
    }
    return out;
}

void mean_std(const std::vector<double>& xs, double& mean, double& std_out) {
    mean = 0.0;
    for (double v : xs) mean += v;
    mean /= static_cast<double>(xs.size());
    if (xs.size() < 2) {
        std_out = 0.0;
        return;
    }
    double var = 0.0;
    for (double v : xs) var += (v - mean) * (v - mean);
    std_out = std::sqrt(var / static_cast<double>(xs.size() - 1));
}

}  // namespace

std::string to_string(Family f) {
    switch (f) {
        case Family::noise: return "noise";
        case Family::dropout: return "dropout";
        default: return "shift";
    }
}

Matrix apply_perturbation(const Matrix& test_split, const PerturbationSpec& spec) {
    if (test_split.rows == 0 || test_split.cols == 0)
        throw std::invalid_argument("apply_perturbation: empty test split");

    switch (spec.family) {
        case Family::noise: {
            if (spec.strength < 0.0) throw std::invalid_argument("noise: sigma must be >= 0");
            if (spec.strength == 0.0) return test_split;
            Matrix out = test_split;
            std::mt19937_64 g(spec.seed);
            for (double& v : out.data) v += spec.strength * rng::normal(g);
            return out;
        }
        case Family::dropout: {
            const double p = spec.strength;
            if (p < 0.0 || p > 1.0) throw std::invalid_argument("dropout: fraction outside [0,1]");
            if (p == 0.0) return test_split;
            std::size_t k = static_cast<std::size_t>(
                std::floor(p * static_cast<double>(test_split.cols) + 0.5));
            if (k == 0) k = 1;
            std::mt19937_64 g(spec.seed);
            const std::vector<std::size_t> channels = rng::sample_indices(g, test_split.cols, k);
            Matrix out = test_split;
            for (std::size_t j : channels)
                for (std::size_t t = 0; t < out.rows; ++t) out(t, j) = 0.0;
            return out;
        }
        case Family::shift: {
            if (spec.strength < 0.0 || std::floor(spec.strength) != spec.strength)
                throw std::invalid_argument("shift: timestep count must be a nonnegative integer");
            const std::size_t dt = static_cast<std::size_t>(spec.strength) % test_split.rows;
            if (dt == 0) return test_split;
            return spec.shift_truncates ? shifted_truncating(test_split, dt) : rotated_forward(test_split, dt);
        }
    }
    throw std::logic_error("apply_perturbation: unknown family");
}

std::uint64_t derive_seed(std::uint64_t run_seed, Family family, std::size_t strength_idx,
                          std::size_t dataset_idx) {
    return rng::mix(run_seed, static_cast<std::uint64_t>(family) * 8 + strength_idx, dataset_idx);
}

RobustnessReport robustness_suite(const std::vector<SeedScorers>& runs, const FamilyStrengths& strengths,
                                  std::size_t vus_levels) {
    if (runs.empty()) throw std::invalid_argument("robustness_suite: no seeds");
    for (const SeedScorers& run : runs)
        if (run.datasets.empty()) throw std::invalid_argument("robustness_suite: a seed has no datasets");

    RobustnessReport report;
    std::vector<double> clean_by_seed;
    std::array<std::vector<double>, 3> family_by_seed;
    std::array<std::vector<double>, 3> retention_by_seed;

    for (const SeedScorers& run : runs) {
        double clean_sum = 0.0;
        for (const ScorableDataset& ds : run.datasets)
            clean_sum += metrics::vus(ds.score(ds.test), ds.labels, vus_levels, metrics::Curve::roc);
        const double clean_mean = clean_sum / static_cast<double>(run.datasets.size());
        clean_by_seed.push_back(clean_mean);

        for (Family family : kFamilies) {
            const std::vector<double>& ladder = strengths.of(family);
            if (ladder.empty()) throw std::invalid_argument("robustness_suite: empty strength ladder");
            double sum = 0.0;
            for (std::size_t si = 0; si < ladder.size(); ++si)
                for (std::size_t di = 0; di < run.datasets.size(); ++di) {
                    const ScorableDataset& ds = run.datasets[di];
                    PerturbationSpec spec;
                    spec.family = family;
                    spec.strength = ladder[si];
                    spec.seed = derive_seed(run.seed, family, si, di);
                    const Matrix corrupted = apply_perturbation(ds.test, spec);
                    sum += metrics::vus(ds.score(corrupted), ds.labels, vus_levels, metrics::Curve::roc);
                }
            const double family_mean = sum / static_cast<double>(ladder.size() * run.datasets.size());
            family_by_seed[static_cast<std::size_t>(family)].push_back(family_mean);
            retention_by_seed[static_cast<std::size_t>(family)].push_back(family_mean / clean_mean);
        }
    }

    mean_std(clean_by_seed, report.clean_vus_mean, report.clean_vus_std);
    for (Family family : kFamilies) {
        FamilyOutcome& out = report.families[static_cast<std::size_t>(family)];
        out.per_seed_vus = family_by_seed[static_cast<std::size_t>(family)];
        out.per_seed_retention = retention_by_seed[static_cast<std::size_t>(family)];
        mean_std(out.per_seed_vus, out.vus_mean, out.vus_std);
        mean_std(out.per_seed_retention, out.retention_mean, out.retention_std);
    }
    return report;
}

}  // namespace ccgbench::perturb
