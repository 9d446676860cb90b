#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ccgbench/matrix.hpp"

namespace ccgbench::perturb {

enum class Family { noise, dropout, shift };

constexpr std::array<Family, 3> kFamilies{Family::noise, Family::dropout, Family::shift};

std::string to_string(Family f);

// strength is sigma for noise (in normalized units), the channel fraction for
// dropout, and the integer timestep count for shift.
struct PerturbationSpec {
    Family family = Family::noise;
    double strength = 0.0;
    std::uint64_t seed = 0;
    // Shift rotates by default (tail wraps to the front, labels stay aligned);
    // the truncating variant drops the tail and front-pads with the first row.
    bool shift_truncates = false;
};

// Deterministic given the spec: noise adds seeded i.i.d. Gaussian(0, sigma^2)
// everywhere; dropout zeroes round-half-up(p*C) uniformly chosen channels
// (at least one when p > 0) and leaves the rest bit-identical; shift moves the
// whole split forward by the given timesteps. Zero strength is the identity.
Matrix apply_perturbation(const Matrix& test_split, const PerturbationSpec& spec);

// Default strength ladders, three per family.
struct FamilyStrengths {
    std::vector<double> noise{0.05, 0.10, 0.20};
    std::vector<double> dropout{0.10, 0.25, 0.50};
    std::vector<double> shift{2, 5, 10};

    const std::vector<double>& of(Family f) const {
        switch (f) {
            case Family::noise: return noise;
            case Family::dropout: return dropout;
            default: return shift;
        }
    }
};

// Perturbation seed shared by every method at the same (run seed, family,
// strength, dataset) cell, so methods face identical corrupted inputs.
std::uint64_t derive_seed(std::uint64_t run_seed, Family family, std::size_t strength_idx,
                          std::size_t dataset_idx);

// One dataset bound to a detector's scoring function (typically a model
// trained under one seed). The callable returns one score per test row.
struct ScorableDataset {
    std::string name;
    Matrix test;
    std::vector<int> labels;
    std::function<std::vector<double>(const Matrix&)> score;
};

// All datasets scored by the models of one training seed.
struct SeedScorers {
    std::uint64_t seed = 0;
    std::vector<ScorableDataset> datasets;
};

struct FamilyOutcome {
    double vus_mean = 0.0;  // across seeds of the per-seed family means
    double vus_std = 0.0;
    double retention_mean = 0.0;  // per-seed family-mean / clean-mean, then across seeds
    double retention_std = 0.0;
    std::vector<double> per_seed_vus;
    std::vector<double> per_seed_retention;
};

struct RobustnessReport {
    double clean_vus_mean = 0.0;
    double clean_vus_std = 0.0;
    std::array<FamilyOutcome, 3> families;  // indexed by Family

    const FamilyOutcome& of(Family f) const { return families[static_cast<std::size_t>(f)]; }
};

// For each seed: clean mean of VUS-ROC over datasets, then per family the mean
// over datasets x strengths under seed-matched perturbations; across seeds:
// mean and (n-1)-denominator std. Absolute VUS-ROC is the primary number,
// retention the diagnostic.
RobustnessReport robustness_suite(const std::vector<SeedScorers>& runs, const FamilyStrengths& strengths = {},
                                  std::size_t vus_levels = 50);

}  // namespace ccgbench::perturb
