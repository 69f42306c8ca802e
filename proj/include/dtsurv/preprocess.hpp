#pragma once

#include <Eigen/Core>
#include <array>
#include <map>
#include <vector>

#include "dtsurv/data_model.hpp"

namespace dtsurv {

enum class FeatureKind { continuous, binary };

enum class CellSource : unsigned char { observed, locf, fallback };

// Dense longitudinal matrix with no missing cells.
struct ImputedSeries {
    Eigen::MatrixXd values;              // (t_max+1) x dynamic_dim
    std::vector<CellSource> provenance;  // row-major: index = t * dim + feature

    CellSource tag(int t, int f) const {
        return provenance[static_cast<std::size_t>(t) * static_cast<std::size_t>(values.cols()) +
                          static_cast<std::size_t>(f)];
    }
};

// Per-feature fill value for cells before any observation: mean of observed
// cells for continuous features, mode for binary (ties break to 1). Computed
// over the training split only.
struct PopulationStats {
    std::vector<double> fill;
};

// Throws ValidationError if any feature has zero observed cells in the whole
// dataset.
PopulationStats population_stats(const Dataset& train,
                                 const std::vector<FeatureKind>& kinds);

// Last-observation-carried-forward with a bounded carry: a missing cell
// within carry_limit steps after an observation copies it (tag locf); later
// missing cells take the mean/mode of this record's earlier observations and
// cells before the first observation take the population value (tag fallback
// for both).
ImputedSeries impute_locf(const SurvivalRecord& record, const TimeGrid& grid,
                          const std::vector<FeatureKind>& kinds,
                          const PopulationStats& stats, int carry_limit = 3);

// Percentile by linear interpolation between order statistics, endpoints
// inclusive: rank = p * (n - 1).
double percentile_linear(std::vector<double> values, double p);

// One raw reaction test: 3 tasks x 30 response times.
struct ReactionTest {
    std::array<std::array<double, 30>, 3> responses;
};

constexpr int kReactionTasks = 3;
constexpr int kReactionResponses = 30;

// Normalized per-subject test history; every cell in [0, 1].
struct ReactionTensor {
    std::vector<double> data;  // [task][month][response], row-major
    int months = 0;
    int window = 1;

    double at(int task, int month, int response) const {
        return data[(static_cast<std::size_t>(task) * static_cast<std::size_t>(months) +
                     static_cast<std::size_t>(month)) *
                        kReactionResponses +
                    static_cast<std::size_t>(response)];
    }
};

// Per task: clip raw responses to the subject's [lo_pct, hi_pct] percentiles,
// min-max scale to [0, 1] (degenerate range maps to 0.5), then fill months
// with no test per cell using the impute_locf rule on the scaled values, with
// the cell's own observed mean as the leading fill. `window` must divide
// t_max + 1; blocks of that length share one extracted feature downstream.
ReactionTensor build_reaction_tensor(const std::map<int, ReactionTest>& tests,
                                     const TimeGrid& grid, int window,
                                     double lo_pct = 0.02, double hi_pct = 0.98,
                                     int carry_limit = 3);

}  // namespace dtsurv
