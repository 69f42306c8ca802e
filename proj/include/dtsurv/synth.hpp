#pragma once

#include <cstdint>
#include <string>

#include "dtsurv/data_model.hpp"

namespace dtsurv {

enum class SynthKind { static_only, dynamic };

// Long-tailed synthetic survival data. Event times follow
//   T = |gamma' x| * Exponential(1)
// rounded to the grid, where x collects standard-normal static covariates
// (and, for the dynamic kind, per-feature extremes over time of
// Weibull-plus-normal trajectories). Half the records (censor_fraction) are
// right-censored at a uniform integer time in [0, T].
struct SynthConfig {
    SynthKind kind = SynthKind::static_only;
    int n_records = 1000;
    // Dimension scaling: effective dims are base * 5^k.
    int k = 0;
    int static_dim = 4;
    int dynamic_dim = 20;  // unused for the static kind
    double gamma_n = 10.0;
    double gamma_v = 5.0;
    // Trajectory law x_v(t) = Weibull(a, b) + N(0, 1), drawn per cell. The
    // heavy-tailed defaults produce rare large excursions (roughly one cell
    // above 5 per record) whose count and size vary between records, so the
    // temporal extremes carry signal that is both strong next to the static
    // term and detectable from individual time steps; see the generator notes
    // in the README.
    double weibull_a = 0.4;
    double weibull_b = 0.03;
    double noise_eps = 0.0;       // post-label covariate noise scale
    double censor_fraction = 0.5;
    double observe_prob = 1.0;    // chance a time step is recorded in x_dynamic
    int t_max = -1;               // -1 = kind default: 200 static, 199 dynamic
    std::uint64_t seed = 0;

    int effective_static_dim() const;
    int effective_dynamic_dim() const;
    int resolved_t_max() const;
};

Dataset generate_synth_s(const SynthConfig& cfg);
Dataset generate_synth_d(const SynthConfig& cfg);

// Dispatch on cfg.kind; dimension scaling and post-label noise are part of
// generation, so scaled/noised variants come from the same entry point.
Dataset generate(const SynthConfig& cfg);

struct GroupStats {
    long count = 0;
    int time_min = 0;
    int time_max = 0;
    double time_mean = 0.0;
};

struct SynthStats {
    long n_records = 0;
    GroupStats event;
    GroupStats censored;
    int static_dim = 0;
    int dynamic_dim = 0;
    int t_max = 0;
};

SynthStats synth_stats(const Dataset& ds);

std::string stats_to_json(const SynthStats& stats);

}  // namespace dtsurv
