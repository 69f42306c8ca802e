#include "dtsurv/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dtsurv/errors.hpp"

namespace dtsurv {

namespace {

struct SeriesFill {
    std::vector<double> values;
    std::vector<CellSource> tags;
};

// One feature over the whole grid; NaN = missing. "Previously observed" stats
// are cumulative over strictly earlier steps, so the fill for a given cell
// never looks ahead.
SeriesFill fill_series(const std::vector<double>& series, FeatureKind kind,
                       double population_fill, int carry_limit) {
    const std::size_t n = series.size();
    SeriesFill out;
    out.values.resize(n);
    out.tags.resize(n);
    int last_t = -1;
    double last_v = 0.0;
    double sum = 0.0;
    long count = 0, ones = 0;
    for (std::size_t t = 0; t < n; ++t) {
        const double v = series[t];
        if (!std::isnan(v)) {
            out.values[t] = v;
            out.tags[t] = CellSource::observed;
            last_t = static_cast<int>(t);
            last_v = v;
            sum += v;
            count += 1;
            if (v >= 0.5) ones += 1;
            continue;
        }
        if (last_t >= 0 && static_cast<int>(t) - last_t <= carry_limit) {
            out.values[t] = last_v;
            out.tags[t] = CellSource::locf;
        } else if (count > 0) {
            out.values[t] = (kind == FeatureKind::continuous)
                                ? sum / static_cast<double>(count)
                                : (ones >= count - ones ? 1.0 : 0.0);
            out.tags[t] = CellSource::fallback;
        } else {
            out.values[t] = population_fill;
            out.tags[t] = CellSource::fallback;
        }
    }
    return out;
}

}  // namespace

PopulationStats population_stats(const Dataset& train,
                                 const std::vector<FeatureKind>& kinds) {
    if (static_cast<int>(kinds.size()) != train.dynamic_dim)
        throw ValidationError("population_stats: kinds length != dynamic_dim");
    const std::size_t q = kinds.size();
    std::vector<double> sum(q, 0.0);
    std::vector<long> count(q, 0), ones(q, 0);
    for (const auto& r : train.records) {
        for (const auto& [t, vec] : r.x_dynamic) {
            for (std::size_t f = 0; f < q; ++f) {
                const double v = vec[f];
                if (std::isnan(v)) continue;
                sum[f] += v;
                count[f] += 1;
                if (v >= 0.5) ones[f] += 1;
            }
        }
    }
    PopulationStats stats;
    stats.fill.resize(q);
    for (std::size_t f = 0; f < q; ++f) {
        if (count[f] == 0)
            throw ValidationError("population_stats: feature " + std::to_string(f) +
                                  " has no observed value in the dataset");
        stats.fill[f] = (kinds[f] == FeatureKind::continuous)
                            ? sum[f] / static_cast<double>(count[f])
                            : (ones[f] >= count[f] - ones[f] ? 1.0 : 0.0);
    }
    return stats;
}

ImputedSeries impute_locf(const SurvivalRecord& record, const TimeGrid& grid,
                          const std::vector<FeatureKind>& kinds,
                          const PopulationStats& stats, int carry_limit) {
    const std::size_t q = kinds.size();
    if (q == 0) throw ValidationError("impute_locf: no dynamic features");
    if (stats.fill.size() != q)
        throw ValidationError("impute_locf: stats length != kinds length");
    if (carry_limit < 0) throw ValidationError("impute_locf: negative carry limit");
    const int n = grid.size();

    ImputedSeries out;
    out.values.resize(n, static_cast<int>(q));
    out.provenance.resize(static_cast<std::size_t>(n) * q);

    std::vector<double> series(static_cast<std::size_t>(n));
    for (std::size_t f = 0; f < q; ++f) {
        std::fill(series.begin(), series.end(), std::nan(""));
        for (const auto& [t, vec] : record.x_dynamic) {
            if (t < 0 || t >= n)
                throw RangeError("impute_locf: observation off the grid");
            if (vec.size() != q)
                throw ValidationError("impute_locf: feature length mismatch");
            series[static_cast<std::size_t>(t)] = vec[f];
        }
        const SeriesFill filled = fill_series(series, kinds[f], stats.fill[f], carry_limit);
        for (int t = 0; t < n; ++t) {
            out.values(t, static_cast<int>(f)) = filled.values[static_cast<std::size_t>(t)];
            out.provenance[static_cast<std::size_t>(t) * q + f] =
                filled.tags[static_cast<std::size_t>(t)];
        }
    }
    return out;
}

double percentile_linear(std::vector<double> values, double p) {
    if (values.empty()) throw ValidationError("percentile_linear: empty input");
    if (p < 0.0 || p > 1.0) throw ValidationError("percentile_linear: p outside [0,1]");
    std::sort(values.begin(), values.end());
    const double rank = p * static_cast<double>(values.size() - 1);
    const auto i0 = static_cast<std::size_t>(std::floor(rank));
    const double frac = rank - static_cast<double>(i0);
    if (i0 + 1 >= values.size()) return values.back();
    return values[i0] * (1.0 - frac) + values[i0 + 1] * frac;
}

ReactionTensor build_reaction_tensor(const std::map<int, ReactionTest>& tests,
                                     const TimeGrid& grid, int window, double lo_pct,
                                     double hi_pct, int carry_limit) {
    const int months = grid.size();
    if (window < 1 || months % window != 0)
        throw ValidationError("build_reaction_tensor: window " + std::to_string(window) +
                              " does not divide " + std::to_string(months));
    if (tests.empty()) throw ValidationError("build_reaction_tensor: no tests");
    if (!(lo_pct >= 0.0 && lo_pct <= hi_pct && hi_pct <= 1.0))
        throw ValidationError("build_reaction_tensor: bad percentile bounds");
    for (const auto& [month, test] : tests) {
        if (month < 0 || month >= months)
            throw RangeError("build_reaction_tensor: test month off the grid");
        for (const auto& task : test.responses)
            for (double v : task)
                if (!std::isfinite(v))
                    throw ValidationError("build_reaction_tensor: non-finite response");
    }

    ReactionTensor tensor;
    tensor.months = months;
    tensor.window = window;
    tensor.data.assign(static_cast<std::size_t>(kReactionTasks) *
                           static_cast<std::size_t>(months) * kReactionResponses,
                       0.0);

    std::vector<double> series(static_cast<std::size_t>(months));
    for (int task = 0; task < kReactionTasks; ++task) {
        std::vector<double> raw;
        raw.reserve(tests.size() * kReactionResponses);
        for (const auto& [month, test] : tests)
            for (double v : test.responses[static_cast<std::size_t>(task)]) raw.push_back(v);
        const double lo = percentile_linear(raw, lo_pct);
        const double hi = percentile_linear(raw, hi_pct);
        const double range = hi - lo;

        for (int resp = 0; resp < kReactionResponses; ++resp) {
            std::fill(series.begin(), series.end(), std::nan(""));
            double sum = 0.0;
            long count = 0;
            for (const auto& [month, test] : tests) {
                const double v =
                    test.responses[static_cast<std::size_t>(task)][static_cast<std::size_t>(resp)];
                const double scaled =
                    range > 0.0 ? (std::clamp(v, lo, hi) - lo) / range : 0.5;
                series[static_cast<std::size_t>(month)] = scaled;
                sum += scaled;
                count += 1;
            }
            const SeriesFill filled = fill_series(
                series, FeatureKind::continuous, sum / static_cast<double>(count), carry_limit);
            for (int month = 0; month < months; ++month)
                tensor.data[(static_cast<std::size_t>(task) * static_cast<std::size_t>(months) +
                             static_cast<std::size_t>(month)) *
                                kReactionResponses +
                            static_cast<std::size_t>(resp)] =
                    filled.values[static_cast<std::size_t>(month)];
        }
    }
    return tensor;
}

}  // namespace dtsurv
