#pragma once

#include <vector>

#include "dtsurv/data_model.hpp"

namespace dtsurv {

// Product-limit population survival estimate on the grid:
// values[j] = prod_{t <= j, d_t > 0} (1 - d_t / n_t).
struct KmCurve {
    std::vector<double> values;
};

// d_t = events at t; n_t = subjects with label >= t (a subject censored at t
// is still at risk at t and leaves afterwards). The curve extends stepwise
// over grid points with no events.
KmCurve km_fit(const std::vector<Outcome>& labels, const TimeGrid& grid);
KmCurve km_fit(const Dataset& train);

// Best-guess event time for a subject censored at `censor_time`:
//   e_m = T + (sum_{t=T}^{t_max-1} S_km(t)) / S_km(T)
// clamped to [T, t_max]. The sum evaluates the paper's integral of the step
// curve exactly; truncation at t_max caps the guess.
// Throws DegenerateTailError when S_km(T) = 0 (the ratio is 0/0); callers
// substitute e_m = T in that case, see margin_time_or_censor.
double margin_time(const KmCurve& km, int censor_time, const TimeGrid& grid);

double margin_time_or_censor(const KmCurve& km, int censor_time, const TimeGrid& grid);

// Confidence weight of a censored subject's margin term: 1 - S_km(T).
// Nondecreasing in censor_time.
double censor_weight(const KmCurve& km, int censor_time);

}  // namespace dtsurv
