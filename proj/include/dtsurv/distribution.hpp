#pragma once

#include <vector>

namespace dtsurv {

// Probability distribution over the time grid: probs[t] = P(T = t),
// t = 0..t_max. Entries are non-negative and sum to 1.
struct DiscreteDistribution {
    std::vector<double> probs;

    int t_max() const { return static_cast<int>(probs.size()) - 1; }
};

// values[j] = P(T >= j), j = 0..t_max; values[0] == 1 up to rounding.
struct SurvivalCurve {
    std::vector<double> values;
};

// Throws ValidationError when a prob is negative or the total deviates from 1
// by more than tol.
void validate_distribution(const DiscreteDistribution& d, double tol = 1e-6);

// P(T <= j).
double cdf(const DiscreteDistribution& d, int j);

// Suffix sums of probs, computed from the tail so survival(d).values[0] is the
// exact total mass.
SurvivalCurve survival(const DiscreteDistribution& d);

// Expected lifetime: sum_t t * p_t.
double mean_lifetime(const DiscreteDistribution& d);

// Central second moment: sum_t p_t * (t - mean)^2.
double variance(const DiscreteDistribution& d);

}  // namespace dtsurv
