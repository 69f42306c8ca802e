#include "dtsurv/distribution.hpp"

#include <cmath>
#include <string>

#include "dtsurv/errors.hpp"

namespace dtsurv {

namespace {

void require_nonempty(const DiscreteDistribution& d) {
    if (d.probs.empty())
        throw ValidationError("distribution: empty probability vector");
}

}  // namespace

void validate_distribution(const DiscreteDistribution& d, double tol) {
    require_nonempty(d);
    double total = 0.0;
    for (double p : d.probs) {
        if (!std::isfinite(p))
            throw ValidationError("distribution: non-finite probability");
        if (p < 0.0)
            throw ValidationError("distribution: negative probability " +
                                  std::to_string(p));
        total += p;
    }
    if (std::abs(total - 1.0) > tol)
        throw ValidationError("distribution: mass " + std::to_string(total) +
                              " deviates from 1 beyond tolerance");
}

double cdf(const DiscreteDistribution& d, int j) {
    require_nonempty(d);
    if (j < 0 || j > d.t_max())
        throw RangeError("cdf: index " + std::to_string(j) + " off the grid");
    double c = 0.0;
    for (int t = 0; t <= j; ++t) c += d.probs[static_cast<std::size_t>(t)];
    return c;
}

SurvivalCurve survival(const DiscreteDistribution& d) {
    require_nonempty(d);
    SurvivalCurve s;
    s.values.resize(d.probs.size());
    double tail = 0.0;
    for (std::size_t j = d.probs.size(); j-- > 0;) {
        tail += d.probs[j];
        s.values[j] = tail;
    }
    return s;
}

double mean_lifetime(const DiscreteDistribution& d) {
    require_nonempty(d);
    double mu = 0.0;
    for (std::size_t t = 0; t < d.probs.size(); ++t)
        mu += static_cast<double>(t) * d.probs[t];
    return mu;
}

double variance(const DiscreteDistribution& d) {
    require_nonempty(d);
    const double mu = mean_lifetime(d);
    double v = 0.0;
    for (std::size_t t = 0; t < d.probs.size(); ++t) {
        const double dt = static_cast<double>(t) - mu;
        v += d.probs[t] * dt * dt;
    }
    return v;
}

}  // namespace dtsurv
