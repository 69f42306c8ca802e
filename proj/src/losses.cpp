#include "dtsurv/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dtsurv/errors.hpp"

namespace dtsurv {

namespace {

constexpr double kLogFloor = 1e-12;

void check_labels(const Eigen::MatrixXd& probs, const BatchLabels& labels) {
    if (static_cast<Eigen::Index>(labels.size()) != probs.rows())
        throw ValidationError("loss: " + std::to_string(labels.size()) + " labels for " +
                              std::to_string(probs.rows()) + " rows");
    const int t_max = static_cast<int>(probs.cols()) - 1;
    for (const auto& l : labels) {
        if (l.time < 0 || l.time > t_max)
            throw ValidationError("loss: label time " + std::to_string(l.time) +
                                  " outside grid");
        if (!std::isfinite(l.margin) || !std::isfinite(l.weight))
            throw ValidationError("loss: non-finite label");
    }
}

int target_index(const SubjectLabel& l, int t_max) {
    if (l.event) return l.time;
    const long r = std::llround(l.margin);
    return static_cast<int>(std::clamp(r, 0L, static_cast<long>(t_max)));
}

double row_mean(const Eigen::MatrixXd& probs, Eigen::Index r) {
    double mu = 0.0;
    for (Eigen::Index t = 0; t < probs.cols(); ++t)
        mu += probs(r, t) * static_cast<double>(t);
    return mu;
}

Eigen::VectorXd row_means(const Eigen::MatrixXd& probs) {
    Eigen::VectorXd mu(probs.rows());
    for (Eigen::Index r = 0; r < probs.rows(); ++r) mu(r) = row_mean(probs, r);
    return mu;
}

}  // namespace

BatchLabels make_batch_labels(const std::vector<Outcome>& outcomes, const KmCurve& train_km,
                              const TimeGrid& grid) {
    BatchLabels labels;
    labels.reserve(outcomes.size());
    for (const auto& o : outcomes) {
        SubjectLabel l;
        l.time = o.time;
        l.event = o.event;
        if (o.event) {
            l.margin = static_cast<double>(o.time);
            l.weight = 1.0;
        } else {
            l.margin = margin_time_or_censor(train_km, o.time, grid);
            l.weight = censor_weight(train_km, o.time);
        }
        labels.push_back(l);
    }
    return labels;
}

double loss_softmax(const Eigen::MatrixXd& probs, const BatchLabels& labels) {
    check_labels(probs, labels);
    const int t_max = static_cast<int>(probs.cols()) - 1;
    double total = 0.0;
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        const double p = probs(r, target_index(labels[static_cast<std::size_t>(r)], t_max));
        total -= std::log(std::max(p, kLogFloor));
    }
    return total;
}

double loss_margin_mean(const Eigen::MatrixXd& probs, const BatchLabels& labels) {
    check_labels(probs, labels);
    double total = 0.0;
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        const auto& l = labels[static_cast<std::size_t>(r)];
        const double mu = row_mean(probs, r);
        if (l.event) {
            const double gap = mu - static_cast<double>(l.time);
            total += 0.5 * gap * gap;
        } else {
            const double gap = mu - l.margin;
            total += 0.5 * l.weight * gap * gap;
        }
    }
    return total;
}

double loss_variance(const Eigen::MatrixXd& probs) {
    double total = 0.0;
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        const double mu = row_mean(probs, r);
        for (Eigen::Index t = 0; t < probs.cols(); ++t) {
            const double c = static_cast<double>(t) - mu;
            total += probs(r, t) * c * c;
        }
    }
    return total;
}

std::vector<std::pair<int, int>> sample_discordant_pairs(const BatchLabels& labels,
                                                         RandomStream& rng) {
    std::vector<std::pair<int, int>> pairs;
    std::vector<int> admissible;
    for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
        if (!labels[static_cast<std::size_t>(i)].event) continue;
        admissible.clear();
        for (int k = 0; k < static_cast<int>(labels.size()); ++k)
            if (labels[static_cast<std::size_t>(k)].time >
                labels[static_cast<std::size_t>(i)].time)
                admissible.push_back(k);
        if (admissible.empty()) continue;
        const auto pick = rng.uniform_int(admissible.size());
        pairs.emplace_back(i, admissible[pick]);
    }
    return pairs;
}

double loss_discordant(const Eigen::VectorXd& mu, const BatchLabels& labels,
                       const std::vector<std::pair<int, int>>& pairs) {
    double total = 0.0;
    for (const auto& [i, k] : pairs) {
        if (i < 0 || k < 0 || i >= mu.size() || k >= mu.size() ||
            static_cast<std::size_t>(i) >= labels.size() ||
            static_cast<std::size_t>(k) >= labels.size())
            throw ValidationError("loss: pair index outside batch");
        const double time_gap = static_cast<double>(labels[static_cast<std::size_t>(k)].time -
                                                    labels[static_cast<std::size_t>(i)].time);
        total += std::max(0.0, time_gap - (mu(k) - mu(i)));
    }
    return total;
}

LossBreakdown loss_total(const Eigen::MatrixXd& probs, const BatchLabels& labels,
                         const LossWeights& weights,
                         const std::vector<std::pair<int, int>>& pairs) {
    check_labels(probs, labels);
    LossBreakdown out;
    out.softmax = weights.include_softmax ? loss_softmax(probs, labels) : 0.0;
    out.margin_mean = loss_margin_mean(probs, labels);
    out.variance = loss_variance(probs);
    out.discordant = loss_discordant(row_means(probs), labels, pairs);
    out.total = out.softmax + weights.lambda_m * out.margin_mean +
                weights.lambda_v * out.variance + weights.lambda_d * out.discordant;
    return out;
}

LossBreakdown loss_total_with_grad(const Eigen::MatrixXd& probs, const BatchLabels& labels,
                                   const LossWeights& weights,
                                   const std::vector<std::pair<int, int>>& pairs,
                                   Eigen::MatrixXd& dprobs) {
    const LossBreakdown out = loss_total(probs, labels, weights, pairs);
    const int t_max = static_cast<int>(probs.cols()) - 1;
    const Eigen::VectorXd mu = row_means(probs);
    dprobs.setZero(probs.rows(), probs.cols());

    if (weights.include_softmax) {
        for (Eigen::Index r = 0; r < probs.rows(); ++r) {
            const int tau = target_index(labels[static_cast<std::size_t>(r)], t_max);
            const double p = probs(r, tau);
            if (p > kLogFloor) dprobs(r, tau) -= 1.0 / p;
        }
    }

    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        const auto& l = labels[static_cast<std::size_t>(r)];
        const double coeff = l.event ? (mu(r) - static_cast<double>(l.time))
                                     : l.weight * (mu(r) - l.margin);
        // Variance term: d var / d p_s = (s - mu)^2 - 2 s m1 where m1 is the
        // uncentered first moment about mu (zero on the simplex, kept exact so
        // finite differences agree off it).
        double m1 = 0.0;
        for (Eigen::Index t = 0; t < probs.cols(); ++t)
            m1 += probs(r, t) * (static_cast<double>(t) - mu(r));
        for (Eigen::Index t = 0; t < probs.cols(); ++t) {
            const double s = static_cast<double>(t);
            const double c = s - mu(r);
            dprobs(r, t) += weights.lambda_m * coeff * s;
            dprobs(r, t) += weights.lambda_v * (c * c - 2.0 * s * m1);
        }
    }

    for (const auto& [i, k] : pairs) {
        const double time_gap = static_cast<double>(labels[static_cast<std::size_t>(k)].time -
                                                    labels[static_cast<std::size_t>(i)].time);
        if (time_gap - (mu(k) - mu(i)) <= 0.0) continue;
        for (Eigen::Index t = 0; t < probs.cols(); ++t) {
            const double s = static_cast<double>(t);
            dprobs(i, t) += weights.lambda_d * s;
            dprobs(k, t) -= weights.lambda_d * s;
        }
    }
    return out;
}

}  // namespace dtsurv
