#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "dtsurv/data_model.hpp"
#include "dtsurv/km.hpp"
#include "dtsurv/rng.hpp"

namespace dtsurv {

// Per-subject training target. For an observed event the margin equals the
// event time and the weight is 1. For a censored subject the margin is the
// conditional expected event time taken from the training-split product-limit
// curve, and the weight is one minus that curve at the censoring time.
struct SubjectLabel {
    int time = 0;
    bool event = false;
    double margin = 0.0;
    double weight = 1.0;
};

using BatchLabels = std::vector<SubjectLabel>;

BatchLabels make_batch_labels(const std::vector<Outcome>& outcomes, const KmCurve& train_km,
                              const TimeGrid& grid);

struct LossWeights {
    double lambda_m = 1.0;
    double lambda_v = 0.01;
    double lambda_d = 1.0;
    bool include_softmax = true;
};

struct LossBreakdown {
    double softmax = 0.0;
    double margin_mean = 0.0;
    double variance = 0.0;
    double discordant = 0.0;
    double total = 0.0;
};

// Negative log probability mass at the target time, summed over the batch.
// Censored subjects target the rounded margin time. Probabilities are floored
// at 1e-12 inside the log.
double loss_softmax(const Eigen::MatrixXd& probs, const BatchLabels& labels);

// Half the squared gap between predicted mean lifetime and the target time
// (event time, or margin time weighted by the label weight), summed.
double loss_margin_mean(const Eigen::MatrixXd& probs, const BatchLabels& labels);

// Sum of the per-row distribution variances.
double loss_variance(const Eigen::MatrixXd& probs);

// For each subject with an observed event, draws one partner with a strictly
// later time (any status). Subjects without an admissible partner are skipped
// and consume no randomness. Returns (subject, partner) index pairs.
std::vector<std::pair<int, int>> sample_discordant_pairs(const BatchLabels& labels,
                                                         RandomStream& rng);

// Hinge penalty max(0, (t_k - t_i) - (mu_k - mu_i)) summed over the pairs.
double loss_discordant(const Eigen::VectorXd& mu, const BatchLabels& labels,
                       const std::vector<std::pair<int, int>>& pairs);

LossBreakdown loss_total(const Eigen::MatrixXd& probs, const BatchLabels& labels,
                         const LossWeights& weights,
                         const std::vector<std::pair<int, int>>& pairs);

// Same value as loss_total; also fills dprobs (same shape as probs) with the
// exact derivative of the total with respect to each probability entry.
LossBreakdown loss_total_with_grad(const Eigen::MatrixXd& probs, const BatchLabels& labels,
                                   const LossWeights& weights,
                                   const std::vector<std::pair<int, int>>& pairs,
                                   Eigen::MatrixXd& dprobs);

}  // namespace dtsurv
