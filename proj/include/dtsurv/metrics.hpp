#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dtsurv/data_model.hpp"
#include "dtsurv/distribution.hpp"
#include "dtsurv/km.hpp"

namespace dtsurv {

struct MetricsReport {
    double c_index = 0.0;
    double mae_u = 0.0;
    double mae_h = 0.0;
    double mauc = 0.0;
    std::vector<std::pair<int, double>> td_auc;
    long n_eval_pairs = 0;
};

// Concordance over ordered pairs (i, k) where subject i has an observed event
// and T_i < T_k (k of any status): fraction with mu_i < mu_k, ties counting
// one half. Throws UndefinedMetricError when no admissible pair exists.
double c_index(const std::vector<double>& mean_lifetimes,
               const std::vector<Outcome>& labels);

// Mean |T - mu| over subjects with observed events.
double mae_u(const std::vector<double>& mean_lifetimes,
             const std::vector<Outcome>& labels);

// Mean max(T - mu, 0) over censored subjects: predicting past the censor time
// costs nothing, predicting before it costs linearly.
double mae_h(const std::vector<double>& mean_lifetimes,
             const std::vector<Outcome>& labels);

// Cumulative/dynamic time-dependent AUC. At each eval time t, cases are
// subjects with an event at or before t, controls are subjects with T > t;
// the score is risk at t. Cases carry inverse-probability-of-censoring
// weights 1/G(T-) from km_censor (a product-limit fit of the censoring
// distribution); controls are unweighted. Times with no case or no control
// are dropped; an empty result throws UndefinedMetricError.
std::vector<std::pair<int, double>> td_auc(const std::vector<SurvivalCurve>& curves,
                                           const std::vector<Outcome>& labels,
                                           const KmCurve& km_censor,
                                           const std::vector<int>& eval_times);

// Same with a constant-in-time risk score of -mean lifetime, for models that
// expose only mu.
std::vector<std::pair<int, double>> td_auc(const std::vector<double>& mean_lifetimes,
                                           const std::vector<Outcome>& labels,
                                           const KmCurve& km_censor,
                                           const std::vector<int>& eval_times);

// Trapezoidal integral of the AUC series over its spanned range; a single
// point returns its own value.
double mauc(const std::vector<std::pair<int, double>>& td);

// Product-limit fit of the censoring distribution (event indicator flipped).
KmCurve censoring_km(const std::vector<Outcome>& labels, const TimeGrid& grid);

// Full report: C-index, both MAEs, TD-AUC over all interior grid times, and
// its trapezoidal mean.
MetricsReport evaluate_metrics(const std::vector<double>& mean_lifetimes,
                               const std::vector<SurvivalCurve>& curves,
                               const std::vector<Outcome>& labels,
                               const KmCurve& km_censor, const TimeGrid& grid);

std::string report_to_json(const MetricsReport& report);

std::string td_auc_to_csv(const std::vector<std::pair<int, double>>& td);

}  // namespace dtsurv
