#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dtsurv/data_model.hpp"
#include "dtsurv/km.hpp"
#include "dtsurv/losses.hpp"
#include "dtsurv/metrics.hpp"
#include "dtsurv/network.hpp"
#include "dtsurv/preprocess.hpp"

namespace dtsurv {

struct TrainConfig {
    int epochs = 50;
    int batch_size = 16;
    double learning_rate = 1e-4;
    LossWeights weights;
    int patience = 20;
    std::uint64_t seed = 0;
    int n_folds = 5;
    double clip_norm = 5.0;   // global-norm gradient clip; stabilizes the
    bool clip_enabled = true; // margin-mean term, off for ablation runs
    int carry_limit = 3;      // imputation carry for dynamic features

    void validate() const;
};

struct EpochLog {
    int epoch = 0;  // zero-based
    LossBreakdown loss;
    double val_c_index = 0.0;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    int best_epoch = -1;
    double best_val_c_index = 0.0;
    bool aborted = false;
    std::string abort_reason;
    KmCurve train_km;  // product-limit curve the margins were derived from
    std::optional<MetricsReport> test_report;
};

struct TrainResult {
    Model model;
    TrainLog log;
};

// Turns records into network inputs. Dynamic features are imputed per record
// with the training split's population statistics; `kinds` may be empty when
// the mode is static-only.
std::vector<ModelInput> build_inputs(const Dataset& ds, DynamicMode mode,
                                     const std::vector<FeatureKind>& kinds,
                                     const PopulationStats& stats, int carry_limit = 3);

// Mini-batch gradient descent on the combined loss with adaptive-moment
// updates (beta1 0.9, beta2 0.999, eps 1e-8) at a fixed learning rate.
// Margin times, censor weights, and population fill statistics all come from
// `train` only. After each epoch the validation concordance index is logged;
// the returned model carries the parameters of the best epoch. Training stops
// once `patience` epochs pass without improvement (patience 0 stops at the
// first non-improving epoch) or at `epochs`. A non-finite loss aborts with the
// last finite parameters and a diagnostic naming the epoch and batch.
// Identical seeds give identical results apart from the timing fields.
TrainResult train_model(const Dataset& train, const Dataset& val, ModelConfig mc,
                        TrainConfig tc, const std::vector<FeatureKind>& kinds = {});

// Prediction metrics of a trained model on a dataset, using imputation
// statistics from the training split.
MetricsReport evaluate_model(const Model& model, const Dataset& ds,
                             const std::vector<FeatureKind>& kinds,
                             const PopulationStats& stats, int carry_limit = 3);

struct FoldOutcome {
    int fold = 0;
    std::optional<MetricsReport> report;  // empty when the fold failed
    std::string error;
    int best_epoch = -1;
    double val_c_index = 0.0;
};

struct MetricSummary {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation, 0 for a single fold
};

struct CvResult {
    std::vector<FoldOutcome> folds;
    MetricSummary c_index, mae_u, mae_h, mauc;
};

// n_folds independent 7:1:2 resplits seeded seed+fold, trained concurrently
// (cap with DTSURV_THREADS). A failed fold is recorded with its error message
// and excluded from the summary.
CvResult cross_validate(const Dataset& ds, ModelConfig mc, TrainConfig tc,
                        const std::vector<FeatureKind>& kinds = {},
                        SplitRatios ratios = {});

using SearchSpace = std::map<std::string, std::vector<double>>;

// Table of candidates swept by grid_search when no space is given. Keys:
// lambda_m, lambda_v, lambda_d, batch_size, dropout, n_heads, d_model,
// n_layers, learning_rate.
SearchSpace default_search_space();

struct Trial {
    std::map<std::string, double> values;
    double val_c_index = 0.0;
    bool failed = false;
    std::string error;
};

struct GridSearchResult {
    std::vector<Trial> trials;
    std::size_t best = 0;
    ModelConfig best_model;
    TrainConfig best_train;
};

// Exhaustive Cartesian sweep over the space, each trial trained on the same
// seeded 7:1:2 split and ranked by best validation concordance. Unknown keys
// and empty candidate lists are config errors.
GridSearchResult grid_search(const Dataset& ds, const SearchSpace& space, ModelConfig mc,
                             TrainConfig tc, const std::vector<FeatureKind>& kinds = {},
                             SplitRatios ratios = {});

// One JSON object per epoch, then a trailer line with the summary fields.
std::string train_log_to_jsonl(const TrainLog& log);

// Trial table as CSV: one column per swept key plus val_c_index and error.
std::string trials_to_csv(const std::vector<Trial>& trials);

// Concurrency cap for fold and trial workers: DTSURV_THREADS when set,
// otherwise the hardware thread count.
int worker_cap();

}  // namespace dtsurv
