#include "dtsurv/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <future>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dtsurv/distribution.hpp"
#include "dtsurv/errors.hpp"
#include "dtsurv/textio.hpp"

namespace dtsurv {

namespace {

// Adaptive-moment state over the flat parameter enumeration.
struct Adam {
    std::vector<std::vector<double>> m, v;
    long step = 0;

    explicit Adam(const std::vector<TensorRef>& refs) {
        m.reserve(refs.size());
        v.reserve(refs.size());
        for (const auto& r : refs) {
            m.emplace_back(static_cast<std::size_t>(r.size), 0.0);
            v.emplace_back(static_cast<std::size_t>(r.size), 0.0);
        }
    }

    void update(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
                double lr) {
        ++step;
        const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(step));
        for (std::size_t i = 0; i < params.size(); ++i) {
            double* p = params[i].data;
            const double* g = grads[i].data;
            double* mi = m[i].data();
            double* vi = v[i].data();
            for (Eigen::Index j = 0; j < params[i].size; ++j) {
                mi[j] = 0.9 * mi[j] + 0.1 * g[j];
                vi[j] = 0.999 * vi[j] + 0.001 * g[j] * g[j];
                p[j] -= lr * (mi[j] / bc1) / (std::sqrt(vi[j] / bc2) + 1e-8);
            }
        }
    }
};

void zero_refs(const std::vector<TensorRef>& refs) {
    for (const auto& r : refs)
        std::memset(r.data, 0, sizeof(double) * static_cast<std::size_t>(r.size));
}

void clip_global_norm(const std::vector<TensorRef>& refs, double max_norm) {
    double sq = 0.0;
    for (const auto& r : refs)
        for (Eigen::Index j = 0; j < r.size; ++j) sq += r.data[j] * r.data[j];
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return;
    const double scale = max_norm / norm;
    for (const auto& r : refs)
        for (Eigen::Index j = 0; j < r.size; ++j) r.data[j] *= scale;
}

void copy_refs(const std::vector<TensorRef>& from, const std::vector<TensorRef>& to) {
    for (std::size_t i = 0; i < from.size(); ++i)
        std::memcpy(to[i].data, from[i].data,
                    sizeof(double) * static_cast<std::size_t>(from[i].size));
}

std::vector<FeatureKind> effective_kinds(const Dataset& ds, DynamicMode mode,
                                         const std::vector<FeatureKind>& kinds) {
    if (mode == DynamicMode::none) return {};
    if (kinds.empty())
        return std::vector<FeatureKind>(static_cast<std::size_t>(ds.dynamic_dim),
                                        FeatureKind::continuous);
    if (static_cast<int>(kinds.size()) != ds.dynamic_dim)
        throw ValidationError("train: " + std::to_string(kinds.size()) +
                              " feature kinds for dynamic_dim " +
                              std::to_string(ds.dynamic_dim));
    return kinds;
}

double sample_std(const std::vector<double>& xs, double mean) {
    if (xs.size() < 2) return 0.0;
    double sq = 0.0;
    for (double x : xs) sq += (x - mean) * (x - mean);
    return std::sqrt(sq / static_cast<double>(xs.size() - 1));
}

MetricSummary summarize(const std::vector<double>& xs) {
    MetricSummary s;
    if (xs.empty()) {
        s.mean = std::numeric_limits<double>::quiet_NaN();
        return s;
    }
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    s.stddev = sample_std(xs, s.mean);
    return s;
}

// Applies one swept hyperparameter; throws ConfigError on unknown keys.
void apply_hyper(ModelConfig& mc, TrainConfig& tc, const std::string& key, double value) {
    auto as_int = [&](const char* what) {
        const double r = std::round(value);
        if (std::abs(value - r) > 1e-9)
            throw ConfigError(std::string("grid: ") + what + " needs an integer, got " +
                              format_double(value));
        return static_cast<int>(r);
    };
    if (key == "lambda_m") tc.weights.lambda_m = value;
    else if (key == "lambda_v") tc.weights.lambda_v = value;
    else if (key == "lambda_d") tc.weights.lambda_d = value;
    else if (key == "batch_size") tc.batch_size = as_int("batch_size");
    else if (key == "dropout") mc.dropout = value;
    else if (key == "n_heads") mc.n_heads = as_int("n_heads");
    else if (key == "d_model") mc.d_model = as_int("d_model");
    else if (key == "n_layers") mc.n_layers = as_int("n_layers");
    else if (key == "learning_rate") tc.learning_rate = value;
    else if (key == "epochs") tc.epochs = as_int("epochs");
    else if (key == "patience") tc.patience = as_int("patience");
    else throw ConfigError("grid: unknown hyperparameter '" + key + "'");
}

// Runs jobs [0, n) through `fn` with at most worker_cap() in flight.
template <typename Fn>
void run_capped(int n, Fn fn) {
    const int cap = std::max(1, std::min(worker_cap(), n));
    if (cap == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::future<void>> futures;
    for (int start = 0; start < n; start += cap) {
        const int end = std::min(n, start + cap);
        futures.clear();
        for (int i = start; i < end; ++i)
            futures.push_back(std::async(std::launch::async, fn, i));
        for (auto& f : futures) f.get();
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (patience < 0) throw ConfigError("train: patience must be >= 0");
    if (n_folds < 1) throw ConfigError("train: n_folds must be >= 1");
    if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be > 0");
    if (carry_limit < 0) throw ConfigError("train: carry_limit must be >= 0");
}

int worker_cap() {
    if (const char* env = std::getenv("DTSURV_THREADS")) {
        const int n = static_cast<int>(parse_int_strict(env, "DTSURV_THREADS"));
        if (n < 1) throw ConfigError("DTSURV_THREADS must be >= 1");
        return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

std::vector<ModelInput> build_inputs(const Dataset& ds, DynamicMode mode,
                                     const std::vector<FeatureKind>& kinds,
                                     const PopulationStats& stats, int carry_limit) {
    std::vector<ModelInput> inputs;
    inputs.reserve(ds.records.size());
    const auto use_kinds = effective_kinds(ds, mode, kinds);
    for (const auto& rec : ds.records) {
        ModelInput in;
        in.x_static = Eigen::Map<const Eigen::VectorXd>(
            rec.x_static.data(), static_cast<Eigen::Index>(rec.x_static.size()));
        if (mode != DynamicMode::none)
            in.dynamic = impute_locf(rec, ds.grid, use_kinds, stats, carry_limit).values;
        inputs.push_back(std::move(in));
    }
    return inputs;
}

TrainResult train_model(const Dataset& train, const Dataset& val, ModelConfig mc,
                        TrainConfig tc, const std::vector<FeatureKind>& kinds) {
    tc.validate();
    if (train.records.empty()) throw ValidationError("train: empty training split");
    if (val.records.empty()) throw ValidationError("train: empty validation split");
    if (val.grid.t_max != train.grid.t_max || val.static_dim != train.static_dim ||
        val.dynamic_dim != train.dynamic_dim)
        throw ValidationError("train: train and validation splits disagree on shape");
    mc.t_max = train.grid.t_max;
    mc.static_dim = train.static_dim;
    if (mc.dynamic_mode != DynamicMode::none) mc.dynamic_dim = train.dynamic_dim;
    mc.seed = tc.seed;

    const auto use_kinds = effective_kinds(train, mc.dynamic_mode, kinds);
    PopulationStats stats;
    if (mc.dynamic_mode != DynamicMode::none) stats = population_stats(train, use_kinds);

    TrainLog log;
    log.train_km = km_fit(train);
    const BatchLabels labels_all =
        make_batch_labels(outcomes(train), log.train_km, train.grid);
    const auto inputs_train =
        build_inputs(train, mc.dynamic_mode, use_kinds, stats, tc.carry_limit);
    const auto inputs_val =
        build_inputs(val, mc.dynamic_mode, use_kinds, stats, tc.carry_limit);
    const auto val_labels = outcomes(val);

    Model model(mc);
    ModelParams grads = zero_params_like(mc);
    ModelParams best = model.params();  // doubles as the pre-training snapshot
    const auto prefs = tensor_refs(model.params());
    const auto grefs = tensor_refs(grads);
    const auto brefs = tensor_refs(best);
    Adam opt(prefs);

    double best_c = -std::numeric_limits<double>::infinity();
    int stall = 0;
    const int n = static_cast<int>(train.records.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    std::vector<ModelInput> batch_in;
    BatchLabels batch_labels;
    BatchTape tape;
    Eigen::MatrixXd dprobs;

    auto abort_run = [&](int epoch, int batch, const std::string& why) {
        log.aborted = true;
        std::ostringstream reason;
        reason << "epoch " << epoch << " batch " << batch << ": " << why;
        log.abort_reason = reason.str();
        // `best` holds the best validated epoch, or the initial parameters if
        // no epoch finished yet; either way the returned model stays finite.
        copy_refs(brefs, prefs);
    };

    for (int epoch = 0; epoch < tc.epochs && !log.aborted; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        RandomStream shuffle_rng(substream_seed(tc.seed, "epoch_shuffle",
                                                static_cast<std::uint64_t>(epoch)));
        RandomStream drop_rng(substream_seed(tc.seed, "dropout",
                                             static_cast<std::uint64_t>(epoch)));
        RandomStream pair_rng(substream_seed(tc.seed, "discordant",
                                             static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        LossBreakdown sums;
        for (int b0 = 0; b0 < n; b0 += tc.batch_size) {
            const int batch_index = b0 / tc.batch_size;
            const int bn = std::min(tc.batch_size, n - b0);
            batch_in.clear();
            batch_labels.clear();
            for (int i = 0; i < bn; ++i) {
                const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(b0 + i)]);
                batch_in.push_back(inputs_train[idx]);
                batch_labels.push_back(labels_all[idx]);
            }
            LossBreakdown bd;
            try {
                const Eigen::MatrixXd probs =
                    model.forward_batch(batch_in, &tape, &drop_rng);
                const auto pairs = sample_discordant_pairs(batch_labels, pair_rng);
                bd = loss_total_with_grad(probs, batch_labels, tc.weights, pairs, dprobs);
                if (!std::isfinite(bd.total)) throw NumericError("non-finite loss");
                zero_refs(grefs);
                model.backward(tape, dprobs, grads);
            } catch (const NumericError& e) {
                abort_run(epoch, batch_index, e.what());
                break;
            }
            if (tc.clip_enabled) clip_global_norm(grefs, tc.clip_norm);
            opt.update(prefs, grefs, tc.learning_rate);
            sums.softmax += bd.softmax;
            sums.margin_mean += bd.margin_mean;
            sums.variance += bd.variance;
            sums.discordant += bd.discordant;
            sums.total += bd.total;
        }
        if (log.aborted) break;

        double val_c = std::numeric_limits<double>::quiet_NaN();
        try {
            const auto preds = model.predict(inputs_val);
            std::vector<double> mu;
            mu.reserve(preds.size());
            for (const auto& d : preds) mu.push_back(mean_lifetime(d));
            val_c = c_index(mu, val_labels);
        } catch (const UndefinedMetricError&) {
        } catch (const NumericError& e) {
            abort_run(epoch, -1, e.what());
            break;
        }

        EpochLog el;
        el.epoch = epoch;
        el.loss = sums;
        el.val_c_index = val_c;
        el.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                         .count();
        log.epochs.push_back(el);

        if (val_c > best_c) {
            best_c = val_c;
            log.best_epoch = epoch;
            copy_refs(prefs, brefs);
            stall = 0;
        } else if (++stall >= std::max(tc.patience, 1)) {
            break;
        }
    }

    if (log.best_epoch >= 0) {
        copy_refs(brefs, prefs);
        log.best_val_c_index = best_c;
    }
    return TrainResult{std::move(model), std::move(log)};
}

MetricsReport evaluate_model(const Model& model, const Dataset& ds,
                             const std::vector<FeatureKind>& kinds,
                             const PopulationStats& stats, int carry_limit) {
    const auto inputs =
        build_inputs(ds, model.config().dynamic_mode, kinds, stats, carry_limit);
    const auto preds = model.predict(inputs);
    std::vector<double> mu;
    std::vector<SurvivalCurve> curves;
    mu.reserve(preds.size());
    curves.reserve(preds.size());
    for (const auto& d : preds) {
        mu.push_back(mean_lifetime(d));
        curves.push_back(survival(d));
    }
    const auto labels = outcomes(ds);
    const KmCurve g = censoring_km(labels, ds.grid);
    return evaluate_metrics(mu, curves, labels, g, ds.grid);
}

CvResult cross_validate(const Dataset& ds, ModelConfig mc, TrainConfig tc,
                        const std::vector<FeatureKind>& kinds, SplitRatios ratios) {
    tc.validate();
    if (static_cast<int>(ds.records.size()) < 3 * tc.n_folds)
        throw ValidationError("cross_validate: need at least " +
                              std::to_string(3 * tc.n_folds) + " records for " +
                              std::to_string(tc.n_folds) + " folds");
    CvResult out;
    out.folds.resize(static_cast<std::size_t>(tc.n_folds));
    run_capped(tc.n_folds, [&](int fold) {
        FoldOutcome& fo = out.folds[static_cast<std::size_t>(fold)];
        fo.fold = fold;
        try {
            const DatasetSplit split =
                split_dataset(ds, ratios, tc.seed + static_cast<std::uint64_t>(fold));
            TrainConfig fold_tc = tc;
            fold_tc.seed = tc.seed + static_cast<std::uint64_t>(fold);
            TrainResult res = train_model(split.train, split.val, mc, fold_tc, kinds);
            if (res.log.aborted)
                throw NumericError("training aborted: " + res.log.abort_reason);
            const auto use_kinds = effective_kinds(split.train, mc.dynamic_mode, kinds);
            PopulationStats stats;
            if (mc.dynamic_mode != DynamicMode::none)
                stats = population_stats(split.train, use_kinds);
            fo.report = evaluate_model(res.model, split.test, use_kinds, stats,
                                       fold_tc.carry_limit);
            fo.best_epoch = res.log.best_epoch;
            fo.val_c_index = res.log.best_val_c_index;
        } catch (const std::exception& e) {
            fo.report.reset();
            fo.error = e.what();
        }
    });
    std::vector<double> c, mu, mh, ma;
    for (const auto& fo : out.folds) {
        if (!fo.report) continue;
        c.push_back(fo.report->c_index);
        mu.push_back(fo.report->mae_u);
        mh.push_back(fo.report->mae_h);
        ma.push_back(fo.report->mauc);
    }
    out.c_index = summarize(c);
    out.mae_u = summarize(mu);
    out.mae_h = summarize(mh);
    out.mauc = summarize(ma);
    return out;
}

SearchSpace default_search_space() {
    return {
        {"lambda_m", {0.01, 0.1, 1.0, 10.0}},
        {"lambda_v", {0.001, 0.01, 0.1, 1.0}},
        {"lambda_d", {0.0, 1.0}},
        {"batch_size", {4.0, 8.0, 16.0, 32.0}},
        {"dropout", {0.0, 0.1, 0.3}},
        {"n_heads", {1.0, 2.0, 4.0, 8.0}},
        {"d_model", {256.0, 512.0}},
        {"n_layers", {1.0, 2.0, 3.0, 4.0}},
        {"learning_rate", {1e-4, 1e-3}},
    };
}

GridSearchResult grid_search(const Dataset& ds, const SearchSpace& space, ModelConfig mc,
                             TrainConfig tc, const std::vector<FeatureKind>& kinds,
                             SplitRatios ratios) {
    tc.validate();
    if (space.empty()) throw ConfigError("grid: empty search space");
    std::vector<std::string> keys;
    std::size_t n_trials = 1;
    for (const auto& [key, candidates] : space) {
        if (candidates.empty())
            throw ConfigError("grid: empty candidate list for '" + key + "'");
        {
            // Validate the key up front so bad names fail before any training.
            ModelConfig probe_mc = mc;
            TrainConfig probe_tc = tc;
            apply_hyper(probe_mc, probe_tc, key, candidates.front());
        }
        keys.push_back(key);
        n_trials *= candidates.size();
    }

    const DatasetSplit split = split_dataset(ds, ratios, tc.seed);
    GridSearchResult out;
    out.trials.resize(n_trials);
    for (std::size_t trial = 0; trial < n_trials; ++trial) {
        std::size_t rest = trial;
        auto& t = out.trials[trial];
        for (const auto& key : keys) {
            const auto& candidates = space.at(key);
            t.values[key] = candidates[rest % candidates.size()];
            rest /= candidates.size();
        }
    }
    run_capped(static_cast<int>(n_trials), [&](int i) {
        auto& t = out.trials[static_cast<std::size_t>(i)];
        try {
            ModelConfig trial_mc = mc;
            TrainConfig trial_tc = tc;
            for (const auto& [key, value] : t.values) apply_hyper(trial_mc, trial_tc, key, value);
            TrainResult res = train_model(split.train, split.val, trial_mc, trial_tc, kinds);
            if (res.log.aborted)
                throw NumericError("training aborted: " + res.log.abort_reason);
            t.val_c_index = res.log.best_val_c_index;
        } catch (const std::exception& e) {
            t.failed = true;
            t.error = e.what();
            t.val_c_index = -std::numeric_limits<double>::infinity();
        }
    });

    bool any_ok = false;
    for (std::size_t i = 0; i < out.trials.size(); ++i) {
        if (out.trials[i].failed) continue;
        if (!any_ok || out.trials[i].val_c_index > out.trials[out.best].val_c_index)
            out.best = i;
        any_ok = true;
    }
    if (!any_ok) throw NumericError("grid: every trial failed");
    out.best_model = mc;
    out.best_train = tc;
    for (const auto& [key, value] : out.trials[out.best].values)
        apply_hyper(out.best_model, out.best_train, key, value);
    return out;
}

std::string train_log_to_jsonl(const TrainLog& log) {
    std::string out;
    for (const auto& e : log.epochs) {
        // Wall time stays out of the export so identical seeds give identical
        // files; run duration is recorded in the manifest instead.
        nlohmann::json j{{"epoch", e.epoch},
                         {"softmax", e.loss.softmax},
                         {"margin_mean", e.loss.margin_mean},
                         {"variance", e.loss.variance},
                         {"discordant", e.loss.discordant},
                         {"total", e.loss.total},
                         {"val_c_index", e.val_c_index}};
        out += j.dump();
        out += '\n';
    }
    nlohmann::json trailer{{"best_epoch", log.best_epoch},
                           {"best_val_c_index", log.best_val_c_index},
                           {"aborted", log.aborted},
                           {"abort_reason", log.abort_reason}};
    if (log.test_report) {
        trailer["test"] = {{"c_index", log.test_report->c_index},
                           {"mae_u", log.test_report->mae_u},
                           {"mae_h", log.test_report->mae_h},
                           {"mauc", log.test_report->mauc}};
    }
    out += trailer.dump();
    out += '\n';
    return out;
}

std::string trials_to_csv(const std::vector<Trial>& trials) {
    std::string out;
    if (trials.empty()) return out;
    std::vector<std::string> keys;
    for (const auto& [key, value] : trials.front().values) keys.push_back(key);
    for (const auto& key : keys) {
        out += key;
        out += ',';
    }
    out += "val_c_index,error\n";
    for (const auto& t : trials) {
        for (const auto& key : keys) {
            out += format_double(t.values.at(key));
            out += ',';
        }
        out += t.failed ? "" : format_double(t.val_c_index);
        out += ',';
        out += t.error;
        out += '\n';
    }
    return out;
}

}  // namespace dtsurv
