#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtsurv/errors.hpp"
#include "dtsurv/synth.hpp"
#include "dtsurv/train.hpp"
#include "helpers.hpp"

using namespace dtsurv;

namespace {

ModelConfig tiny_model(int t_max, int static_dim) {
    ModelConfig mc;
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.n_layers = 1;
    mc.t_max = t_max;
    mc.static_dim = static_dim;
    mc.static_hidden = 8;
    mc.static_latent = 4;
    mc.embed_hidden = 8;
    return mc;
}

TrainConfig quick_train(int epochs) {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = 16;
    tc.learning_rate = 1e-3;
    tc.patience = 50;
    tc.seed = 7;
    return tc;
}

bool model_params_equal(const Model& a, const Model& b) {
    ModelParams& pa = const_cast<Model&>(a).params();
    ModelParams& pb = const_cast<Model&>(b).params();
    auto ra = tensor_refs(pa), rb = tensor_refs(pb);
    for (std::size_t i = 0; i < ra.size(); ++i)
        if (std::memcmp(ra[i].data, rb[i].data,
                        static_cast<std::size_t>(ra[i].size) * sizeof(double)) != 0)
            return false;
    return true;
}

double val_c_of(const Model& model, const Dataset& val) {
    PopulationStats stats;
    auto rep_inputs = build_inputs(val, model.config().dynamic_mode, {}, stats);
    auto preds = model.predict(rep_inputs);
    std::vector<double> mu;
    for (const auto& d : preds) mu.push_back(mean_lifetime(d));
    return c_index(mu, outcomes(val));
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("pure cross-entropy full-batch training lowers the loss") {
    auto ds = testutil::toy_static_dataset(50, 20, 3, 100, 0.2);
    auto split = split_dataset(ds, SplitRatios{}, 1);
    auto mc = tiny_model(20, 3);
    TrainConfig tc = quick_train(5);
    tc.batch_size = 50;  // one batch per epoch: loss sequence must not rise
    tc.learning_rate = 1e-4;
    tc.weights.lambda_m = 0.0;
    tc.weights.lambda_v = 0.0;
    tc.weights.lambda_d = 0.0;
    auto res = train_model(split.train, split.val, mc, tc);
    REQUIRE(res.log.epochs.size() == 5);
    CHECK_FALSE(res.log.aborted);
    for (std::size_t e = 0; e < res.log.epochs.size(); ++e) {
        // Components are logged unweighted; only the total applies the
        // lambdas, so zero weights make it coincide with the softmax term.
        CHECK(res.log.epochs[e].loss.total == res.log.epochs[e].loss.softmax);
        if (e > 0)
            CHECK(res.log.epochs[e].loss.softmax <=
                  res.log.epochs[e - 1].loss.softmax + 1e-6);
    }
}

TEST_CASE("identical seeds give identical logs and parameters") {
    auto ds = testutil::toy_static_dataset(60, 15, 3, 200);
    auto split = split_dataset(ds, SplitRatios{}, 2);
    auto mc = tiny_model(15, 3);
    TrainConfig tc = quick_train(3);
    auto a = train_model(split.train, split.val, mc, tc);
    auto b = train_model(split.train, split.val, mc, tc);
    CHECK(train_log_to_jsonl(a.log) == train_log_to_jsonl(b.log));
    CHECK(model_params_equal(a.model, b.model));
    REQUIRE(a.log.epochs.size() == b.log.epochs.size());
    for (std::size_t e = 0; e < a.log.epochs.size(); ++e) {
        CHECK(a.log.epochs[e].loss.total == b.log.epochs[e].loss.total);
        CHECK((a.log.epochs[e].val_c_index == b.log.epochs[e].val_c_index ||
               (std::isnan(a.log.epochs[e].val_c_index) &&
                std::isnan(b.log.epochs[e].val_c_index))));
    }

    TrainConfig other = tc;
    other.seed = tc.seed + 1;
    auto c = train_model(split.train, split.val, mc, other);
    CHECK_FALSE(model_params_equal(a.model, c.model));
}

TEST_CASE("the best epoch is the argmax of the validation curve") {
    auto ds = testutil::toy_static_dataset(80, 15, 3, 300);
    auto split = split_dataset(ds, SplitRatios{}, 3);
    auto mc = tiny_model(15, 3);
    auto res = train_model(split.train, split.val, mc, quick_train(6));
    REQUIRE(res.log.best_epoch >= 0);
    double best = -1.0;
    for (const auto& e : res.log.epochs)
        if (std::isfinite(e.val_c_index)) best = std::max(best, e.val_c_index);
    CHECK(res.log.best_val_c_index == best);
    CHECK(res.log.epochs[static_cast<std::size_t>(res.log.best_epoch)].val_c_index ==
          best);
    // The returned parameters reproduce the logged best validation score.
    CHECK(val_c_of(res.model, split.val) == best);
}

TEST_CASE("patience zero stops at the first non-improving epoch") {
    auto ds = testutil::toy_static_dataset(60, 15, 3, 400);
    auto split = split_dataset(ds, SplitRatios{}, 4);
    auto mc = tiny_model(15, 3);
    TrainConfig tc = quick_train(40);
    tc.patience = 0;
    auto res = train_model(split.train, split.val, mc, tc);
    CHECK_FALSE(res.log.aborted);
    if (res.log.epochs.size() < 40) {
        // Stopped early: exactly one trailing epoch failed to improve.
        CHECK(res.log.best_epoch ==
              static_cast<int>(res.log.epochs.size()) - 2);
    }
}

TEST_CASE("margin statistics come from the training split only") {
    auto train = testutil::toy_static_dataset(40, 10, 2, 500, 0.4);
    auto val = testutil::toy_static_dataset(20, 10, 2, 501, 0.0);
    for (auto& r : val.records) r.id = "v" + r.id;  // keep ids distinct
    auto mc = tiny_model(10, 2);
    auto res = train_model(train, val, mc, quick_train(2));
    auto expect = km_fit(train);
    REQUIRE(res.log.train_km.values.size() == expect.values.size());
    for (std::size_t j = 0; j < expect.values.size(); ++j)
        CHECK(res.log.train_km.values[j] == expect.values[j]);

    Dataset merged = train;
    for (const auto& r : val.records) merged.records.push_back(r);
    auto leaky = km_fit(merged);
    bool differs = false;
    for (std::size_t j = 0; j < expect.values.size(); ++j)
        if (leaky.values[j] != expect.values[j]) differs = true;
    CHECK(differs);
}

TEST_CASE("build_inputs shapes follow the mode") {
    auto ds = testutil::toy_static_dataset(5, 8, 3, 600);
    PopulationStats none;
    auto inputs = build_inputs(ds, DynamicMode::none, {}, none);
    REQUIRE(inputs.size() == 5);
    CHECK(inputs[0].x_static.size() == 3);
    CHECK(inputs[0].dynamic.size() == 0);

    // Tabular: missing months are imputed to dense matrices.
    Dataset dyn = ds;
    dyn.dynamic_dim = 2;
    for (auto& r : dyn.records) r.x_dynamic[0] = {1.0, 2.0};
    std::vector<FeatureKind> kinds(2, FeatureKind::continuous);
    auto stats = population_stats(dyn, kinds);
    auto din = build_inputs(dyn, DynamicMode::tabular, kinds, stats);
    REQUIRE(din.size() == 5);
    CHECK(din[0].dynamic.rows() == 9);
    CHECK(din[0].dynamic.cols() == 2);
    CHECK(din[0].dynamic.allFinite());
    CHECK(din[0].dynamic(0, 0) == 1.0);
    CHECK(din[0].dynamic(3, 1) == 2.0);  // carried forward
}

TEST_CASE("training aborts cleanly on a numeric blow-up") {
    auto ds = testutil::toy_static_dataset(40, 12, 3, 700);
    auto split = split_dataset(ds, SplitRatios{}, 5);
    auto mc = tiny_model(12, 3);
    TrainConfig tc = quick_train(4);
    // Layer norm and the max-subtracted softmax tame even absurd step sizes,
    // so the rate must be big enough that squaring a parameter overflows.
    tc.learning_rate = 1e160;
    tc.clip_enabled = false;
    auto res = train_model(split.train, split.val, mc, tc);
    CHECK(res.log.aborted);
    CHECK(res.log.abort_reason.find("epoch") != std::string::npos);
    CHECK(res.log.abort_reason.find("batch") != std::string::npos);
    // The returned parameters are the last good snapshot, still usable.
    ModelParams& p = res.model.params();
    for (const auto& r : tensor_refs(p))
        for (std::ptrdiff_t i = 0; i < r.size; ++i)
            CHECK(std::isfinite(r.data[i]));
    CHECK_NOTHROW(res.model.forward_batch(
        build_inputs(split.val, DynamicMode::none, {}, PopulationStats{})));
}

TEST_CASE("train_model validates inputs and adapts shape fields to the data") {
    auto ds = testutil::toy_static_dataset(30, 10, 2, 800);
    auto split = split_dataset(ds, SplitRatios{}, 6);

    // Grid and feature dimensions are taken from the dataset, not the config.
    auto mc = tiny_model(99, 7);
    auto res = train_model(split.train, split.val, mc, quick_train(1));
    CHECK(res.model.config().t_max == 10);
    CHECK(res.model.config().static_dim == 2);
    CHECK(res.model.config().seed == quick_train(1).seed);

    Dataset off_grid = split.val;
    off_grid.grid.t_max = 11;
    CHECK_THROWS_AS(train_model(split.train, off_grid, mc, quick_train(1)),
                    ValidationError);
    CHECK_THROWS_AS(train_model(Dataset{}, split.val, mc, quick_train(1)),
                    ValidationError);

    auto mc3 = tiny_model(10, 2);
    TrainConfig bad = quick_train(1);
    bad.batch_size = 0;
    CHECK_THROWS_AS(train_model(split.train, split.val, mc3, bad), ConfigError);
    bad = quick_train(0);
    CHECK_THROWS_AS(train_model(split.train, split.val, mc3, bad), ConfigError);
    bad = quick_train(1);
    bad.learning_rate = -1.0;
    CHECK_THROWS_AS(train_model(split.train, split.val, mc3, bad), ConfigError);
    auto mc4 = tiny_model(10, 2);
    mc4.d_model = 7;  // structural defects still surface from the model itself
    CHECK_THROWS_AS(train_model(split.train, split.val, mc4, quick_train(1)),
                    ConfigError);
}

TEST_CASE("the training log serializes to one json object per line") {
    auto ds = testutil::toy_static_dataset(40, 10, 2, 900);
    auto split = split_dataset(ds, SplitRatios{}, 7);
    auto res = train_model(split.train, split.val, tiny_model(10, 2), quick_train(2));
    const auto text = train_log_to_jsonl(res.log);
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        auto nl = text.find('\n', start);
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    REQUIRE(lines.size() == res.log.epochs.size() + 1);
    for (std::size_t i = 0; i < lines.size() - 1; ++i) {
        auto j = nlohmann::json::parse(lines[i]);
        CHECK(j["epoch"] == static_cast<int>(i));
        CHECK(j.contains("total"));
        CHECK_FALSE(j.contains("seconds"));  // timing never enters the export
    }
    auto trailer = nlohmann::json::parse(lines.back());
    CHECK(trailer["best_epoch"] == res.log.best_epoch);
    CHECK(trailer["aborted"] == false);
}

TEST_CASE("cross-validation summarizes per-fold test metrics") {
    auto ds = testutil::toy_static_dataset(120, 12, 3, 1000);
    auto mc = tiny_model(12, 3);
    TrainConfig tc = quick_train(2);
    tc.n_folds = 3;
    auto cv = cross_validate(ds, mc, tc);
    REQUIRE(cv.folds.size() == 3);
    std::vector<double> cs;
    for (const auto& fo : cv.folds) {
        REQUIRE(fo.report.has_value());
        CHECK(fo.error.empty());
        cs.push_back(fo.report->c_index);
    }
    const double mean = (cs[0] + cs[1] + cs[2]) / 3.0;
    double ss = 0.0;
    for (double v : cs) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / 2.0);  // sample standard deviation
    CHECK(cv.c_index.mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(cv.c_index.stddev == doctest::Approx(sd).epsilon(1e-12));

    auto cv2 = cross_validate(ds, mc, tc);
    CHECK(cv2.c_index.mean == cv.c_index.mean);
    CHECK(cv2.c_index.stddev == cv.c_index.stddev);

    TrainConfig one = tc;
    one.n_folds = 1;
    auto cv1 = cross_validate(ds, mc, one);
    REQUIRE(cv1.folds.size() == 1);
    CHECK(cv1.c_index.stddev == 0.0);
    CHECK(cv1.c_index.mean == cv1.folds[0].report->c_index);

    TrainConfig many = tc;
    many.n_folds = 50;
    CHECK_THROWS_AS(cross_validate(ds, mc, many), ValidationError);
}

TEST_CASE("grid search enumerates the cartesian product and ranks trials") {
    auto ds = testutil::toy_static_dataset(60, 10, 2, 1100);
    auto mc = tiny_model(10, 2);
    TrainConfig tc = quick_train(1);

    SearchSpace single{{"lambda_v", {0.5}}};
    auto gs1 = grid_search(ds, single, mc, tc);
    REQUIRE(gs1.trials.size() == 1);
    CHECK(gs1.best == 0);
    CHECK(gs1.best_train.weights.lambda_v == 0.5);

    SearchSpace grid{{"lambda_v", {0.0, 0.5}}, {"epochs", {1.0, 2.0}}};
    auto gs = grid_search(ds, grid, mc, tc);
    REQUIRE(gs.trials.size() == 4);
    int with_two_epochs = 0;
    for (const auto& t : gs.trials) {
        CHECK_FALSE(t.failed);
        REQUIRE(t.values.count("lambda_v") == 1);
        REQUIRE(t.values.count("epochs") == 1);
        if (t.values.at("epochs") == 2.0) with_two_epochs += 1;
        CHECK(gs.trials[gs.best].val_c_index >= t.val_c_index);
    }
    CHECK(with_two_epochs == 2);

    const auto csv = trials_to_csv(gs.trials);
    CHECK(csv.find("epochs") != std::string::npos);
    CHECK(csv.find("val_c_index") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

    CHECK_THROWS_AS(grid_search(ds, SearchSpace{{"bogus", {1.0}}}, mc, tc),
                    ConfigError);
    CHECK_THROWS_AS(grid_search(ds, SearchSpace{{"lambda_v", {}}}, mc, tc),
                    ConfigError);
    CHECK_THROWS_AS(grid_search(ds, SearchSpace{}, mc, tc), ConfigError);
}

TEST_CASE("a trial with an unusable configuration is recorded, not fatal") {
    auto ds = testutil::toy_static_dataset(60, 10, 2, 1200);
    auto mc = tiny_model(10, 2);
    TrainConfig tc = quick_train(1);
    SearchSpace grid{{"n_heads", {2.0, 3.0}}};  // 3 does not divide d_model 8
    auto gs = grid_search(ds, grid, mc, tc);
    REQUIRE(gs.trials.size() == 2);
    int failed = 0;
    for (const auto& t : gs.trials) {
        if (t.failed) {
            failed += 1;
            CHECK_FALSE(t.error.empty());
            CHECK(t.val_c_index == -std::numeric_limits<double>::infinity());
        }
    }
    CHECK(failed == 1);
    CHECK_FALSE(gs.trials[gs.best].failed);
    CHECK(gs.best_model.n_heads == 2);
}

TEST_CASE("the default search space matches the documented table") {
    auto space = default_search_space();
    CHECK(space.at("lambda_m") == std::vector<double>{0.01, 0.1, 1.0, 10.0});
    CHECK(space.at("lambda_v") == std::vector<double>{0.001, 0.01, 0.1, 1.0});
    CHECK(space.at("lambda_d") == std::vector<double>{0.0, 1.0});
    CHECK(space.at("batch_size") == std::vector<double>{4.0, 8.0, 16.0, 32.0});
    CHECK(space.at("dropout") == std::vector<double>{0.0, 0.1, 0.3});
    CHECK(space.at("n_heads") == std::vector<double>{1.0, 2.0, 4.0, 8.0});
    CHECK(space.at("d_model") == std::vector<double>{256.0, 512.0});
    CHECK(space.at("n_layers") == std::vector<double>{1.0, 2.0, 3.0, 4.0});
    CHECK(space.at("learning_rate") == std::vector<double>{1e-4, 1e-3});
    std::size_t total = 1;
    for (const auto& [k, v] : space) total *= v.size();
    CHECK(total == 4 * 4 * 2 * 4 * 3 * 4 * 2 * 4 * 2);
}

TEST_CASE("worker cap reads the environment override strictly") {
    const char* saved = std::getenv("DTSURV_THREADS");
    std::string saved_value = saved ? saved : "";

    setenv("DTSURV_THREADS", "3", 1);
    CHECK(worker_cap() == 3);
    setenv("DTSURV_THREADS", "0", 1);
    CHECK_THROWS_AS(worker_cap(), ConfigError);
    setenv("DTSURV_THREADS", "abc", 1);
    CHECK_THROWS(worker_cap());
    unsetenv("DTSURV_THREADS");
    CHECK(worker_cap() >= 1);

    if (saved)
        setenv("DTSURV_THREADS", saved_value.c_str(), 1);
    else
        unsetenv("DTSURV_THREADS");
}

TEST_CASE("evaluate_model reports finite metrics on held-out data") {
    auto ds = testutil::toy_static_dataset(80, 12, 3, 1300);
    auto split = split_dataset(ds, SplitRatios{}, 8);
    auto mc = tiny_model(12, 3);
    auto res = train_model(split.train, split.val, mc, quick_train(2));
    PopulationStats stats;
    auto rep = evaluate_model(res.model, split.test, {}, stats);
    CHECK(std::isfinite(rep.c_index));
    CHECK(rep.c_index >= 0.0);
    CHECK(rep.c_index <= 1.0);
    CHECK(rep.mae_u >= 0.0);
    CHECK(rep.mae_h >= 0.0);
    CHECK(std::isfinite(rep.mauc));
    CHECK_FALSE(rep.td_auc.empty());
}

}  // TEST_SUITE
