#include "dtsurv/cli.hpp"

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dtsurv/distribution.hpp"
#include "dtsurv/errors.hpp"
#include "dtsurv/metrics.hpp"
#include "dtsurv/runconfig.hpp"
#include "dtsurv/synth.hpp"
#include "dtsurv/textio.hpp"

namespace dtsurv {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string summary_line(const MetricsReport& r) {
    return "c-index=" + format_double(r.c_index) + " mae_u=" + format_double(r.mae_u) +
           " mae_h=" + format_double(r.mae_h) + " mauc=" + format_double(r.mauc);
}

void check_compatible(const Model& model, const Dataset& ds) {
    const ModelConfig& c = model.config();
    if (c.t_max != ds.grid.t_max)
        throw ConfigError("checkpoint expects t_max " + std::to_string(c.t_max) +
                          ", data has " + std::to_string(ds.grid.t_max));
    if (c.static_dim != ds.static_dim)
        throw ConfigError("checkpoint expects static_dim " + std::to_string(c.static_dim) +
                          ", data has " + std::to_string(ds.static_dim));
    if (c.dynamic_mode != DynamicMode::none && c.dynamic_dim != ds.dynamic_dim)
        throw ConfigError("checkpoint expects dynamic_dim " +
                          std::to_string(c.dynamic_dim) + ", data has " +
                          std::to_string(ds.dynamic_dim));
}

struct SynthArgs {
    std::string kind;
    int n = 1000;
    int k = 0;
    double eps0 = 0.0;
    double censor = 0.5;
    double observe = 1.0;
    int tmax = -1;
    std::uint64_t seed = 0;
    std::string out;
};

void cmd_synth(const SynthArgs& a) {
    const auto t0 = Clock::now();
    SynthConfig cfg;
    cfg.kind = a.kind == "s" ? SynthKind::static_only : SynthKind::dynamic;
    cfg.n_records = a.n;
    cfg.k = a.k;
    cfg.noise_eps = a.eps0;
    cfg.censor_fraction = a.censor;
    cfg.observe_prob = a.observe;
    cfg.t_max = a.tmax;
    cfg.seed = a.seed;
    const Dataset ds = generate(cfg);
    save_bundle(ds, a.out);
    const SynthStats stats = synth_stats(ds);
    write_file_atomic(a.out + "_stats.json", stats_to_json(stats));

    RunManifest m;
    m.command = "synth";
    m.seed = a.seed;
    m.config = {{"kind", a.kind},
                {"n", std::to_string(a.n)},
                {"k", std::to_string(a.k)},
                {"eps0", format_double(a.eps0)},
                {"censor", format_double(a.censor)},
                {"observe", format_double(a.observe)},
                {"tmax", std::to_string(a.tmax)},
                {"seed", std::to_string(a.seed)}};
    m.outputs = {a.out + "_static.csv", a.out + "_meta.json", a.out + "_stats.json"};
    if (ds.dynamic_dim > 0) m.outputs.insert(m.outputs.begin() + 1, a.out + "_dynamic.csv");
    m.wall_seconds = seconds_since(t0);
    write_manifest(m, a.out + "_manifest.json");

    int events = 0;
    for (const auto& r : ds.records) events += r.event ? 1 : 0;
    std::printf("records=%d events=%d censored=%d\n", static_cast<int>(ds.records.size()),
                events, static_cast<int>(ds.records.size()) - events);
}

struct TrainArgs {
    std::string data;
    std::string config;
    std::string out;
    int folds = 1;
    std::string grid;
    std::int64_t seed = -1;  // <0 = take the config file's seed
};

void cmd_train(const TrainArgs& a) {
    const auto t0 = Clock::now();
    if (a.folds > 1 && !a.grid.empty())
        throw ConfigError("--folds and --grid cannot be combined");
    if (a.folds < 1) throw ConfigError("--folds must be >= 1");

    const Dataset ds = load_bundle(a.data);
    RunSettings s = parse_settings(read_file(a.config), a.config);
    if (a.seed >= 0) s.train.seed = static_cast<std::uint64_t>(a.seed);
    if (s.model.dynamic_mode != DynamicMode::none && ds.dynamic_dim == 0)
        throw ConfigError("config wants dynamic features but the data has none");

    RunManifest m;
    m.command = "train";
    m.seed = s.train.seed;
    m.config = settings_snapshot(s);
    m.inputs = {a.data + "_static.csv", a.config};
    if (ds.dynamic_dim > 0) m.inputs.push_back(a.data + "_dynamic.csv");
    if (!a.grid.empty()) m.inputs.push_back(a.grid);

    if (!a.grid.empty()) {
        const SearchSpace space = parse_grid(read_file(a.grid), a.grid);
        const GridSearchResult res = grid_search(ds, space, s.model, s.train);
        write_file_atomic(a.out + "_trials.csv", trials_to_csv(res.trials));
        m.outputs = {a.out + "_trials.csv"};
        m.wall_seconds = seconds_since(t0);
        write_manifest(m, a.out + "_manifest.json");
        std::printf("trials=%d best_val_c_index=%s\n", static_cast<int>(res.trials.size()),
                    format_double(res.trials[res.best].val_c_index).c_str());
        return;
    }

    if (a.folds > 1) {
        TrainConfig tc = s.train;
        tc.n_folds = a.folds;
        const CvResult cv = cross_validate(ds, s.model, tc);
        nlohmann::json folds = nlohmann::json::array();
        for (const auto& fo : cv.folds) {
            nlohmann::json fj{{"fold", fo.fold}};
            if (fo.report) {
                fj["c_index"] = fo.report->c_index;
                fj["mae_u"] = fo.report->mae_u;
                fj["mae_h"] = fo.report->mae_h;
                fj["mauc"] = fo.report->mauc;
                fj["best_epoch"] = fo.best_epoch;
                fj["val_c_index"] = fo.val_c_index;
            } else {
                fj["error"] = fo.error;
            }
            folds.push_back(fj);
        }
        auto pack = [](const MetricSummary& ms) {
            return nlohmann::json{{"mean", ms.mean}, {"std", ms.stddev}};
        };
        nlohmann::json doc{{"folds", folds},
                           {"summary",
                            {{"c_index", pack(cv.c_index)},
                             {"mae_u", pack(cv.mae_u)},
                             {"mae_h", pack(cv.mae_h)},
                             {"mauc", pack(cv.mauc)}}}};
        write_file_atomic(a.out + "_folds.json", doc.dump(2) + "\n");
        m.outputs = {a.out + "_folds.json"};
        m.wall_seconds = seconds_since(t0);
        write_manifest(m, a.out + "_manifest.json");
        MetricsReport means;
        means.c_index = cv.c_index.mean;
        means.mae_u = cv.mae_u.mean;
        means.mae_h = cv.mae_h.mean;
        means.mauc = cv.mauc.mean;
        std::printf("%s\n", summary_line(means).c_str());
        return;
    }

    const DatasetSplit split = split_dataset(ds, SplitRatios{}, s.train.seed);
    TrainResult res = train_model(split.train, split.val, s.model, s.train);
    if (!res.log.aborted) {
        PopulationStats stats;
        std::vector<FeatureKind> kinds;
        if (res.model.config().dynamic_mode != DynamicMode::none) {
            kinds.assign(static_cast<std::size_t>(split.train.dynamic_dim),
                         FeatureKind::continuous);
            stats = population_stats(split.train, kinds);
        }
        res.log.test_report =
            evaluate_model(res.model, split.test, kinds, stats, s.train.carry_limit);
    }
    save_checkpoint(res.model, a.out + ".ckpt");
    write_file_atomic(a.out + "_log.jsonl", train_log_to_jsonl(res.log));
    m.outputs = {a.out + ".ckpt", a.out + "_log.jsonl"};
    if (res.log.test_report) {
        write_file_atomic(a.out + "_metrics.json", report_to_json(*res.log.test_report));
        m.outputs.push_back(a.out + "_metrics.json");
    }
    m.wall_seconds = seconds_since(t0);
    write_manifest(m, a.out + "_manifest.json");
    if (res.log.aborted) throw NumericError("training aborted: " + res.log.abort_reason);
    std::printf("%s\n", summary_line(*res.log.test_report).c_str());
}

struct PredictArgs {
    std::string checkpoint;
    std::string data;
    std::string out;
};

void cmd_predict(const PredictArgs& a) {
    const auto t0 = Clock::now();
    const Model model = load_checkpoint(a.checkpoint);
    const Dataset ds = load_bundle(a.data);
    check_compatible(model, ds);
    std::vector<FeatureKind> kinds;
    PopulationStats stats;
    if (model.config().dynamic_mode != DynamicMode::none) {
        kinds.assign(static_cast<std::size_t>(ds.dynamic_dim), FeatureKind::continuous);
        stats = population_stats(ds, kinds);
    }
    const auto inputs = build_inputs(ds, model.config().dynamic_mode, kinds, stats);
    const auto preds = model.predict(inputs);

    std::string csv = "id,t,p,s,mu,variance\n";
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto& d = preds[i];
        const SurvivalCurve sc = survival(d);
        const double mu = mean_lifetime(d);
        const double var = variance(d);
        for (std::size_t t = 0; t < d.probs.size(); ++t) {
            csv += ds.records[i].id;
            csv += ',';
            csv += std::to_string(t);
            csv += ',';
            csv += format_double(d.probs[t]);
            csv += ',';
            csv += format_double(sc.values[t]);
            csv += ',';
            csv += format_double(mu);
            csv += ',';
            csv += format_double(var);
            csv += '\n';
        }
    }
    write_file_atomic(a.out + "_predictions.csv", csv);

    RunManifest m;
    m.command = "predict";
    m.inputs = {a.checkpoint, a.data + "_static.csv"};
    if (ds.dynamic_dim > 0) m.inputs.push_back(a.data + "_dynamic.csv");
    m.outputs = {a.out + "_predictions.csv"};
    m.wall_seconds = seconds_since(t0);
    write_manifest(m, a.out + "_manifest.json");
    std::printf("subjects=%d\n", static_cast<int>(preds.size()));
}

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string out;
};

void cmd_eval(const EvalArgs& a) {
    const auto t0 = Clock::now();
    const Model model = load_checkpoint(a.checkpoint);
    const Dataset ds = load_bundle(a.data);
    check_compatible(model, ds);
    std::vector<FeatureKind> kinds;
    PopulationStats stats;
    if (model.config().dynamic_mode != DynamicMode::none) {
        kinds.assign(static_cast<std::size_t>(ds.dynamic_dim), FeatureKind::continuous);
        stats = population_stats(ds, kinds);
    }
    const MetricsReport report = evaluate_model(model, ds, kinds, stats);
    write_file_atomic(a.out + "_metrics.json", report_to_json(report));
    write_file_atomic(a.out + "_tdauc.csv", td_auc_to_csv(report.td_auc));

    RunManifest m;
    m.command = "eval";
    m.inputs = {a.checkpoint, a.data + "_static.csv"};
    if (ds.dynamic_dim > 0) m.inputs.push_back(a.data + "_dynamic.csv");
    m.outputs = {a.out + "_metrics.json", a.out + "_tdauc.csv"};
    m.wall_seconds = seconds_since(t0);
    write_manifest(m, a.out + "_manifest.json");
    std::printf("%s\n", summary_line(report).c_str());
}

struct KmArgs {
    std::string data;
    std::string out;
    bool censoring = false;
};

void cmd_km(const KmArgs& a) {
    const auto t0 = Clock::now();
    const Dataset ds = load_bundle(a.data);
    const KmCurve curve =
        a.censoring ? censoring_km(outcomes(ds), ds.grid) : km_fit(ds);
    std::string csv = "t,s_km\n";
    for (std::size_t t = 0; t < curve.values.size(); ++t) {
        csv += std::to_string(t);
        csv += ',';
        csv += format_double(curve.values[t]);
        csv += '\n';
    }
    write_file_atomic(a.out + "_km.csv", csv);

    RunManifest m;
    m.command = "km";
    m.config = {{"censoring", a.censoring ? "1" : "0"}};
    m.inputs = {a.data + "_static.csv"};
    m.outputs = {a.out + "_km.csv"};
    m.wall_seconds = seconds_since(t0);
    write_manifest(m, a.out + "_manifest.json");
    std::printf("points=%d\n", static_cast<int>(curve.values.size()));
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"Discrete-time survival analysis toolkit"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic survival dataset");
    synth->add_option("--kind", sa.kind, "Generator kind: s (static) or d (dynamic)")
        ->required()
        ->check(CLI::IsMember({"s", "d"}));
    synth->add_option("--n", sa.n, "Number of records");
    synth->add_option("--k", sa.k, "Dimension scaling exponent (dims scale by 5^k)");
    synth->add_option("--eps0", sa.eps0, "Post-label covariate noise scale");
    synth->add_option("--censor", sa.censor, "Fraction of records to censor");
    synth->add_option("--observe", sa.observe, "Per-step recording probability");
    synth->add_option("--tmax", sa.tmax, "Grid end (-1 = kind default)");
    synth->add_option("--seed", sa.seed, "Generator seed");
    synth->add_option("--out", sa.out, "Output path prefix")->required();
    synth->callback([&sa] { cmd_synth(sa); });

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train a model on a dataset bundle");
    train->add_option("--data", ta.data, "Dataset path prefix")->required();
    train->add_option("--config", ta.config, "Key=value settings file")->required();
    train->add_option("--out", ta.out, "Output path prefix")->required();
    train->add_option("--folds", ta.folds, "Cross-validation fold count");
    train->add_option("--grid", ta.grid, "Hyperparameter grid file");
    train->add_option("--seed", ta.seed, "Override the config file's seed");
    train->callback([&ta] { cmd_train(ta); });

    PredictArgs pa;
    auto* predict = app.add_subcommand("predict", "Write per-subject distributions");
    predict->add_option("--checkpoint", pa.checkpoint, "Model checkpoint")->required();
    predict->add_option("--data", pa.data, "Dataset path prefix")->required();
    predict->add_option("--out", pa.out, "Output path prefix")->required();
    predict->callback([&pa] { cmd_predict(pa); });

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    eval->add_option("--checkpoint", ea.checkpoint, "Model checkpoint")->required();
    eval->add_option("--data", ea.data, "Dataset path prefix")->required();
    eval->add_option("--out", ea.out, "Output path prefix")->required();
    eval->callback([&ea] { cmd_eval(ea); });

    KmArgs ka;
    auto* km = app.add_subcommand("km", "Product-limit survival curve of a dataset");
    km->add_option("--data", ka.data, "Dataset path prefix")->required();
    km->add_option("--out", ka.out, "Output path prefix")->required();
    km->add_flag("--censoring", ka.censoring, "Estimate the censoring distribution");
    km->callback([&ka] { cmd_km(ka); });

    try {
        app.parse(argc, argv);
        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const RangeError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace dtsurv
