#include "dtsurv/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "dtsurv/errors.hpp"
#include "dtsurv/rng.hpp"

namespace dtsurv {

namespace {

int pow5(int k) {
    int p = 1;
    for (int i = 0; i < k; ++i) p *= 5;
    return p;
}

void validate_common(const SynthConfig& cfg) {
    if (cfg.n_records < 1) throw ConfigError("synth: n_records must be >= 1");
    if (cfg.k < 0 || cfg.k > 6) throw ConfigError("synth: k outside [0, 6]");
    if (cfg.static_dim < 1) throw ConfigError("synth: static_dim must be >= 1");
    if (cfg.censor_fraction < 0.0 || cfg.censor_fraction > 1.0)
        throw ConfigError("synth: censor_fraction outside [0, 1]");
    if (cfg.noise_eps < 0.0) throw ConfigError("synth: noise_eps must be >= 0");
    if (cfg.observe_prob < 0.0 || cfg.observe_prob > 1.0)
        throw ConfigError("synth: observe_prob outside [0, 1]");
    if (cfg.resolved_t_max() < 1) throw ConfigError("synth: t_max must be >= 1");
}

std::string record_id(const char* prefix, int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%s%06d", prefix, i);
    return buf;
}

int round_to_grid(double t, int t_max) {
    const auto r = static_cast<long long>(std::llround(t));
    return static_cast<int>(std::clamp<long long>(r, 0, t_max));
}

// Converts the first floor(n * fraction) records of a seeded shuffle to
// censored, drawing each censor time uniformly on {0, ..., T}.
void apply_censoring(Dataset& ds, const SynthConfig& cfg) {
    std::vector<std::size_t> order(ds.records.size());
    std::iota(order.begin(), order.end(), 0);
    RandomStream cs(substream_seed(cfg.seed, "censor"));
    cs.shuffle(order);
    const auto m = static_cast<std::size_t>(
        std::floor(static_cast<double>(ds.records.size()) * cfg.censor_fraction));
    for (std::size_t i = 0; i < m; ++i) {
        SurvivalRecord& r = ds.records[order[i]];
        r.event = false;
        r.time = static_cast<int>(cs.uniform_int(static_cast<std::uint64_t>(r.time) + 1));
    }
}

// Post-label covariate noise from a stream independent of everything that
// produced the labels, so the noised dataset keeps them bit-identical.
void apply_noise(Dataset& ds, const SynthConfig& cfg) {
    if (cfg.noise_eps == 0.0) return;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        RandomStream ns(substream_seed(cfg.seed, "noise", i));
        SurvivalRecord& r = ds.records[i];
        for (double& v : r.x_static) v += cfg.noise_eps * ns.normal();
        for (auto& [t, vec] : r.x_dynamic)
            for (double& v : vec) v += cfg.noise_eps * ns.normal();
    }
}

}  // namespace

int SynthConfig::effective_static_dim() const { return static_dim * pow5(k); }

int SynthConfig::effective_dynamic_dim() const {
    return kind == SynthKind::dynamic ? dynamic_dim * pow5(k) : 0;
}

int SynthConfig::resolved_t_max() const {
    if (t_max >= 0) return t_max;
    return kind == SynthKind::dynamic ? 199 : 200;
}

Dataset generate_synth_s(const SynthConfig& cfg) {
    if (cfg.kind != SynthKind::static_only)
        throw ConfigError("generate_synth_s: config is not the static kind");
    validate_common(cfg);
    const int p = cfg.effective_static_dim();
    const int t_max = cfg.resolved_t_max();

    Dataset ds;
    ds.grid.t_max = t_max;
    ds.static_dim = p;
    ds.dynamic_dim = 0;
    ds.records.resize(static_cast<std::size_t>(cfg.n_records));
    for (int i = 0; i < cfg.n_records; ++i) {
        RandomStream rs(substream_seed(cfg.seed, "record", static_cast<std::uint64_t>(i)));
        SurvivalRecord& r = ds.records[static_cast<std::size_t>(i)];
        r.id = record_id("s", i);
        r.x_static.resize(static_cast<std::size_t>(p));
        double lin = 0.0;
        for (double& v : r.x_static) {
            v = rs.normal();
            lin += v;
        }
        const double scale = std::abs(cfg.gamma_n * lin);
        r.time = round_to_grid(scale * rs.exponential(), t_max);
        r.event = true;
    }
    apply_censoring(ds, cfg);
    apply_noise(ds, cfg);
    validate_dataset(ds);
    return ds;
}

Dataset generate_synth_d(const SynthConfig& cfg) {
    if (cfg.kind != SynthKind::dynamic)
        throw ConfigError("generate_synth_d: config is not the dynamic kind");
    validate_common(cfg);
    const int q = cfg.effective_dynamic_dim();
    if (q < 2) throw ConfigError("generate_synth_d: dynamic_dim must be >= 2");
    const int p = cfg.effective_static_dim();
    const int t_max = cfg.resolved_t_max();
    const int steps = t_max + 1;

    // Fixed random feature partition v1 (maxima) / v2 (minima), shared by the
    // whole dataset.
    std::vector<int> feat(static_cast<std::size_t>(q));
    std::iota(feat.begin(), feat.end(), 0);
    RandomStream ps(substream_seed(cfg.seed, "partition"));
    ps.shuffle(feat);
    const std::size_t v1_size = (static_cast<std::size_t>(q) + 1) / 2;
    std::vector<bool> in_v1(static_cast<std::size_t>(q), false);
    for (std::size_t j = 0; j < v1_size; ++j) in_v1[static_cast<std::size_t>(feat[j])] = true;

    Dataset ds;
    ds.grid.t_max = t_max;
    ds.static_dim = p;
    ds.dynamic_dim = q;
    ds.records.resize(static_cast<std::size_t>(cfg.n_records));
    std::vector<double> cell(static_cast<std::size_t>(steps) * static_cast<std::size_t>(q));
    for (int i = 0; i < cfg.n_records; ++i) {
        RandomStream rs(substream_seed(cfg.seed, "record", static_cast<std::uint64_t>(i)));
        SurvivalRecord& r = ds.records[static_cast<std::size_t>(i)];
        r.id = record_id("d", i);
        r.x_static.resize(static_cast<std::size_t>(p));
        double lin = 0.0;
        for (double& v : r.x_static) {
            v = rs.normal();
            lin += v;
        }
        for (int t = 0; t < steps; ++t)
            for (int f = 0; f < q; ++f)
                cell[static_cast<std::size_t>(t) * static_cast<std::size_t>(q) +
                     static_cast<std::size_t>(f)] =
                    rs.weibull(cfg.weibull_a, cfg.weibull_b) + rs.normal();

        double dyn = 0.0;
        for (int f = 0; f < q; ++f) {
            double ext = cell[static_cast<std::size_t>(f)];
            for (int t = 1; t < steps; ++t) {
                const double v = cell[static_cast<std::size_t>(t) * static_cast<std::size_t>(q) +
                                      static_cast<std::size_t>(f)];
                ext = in_v1[static_cast<std::size_t>(f)] ? std::max(ext, v) : std::min(ext, v);
            }
            dyn += cfg.gamma_v * ext;
        }
        const double scale = std::abs(dyn + cfg.gamma_n * lin);
        r.time = round_to_grid(scale * rs.exponential(), t_max);
        r.event = true;

        RandomStream os(substream_seed(cfg.seed, "observe", static_cast<std::uint64_t>(i)));
        for (int t = 0; t < steps; ++t) {
            if (cfg.observe_prob < 1.0 && !os.bernoulli(cfg.observe_prob)) continue;
            std::vector<double> vec(static_cast<std::size_t>(q));
            for (int f = 0; f < q; ++f)
                vec[static_cast<std::size_t>(f)] =
                    cell[static_cast<std::size_t>(t) * static_cast<std::size_t>(q) +
                         static_cast<std::size_t>(f)];
            r.x_dynamic.emplace(t, std::move(vec));
        }
    }
    apply_censoring(ds, cfg);
    apply_noise(ds, cfg);
    validate_dataset(ds);
    return ds;
}

Dataset generate(const SynthConfig& cfg) {
    return cfg.kind == SynthKind::dynamic ? generate_synth_d(cfg) : generate_synth_s(cfg);
}

SynthStats synth_stats(const Dataset& ds) {
    SynthStats s;
    s.n_records = static_cast<long>(ds.records.size());
    s.static_dim = ds.static_dim;
    s.dynamic_dim = ds.dynamic_dim;
    s.t_max = ds.grid.t_max;
    for (GroupStats* g : {&s.event, &s.censored}) {
        g->time_min = ds.grid.t_max;
        g->time_max = 0;
    }
    for (const auto& r : ds.records) {
        GroupStats& g = r.event ? s.event : s.censored;
        g.count += 1;
        g.time_min = std::min(g.time_min, r.time);
        g.time_max = std::max(g.time_max, r.time);
        g.time_mean += r.time;
    }
    for (GroupStats* g : {&s.event, &s.censored}) {
        if (g->count > 0)
            g->time_mean /= static_cast<double>(g->count);
        else
            g->time_min = g->time_max = 0;
    }
    return s;
}

std::string stats_to_json(const SynthStats& stats) {
    nlohmann::json j;
    j["n_records"] = stats.n_records;
    j["static_dim"] = stats.static_dim;
    j["dynamic_dim"] = stats.dynamic_dim;
    j["t_max"] = stats.t_max;
    for (const auto& [name, g] :
         {std::pair<const char*, const GroupStats&>{"event", stats.event},
          {"censored", stats.censored}}) {
        j[name]["count"] = g.count;
        j[name]["time_min"] = g.time_min;
        j[name]["time_max"] = g.time_max;
        j[name]["time_mean"] = g.time_mean;
    }
    return j.dump(2) + "\n";
}

}  // namespace dtsurv
