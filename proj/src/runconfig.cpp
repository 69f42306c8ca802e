#include "dtsurv/runconfig.hpp"

#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "dtsurv/errors.hpp"
#include "dtsurv/textio.hpp"

namespace dtsurv {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& where) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError(where + ": expected a boolean (0/1/true/false), got '" + v + "'");
}

DynamicMode parse_mode(const std::string& v, const std::string& where) {
    if (v == "none") return DynamicMode::none;
    if (v == "tabular") return DynamicMode::tabular;
    if (v == "tensor") return DynamicMode::tensor;
    throw ConfigError(where + ": expected none/tabular/tensor, got '" + v + "'");
}

const char* mode_name(DynamicMode m) {
    switch (m) {
        case DynamicMode::none: return "none";
        case DynamicMode::tabular: return "tabular";
        case DynamicMode::tensor: return "tensor";
    }
    return "none";
}

int to_int(const std::string& v, const std::string& where) {
    return static_cast<int>(parse_int_strict(v, where));
}

}  // namespace

void apply_setting(RunSettings& s, const std::string& key, const std::string& value,
                   const std::string& where) {
    ModelConfig& m = s.model;
    TrainConfig& t = s.train;
    if (key == "d_model") m.d_model = to_int(value, where);
    else if (key == "n_heads") m.n_heads = to_int(value, where);
    else if (key == "n_layers") m.n_layers = to_int(value, where);
    else if (key == "dropout") m.dropout = parse_double_strict(value, where);
    else if (key == "t_window") m.t_window = to_int(value, where);
    else if (key == "use_mask") m.use_mask = parse_bool(value, where);
    else if (key == "dynamic_mode") m.dynamic_mode = parse_mode(value, where);
    else if (key == "static_hidden") m.static_hidden = to_int(value, where);
    else if (key == "static_latent") m.static_latent = to_int(value, where);
    else if (key == "dynamic_hidden") m.dynamic_hidden = to_int(value, where);
    else if (key == "dynamic_latent") m.dynamic_latent = to_int(value, where);
    else if (key == "embed_hidden") m.embed_hidden = to_int(value, where);
    else if (key == "conv_channels1") m.conv_channels1 = to_int(value, where);
    else if (key == "conv_channels2") m.conv_channels2 = to_int(value, where);
    else if (key == "epochs") t.epochs = to_int(value, where);
    else if (key == "batch_size") t.batch_size = to_int(value, where);
    else if (key == "learning_rate") t.learning_rate = parse_double_strict(value, where);
    else if (key == "lambda_m") t.weights.lambda_m = parse_double_strict(value, where);
    else if (key == "lambda_v") t.weights.lambda_v = parse_double_strict(value, where);
    else if (key == "lambda_d") t.weights.lambda_d = parse_double_strict(value, where);
    else if (key == "include_softmax") t.weights.include_softmax = parse_bool(value, where);
    else if (key == "patience") t.patience = to_int(value, where);
    else if (key == "seed")
        t.seed = static_cast<std::uint64_t>(parse_int_strict(value, where));
    else if (key == "n_folds") t.n_folds = to_int(value, where);
    else if (key == "clip_norm") t.clip_norm = parse_double_strict(value, where);
    else if (key == "clip_enabled") t.clip_enabled = parse_bool(value, where);
    else if (key == "carry_limit") t.carry_limit = to_int(value, where);
    else throw ConfigError(where + ": unknown setting '" + key + "'");
}

namespace {

// Shared line walker for settings and grid files.
template <typename Fn>
void for_each_kv(const std::string& text, const std::string& where, Fn fn) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        const std::string ctx = where + ":" + std::to_string(lineno);
        if (eq == std::string::npos)
            throw ConfigError(ctx + ": expected key=value, got '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) throw ConfigError(ctx + ": empty key");
        fn(key, value, ctx);
    }
}

}  // namespace

RunSettings parse_settings(const std::string& text, const std::string& where) {
    RunSettings s;
    for_each_kv(text, where,
                [&s](const std::string& key, const std::string& value,
                     const std::string& ctx) { apply_setting(s, key, value, ctx); });
    return s;
}

SearchSpace parse_grid(const std::string& text, const std::string& where) {
    SearchSpace space;
    for_each_kv(text, where,
                [&space](const std::string& key, const std::string& value,
                         const std::string& ctx) {
                    std::vector<double> candidates;
                    for (const auto& field : split_csv_line(value))
                        candidates.push_back(
                            parse_double_strict(trim(std::string(field)), ctx));
                    if (candidates.empty())
                        throw ConfigError(ctx + ": empty candidate list for '" + key + "'");
                    space[key] = std::move(candidates);
                });
    if (space.empty()) throw ConfigError(where + ": empty search space");
    return space;
}

std::map<std::string, std::string> settings_snapshot(const RunSettings& s) {
    const ModelConfig& m = s.model;
    const TrainConfig& t = s.train;
    return {
        {"d_model", std::to_string(m.d_model)},
        {"n_heads", std::to_string(m.n_heads)},
        {"n_layers", std::to_string(m.n_layers)},
        {"dropout", format_double(m.dropout)},
        {"t_window", std::to_string(m.t_window)},
        {"use_mask", m.use_mask ? "1" : "0"},
        {"dynamic_mode", mode_name(m.dynamic_mode)},
        {"static_hidden", std::to_string(m.static_hidden)},
        {"static_latent", std::to_string(m.static_latent)},
        {"dynamic_hidden", std::to_string(m.dynamic_hidden)},
        {"dynamic_latent", std::to_string(m.dynamic_latent)},
        {"embed_hidden", std::to_string(m.embed_hidden)},
        {"conv_channels1", std::to_string(m.conv_channels1)},
        {"conv_channels2", std::to_string(m.conv_channels2)},
        {"epochs", std::to_string(t.epochs)},
        {"batch_size", std::to_string(t.batch_size)},
        {"learning_rate", format_double(t.learning_rate)},
        {"lambda_m", format_double(t.weights.lambda_m)},
        {"lambda_v", format_double(t.weights.lambda_v)},
        {"lambda_d", format_double(t.weights.lambda_d)},
        {"include_softmax", t.weights.include_softmax ? "1" : "0"},
        {"patience", std::to_string(t.patience)},
        {"seed", std::to_string(t.seed)},
        {"n_folds", std::to_string(t.n_folds)},
        {"clip_norm", format_double(t.clip_norm)},
        {"clip_enabled", t.clip_enabled ? "1" : "0"},
        {"carry_limit", std::to_string(t.carry_limit)},
    };
}

void save_bundle(const Dataset& ds, const std::string& prefix) {
    const bool dynamic = ds.dynamic_dim > 0;
    save_dataset(ds, prefix + "_static.csv", dynamic ? prefix + "_dynamic.csv" : "");
    nlohmann::json meta{{"t_max", ds.grid.t_max},
                        {"static_dim", ds.static_dim},
                        {"dynamic_dim", ds.dynamic_dim}};
    write_file_atomic(prefix + "_meta.json", meta.dump(2) + "\n");
}

Dataset load_bundle(const std::string& prefix) {
    const std::string meta_path = prefix + "_meta.json";
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_file(meta_path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(meta_path + ": " + e.what());
    }
    if (!meta.contains("t_max") || !meta.contains("static_dim") ||
        !meta.contains("dynamic_dim"))
        throw ParseError(meta_path + ": missing t_max/static_dim/dynamic_dim");
    const TimeGrid grid{meta["t_max"].get<int>()};
    const int dynamic_dim = meta["dynamic_dim"].get<int>();
    const std::string dynamic_csv =
        dynamic_dim > 0 ? prefix + "_dynamic.csv" : std::string();
    Dataset ds = load_dataset(prefix + "_static.csv", dynamic_csv, grid);
    if (ds.static_dim != meta["static_dim"].get<int>())
        throw ParseError(meta_path + ": static_dim disagrees with the CSV");
    if (ds.dynamic_dim != dynamic_dim && dynamic_dim > 0)
        throw ParseError(meta_path + ": dynamic_dim disagrees with the CSV");
    return ds;
}

void write_manifest(const RunManifest& m, const std::string& path) {
    nlohmann::json j{{"command", m.command},
                     {"version", m.version},
                     {"seed", m.seed},
                     {"config", m.config},
                     {"inputs", m.inputs},
                     {"outputs", m.outputs},
                     {"wall_seconds", m.wall_seconds}};
    write_file_atomic(path, j.dump(2) + "\n");
}

}  // namespace dtsurv
