#include "dtsurv/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "dtsurv/errors.hpp"
#include "dtsurv/rng.hpp"
#include "dtsurv/textio.hpp"

namespace dtsurv {

namespace {

std::string loc(const std::string& path, std::size_t line_no) {
    return path + ":" + std::to_string(line_no);
}

// Splits file text into lines, tolerating trailing \r and a missing final
// newline. Blank trailing lines are dropped.
std::vector<std::string> to_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t nl = text.find('\n', start);
        std::string line = (nl == std::string::npos)
                               ? text.substr(start)
                               : text.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
        if (nl == std::string::npos) break;
        start = nl + 1;
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    return lines;
}

// Header must be exactly: fixed names, then prefix0..prefix{n-1}.
int check_header(const std::vector<std::string_view>& fields,
                 const std::vector<std::string>& fixed, const std::string& prefix,
                 const std::string& where) {
    if (fields.size() < fixed.size())
        throw ParseError(where + ": header too short");
    for (std::size_t i = 0; i < fixed.size(); ++i)
        if (fields[i] != fixed[i])
            throw ParseError(where + ": expected header column '" + fixed[i] +
                             "', got '" + std::string(fields[i]) + "'");
    const int n = static_cast<int>(fields.size() - fixed.size());
    for (int i = 0; i < n; ++i) {
        const std::string want = prefix + std::to_string(i);
        if (fields[fixed.size() + i] != want)
            throw ParseError(where + ": expected header column '" + want + "', got '" +
                             std::string(fields[fixed.size() + i]) + "'");
    }
    return n;
}

double parse_finite(std::string_view token, const std::string& where) {
    double v = parse_double_strict(token, where);
    if (!std::isfinite(v)) throw ParseError(where + ": value must be finite");
    return v;
}

int parse_time(std::string_view token, int t_max, const std::string& where) {
    long t = parse_int_strict(token, where);
    if (t < 0 || t > t_max)
        throw RangeError(where + ": time " + std::to_string(t) +
                         " outside grid [0, " + std::to_string(t_max) + "]");
    return static_cast<int>(t);
}

}  // namespace

std::vector<Outcome> outcomes(const Dataset& ds) {
    std::vector<Outcome> out;
    out.reserve(ds.records.size());
    for (const auto& r : ds.records) out.push_back({r.time, r.event});
    return out;
}

void validate_dataset(const Dataset& ds) {
    if (ds.grid.t_max < 0) throw ValidationError("dataset: t_max must be >= 0");
    if (ds.static_dim < 0 || ds.dynamic_dim < 0)
        throw ValidationError("dataset: negative feature dimension");
    std::unordered_set<std::string> seen;
    for (const auto& r : ds.records) {
        if (r.id.empty()) throw ValidationError("dataset: empty record id");
        if (!seen.insert(r.id).second)
            throw ValidationError("dataset: duplicate id '" + r.id + "'");
        if (static_cast<int>(r.x_static.size()) != ds.static_dim)
            throw ValidationError("dataset: record '" + r.id +
                                  "' static feature length mismatch");
        for (double v : r.x_static)
            if (!std::isfinite(v))
                throw ValidationError("dataset: record '" + r.id +
                                      "' has non-finite static feature");
        if (r.time < 0 || r.time > ds.grid.t_max)
            throw RangeError("dataset: record '" + r.id + "' label time " +
                             std::to_string(r.time) + " outside grid");
        for (const auto& [t, vec] : r.x_dynamic) {
            if (t < 0 || t > ds.grid.t_max)
                throw RangeError("dataset: record '" + r.id +
                                 "' dynamic step outside grid");
            if (static_cast<int>(vec.size()) != ds.dynamic_dim)
                throw ValidationError("dataset: record '" + r.id +
                                      "' dynamic feature length mismatch");
            for (double v : vec)
                if (std::isinf(v))
                    throw ValidationError("dataset: record '" + r.id +
                                          "' has infinite dynamic feature");
        }
    }
}

Dataset load_dataset(const std::string& static_csv, const std::string& dynamic_csv,
                     const TimeGrid& grid) {
    if (grid.t_max < 0) throw ValidationError("load_dataset: t_max must be >= 0");
    Dataset ds;
    ds.grid = grid;

    const auto lines = to_lines(read_file(static_csv));
    if (lines.empty()) throw ParseError(static_csv + ": empty file");
    ds.static_dim = check_header(split_csv_line(lines[0]), {"id", "time", "event"},
                                 "x", loc(static_csv, 1));

    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::string where = loc(static_csv, i + 1);
        if (lines[i].empty()) throw ParseError(where + ": blank line");
        const auto fields = split_csv_line(lines[i]);
        if (static_cast<int>(fields.size()) != 3 + ds.static_dim)
            throw ParseError(where + ": expected " + std::to_string(3 + ds.static_dim) +
                             " fields, got " + std::to_string(fields.size()));
        SurvivalRecord rec;
        rec.id = std::string(fields[0]);
        if (rec.id.empty()) throw ValidationError(where + ": empty id");
        if (index.count(rec.id))
            throw ValidationError(where + ": duplicate id '" + rec.id + "'");
        rec.time = parse_time(fields[1], grid.t_max, where);
        if (fields[2] == "1")
            rec.event = true;
        else if (fields[2] == "0")
            rec.event = false;
        else
            throw ValidationError(where + ": event must be 0 or 1, got '" +
                                  std::string(fields[2]) + "'");
        rec.x_static.reserve(ds.static_dim);
        for (int j = 0; j < ds.static_dim; ++j)
            rec.x_static.push_back(parse_finite(fields[3 + j], where));
        index.emplace(rec.id, ds.records.size());
        ds.records.push_back(std::move(rec));
    }

    if (!dynamic_csv.empty()) {
        const auto dlines = to_lines(read_file(dynamic_csv));
        if (dlines.empty()) throw ParseError(dynamic_csv + ": empty file");
        ds.dynamic_dim =
            check_header(split_csv_line(dlines[0]), {"id", "t"}, "v", loc(dynamic_csv, 1));
        if (ds.dynamic_dim == 0)
            throw ParseError(dynamic_csv + ": no feature columns");
        for (std::size_t i = 1; i < dlines.size(); ++i) {
            const std::string where = loc(dynamic_csv, i + 1);
            if (dlines[i].empty()) throw ParseError(where + ": blank line");
            const auto fields = split_csv_line(dlines[i]);
            if (static_cast<int>(fields.size()) != 2 + ds.dynamic_dim)
                throw ParseError(where + ": expected " +
                                 std::to_string(2 + ds.dynamic_dim) + " fields, got " +
                                 std::to_string(fields.size()));
            const std::string id(fields[0]);
            auto it = index.find(id);
            if (it == index.end())
                throw ValidationError(where + ": unknown id '" + id + "'");
            const int t = parse_time(fields[1], grid.t_max, where);
            auto& dyn = ds.records[it->second].x_dynamic;
            if (dyn.count(t))
                throw ValidationError(where + ": duplicate observation for id '" + id +
                                      "' at t=" + std::to_string(t));
            std::vector<double> vec;
            vec.reserve(ds.dynamic_dim);
            for (int j = 0; j < ds.dynamic_dim; ++j) {
                const auto f = fields[2 + j];
                vec.push_back(f.empty() ? std::nan("") : parse_finite(f, where));
            }
            dyn.emplace(t, std::move(vec));
        }
    }

    std::sort(ds.records.begin(), ds.records.end(),
              [](const SurvivalRecord& a, const SurvivalRecord& b) { return a.id < b.id; });
    validate_dataset(ds);
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& static_csv,
                  const std::string& dynamic_csv) {
    validate_dataset(ds);
    std::ostringstream s;
    s << "id,time,event";
    for (int j = 0; j < ds.static_dim; ++j) s << ",x" << j;
    s << "\n";
    for (const auto& r : ds.records) {
        s << r.id << "," << r.time << "," << (r.event ? 1 : 0);
        for (double v : r.x_static) s << "," << format_double(v);
        s << "\n";
    }
    write_file_atomic(static_csv, s.str());

    if (dynamic_csv.empty()) return;
    std::ostringstream d;
    d << "id,t";
    for (int j = 0; j < ds.dynamic_dim; ++j) d << ",v" << j;
    d << "\n";
    for (const auto& r : ds.records) {
        for (const auto& [t, vec] : r.x_dynamic) {
            d << r.id << "," << t;
            for (double v : vec) {
                d << ",";
                if (!std::isnan(v)) d << format_double(v);
            }
            d << "\n";
        }
    }
    write_file_atomic(dynamic_csv, d.str());
}

DatasetSplit split_dataset(const Dataset& ds, const SplitRatios& ratios,
                           std::uint64_t seed) {
    if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0)
        throw ValidationError("split_dataset: ratios must be positive");
    const double sum = ratios.train + ratios.val + ratios.test;
    if (std::abs(sum - 1.0) > 1e-9)
        throw ValidationError("split_dataset: ratios must sum to 1");
    const std::size_t n = ds.records.size();
    if (n < 3) throw ValidationError("split_dataset: need at least 3 records");

    // The epsilon keeps exact proportions exact under floating-point ratios
    // (15100 * 0.7 must floor to 10570, not 10569).
    const auto n_train = static_cast<std::size_t>(
        std::floor(static_cast<double>(n) * ratios.train + 1e-9));
    const auto n_val = static_cast<std::size_t>(
        std::floor(static_cast<double>(n) * ratios.val + 1e-9));
    const std::size_t n_test = n - n_train - n_val;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    RandomStream rs(substream_seed(seed, "split"));
    rs.shuffle(order);

    DatasetSplit out;
    for (Dataset* part : {&out.train, &out.val, &out.test}) {
        part->grid = ds.grid;
        part->static_dim = ds.static_dim;
        part->dynamic_dim = ds.dynamic_dim;
    }
    out.train.records.reserve(n_train);
    out.val.records.reserve(n_val);
    out.test.records.reserve(n_test);
    for (std::size_t i = 0; i < n; ++i) {
        const SurvivalRecord& r = ds.records[order[i]];
        if (i < n_train)
            out.train.records.push_back(r);
        else if (i < n_train + n_val)
            out.val.records.push_back(r);
        else
            out.test.records.push_back(r);
    }
    return out;
}

}  // namespace dtsurv
