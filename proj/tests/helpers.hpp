#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "dtsurv/data_model.hpp"
#include "dtsurv/distribution.hpp"
#include "dtsurv/rng.hpp"

namespace testutil {

// Fresh scratch directory, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0; i < 10000; ++i) {
            auto cand = base / ("dtsurv_" + tag + "_" + std::to_string(i));
            std::error_code ec;
            if (std::filesystem::create_directory(cand, ec)) {
                path_ = cand;
                return;
            }
        }
        throw std::runtime_error("TempDir: could not create scratch directory");
    }

    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }

    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::vector<double> random_simplex(dtsurv::RandomStream& rng, int n) {
    std::vector<double> p(static_cast<std::size_t>(n));
    double total = 0.0;
    for (auto& v : p) {
        v = -std::log(1.0 - rng.uniform());
        total += v;
    }
    for (auto& v : p) v /= total;
    return p;
}

inline std::vector<dtsurv::Outcome> random_outcomes(dtsurv::RandomStream& rng, int n,
                                                    int t_max,
                                                    double event_prob = 0.6) {
    std::vector<dtsurv::Outcome> out(static_cast<std::size_t>(n));
    for (auto& o : out) {
        o.time = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(t_max + 1)));
        o.event = rng.bernoulli(event_prob);
    }
    return out;
}

// Small fully static dataset with linear event times, for split/train tests.
inline dtsurv::Dataset toy_static_dataset(int n, int t_max, int dim,
                                          std::uint64_t seed,
                                          double censor_fraction = 0.3) {
    dtsurv::Dataset ds;
    ds.grid.t_max = t_max;
    ds.static_dim = dim;
    dtsurv::RandomStream rng(seed);
    for (int i = 0; i < n; ++i) {
        dtsurv::SurvivalRecord r;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "r%05d", i);
        r.id = buf;
        r.x_static.resize(static_cast<std::size_t>(dim));
        double s = 0.0;
        for (auto& v : r.x_static) {
            v = rng.normal();
            s += v;
        }
        const double raw = std::abs(s) * static_cast<double>(t_max) / 4.0;
        r.time = std::min(t_max, static_cast<int>(std::llround(raw)));
        r.event = true;
        if (rng.uniform() < censor_fraction) {
            r.event = false;
            r.time = static_cast<int>(
                rng.uniform_int(static_cast<std::uint64_t>(r.time + 1)));
        }
        ds.records.push_back(std::move(r));
    }
    return ds;
}

}  // namespace testutil
