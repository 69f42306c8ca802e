#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dtsurv {

// Discrete time grid {0, 1, ..., t_max}.
struct TimeGrid {
    int t_max = 0;

    int size() const { return t_max + 1; }
};

struct SurvivalRecord {
    std::string id;
    std::vector<double> x_static;
    // Sparse longitudinal observations: time step -> feature vector. A NaN
    // entry is a missing cell inside an otherwise observed step; steps with
    // no entry were never observed.
    std::map<int, std::vector<double>> x_dynamic;
    int time = 0;        // label time T on the grid
    bool event = false;  // true = event observed at T, false = censored at T
};

struct Dataset {
    TimeGrid grid;
    int static_dim = 0;
    int dynamic_dim = 0;
    std::vector<SurvivalRecord> records;

    std::size_t size() const { return records.size(); }
};

// Label pair of one subject, detached from its covariates.
struct Outcome {
    int time = 0;
    bool event = false;
};

std::vector<Outcome> outcomes(const Dataset& ds);

// Throws ValidationError on duplicate ids, labels off the grid, or feature
// vectors whose length disagrees with the declared dimensions.
void validate_dataset(const Dataset& ds);

// Static CSV: header "id,time,event,x0,...". Dynamic CSV (optional, pass ""
// to skip): header "id,t,v0,..."; an empty field is a missing cell; every id
// must appear in the static file; duplicate (id, t) rows are an error.
// Records come back sorted by id.
Dataset load_dataset(const std::string& static_csv, const std::string& dynamic_csv,
                     const TimeGrid& grid);

void save_dataset(const Dataset& ds, const std::string& static_csv,
                  const std::string& dynamic_csv = "");

// Fractions of the dataset; must be positive and sum to 1 within 1e-9.
struct SplitRatios {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

struct DatasetSplit {
    Dataset train;
    Dataset val;
    Dataset test;
};

// Deterministic shuffled split. Train and val take floor(n * share); test
// takes the remainder, so sizes stay within 1 of exact proportions.
DatasetSplit split_dataset(const Dataset& ds, const SplitRatios& ratios,
                           std::uint64_t seed);

}  // namespace dtsurv
