#include "dtsurv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "dtsurv/errors.hpp"
#include "dtsurv/textio.hpp"

namespace dtsurv {

namespace {

void check_aligned(std::size_t preds, std::size_t labels, const char* who) {
    if (preds != labels)
        throw ValidationError(std::string(who) + ": predictions and labels differ in length");
}

}  // namespace

double c_index(const std::vector<double>& mean_lifetimes,
               const std::vector<Outcome>& labels) {
    check_aligned(mean_lifetimes.size(), labels.size(), "c_index");
    double concordant = 0.0;
    long pairs = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!labels[i].event) continue;
        for (std::size_t k = 0; k < labels.size(); ++k) {
            if (labels[k].time <= labels[i].time) continue;
            pairs += 1;
            if (mean_lifetimes[i] < mean_lifetimes[k])
                concordant += 1.0;
            else if (mean_lifetimes[i] == mean_lifetimes[k])
                concordant += 0.5;
        }
    }
    if (pairs == 0) throw UndefinedMetricError("c_index: no admissible pair");
    return concordant / static_cast<double>(pairs);
}

double mae_u(const std::vector<double>& mean_lifetimes,
             const std::vector<Outcome>& labels) {
    check_aligned(mean_lifetimes.size(), labels.size(), "mae_u");
    double sum = 0.0;
    long n = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!labels[i].event) continue;
        sum += std::abs(static_cast<double>(labels[i].time) - mean_lifetimes[i]);
        n += 1;
    }
    if (n == 0) throw UndefinedMetricError("mae_u: no uncensored subject");
    return sum / static_cast<double>(n);
}

double mae_h(const std::vector<double>& mean_lifetimes,
             const std::vector<Outcome>& labels) {
    check_aligned(mean_lifetimes.size(), labels.size(), "mae_h");
    double sum = 0.0;
    long n = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i].event) continue;
        sum += std::max(static_cast<double>(labels[i].time) - mean_lifetimes[i], 0.0);
        n += 1;
    }
    if (n == 0) throw UndefinedMetricError("mae_h: no censored subject");
    return sum / static_cast<double>(n);
}

namespace {

// Weighted rank-sum AUC for one evaluation time. scores_at(i) must give the
// risk score of subject i at that time.
template <typename ScoreFn>
std::vector<std::pair<int, double>> td_auc_impl(ScoreFn scores_at, std::size_t n,
                                                const std::vector<Outcome>& labels,
                                                const KmCurve& km_censor,
                                                const std::vector<int>& eval_times) {
    check_aligned(n, labels.size(), "td_auc");
    std::vector<std::pair<int, double>> out;
    std::vector<double> control_scores;
    for (int t : eval_times) {
        if (t < 0 || t >= static_cast<int>(km_censor.values.size()))
            throw RangeError("td_auc: eval time off the grid");
        control_scores.clear();
        double case_weight_sum = 0.0;
        double num = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            if (labels[j].time > t) control_scores.push_back(scores_at(j, t));
        if (control_scores.empty()) continue;
        std::sort(control_scores.begin(), control_scores.end());
        for (std::size_t i = 0; i < n; ++i) {
            if (!labels[i].event || labels[i].time > t) continue;
            // Left limit of the censoring survival curve at T_i.
            const double g = labels[i].time > 0
                                 ? km_censor.values[static_cast<std::size_t>(labels[i].time) - 1]
                                 : 1.0;
            if (g <= 0.0) continue;
            const double w = 1.0 / g;
            const double s = scores_at(i, t);
            const auto lo = std::lower_bound(control_scores.begin(), control_scores.end(), s);
            const auto hi = std::upper_bound(control_scores.begin(), control_scores.end(), s);
            const double below = static_cast<double>(lo - control_scores.begin());
            const double ties = static_cast<double>(hi - lo);
            num += w * (below + 0.5 * ties);
            case_weight_sum += w;
        }
        if (case_weight_sum <= 0.0) continue;
        out.emplace_back(
            t, num / (case_weight_sum * static_cast<double>(control_scores.size())));
    }
    if (out.empty()) throw UndefinedMetricError("td_auc: no evaluable time point");
    return out;
}

}  // namespace

std::vector<std::pair<int, double>> td_auc(const std::vector<SurvivalCurve>& curves,
                                           const std::vector<Outcome>& labels,
                                           const KmCurve& km_censor,
                                           const std::vector<int>& eval_times) {
    for (const auto& c : curves)
        if (c.values.size() != km_censor.values.size())
            throw ValidationError("td_auc: curve length does not match grid");
    return td_auc_impl(
        [&](std::size_t i, int t) {
            return 1.0 - curves[i].values[static_cast<std::size_t>(t)];
        },
        curves.size(), labels, km_censor, eval_times);
}

std::vector<std::pair<int, double>> td_auc(const std::vector<double>& mean_lifetimes,
                                           const std::vector<Outcome>& labels,
                                           const KmCurve& km_censor,
                                           const std::vector<int>& eval_times) {
    return td_auc_impl([&](std::size_t i, int) { return -mean_lifetimes[i]; },
                       mean_lifetimes.size(), labels, km_censor, eval_times);
}

double mauc(const std::vector<std::pair<int, double>>& td) {
    if (td.empty()) throw UndefinedMetricError("mauc: empty AUC series");
    if (td.size() == 1) return td.front().second;
    double area = 0.0;
    for (std::size_t i = 1; i < td.size(); ++i) {
        const double dt = static_cast<double>(td[i].first - td[i - 1].first);
        if (dt <= 0.0) throw ValidationError("mauc: times must be strictly increasing");
        area += dt * 0.5 * (td[i].second + td[i - 1].second);
    }
    return area / static_cast<double>(td.back().first - td.front().first);
}

KmCurve censoring_km(const std::vector<Outcome>& labels, const TimeGrid& grid) {
    std::vector<Outcome> flipped(labels);
    for (auto& o : flipped) o.event = !o.event;
    return km_fit(flipped, grid);
}

MetricsReport evaluate_metrics(const std::vector<double>& mean_lifetimes,
                               const std::vector<SurvivalCurve>& curves,
                               const std::vector<Outcome>& labels,
                               const KmCurve& km_censor, const TimeGrid& grid) {
    MetricsReport rep;
    rep.c_index = c_index(mean_lifetimes, labels);
    rep.mae_u = mae_u(mean_lifetimes, labels);
    rep.mae_h = mae_h(mean_lifetimes, labels);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!labels[i].event) continue;
        for (std::size_t k = 0; k < labels.size(); ++k)
            if (labels[k].time > labels[i].time) rep.n_eval_pairs += 1;
    }
    std::vector<int> eval_times;
    for (int t = 1; t < grid.t_max; ++t) eval_times.push_back(t);
    rep.td_auc = td_auc(curves, labels, km_censor, eval_times);
    rep.mauc = mauc(rep.td_auc);
    return rep;
}

std::string report_to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["c_index"] = report.c_index;
    j["mae_u"] = report.mae_u;
    j["mae_h"] = report.mae_h;
    j["mauc"] = report.mauc;
    j["n_eval_pairs"] = report.n_eval_pairs;
    auto& td = j["td_auc"] = nlohmann::json::array();
    for (const auto& [t, auc] : report.td_auc) td.push_back({t, auc});
    return j.dump(2) + "\n";
}

std::string td_auc_to_csv(const std::vector<std::pair<int, double>>& td) {
    std::ostringstream s;
    s << "t,auc\n";
    for (const auto& [t, auc] : td) s << t << "," << format_double(auc) << "\n";
    return s.str();
}

}  // namespace dtsurv
