#include "fairicl/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace fairicl::metrics {

namespace {

using Json = nlohmann::ordered_json;

std::vector<Outcome> usable(const std::vector<Outcome>& outcomes) {
    std::vector<Outcome> out;
    out.reserve(outcomes.size());
    for (const auto& o : outcomes)
        if (!o.failed) out.push_back(o);
    return out;
}

std::vector<std::string> sorted_groups(const std::vector<Outcome>& outcomes) {
    std::set<std::string> names;
    for (const auto& o : outcomes) names.insert(o.group);
    return {names.begin(), names.end()};
}

std::pair<double, double> group_positive_rates(const std::vector<Outcome>& outcomes) {
    const auto groups = sorted_groups(outcomes);
    if (groups.size() != 2)
        throw std::runtime_error("statistical_parity: expected exactly 2 groups, have " +
                                 std::to_string(groups.size()));
    std::int64_t pos[2] = {0, 0};
    std::int64_t total[2] = {0, 0};
    for (const auto& o : outcomes) {
        const int g = o.group == groups[0] ? 0 : 1;
        total[g]++;
        if (o.predicted_positive) pos[g]++;
    }
    return {double(pos[0]) / double(total[0]), double(pos[1]) / double(total[1])};
}

std::pair<double, double> group_tprs(const std::vector<Outcome>& outcomes) {
    const auto groups = sorted_groups(outcomes);
    if (groups.size() != 2)
        throw std::runtime_error("equal_opportunity: expected exactly 2 groups, have " +
                                 std::to_string(groups.size()));
    std::int64_t tp[2] = {0, 0};
    std::int64_t pos_labeled[2] = {0, 0};
    for (const auto& o : outcomes) {
        if (!o.label_positive) continue;
        const int g = o.group == groups[0] ? 0 : 1;
        pos_labeled[g]++;
        if (o.predicted_positive) tp[g]++;
    }
    for (int g = 0; g < 2; ++g) {
        if (pos_labeled[g] == 0)
            throw std::runtime_error("equal_opportunity: group '" + groups[std::size_t(g)] +
                                     "' has no positive-labeled queries");
    }
    return {double(tp[0]) / double(pos_labeled[0]), double(tp[1]) / double(pos_labeled[1])};
}

double f1_from(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
    const double precision = tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp);
    const double recall = tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

MetricBlock compute_block(const std::vector<Outcome>& outcomes) {
    MetricBlock b;
    if (outcomes.empty()) return b;
    std::int64_t correct = 0, tp = 0, fp = 0, fn = 0, tn = 0;
    for (const auto& o : outcomes) {
        if (o.predicted_positive == o.label_positive) ++correct;
        if (o.predicted_positive && o.label_positive) ++tp;
        else if (o.predicted_positive && !o.label_positive) ++fp;
        else if (!o.predicted_positive && o.label_positive) ++fn;
        else ++tn;
    }
    b.accuracy = double(correct) / double(outcomes.size());
    b.f1 = f1_from(tp, fp, fn);
    b.f1_macro = 0.5 * (f1_from(tp, fp, fn) + f1_from(tn, fn, fp));
    const auto [r0, r1] = group_positive_rates(outcomes);
    b.signed_sp = r0 - r1;
    b.delta_sp = std::abs(b.signed_sp);
    const auto [t0, t1] = group_tprs(outcomes);
    b.signed_eo = t0 - t1;
    b.delta_eo = std::abs(b.signed_eo);
    return b;
}

Json block_json(const MetricBlock& b) {
    return Json{{"accuracy", b.accuracy}, {"f1", b.f1},
                {"f1_macro", b.f1_macro}, {"delta_sp", b.delta_sp},
                {"delta_eo", b.delta_eo}, {"signed_sp", b.signed_sp},
                {"signed_eo", b.signed_eo}};
}

MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd out;
    if (xs.empty()) return out;
    double sum = 0;
    for (double x : xs) sum += x;
    out.mean = sum / double(xs.size());
    double var = 0;
    for (double x : xs) var += (x - out.mean) * (x - out.mean);
    out.stddev = std::sqrt(var / double(xs.size()));
    return out;
}

} // namespace

double statistical_parity(const std::vector<Outcome>& outcomes) {
    const auto records = usable(outcomes);
    if (records.empty()) throw std::runtime_error("statistical_parity: no records");
    const auto [r0, r1] = group_positive_rates(records);
    return std::abs(r0 - r1);
}

double equal_opportunity(const std::vector<Outcome>& outcomes) {
    const auto records = usable(outcomes);
    if (records.empty()) throw std::runtime_error("equal_opportunity: no records");
    const auto [t0, t1] = group_tprs(records);
    return std::abs(t0 - t1);
}

std::pair<double, double> accuracy_f1(const std::vector<Outcome>& outcomes) {
    const auto records = usable(outcomes);
    if (records.empty()) throw std::runtime_error("accuracy_f1: no records");
    std::int64_t correct = 0, tp = 0, fp = 0, fn = 0;
    for (const auto& o : records) {
        if (o.predicted_positive == o.label_positive) ++correct;
        if (o.predicted_positive && o.label_positive) ++tp;
        else if (o.predicted_positive && !o.label_positive) ++fp;
        else if (!o.predicted_positive && o.label_positive) ++fn;
    }
    return {double(correct) / double(records.size()), f1_from(tp, fp, fn)};
}

EvalReport evaluate(const std::vector<Outcome>& outcomes, std::uint64_t run_seed) {
    EvalReport rep;
    rep.run_seed = run_seed;
    const auto records = usable(outcomes);
    rep.excluded_failed = std::int64_t(outcomes.size() - records.size());
    rep.evaluated = std::int64_t(records.size());
    rep.invalid = !outcomes.empty() &&
                  double(rep.excluded_failed) > 0.01 * double(outcomes.size());
    if (records.empty()) return rep;

    rep.groups = sorted_groups(records);
    for (const auto& o : records) {
        if (!o.parse_ok) rep.unparseable++;
        Confusion& c = rep.per_group[o.group];
        if (o.predicted_positive && o.label_positive) c.tp++;
        else if (o.predicted_positive && !o.label_positive) c.fp++;
        else if (!o.predicted_positive && o.label_positive) c.fn++;
        else c.tn++;
    }
    rep.headline = compute_block(records);

    std::vector<Outcome> parsed;
    parsed.reserve(records.size());
    for (const auto& o : records)
        if (o.parse_ok) parsed.push_back(o);
    if (!parsed.empty()) {
        try {
            rep.excluding_unparseable = compute_block(parsed);
        } catch (const std::exception&) {
            // Excluding unparseable outputs can empty a group; the secondary
            // view is best-effort and stays zeroed in that case.
        }
    }
    return rep;
}

AggregateReport aggregate(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw std::runtime_error("aggregate: need at least one report");
    AggregateReport agg;
    agg.runs = reports.size();
    agg.per_run = reports;
    std::vector<double> acc, f1, f1m, sp, eo;
    for (const auto& r : reports) {
        acc.push_back(r.headline.accuracy);
        f1.push_back(r.headline.f1);
        f1m.push_back(r.headline.f1_macro);
        sp.push_back(r.headline.delta_sp);
        eo.push_back(r.headline.delta_eo);
    }
    agg.accuracy = mean_std(acc);
    agg.f1 = mean_std(f1);
    agg.f1_macro = mean_std(f1m);
    agg.delta_sp = mean_std(sp);
    agg.delta_eo = mean_std(eo);
    return agg;
}

std::string to_json(const EvalReport& r) {
    Json j;
    j["run_seed"] = r.run_seed;
    j["evaluated"] = r.evaluated;
    j["unparseable"] = r.unparseable;
    j["excluded_failed"] = r.excluded_failed;
    j["invalid"] = r.invalid;
    j["groups"] = r.groups;
    j["headline"] = block_json(r.headline);
    j["excluding_unparseable"] = block_json(r.excluding_unparseable);
    Json cells = Json::object();
    for (const auto& [g, c] : r.per_group)
        cells[g] = Json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
    j["confusion"] = cells;
    return j.dump(2);
}

std::string to_json(const AggregateReport& r) {
    Json j;
    j["runs"] = r.runs;
    auto ms = [](const MeanStd& m) { return Json{{"mean", m.mean}, {"std", m.stddev}}; };
    j["accuracy"] = ms(r.accuracy);
    j["f1"] = ms(r.f1);
    j["f1_macro"] = ms(r.f1_macro);
    j["delta_sp"] = ms(r.delta_sp);
    j["delta_eo"] = ms(r.delta_eo);
    Json runs = Json::array();
    for (const auto& rep : r.per_run) runs.push_back(Json::parse(to_json(rep)));
    j["per_run"] = runs;
    return j.dump(2);
}

} // namespace fairicl::metrics
