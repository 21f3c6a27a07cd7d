#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace fairicl::metrics {

// The slice of a prediction record the metrics need. Unparseable outputs
// arrive as negative predictions with parse_ok=false; hard-failed external
// queries carry failed=true and are excluded with a count.
struct Outcome {
    std::string group;
    bool label_positive = false;
    bool predicted_positive = false;
    bool parse_ok = true;
    bool failed = false;
};

struct Confusion {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::int64_t total() const { return tp + fp + fn + tn; }
};

// |positive-prediction rate(group0) - rate(group1)|; group0 is the
// lexicographically smaller group name. Requires exactly two groups present.
double statistical_parity(const std::vector<Outcome>& outcomes);

// |TPR(group0) - TPR(group1)| over true-positive-labeled queries; requires a
// positive-labeled query in each group.
double equal_opportunity(const std::vector<Outcome>& outcomes);

// accuracy = correct/total; f1 = harmonic mean of positive-class precision
// and recall, with undefined precision/recall treated as 0.
std::pair<double, double> accuracy_f1(const std::vector<Outcome>& outcomes);

struct MetricBlock {
    double accuracy = 0;
    double f1 = 0;        // binary, positive class (headline)
    double f1_macro = 0;
    double delta_sp = 0;
    double delta_eo = 0;
    double signed_sp = 0;  // rate(group0) - rate(group1)
    double signed_eo = 0;
};

struct EvalReport {
    MetricBlock headline;                      // unparseable counted negative
    MetricBlock excluding_unparseable;         // sensitivity view
    std::map<std::string, Confusion> per_group;
    std::vector<std::string> groups;           // sorted; index 0 is group0
    std::int64_t evaluated = 0;
    std::int64_t unparseable = 0;
    std::int64_t excluded_failed = 0;
    bool invalid = false;                      // failures exceeded 1% of queries
    std::uint64_t run_seed = 0;
};

EvalReport evaluate(const std::vector<Outcome>& outcomes, std::uint64_t run_seed);

struct MeanStd {
    double mean = 0;
    double stddev = 0;  // population
};

struct AggregateReport {
    std::size_t runs = 0;
    MeanStd accuracy, f1, f1_macro, delta_sp, delta_eo;
    std::vector<EvalReport> per_run;
};

AggregateReport aggregate(const std::vector<EvalReport>& reports);

std::string to_json(const EvalReport& r);
std::string to_json(const AggregateReport& r);

} // namespace fairicl::metrics
