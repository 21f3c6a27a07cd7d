#include "fairicl/metrics.hpp"

#include "fairicl/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace fairicl;
using metrics::Outcome;

namespace {

Outcome make(const char* group, bool label, bool pred, bool parse_ok = true, bool failed = false) {
    return Outcome{group, label, pred, parse_ok, failed};
}

// Brute-force counting oracle, kept deliberately separate from the library
// implementation: multiple passes with explicit filters, same final formulas.
struct Oracle {
    static std::int64_t count_if(const std::vector<Outcome>& os, bool want_group0,
                                 const std::vector<std::string>& groups, int mode) {
        std::int64_t n = 0;
        for (const auto& o : os) {
            if (o.failed) continue;
            const bool g0 = o.group == groups[0];
            if (g0 != want_group0) continue;
            switch (mode) {
                case 0: ++n; break;                                    // members
                case 1: n += o.predicted_positive; break;              // predicted positive
                case 2: n += o.label_positive; break;                  // labeled positive
                case 3: n += o.label_positive && o.predicted_positive; break;  // true positive
            }
        }
        return n;
    }

    static std::vector<std::string> groups_of(const std::vector<Outcome>& os) {
        std::vector<std::string> gs;
        for (const auto& o : os)
            if (!o.failed && std::find(gs.begin(), gs.end(), o.group) == gs.end())
                gs.push_back(o.group);
        std::sort(gs.begin(), gs.end());
        return gs;
    }

    static double sp(const std::vector<Outcome>& os) {
        const auto gs = groups_of(os);
        const double r0 = double(count_if(os, true, gs, 1)) / double(count_if(os, true, gs, 0));
        const double r1 = double(count_if(os, false, gs, 1)) / double(count_if(os, false, gs, 0));
        return std::abs(r0 - r1);
    }

    static double eo(const std::vector<Outcome>& os) {
        const auto gs = groups_of(os);
        const double t0 = double(count_if(os, true, gs, 3)) / double(count_if(os, true, gs, 2));
        const double t1 = double(count_if(os, false, gs, 3)) / double(count_if(os, false, gs, 2));
        return std::abs(t0 - t1);
    }

    static std::pair<double, double> acc_f1(const std::vector<Outcome>& os) {
        std::int64_t correct = 0, total = 0, tp = 0, fp = 0, fn = 0;
        for (const auto& o : os) {
            if (o.failed) continue;
            ++total;
            correct += o.predicted_positive == o.label_positive;
            tp += o.predicted_positive && o.label_positive;
            fp += o.predicted_positive && !o.label_positive;
            fn += !o.predicted_positive && o.label_positive;
        }
        const double precision = tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp);
        const double recall = tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn);
        const double f1 =
            precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
        return {double(correct) / double(total), f1};
    }
};

std::vector<Outcome> hand_set(int g0_pos, int g0_total, int g1_pos, int g1_total) {
    std::vector<Outcome> os;
    for (int i = 0; i < g0_total; ++i) os.push_back(make("a", true, i < g0_pos));
    for (int i = 0; i < g1_total; ++i) os.push_back(make("b", true, i < g1_pos));
    return os;
}

} // namespace

TEST_CASE("statistical parity hand cases") {
    SUBCASE("all predicted positive gives zero") {
        std::vector<Outcome> os;
        for (int i = 0; i < 6; ++i) os.push_back(make(i % 2 ? "a" : "b", i % 3 == 0, true));
        CHECK(metrics::statistical_parity(os) == 0.0);
    }
    SUBCASE("8/10 vs 5/10 gives 0.3") {
        CHECK(metrics::statistical_parity(hand_set(8, 10, 5, 10)) ==
              doctest::Approx(0.3).epsilon(1e-12));
    }
    SUBCASE("identical prediction multisets per group give zero") {
        std::vector<Outcome> os;
        for (const char* g : {"a", "b"}) {
            os.push_back(make(g, true, true));
            os.push_back(make(g, false, false));
            os.push_back(make(g, true, false));
        }
        CHECK(metrics::statistical_parity(os) == 0.0);
    }
    SUBCASE("one group only is an error") {
        std::vector<Outcome> os = {make("a", true, true)};
        CHECK_THROWS(metrics::statistical_parity(os));
    }
}

TEST_CASE("equal opportunity hand cases") {
    SUBCASE("perfect predictor gives zero") {
        std::vector<Outcome> os;
        for (int i = 0; i < 8; ++i) os.push_back(make(i % 2 ? "a" : "b", i % 3 == 0, i % 3 == 0));
        CHECK(metrics::equal_opportunity(os) == 0.0);
    }
    SUBCASE("TPR 3/4 vs 1/2 gives 0.25") {
        std::vector<Outcome> os;
        for (int i = 0; i < 4; ++i) os.push_back(make("a", true, i < 3));
        for (int i = 0; i < 4; ++i) os.push_back(make("b", true, i < 2));
        CHECK(metrics::equal_opportunity(os) == doctest::Approx(0.25).epsilon(1e-12));
    }
    SUBCASE("both groups all false negative gives zero") {
        std::vector<Outcome> os = {make("a", true, false), make("b", true, false)};
        CHECK(metrics::equal_opportunity(os) == 0.0);
    }
    SUBCASE("a group without positive labels is an error") {
        std::vector<Outcome> os = {make("a", true, true), make("b", false, false)};
        CHECK_THROWS(metrics::equal_opportunity(os));
    }
}

TEST_CASE("accuracy and f1 hand cases") {
    SUBCASE("all correct") {
        std::vector<Outcome> os = {make("a", true, true), make("b", false, false)};
        const auto [acc, f1] = metrics::accuracy_f1(os);
        CHECK(acc == 1.0);
        CHECK(f1 == 1.0);
    }
    SUBCASE("TP=2 FP=1 FN=1 TN=6") {
        std::vector<Outcome> os;
        os.push_back(make("a", true, true));
        os.push_back(make("b", true, true));
        os.push_back(make("a", false, true));
        os.push_back(make("b", true, false));
        for (int i = 0; i < 6; ++i) os.push_back(make(i % 2 ? "a" : "b", false, false));
        const auto [acc, f1] = metrics::accuracy_f1(os);
        CHECK(acc == doctest::Approx(0.8).epsilon(1e-12));
        const double pr = 2.0 / 3.0;
        CHECK(f1 == doctest::Approx(2 * pr * pr / (pr + pr)).epsilon(1e-12));
    }
    SUBCASE("no predicted positives and no true positives gives f1 = 0") {
        std::vector<Outcome> os = {make("a", false, false), make("b", false, false)};
        CHECK(metrics::accuracy_f1(os).second == 0.0);
    }
}

TEST_CASE("metrics match the brute-force oracle exactly on random sets") {
    Rng rng(31337);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<Outcome> os;
        const std::size_t n = 4 + rng.below(40);
        for (std::size_t i = 0; i < n; ++i)
            os.push_back(make(rng.below(2) ? "g0" : "g1", rng.below(2) == 0, rng.below(2) == 0,
                              rng.below(8) != 0, false));
        // guarantee preconditions: both groups present with positive labels
        os.push_back(make("g0", true, rng.below(2) == 0));
        os.push_back(make("g1", true, rng.below(2) == 0));

        CHECK(metrics::statistical_parity(os) == Oracle::sp(os));
        CHECK(metrics::equal_opportunity(os) == Oracle::eo(os));
        const auto got = metrics::accuracy_f1(os);
        const auto want = Oracle::acc_f1(os);
        CHECK(got.first == want.first);
        CHECK(got.second == want.second);
    }
}

TEST_CASE("group relabeling and record order do not change the gaps") {
    Rng rng(5);
    std::vector<Outcome> os;
    for (int i = 0; i < 40; ++i)
        os.push_back(make(rng.below(2) ? "x" : "y", rng.below(2) == 0, rng.below(2) == 0));
    os.push_back(make("x", true, true));
    os.push_back(make("y", true, false));

    const double sp = metrics::statistical_parity(os);
    const double eo = metrics::equal_opportunity(os);

    std::vector<Outcome> swapped = os;
    for (auto& o : swapped) o.group = o.group == "x" ? "y" : "x";
    CHECK(metrics::statistical_parity(swapped) == sp);
    CHECK(metrics::equal_opportunity(swapped) == eo);

    std::vector<Outcome> shuffled = os;
    Rng(17).shuffle(shuffled);
    CHECK(metrics::statistical_parity(shuffled) == sp);
    CHECK(metrics::equal_opportunity(shuffled) == eo);
}

TEST_CASE("accuracy of a predictor and its complement sum to one") {
    Rng rng(6);
    std::vector<Outcome> os;
    for (int i = 0; i < 25; ++i)
        os.push_back(make(rng.below(2) ? "x" : "y", rng.below(2) == 0, rng.below(2) == 0));
    std::vector<Outcome> flipped = os;
    for (auto& o : flipped) o.predicted_positive = !o.predicted_positive;
    CHECK(metrics::accuracy_f1(os).first + metrics::accuracy_f1(flipped).first == 1.0);
}

TEST_CASE("evaluate counts unparseable and failed records") {
    std::vector<Outcome> os;
    for (int i = 0; i < 50; ++i) os.push_back(make(i % 2 ? "a" : "b", i % 3 == 0, i % 4 == 0));
    os[3].parse_ok = false;
    os[3].predicted_positive = false;  // unparseable counts as negative
    os[7].failed = true;

    const auto rep = metrics::evaluate(os, 42);
    CHECK(rep.run_seed == 42);
    CHECK(rep.unparseable == 1);
    CHECK(rep.excluded_failed == 1);
    CHECK(rep.evaluated == 49);
    CHECK(rep.invalid);  // 1/50 = 2% > 1%
    std::int64_t confusion_total = 0;
    for (const auto& [g, c] : rep.per_group) confusion_total += c.total();
    CHECK(confusion_total == rep.evaluated);
}

TEST_CASE("aggregate mean and population std") {
    std::vector<Outcome> base = {make("a", true, true), make("b", true, false)};
    metrics::EvalReport r1 = metrics::evaluate(base, 1);
    metrics::EvalReport r2 = r1;
    r1.headline.delta_sp = 0.1;
    r2.headline.delta_sp = 0.3;

    SUBCASE("single report aggregates to itself with zero std") {
        const auto agg = metrics::aggregate({r1});
        CHECK(agg.delta_sp.mean == 0.1);
        CHECK(agg.delta_sp.stddev == 0.0);
    }
    SUBCASE("two reports") {
        const auto agg = metrics::aggregate({r1, r2});
        CHECK(agg.delta_sp.mean == doctest::Approx(0.2).epsilon(1e-12));
        CHECK(agg.delta_sp.stddev == doctest::Approx(0.1).epsilon(1e-12));
    }
    SUBCASE("order invariance") {
        const auto a = metrics::aggregate({r1, r2});
        const auto b = metrics::aggregate({r2, r1});
        CHECK(a.delta_sp.mean == b.delta_sp.mean);
        CHECK(a.delta_sp.stddev == b.delta_sp.stddev);
    }
}
