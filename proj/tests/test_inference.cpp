#include "fairicl/strategy.hpp"

#include "fairicl/rng.hpp"
#include "fairicl/synthetic.hpp"

#include <doctest.h>

#include <map>
#include <regex>
#include <set>

#include "test_util.hpp"

using namespace fairicl;
using infer::DemoSelection;
using infer::StrategyKind;
using infer::StrategySpec;

namespace {

Dataset synth_train(std::size_t n = 120, std::uint64_t seed = 4) {
    synth::SyntheticConfig cfg;
    cfg.n = n;
    cfg.seed = seed;
    return synth::generate_planted_bias(cfg);
}

StrategySpec spec_of(StrategyKind kind, std::size_t k, std::uint64_t seed = 99) {
    StrategySpec s;
    s.kind = kind;
    s.k = k;
    s.seed = seed;
    return s;
}

const std::regex kGendered(R"(\b(he|she|his|her|him|husband|wife|male|female)\b)",
                           std::regex::icase);

} // namespace

TEST_CASE("balanced selection hits every cell exactly k/4 times") {
    const Dataset train = synth_train();
    const int sens = train.schema->sensitive_index();
    const int lab = train.schema->label_index();
    for (std::int64_t qid : {0, 5, 77}) {
        const auto sel = infer::select_demos(spec_of(StrategyKind::balanced, 4), train, qid);
        REQUIRE(sel.demos.size() == 4);
        std::map<std::pair<int, int>, int> cells;
        for (const auto& d : sel.demos) cells[{d.values[std::size_t(sens)], d.values[std::size_t(lab)]}]++;
        CHECK(cells.size() == 4);
        for (const auto& [cell, count] : cells) CHECK(count == 1);
    }
    CHECK_THROWS(infer::select_demos(spec_of(StrategyKind::balanced, 6), train, 0));
}

TEST_CASE("counterfactual demos are closed under the sensitive flip") {
    const Dataset train = synth_train();
    const int sens = train.schema->sensitive_index();
    const auto sel = infer::select_demos(spec_of(StrategyKind::counterfactual, 4), train, 3);
    REQUIRE(sel.demos.size() == 4);

    // Exact bijection: every demo's flipped twin appears in the multiset.
    auto key = [&](Record r) {
        r.values[std::size_t(sens)] = 1 - r.values[std::size_t(sens)];
        return r.values;
    };
    std::multiset<std::vector<std::int32_t>> values, flipped;
    for (const auto& d : sel.demos) {
        values.insert(d.values);
        flipped.insert(key(d));
    }
    CHECK(values == flipped);

    // Pairs differ only in the sensitive value.
    for (std::size_t i = 0; i < 2; ++i) {
        Record base = sel.demos[i];
        const Record& twin = sel.demos[i + 2];
        CHECK(base.values[std::size_t(sens)] != twin.values[std::size_t(sens)]);
        base.values[std::size_t(sens)] = twin.values[std::size_t(sens)];
        CHECK(base.values == twin.values);
    }
    CHECK_THROWS(infer::select_demos(spec_of(StrategyKind::counterfactual, 3), train, 0));
}

TEST_CASE("removal prompts carry no sensitive tokens anywhere") {
    const Dataset train = synth_train();
    const auto tmpl = synth::employee_template();
    const Record& query = train.records[11];
    const auto sel = infer::select_demos(spec_of(StrategyKind::removal, 4), train, query.id);
    CHECK_FALSE(sel.render_options.include_sensitive);
    CHECK(sel.render_options.neutral_pronouns);
    const std::string prompt =
        build_icl_prompt(infer::make_prompt_spec(sel, query, tmpl, *train.schema));
    CHECK_FALSE(std::regex_search(prompt, kGendered));
}

TEST_CASE("instruction strategy prepends the fairness guidance") {
    const Dataset train = synth_train();
    const auto tmpl = synth::employee_template();
    auto spec = spec_of(StrategyKind::instruction, 4);
    spec.fairness_instruction = "Be scrupulously fair.";
    const auto sel = infer::select_demos(spec, train, 0);
    const std::string prompt =
        build_icl_prompt(infer::make_prompt_spec(sel, train.records[0], tmpl, *train.schema));
    CHECK(prompt.rfind("### Instruction: Be scrupulously fair. Based on", 0) == 0);
}

TEST_CASE("k = 0 builds a zero-shot prompt") {
    const Dataset train = synth_train();
    const auto tmpl = synth::employee_template();
    const auto sel = infer::select_demos(spec_of(StrategyKind::random, 0), train, 0);
    CHECK(sel.demos.empty());
    const std::string prompt =
        build_icl_prompt(infer::make_prompt_spec(sel, train.records[0], tmpl, *train.schema));
    CHECK(prompt.find("### Profile:") != std::string::npos);
    CHECK(prompt.find("### Answer: Yes") == std::string::npos);
    CHECK(prompt.find("### Answer: No") == std::string::npos);
}

TEST_CASE("selection depends on the query only through its id") {
    Dataset train = synth_train();
    const std::int64_t qid = 42;
    const auto before = infer::select_demos(spec_of(StrategyKind::random, 4), train, qid);
    // flipping a query's label in a copied dataset cannot change selection
    Dataset other = train;
    other.records[42].values[std::size_t(train.schema->label_index())] ^= 1;
    const auto after = infer::select_demos(spec_of(StrategyKind::random, 4), other, qid);
    CHECK(before.source_ids == after.source_ids);
}

TEST_CASE("latent strategies draw from the top-m candidate set") {
    const Dataset train = synth_train(60);
    std::vector<latent::LikelihoodScore> scores;
    for (const auto& r : train.records)
        scores.push_back(latent::LikelihoodScore{r.id, double(r.id % 10)});
    infer::ConceptInputs inputs;
    inputs.scores = &scores;
    inputs.m = 12;
    const auto cands = latent::top_candidates(scores, 12);
    const std::set<std::int64_t> cand_set(cands.begin(), cands.end());

    std::set<std::vector<std::int64_t>> distinct;
    for (std::int64_t qid = 0; qid < 10; ++qid) {
        const auto sel =
            infer::select_demos(spec_of(StrategyKind::fairicl, 4), train, qid, &inputs);
        REQUIRE(sel.source_ids.size() == 4);
        for (auto id : sel.source_ids) CHECK(cand_set.count(id) == 1);
        distinct.insert(sel.source_ids);
    }
    CHECK(distinct.size() > 1);  // queries get varying demonstrations

    CHECK_THROWS(infer::select_demos(spec_of(StrategyKind::fairicl, 4), train, 0, nullptr));
}

TEST_CASE("internal prediction is deterministic and honors an empty soft prefix") {
    // memorizable two-example model
    const auto tmpl = synth::employee_template();
    const Dataset train = synth_train(24);
    std::vector<std::string> corpus;
    RenderOptions opts;
    opts.include_answer = true;
    for (const auto& r : train.records) {
        const auto ex = serialize_record(r, tmpl, *train.schema, opts);
        corpus.push_back("### Profile: " + ex.profile + "\n\n### Question: " + ex.question +
                         "\n### Answer: " + *ex.answer);
    }
    lm::Lm model;
    model.tokenizer = Tokenizer::build(corpus, 2);
    model.config = lm::LMConfig{1, 32, 2, 256, model.tokenizer.vocab_size()};
    lm::BaseTrainConfig tc;
    tc.epochs = 2;
    tc.lr = 2e-3;
    tc.seed = 8;
    model.params = lm::train_base_lm(corpus, model.config, model.tokenizer, tc);

    const std::string prompt = corpus[0].substr(0, corpus[0].size() - 3);  // strip answer word
    const auto a = infer::predict_internal(model, nullptr, prompt);
    const auto b = infer::predict_internal(model, nullptr, prompt);
    CHECK(a.raw == b.raw);

    lm::DenseMatrix<float> empty_soft(0, model.config.dim);
    const auto c = infer::predict_internal(model, &empty_soft, prompt);
    CHECK(c.raw == a.raw);  // zero-row prefix behaves like no prefix
}

TEST_CASE("prediction records round trip through jsonl") {
    std::vector<infer::PredictionRecord> records(2);
    records[0].query_id = 7;
    records[0].group = "female";
    records[0].true_label = "yes";
    records[0].label_positive = true;
    records[0].predicted_positive = false;
    records[0].parse_ok = false;
    records[0].raw_text = "hard to say";
    records[0].strategy = "random";
    records[0].seed = 1234;
    records[0].demo_ids = {1, 2, 3, 4};
    records[1].query_id = 9;
    records[1].group = "male";
    records[1].true_label = "no";
    records[1].failed = true;
    records[1].strategy = "random";

    const auto dir = testutil::fresh_dir("jsonl");
    infer::save_predictions_jsonl(records, dir / "p.jsonl", "f00d");
    std::string fp;
    const auto back = infer::load_predictions_jsonl(dir / "p.jsonl", &fp);
    CHECK(fp == "f00d");
    REQUIRE(back.size() == 2);
    CHECK(back[0].query_id == 7);
    CHECK(back[0].demo_ids == records[0].demo_ids);
    CHECK_FALSE(back[0].parse_ok);
    CHECK(back[1].failed);

    const auto outcomes = infer::to_outcomes(back);
    CHECK(outcomes[0].group == "female");
    CHECK(outcomes[1].failed);
}
