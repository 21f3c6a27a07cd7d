#include "fairicl/text_template.hpp"

#include <doctest.h>

#include <regex>

#include "test_util.hpp"

using namespace fairicl;

namespace {

const std::regex kGenderedPattern(
    R"(\b(he|she|his|her|him|husband|wife|male|female)\b)",
    std::regex::icase);

bool has_gendered_token(const std::string& text) {
    return std::regex_search(text, kGenderedPattern);
}

} // namespace

TEST_CASE("golden prompt matches the stored fixture byte for byte") {
    const auto f = testutil::adult_fixture();
    f.tmpl.validate_against(*f.schema);

    RenderOptions demo_opts;
    demo_opts.include_answer = true;
    PromptSpec spec;
    spec.instruction = f.tmpl.instruction;
    spec.demonstrations = {serialize_record(f.demo, f.tmpl, *f.schema, demo_opts)};
    spec.query = serialize_record(f.query, f.tmpl, *f.schema);

    const std::string prompt = build_icl_prompt(spec);
    const std::string golden = testutil::slurp(testutil::fixture("fig3_golden_prompt.txt"));
    CHECK(prompt == golden);
}

TEST_CASE("sensitive-suppressed neutral rendering") {
    const auto f = testutil::adult_fixture();
    RenderOptions opts;
    opts.include_sensitive = false;
    opts.neutral_pronouns = true;
    const auto ex = serialize_record(f.demo, f.tmpl, *f.schema, opts);
    CHECK(ex.profile ==
          "This person is a 38 years old person. They have attended a professional school and "
          "work in the private sector. Their occupation is in professional specialty. They work "
          "50 hours per week. They had a capital gain of 0 and a capital loss of 0 last year. "
          "They have never been married. They are not related to the other person in their "
          "household.");
    CHECK_FALSE(has_gendered_token(ex.profile));

    // The husband phrase must neutralize to spouse.
    const auto ex2 = serialize_record(f.query, f.tmpl, *f.schema, opts);
    CHECK(ex2.profile.find("the spouse of the other person") != std::string::npos);
    CHECK_FALSE(has_gendered_token(ex2.profile));
}

TEST_CASE("rendering ignores the record id") {
    const auto f = testutil::adult_fixture();
    Record twin = f.demo;
    twin.id = 4711;
    CHECK(serialize_record(twin, f.tmpl, *f.schema).profile ==
          serialize_record(f.demo, f.tmpl, *f.schema).profile);
}

TEST_CASE("every non-suppressed attribute value appears exactly once") {
    const auto f = testutil::adult_fixture();
    const auto ex = serialize_record(f.demo, f.tmpl, *f.schema);
    // Distinctive per-attribute strings rendered for the demo record.
    const std::vector<std::string> expected = {
        "38",     "attended a professional school", "the private sector",
        "professional specialty", "50 hours", "capital gain of 0", "female",
        "not related", "never been married"};
    for (const auto& s : expected) {
        CAPTURE(s);
        CHECK(ex.profile.find(s) != std::string::npos);
    }
}

TEST_CASE("template validation rejects missing or duplicate attribute slots") {
    const auto f = testutil::adult_fixture();
    TextTemplate bad = f.tmpl;
    bad.profile_pattern = "Only mentions {age}.";
    CHECK_THROWS(bad.validate_against(*f.schema));
    bad.profile_pattern = f.tmpl.profile_pattern + " Again {age}.";
    CHECK_THROWS(bad.validate_against(*f.schema));
    CHECK_THROWS(serialize_record(f.demo, [&] {
        TextTemplate t = f.tmpl;
        t.profile_pattern = "{no-such-attribute}";
        return t;
    }(), *f.schema));
}

TEST_CASE("build_icl_prompt layout") {
    const auto f = testutil::adult_fixture();
    RenderOptions demo_opts;
    demo_opts.include_answer = true;
    const auto demo = serialize_record(f.demo, f.tmpl, *f.schema, demo_opts);
    const auto query = serialize_record(f.query, f.tmpl, *f.schema);

    SUBCASE("zero demonstrations is instruction + query only") {
        PromptSpec spec;
        spec.instruction = f.tmpl.instruction;
        spec.query = query;
        const std::string p = build_icl_prompt(spec);
        CHECK(p.rfind("### Instruction: ", 0) == 0);
        CHECK(p.find("### Answer: Yes") == std::string::npos);
        CHECK(p.substr(p.size() - 12) == "### Answer: ");
    }
    SUBCASE("demonstration order is preserved in the bytes") {
        auto demo2 = serialize_record(f.query, f.tmpl, *f.schema, demo_opts);
        PromptSpec ab;
        ab.instruction = f.tmpl.instruction;
        ab.demonstrations = {demo, demo2};
        ab.query = query;
        PromptSpec ba = ab;
        ba.demonstrations = {demo2, demo};
        CHECK(build_icl_prompt(ab) != build_icl_prompt(ba));
    }
    SUBCASE("a demonstration without an answer is rejected") {
        PromptSpec spec;
        spec.instruction = f.tmpl.instruction;
        spec.demonstrations = {query};  // no answer attached
        spec.query = query;
        CHECK_THROWS(build_icl_prompt(spec));
    }
    SUBCASE("adding a demonstration strictly lengthens the prompt") {
        PromptSpec spec;
        spec.instruction = f.tmpl.instruction;
        spec.query = query;
        std::size_t prev = build_icl_prompt(spec).size();
        for (int k = 1; k <= 3; ++k) {
            spec.demonstrations.push_back(demo);
            const std::size_t len = build_icl_prompt(spec).size();
            CHECK(len > prev);
            prev = len;
        }
    }
}

TEST_CASE("build_training_sequence marks the answer span") {
    const auto f = testutil::adult_fixture();
    RenderOptions demo_opts;
    demo_opts.include_answer = true;
    const auto demo = serialize_record(f.demo, f.tmpl, *f.schema, demo_opts);
    const auto query = serialize_record(f.query, f.tmpl, *f.schema);

    SUBCASE("zero-demo positive sequence ends with Yes and the span covers it") {
        const auto seq = build_training_sequence(f.tmpl.instruction, {}, query, true);
        CHECK(seq.full_text.substr(seq.full_text.size() - 15) == "### Answer: Yes");
        CHECK(seq.full_text.substr(seq.answer_begin, seq.answer_end - seq.answer_begin) == "Yes");
    }
    SUBCASE("two answered blocks precede the query block") {
        const auto seq = build_training_sequence(f.tmpl.instruction, {demo, demo}, query, false);
        std::size_t pos = 0;
        int answers = 0;
        while ((pos = seq.full_text.find("### Answer:", pos)) != std::string::npos) {
            ++answers;
            pos += 1;
        }
        CHECK(answers == 3);  // two demos + query
        CHECK(seq.full_text.substr(seq.answer_begin) == "No");
    }
}

TEST_CASE("verbalize and parse_answer") {
    CHECK(verbalize(true) == "Yes");
    CHECK(verbalize(false) == "No");
    CHECK(parse_answer("Yes") == true);
    CHECK(parse_answer(" yes, because the profile suggests a high income") == true);
    CHECK(parse_answer("\n NO way") == false);
    CHECK(parse_answer("Income exceeds 50K") == std::nullopt);
    CHECK(parse_answer("") == std::nullopt);
    CHECK(parse_answer("YES") == true);
}
