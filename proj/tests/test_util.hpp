#pragma once

#include "fairicl/dataset_io.hpp"
#include "fairicl/schema.hpp"
#include "fairicl/text_template.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace testutil {

inline std::filesystem::path source_dir() { return FAIRICL_SOURCE_DIR; }
inline std::filesystem::path fixture(const std::string& name) {
    return source_dir() / "tests" / "fixtures" / name;
}
inline std::filesystem::path asset(const std::string& name) {
    return source_dir() / "assets" / name;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
    const auto dir = std::filesystem::current_path() / "test_out" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void spit(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

// 4-row toy set from the augmentation examples: education determined by the
// label, sex balanced. Hierarchy: label -> education; sensitive = sex.
inline fairicl::Dataset toy4() {
    auto schema = std::make_shared<fairicl::Schema>();
    auto add = [&](const char* n, fairicl::AttrRole role, std::vector<std::string> dom) {
        fairicl::Attribute a;
        a.name = n;
        a.role = role;
        a.domain = std::move(dom);
        schema->attributes.push_back(std::move(a));
    };
    add("education", fairicl::AttrRole::non_sensitive, {"HS", "BS"});
    add("sex", fairicl::AttrRole::sensitive, {"M", "F"});
    add("income", fairicl::AttrRole::label, {"0", "1"});
    schema->hierarchy.non_sensitive_order = {"education"};
    schema->hierarchy.sensitive = "sex";
    schema->positive_label = "1";
    schema->validate();

    fairicl::Dataset d;
    d.schema = schema;
    const std::int32_t rows[4][3] = {{0, 0, 0}, {0, 1, 0}, {1, 0, 1}, {1, 1, 1}};
    for (int i = 0; i < 4; ++i) {
        fairicl::Record r;
        r.id = i;
        r.values = {rows[i][0], rows[i][1], rows[i][2]};
        d.records.push_back(std::move(r));
    }
    return d;
}

// The two records shown in the serialization figure, against the shipped
// adult schema + template.
struct AdultFixture {
    std::shared_ptr<fairicl::Schema> schema;
    fairicl::TextTemplate tmpl;
    fairicl::Record demo;   // 38-year-old female professional
    fairicl::Record query;  // 28-year-old male in protective services
};

inline AdultFixture adult_fixture() {
    AdultFixture f;
    f.schema = fairicl::load_schema(asset("adult_income.schema"));
    f.tmpl = fairicl::load_template(asset("adult_income.template"));

    auto set = [&](fairicl::Record& r, const char* attr, const std::string& value) {
        const int a = f.schema->attr_index(attr);
        REQUIRE(a >= 0);
        r.values[std::size_t(a)] = f.schema->attributes[std::size_t(a)].intern(value);
    };
    f.demo.id = 0;
    f.demo.values.assign(f.schema->attributes.size(), 0);
    set(f.demo, "age", "38");
    set(f.demo, "education", "Prof-school");
    set(f.demo, "workclass", "Private");
    set(f.demo, "occupation", "Prof-specialty");
    set(f.demo, "hours-per-week", "50");
    set(f.demo, "capital-gain", "0");
    set(f.demo, "capital-loss", "0");
    set(f.demo, "sex", "Female");
    set(f.demo, "relationship", "Not-in-family");
    set(f.demo, "marital-status", "Never-married");
    set(f.demo, "income", ">50K");

    f.query.id = 1;
    f.query.values.assign(f.schema->attributes.size(), 0);
    set(f.query, "age", "28");
    set(f.query, "education", "Assoc-acdm");
    set(f.query, "workclass", "Local-gov");
    set(f.query, "occupation", "Protective-serv");
    set(f.query, "hours-per-week", "40");
    set(f.query, "capital-gain", "0");
    set(f.query, "capital-loss", "0");
    set(f.query, "sex", "Male");
    set(f.query, "relationship", "Husband");
    set(f.query, "marital-status", "Married-civ-spouse");
    set(f.query, "income", "<=50K");
    return f;
}

} // namespace testutil
