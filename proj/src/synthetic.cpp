#include "fairicl/synthetic.hpp"

#include "fairicl/rng.hpp"

namespace fairicl::synth {

std::shared_ptr<Schema> employee_schema() {
    auto schema = std::make_shared<Schema>();
    auto add = [&](const char* name, AttrRole role, std::vector<std::string> domain) {
        Attribute a;
        a.name = name;
        a.kind = AttrKind::categorical;
        a.role = role;
        a.domain = std::move(domain);
        schema->attributes.push_back(std::move(a));
    };
    add("skill", AttrRole::non_sensitive, {"high", "low"});
    add("dept", AttrRole::non_sensitive, {"sales", "research", "operations"});
    add("sex", AttrRole::sensitive, {"male", "female"});
    add("role", AttrRole::proxy_sensitive, {"lead", "support", "analyst"});
    add("rating", AttrRole::label, {"yes", "no"});
    schema->hierarchy.non_sensitive_order = {"skill", "dept"};
    schema->hierarchy.sensitive = "sex";
    schema->hierarchy.proxy_order = {"role"};
    schema->template_id = "employee_review";
    schema->positive_label = "yes";
    schema->validate();
    return schema;
}

TextTemplate employee_template() {
    TextTemplate t;
    t.id = "employee_review";
    t.instruction =
        "Based on the profile description of an employee, answer the question about their "
        "performance rating.";
    t.question = "Does this employee have a high performance rating?";
    t.redacted = "unspecified";
    t.profile_pattern =
        "This person works in the {dept} department with a {skill} skill rating. "
        "{P:subj} {v:is} registered as {sex}. {P:subj} {role}.";
    t.pronouns["male"] = PronounSet{"he", "his", "him"};
    t.pronouns["female"] = PronounSet{"she", "her", "her"};
    t.phrases["role"]["lead"] = "{v:is} the lead of {p:poss} unit";
    t.phrases["role"]["support"] = "{v:is} in a support position in {p:poss} unit";
    t.phrases["role"]["analyst"] = "{v:is} an analyst in {p:poss} unit";
    return t;
}

Dataset generate_planted_bias(const SyntheticConfig& cfg) {
    Dataset d;
    d.schema = employee_schema();
    d.provenance = Provenance::original;
    const int skill = d.schema->attr_index("skill");
    const int dept = d.schema->attr_index("dept");
    const int sex = d.schema->attr_index("sex");
    const int role = d.schema->attr_index("role");
    const int rating = d.schema->attr_index("rating");

    d.records.reserve(cfg.n);
    for (std::size_t i = 0; i < cfg.n; ++i) {
        Rng rng(mix64(cfg.seed, i));
        Record r;
        r.id = std::int64_t(i);
        r.values.assign(d.schema->attributes.size(), 0);

        const bool male = rng.below(2) == 0;
        r.values[std::size_t(sex)] = male ? 0 : 1;
        const double p_pos = male ? cfg.p_positive_majority : cfg.p_positive_minority;
        const bool positive = rng.real01() < p_pos;
        r.values[std::size_t(rating)] = positive ? 0 : 1;  // domain {yes, no}
        const double p_high = positive ? cfg.p_skill_high_positive : cfg.p_skill_high_negative;
        r.values[std::size_t(skill)] = rng.real01() < p_high ? 0 : 1;
        r.values[std::size_t(dept)] = std::int32_t(rng.below(3));
        // role | sex: leads skew male, analysts skew female.
        const double u = rng.real01();
        int role_v;
        if (male) role_v = u < 0.6 ? 0 : (u < 0.85 ? 1 : 2);
        else role_v = u < 0.15 ? 0 : (u < 0.4 ? 1 : 2);
        r.values[std::size_t(role)] = role_v;

        d.records.push_back(std::move(r));
    }
    return d;
}

} // namespace fairicl::synth
