#pragma once

#include "fairicl/schema.hpp"
#include "fairicl/text_template.hpp"

namespace fairicl::synth {

// Planted-bias employee records: the label correlates strongly with the
// sensitive attribute (sex) and weakly with one non-sensitive attribute
// (skill); role is a proxy correlated with sex; dept is noise.
struct SyntheticConfig {
    std::size_t n = 5000;
    std::uint64_t seed = 0;
    double p_positive_majority = 0.8;  // P(y=yes | male)
    double p_positive_minority = 0.2;  // P(y=yes | female)
    double p_skill_high_positive = 0.7;
    double p_skill_high_negative = 0.3;
};

std::shared_ptr<Schema> employee_schema();
TextTemplate employee_template();
Dataset generate_planted_bias(const SyntheticConfig& cfg);

} // namespace fairicl::synth
