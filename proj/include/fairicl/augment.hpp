#pragma once

#include "fairicl/schema.hpp"

#include <cstdint>

namespace fairicl {

enum class GenerationMode { hierarchical, random };

struct GenerationConfig {
    std::size_t n_tilde = 0;
    std::uint64_t seed = 0;
    bool unique = true;
    GenerationMode mode = GenerationMode::hierarchical;
};

struct GenerationReport {
    std::size_t duplicates_accepted = 0;
};

// One concept-learning input: q demonstration ids drawn from the original
// dataset plus one query from the original or generated dataset.
struct TrainingInstance {
    std::vector<std::int64_t> demo_ids;
    std::int64_t query_id = 0;
    Provenance query_source = Provenance::original;
};

// Hierarchical attribute sampling. Per sample i, with Rng(mix64(seed, i)):
// draw the label uniform over its domain, then each non-sensitive attribute
// in hierarchy order uniform over the distinct values occurring in the
// subset of d conditioned on everything drawn so far, then the sensitive
// attribute uniform over its domain (independent of all of it), then each
// proxy uniform over the distinct values in the subset conditioned on the
// sensitive value and prior proxies only. If a conditioning subset is empty
// the attribute falls back to label-only (or sensitive-only, for proxies)
// conditioning; an empty subset beyond that is an error. With cfg.unique,
// a sample colliding with d or an earlier sample is redrawn up to 100 times,
// then accepted with a warning.
Dataset generate_hierarchical(const Dataset& d, const AttributeHierarchy& h,
                              const GenerationConfig& cfg, GenerationReport* report = nullptr);

// Ablation sampler: label and every attribute drawn independently, uniform
// over the observed domain. Draw order per sample: label, then attributes in
// schema order. Same per-index seeding and uniqueness handling as above.
Dataset generate_random(const Dataset& d, const GenerationConfig& cfg,
                        GenerationReport* report = nullptr);

// One instance per record of d then d_tilde, in id order. Instance t draws
// its q demos without replacement from d with Rng(mix64(seed, t)); an
// original query is excluded from its own demos by id. Demos are fixed here,
// not re-drawn per epoch.
std::vector<TrainingInstance> build_training_mixture(const Dataset& d, const Dataset& d_tilde,
                                                     std::size_t q, std::uint64_t seed);

struct DecorrelationReport {
    std::vector<std::string> groups;
    std::vector<double> positive_rate;
    double gap = 0.0;     // |rate[0] - rate[1]|
    double signed_gap = 0.0;
};

DecorrelationReport decorrelation_report(const Dataset& d);

} // namespace fairicl
