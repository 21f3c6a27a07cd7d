#pragma once

#include "fairicl/latent_concept.hpp"
#include "fairicl/metrics.hpp"
#include "fairicl/schema.hpp"
#include "fairicl/text_template.hpp"

#include <filesystem>
#include <optional>

namespace fairicl::infer {

enum class StrategyKind {
    random,
    balanced,
    counterfactual,
    removal,
    instruction,
    latent_concept,
    fairicl,
    fairicl_r,
    fairicl_lc,
};

StrategyKind strategy_from(const std::string& name);
const char* to_string(StrategyKind kind);

// Does the strategy rank demonstrations with a learned concept, and which
// variant of the concept does it need?
bool needs_concept(StrategyKind kind);
bool needs_internal_lm(StrategyKind kind);

struct StrategySpec {
    StrategyKind kind = StrategyKind::random;
    std::size_t k = 4;
    std::uint64_t seed = 0;  // run seed; each query draws with mix64(seed, query id)
    // Manual fairness guidance; wording is ours, flagged in config.
    std::string fairness_instruction =
        "Treat all individuals equally regardless of gender. Your answer must not depend on the "
        "person's sex.";
    // Group the counterfactual base examples come from; -1 picks the majority.
    int counterfactual_base_group = -1;
};

struct ConceptInputs {
    const std::vector<latent::LikelihoodScore>* scores = nullptr;
    std::size_t m = 100;
};

// Demonstrations for one query, already materialized (counterfactual flips
// produce records that are not rows of the training set). render_options
// apply to the demonstrations and the query alike so removal prompts carry
// no sensitive tokens anywhere.
struct DemoSelection {
    std::vector<Record> demos;
    std::vector<std::int64_t> source_ids;
    RenderOptions render_options;
    std::string extra_instruction;
};

// Selection reads only the query id (seeding), never the query's attributes
// or label.
DemoSelection select_demos(const StrategySpec& spec, const Dataset& train, std::int64_t query_id,
                           const ConceptInputs* concept_inputs = nullptr);

PromptSpec make_prompt_spec(const DemoSelection& sel, const Record& query, const TextTemplate& tmpl,
                            const Schema& schema);

struct InternalPrediction {
    std::string raw;
    std::optional<bool> parsed;
};

// Greedy decoding of at most max_new tokens with the internal model; the
// prompt's trailing whitespace is trimmed before encoding (the prompt bytes
// themselves are never altered).
InternalPrediction predict_internal(const lm::Lm& model, const lm::DenseMatrix<float>* soft_prefix,
                                    const std::string& prompt_text, int max_new = 4);

struct PredictionRecord {
    std::int64_t query_id = 0;
    std::string group;
    std::string true_label;
    bool label_positive = false;
    bool predicted_positive = false;
    bool parse_ok = true;
    bool failed = false;
    std::string raw_text;
    std::string strategy;
    std::uint64_t seed = 0;
    std::vector<std::int64_t> demo_ids;
};

metrics::Outcome to_outcome(const PredictionRecord& r);
std::vector<metrics::Outcome> to_outcomes(const std::vector<PredictionRecord>& records);

void save_predictions_jsonl(const std::vector<PredictionRecord>& records,
                            const std::filesystem::path& path, const std::string& fingerprint);
std::vector<PredictionRecord> load_predictions_jsonl(const std::filesystem::path& path,
                                                     std::string* fingerprint = nullptr);

} // namespace fairicl::infer
