#pragma once

#include "fairicl/schema.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fairicl {

// Section delimiter is fixed: "### Answer:" plus one space before the label.
inline constexpr const char* kAnswerPrefix = "### Answer:";

struct PronounSet {
    std::string subject;     // she / he / they
    std::string possessive;  // her / his / their
    std::string object;      // her / him / them
};

// Text template with named slots. Slot forms inside `profile_pattern` and
// phrase texts:
//   {attr}    attribute value, or its phrase when a phrase map entry exists
//   {p:subj} {p:poss} {p:obj}   pronoun for the record's sensitive value
//                               ({P:...} capitalizes); neutral set under
//                               neutral_pronouns
//   {v:word}  verb agreeing with the subject (word / plural form)
//   {n:word}  gendered noun, mapped to its neutral form (husband -> spouse)
struct TextTemplate {
    std::string id;
    std::string instruction;
    std::string question;
    std::string profile_pattern;
    std::string redacted;  // replaces the sensitive slot under include_sensitive=false
    std::map<std::string, std::map<std::string, std::string>> phrases;  // attr -> value -> text
    std::map<std::string, PronounSet> pronouns;                         // sensitive value -> set

    // Every non-label attribute must appear exactly once in the pattern.
    void validate_against(const Schema& schema) const;
};

TextTemplate load_template(const std::filesystem::path& path);
void save_template(const TextTemplate& t, const std::filesystem::path& path);

struct RenderOptions {
    bool include_sensitive = true;
    bool neutral_pronouns = false;
    bool include_answer = false;
};

struct SerializedExample {
    std::string profile;
    std::string question;
    std::optional<std::string> answer;
    std::int64_t source_id = 0;
};

struct PromptSpec {
    std::string instruction;
    std::vector<SerializedExample> demonstrations;  // answers present
    SerializedExample query;                        // answer absent
    RenderOptions render_options;
};

SerializedExample serialize_record(const Record& r, const TextTemplate& t, const Schema& schema,
                                   const RenderOptions& opts = {});

// Instruction block, one block per demonstration, then the query block ending
// with the answer prefix and one trailing space, awaiting completion. An empty
// instruction omits the instruction block.
std::string build_icl_prompt(const PromptSpec& spec);

struct TrainingSequence {
    std::string full_text;
    std::size_t answer_begin = 0;  // character span of the verbalized answer
    std::size_t answer_end = 0;
};

TrainingSequence build_training_sequence(const std::string& instruction,
                                         const std::vector<SerializedExample>& demos,
                                         const SerializedExample& query, bool label_positive);

std::string verbalize(bool label_positive);

// First word after leading whitespace, matched case-insensitively against
// yes/no. nullopt means Unparseable (a value, not a failure).
std::optional<bool> parse_answer(const std::string& generated);

} // namespace fairicl
