#pragma once

#include "fairicl/augment.hpp"
#include "fairicl/lm.hpp"
#include "fairicl/text_template.hpp"

#include <filesystem>
#include <functional>

namespace fairicl::latent {

enum class ConceptMode { fair, plain };

struct ConceptTrainConfig {
    int c = 10;                 // concept token count
    double lr = 1e-4;
    int epochs = 5;
    int q = 2;                  // demos per training instance (mixture construction)
    std::uint64_t seed = 0;
    ConceptMode mode = ConceptMode::fair;
    // Eq. 6 conditioning switch: score against the answered example alone
    // (default) or the fully templated prompt with instruction block.
    bool score_with_instruction = false;

    void validate() const;
};

struct ConceptState {
    lm::DenseMatrix<float> embeddings;  // c x d soft-prompt matrix
    std::vector<double> history;        // per-epoch mean answer-span NLL
    ConceptTrainConfig config;
    std::string corpus_fingerprint;
};

// One pre-rendered, pre-encoded training instance: bos + prompt + answer +
// eos, with the token span of the verbalized answer.
struct ConceptExample {
    std::vector<int> tokens;
    std::size_t span_begin = 0;
    std::size_t span_end = 0;
    Provenance query_source = Provenance::original;
};

// Renders every mixture instance with the template (instruction included)
// and encodes it. Demo ids resolve against d; queries against d or d_tilde.
std::vector<ConceptExample> build_concept_corpus(const lm::Lm& model, const Dataset& d,
                                                 const Dataset& d_tilde,
                                                 const std::vector<TrainingInstance>& mixture,
                                                 const TextTemplate& tmpl);

using EpochCallback = std::function<void(const ConceptState&, int epoch)>;

// Soft-prompt learning: rows start from the embeddings of c tokens drawn
// uniformly from the text vocabulary; per instance, the c embeddings are
// prepended, the answer-span NLL and its soft-prompt gradient are computed,
// and a plain gradient step with fixed lr is applied. Instance order is
// reshuffled each epoch. Mode plain keeps only original-query instances.
// Backbone weights are never touched.
ConceptState learn_concept(const lm::Lm& model, const std::vector<ConceptExample>& mixture,
                           const ConceptTrainConfig& cfg, const EpochCallback& on_epoch = {});

// Eq. 6 likelihood: the example text comes first, the c soft embeddings are
// postfixed, and concept position j is scored as the softmax mass of
// reserved id j with that output row tied to soft embedding row j. Returns
// the sum of the c log-probabilities (0 when c == 0).
double score_example(const lm::Lm& model, const ConceptState& state,
                     const std::vector<int>& example_tokens);

// bos + answered serialized example (no instruction unless configured).
std::vector<int> score_sequence_tokens(const lm::Lm& model, const TextTemplate& tmpl,
                                       const Schema& schema, const Record& r,
                                       bool with_instruction);

struct LikelihoodScore {
    std::int64_t id = 0;
    double score = 0;
};

// Scores every record of d, in parallel; output order matches d.records.
std::vector<LikelihoodScore> score_dataset(const lm::Lm& model, const ConceptState& state,
                                           const Dataset& d, const TextTemplate& tmpl,
                                           unsigned max_threads = 0);

struct SelectionConfig {
    std::size_t m = 100;  // candidate set size
    std::size_t k = 4;    // demonstrations per query
    std::uint64_t seed = 0;

    void validate(std::size_t n_scored) const;
};

// Descending score, ties broken by ascending id; the first m are the
// candidate set.
std::vector<std::int64_t> top_candidates(std::vector<LikelihoodScore> scores, std::size_t m);

// Per query key, k ids drawn uniformly without replacement from the
// candidate set with Rng(mix64(seed, key)).sample_indices(m, k).
std::vector<std::vector<std::int64_t>> rank_and_select_keys(
    const std::vector<LikelihoodScore>& scores, const SelectionConfig& cfg,
    const std::vector<std::uint64_t>& query_keys);

// Convenience form with keys 0..n_queries-1.
std::vector<std::vector<std::int64_t>> rank_and_select(const std::vector<LikelihoodScore>& scores,
                                                       const SelectionConfig& cfg,
                                                       std::size_t n_queries);

void save_concept(const ConceptState& state, const std::filesystem::path& path,
                  const std::string& fingerprint);
ConceptState load_concept(const std::filesystem::path& path, std::string* fingerprint = nullptr);

void save_scores_csv(const std::vector<LikelihoodScore>& scores, const std::filesystem::path& path,
                     const std::string& fingerprint);
std::vector<LikelihoodScore> load_scores_csv(const std::filesystem::path& path,
                                             std::string* fingerprint = nullptr);

} // namespace fairicl::latent
