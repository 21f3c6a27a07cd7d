#pragma once

#include "fairicl/augment.hpp"
#include "fairicl/dataset_io.hpp"
#include "fairicl/external_client.hpp"
#include "fairicl/latent_concept.hpp"
#include "fairicl/lm.hpp"
#include "fairicl/strategy.hpp"

#include <filesystem>
#include <map>
#include <optional>

namespace fairicl::exp {

enum class ModelTarget { internal, external };

// Which concept a strategy ranks with: the fair concept trained on the
// hierarchical mixture, the plain concept trained on original queries only,
// or the fair-mode concept trained on the randomly generated mixture.
enum class ConceptVariant { fair, plain, random_aug };

const char* to_string(ConceptVariant v);
std::optional<ConceptVariant> concept_variant_for(infer::StrategyKind kind);

struct ExperimentConfig {
    // inputs
    std::filesystem::path data_csv;
    std::filesystem::path schema_path;
    std::filesystem::path template_path;
    std::filesystem::path output_dir;
    // a sweep reads upstream artifacts here while writing its own outputs
    std::filesystem::path upstream_dir;

    // prepare
    std::size_t train_size = 30000;
    std::size_t test_per_cell = 250;
    bool skip_incomplete = true;

    // augment
    std::size_t n_tilde = 0;  // 0 means n_tilde = train_size
    bool augment_unique = true;

    // internal lm
    lm::LMConfig lm_config{2, 128, 4, 512, 0};  // vocab filled at train time
    int lm_epochs = 2;
    double lm_lr = 1e-3;
    int lm_batch = 8;
    int lm_corpus_q = 2;  // demos per base-corpus training sequence
    // probability that a base-corpus demonstration shares the query's label
    // (0.5 = unrelated); higher values give the desk model stronger
    // in-context behavior
    double lm_corpus_label_match = 0.75;
    int concept_slots = 10;

    // concept
    int concept_c = 10;
    double concept_lr = 1e-4;
    int concept_epochs = 5;
    int concept_q = 2;
    bool score_with_instruction = false;
    double n_tilde_fraction = 1.0;  // prefix truncation of the generated set

    // selection
    std::size_t select_m = 100;
    std::size_t select_k = 4;

    // inference
    std::vector<infer::StrategyKind> strategies{infer::StrategyKind::random,
                                                infer::StrategyKind::fairicl};
    ModelTarget target = ModelTarget::internal;
    infer::ExternalClientConfig client;
    std::size_t runs = 5;
    std::uint64_t base_seed = 7;
    int max_new_tokens = 4;
    unsigned threads = 0;
    std::string fairness_instruction;  // empty keeps the strategy default

    static ExperimentConfig load(const std::filesystem::path& path);
    void validate() const;

    std::size_t effective_n_tilde() const { return n_tilde == 0 ? train_size : n_tilde; }
    std::filesystem::path inputs_dir() const {
        return upstream_dir.empty() ? output_dir : upstream_dir;
    }
};

// Output layout under the stage directory.
struct StagePaths {
    explicit StagePaths(const std::filesystem::path& dir) : root(dir) {}
    std::filesystem::path root;
    std::filesystem::path train_csv() const { return root / "train.csv"; }
    std::filesystem::path test_pool_csv() const { return root / "test_pool.csv"; }
    std::filesystem::path test_csv() const { return root / "test.csv"; }
    std::filesystem::path schema_echo() const { return root / "schema.echo"; }
    std::filesystem::path d_tilde_csv() const { return root / "d_tilde.csv"; }
    std::filesystem::path d_tilde_random_csv() const { return root / "d_tilde_random.csv"; }
    std::filesystem::path lm_ckpt() const { return root / "lm.ficl"; }
    std::filesystem::path concept_ckpt(ConceptVariant v) const {
        return root / (std::string("concept_") + to_string(v) + ".ficl");
    }
    std::filesystem::path concept_epoch_ckpt(ConceptVariant v, int epoch) const {
        return root /
               (std::string("concept_") + to_string(v) + "_ep" + std::to_string(epoch) + ".ficl");
    }
    std::filesystem::path scores_csv(ConceptVariant v) const {
        return root / (std::string("scores_") + to_string(v) + ".csv");
    }
    std::filesystem::path predictions_jsonl(infer::StrategyKind s, std::size_t run) const {
        return root / ("predictions_" + std::string(infer::to_string(s)) + "_run" +
                       std::to_string(run) + ".jsonl");
    }
    std::filesystem::path run_report_json(infer::StrategyKind s, std::size_t run) const {
        return root / ("report_" + std::string(infer::to_string(s)) + "_run" +
                       std::to_string(run) + ".json");
    }
    std::filesystem::path aggregate_json(infer::StrategyKind s) const {
        return root / ("aggregate_" + std::string(infer::to_string(s)) + ".json");
    }
    std::filesystem::path summary_csv() const { return root / "summary.csv"; }
};

// Canonical per-stage config digests; downstream stages refuse artifacts
// whose embedded fingerprint differs from the one recomputed here.
struct Fingerprints {
    std::string prepare, augment, augment_random, lm;
    std::map<ConceptVariant, std::string> concept_fp, scores;
    std::string infer;
};

Fingerprints compute_fingerprints(const ExperimentConfig& cfg);

void stage_prepare(const ExperimentConfig& cfg);
void stage_augment(const ExperimentConfig& cfg);
void stage_train_lm(const ExperimentConfig& cfg);
void stage_learn_concept(const ExperimentConfig& cfg);
void stage_rank(const ExperimentConfig& cfg);
void stage_infer(const ExperimentConfig& cfg);
void stage_evaluate(const ExperimentConfig& cfg);
void run_pipeline(const ExperimentConfig& cfg);

// Loaded artifacts needed for inference/evaluation.
struct ExperimentContext {
    ExperimentConfig cfg;
    std::shared_ptr<Schema> schema;
    TextTemplate tmpl;
    Dataset train;
    Dataset test_pool;
    lm::Lm model;
    std::map<ConceptVariant, latent::ConceptState> concepts;
    std::map<ConceptVariant, std::vector<latent::LikelihoodScore>> scores;
};

ExperimentContext load_context(const ExperimentConfig& cfg, bool need_lm, bool need_concepts);

// Per-run seed = mix64(mix64(base_seed, kRunStream), run index).
std::uint64_t run_seed(std::uint64_t base_seed, std::size_t run);

// One strategy, `runs` independent runs: draws the run's stratified test
// split from the pool, selects demos per query, predicts every query, and
// returns the per-run records (also written to disk when `persist`).
std::vector<std::vector<infer::PredictionRecord>> run_experiment(const ExperimentContext& ctx,
                                                                 infer::StrategyKind strategy,
                                                                 bool persist);

// Corpus for base-LM training: per-record ICL-formatted sequences (q demos +
// query + answer) plus single answered examples.
std::vector<std::string> build_lm_corpus(const Dataset& train, const TextTemplate& tmpl, int q,
                                         std::uint64_t seed, double label_match = 0.5);

// Texts covering the whole render vocabulary (every domain value and phrase
// in gendered, neutral and redacted modes, instruction and answer lines) so
// encoding never hits <unk> on pipeline prompts.
std::vector<std::string> vocabulary_coverage_texts(const Schema& schema, const TextTemplate& tmpl,
                                                   const std::string& fairness_instruction);

enum class SweepParam { q, k, n_tilde_fraction, epochs };
SweepParam sweep_param_from(const std::string& name);

// One pipeline per value, nested under output_dir/sweep_<param>/<value>,
// reusing upstream artifacts that the parameter does not affect. Emits a
// combined sweep_summary.csv.
void run_sweep(const ExperimentConfig& cfg, SweepParam param, const std::vector<double>& values);

} // namespace fairicl::exp
