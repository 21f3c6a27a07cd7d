#include "fairicl/experiment.hpp"

#include "fairicl/checkpoint.hpp"
#include "fairicl/kvfile.hpp"
#include "fairicl/parallel.hpp"
#include "fairicl/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cinttypes>
#include <fstream>
#include <set>
#include <sstream>

namespace fairicl::exp {

namespace {

// Stage seed streams, all derived from base_seed through mix64.
constexpr std::uint64_t kPrepareSplitStream = 0x5052455041524531ULL;
constexpr std::uint64_t kPrepareTestStream = 0x5052455041524532ULL;
constexpr std::uint64_t kAugmentStream = 0x4155474d454e5431ULL;
constexpr std::uint64_t kAugmentRandomStream = 0x4155474d454e5432ULL;
constexpr std::uint64_t kMixtureStream = 0x4d49585455524531ULL;
constexpr std::uint64_t kLmCorpusStream = 0x4c4d434f52505553ULL;
constexpr std::uint64_t kLmTrainStream = 0x4c4d545241494e31ULL;
constexpr std::uint64_t kConceptStream = 0x434f4e4345505431ULL;
constexpr std::uint64_t kRunStream = 0x52554e5345454431ULL;

std::string fp_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

std::uint64_t digest_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for digest: " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        h = fnv1a64(std::string_view(buf, std::size_t(in.gcount())), h);
    return h;
}

void ensure_dir(const std::filesystem::path& dir) { std::filesystem::create_directories(dir); }

// Resolves a stage input: prefer the sweep's own output, fall back upstream.
std::filesystem::path resolve_input(const ExperimentConfig& cfg,
                                    const std::filesystem::path& rel) {
    const auto own = cfg.output_dir / rel;
    if (std::filesystem::exists(own)) return own;
    return cfg.inputs_dir() / rel;
}

void require_fingerprint(const std::string& have, const std::string& want,
                         const std::filesystem::path& file) {
    if (have != want)
        throw std::runtime_error(file.string() + ": fingerprint mismatch (artifact " + have +
                                 ", config expects " + want + ")");
}

latent::ConceptTrainConfig concept_config(const ExperimentConfig& cfg, ConceptVariant v) {
    latent::ConceptTrainConfig out;
    out.c = cfg.concept_c;
    out.lr = cfg.concept_lr;
    out.epochs = cfg.concept_epochs;
    out.q = cfg.concept_q;
    out.mode = v == ConceptVariant::plain ? latent::ConceptMode::plain : latent::ConceptMode::fair;
    out.seed = mix64(mix64(cfg.base_seed, kConceptStream), std::uint64_t(v));
    out.score_with_instruction = cfg.score_with_instruction;
    return out;
}

std::set<ConceptVariant> required_variants(const ExperimentConfig& cfg) {
    std::set<ConceptVariant> out;
    for (auto s : cfg.strategies) {
        if (const auto v = concept_variant_for(s)) out.insert(*v);
    }
    return out;
}

struct SummaryRow {
    std::string strategy;
    metrics::AggregateReport agg;
};

void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows,
                       const std::string& fingerprint) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "# fingerprint=" << fingerprint << '\n';
    out << "strategy,acc_mean,acc_std,f1_mean,f1_std,sp_mean,sp_std,eo_mean,eo_std\n";
    char buf[256];
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                      row.strategy.c_str(), row.agg.accuracy.mean, row.agg.accuracy.stddev,
                      row.agg.f1.mean, row.agg.f1.stddev, row.agg.delta_sp.mean,
                      row.agg.delta_sp.stddev, row.agg.delta_eo.mean, row.agg.delta_eo.stddev);
        out << buf;
    }
}

} // namespace

const char* to_string(ConceptVariant v) {
    switch (v) {
        case ConceptVariant::fair: return "fair";
        case ConceptVariant::plain: return "plain";
        case ConceptVariant::random_aug: return "random";
    }
    return "?";
}

std::optional<ConceptVariant> concept_variant_for(infer::StrategyKind kind) {
    switch (kind) {
        case infer::StrategyKind::latent_concept: return ConceptVariant::plain;
        case infer::StrategyKind::fairicl: return ConceptVariant::fair;
        case infer::StrategyKind::fairicl_lc: return ConceptVariant::fair;
        case infer::StrategyKind::fairicl_r: return ConceptVariant::random_aug;
        default: return std::nullopt;
    }
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    ExperimentConfig cfg;
    const auto base = path.parent_path();
    auto rel = [&](const std::string& p) {
        const std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : base / fp;
    };
    for (const auto& e : load_kv_file(path)) {
        const std::string& v = e.value;
        if (e.key == "data_csv") cfg.data_csv = rel(v);
        else if (e.key == "schema") cfg.schema_path = rel(v);
        else if (e.key == "template") cfg.template_path = rel(v);
        else if (e.key == "output") cfg.output_dir = rel(v);
        else if (e.key == "train_size") cfg.train_size = std::stoull(v);
        else if (e.key == "test_per_cell") cfg.test_per_cell = std::stoull(v);
        else if (e.key == "skip_incomplete") cfg.skip_incomplete = v == "true" || v == "1";
        else if (e.key == "n_tilde") cfg.n_tilde = std::stoull(v);
        else if (e.key == "augment_unique") cfg.augment_unique = v == "true" || v == "1";
        else if (e.key == "lm_layers") cfg.lm_config.layers = std::stoi(v);
        else if (e.key == "lm_dim") cfg.lm_config.dim = std::stoi(v);
        else if (e.key == "lm_heads") cfg.lm_config.heads = std::stoi(v);
        else if (e.key == "lm_context") cfg.lm_config.context_len = std::stoi(v);
        else if (e.key == "lm_epochs") cfg.lm_epochs = std::stoi(v);
        else if (e.key == "lm_lr") cfg.lm_lr = std::stod(v);
        else if (e.key == "lm_batch") cfg.lm_batch = std::stoi(v);
        else if (e.key == "lm_corpus_q") cfg.lm_corpus_q = std::stoi(v);
        else if (e.key == "lm_corpus_label_match") cfg.lm_corpus_label_match = std::stod(v);
        else if (e.key == "concept_slots") cfg.concept_slots = std::stoi(v);
        else if (e.key == "concept_c") cfg.concept_c = std::stoi(v);
        else if (e.key == "concept_lr") cfg.concept_lr = std::stod(v);
        else if (e.key == "concept_epochs") cfg.concept_epochs = std::stoi(v);
        else if (e.key == "concept_q") cfg.concept_q = std::stoi(v);
        else if (e.key == "score_with_instruction") cfg.score_with_instruction = v == "true" || v == "1";
        else if (e.key == "n_tilde_fraction") cfg.n_tilde_fraction = std::stod(v);
        else if (e.key == "select_m") cfg.select_m = std::stoull(v);
        else if (e.key == "select_k") cfg.select_k = std::stoull(v);
        else if (e.key == "strategies") {
            cfg.strategies.clear();
            for (const auto& name : split_char(v, ','))
                if (!trim(name).empty()) cfg.strategies.push_back(infer::strategy_from(trim(name)));
        } else if (e.key == "target") {
            if (v == "internal") cfg.target = ModelTarget::internal;
            else if (v == "external") cfg.target = ModelTarget::external;
            else throw std::runtime_error("config: unknown target " + v);
        } else if (e.key == "runs") cfg.runs = std::stoull(v);
        else if (e.key == "base_seed") cfg.base_seed = std::stoull(v);
        else if (e.key == "max_new_tokens") cfg.max_new_tokens = std::stoi(v);
        else if (e.key == "threads") cfg.threads = unsigned(std::stoul(v));
        else if (e.key == "fairness_instruction") cfg.fairness_instruction = v;
        else if (e.key == "endpoint") cfg.client.endpoint = v;
        else if (e.key == "model_name") cfg.client.model = v;
        else if (e.key == "auth_env") cfg.client.auth_env = v;
        else if (e.key == "timeout_ms") cfg.client.timeout_ms = std::stoi(v);
        else if (e.key == "max_retries") cfg.client.max_retries = std::stoi(v);
        else if (e.key == "backoff_base_ms") cfg.client.backoff_base_ms = std::stoi(v);
        else if (e.key == "max_inflight") cfg.client.max_inflight = unsigned(std::stoul(v));
        else throw std::runtime_error("config line " + std::to_string(e.line) + ": unknown key '" +
                                      e.key + "'");
    }
    cfg.client.max_tokens = cfg.max_new_tokens;
    return cfg;
}

void ExperimentConfig::validate() const {
    if (!std::filesystem::exists(data_csv))
        throw std::runtime_error("config: data_csv not found: " + data_csv.string());
    if (!std::filesystem::exists(schema_path))
        throw std::runtime_error("config: schema not found: " + schema_path.string());
    if (!std::filesystem::exists(template_path))
        throw std::runtime_error("config: template not found: " + template_path.string());
    if (output_dir.empty()) throw std::runtime_error("config: output directory required");
    if (train_size == 0) throw std::runtime_error("config: train_size must be positive");
    // vocab_size is filled from the tokenizer at train time
    if (lm_config.layers < 1 || lm_config.dim < 1 || lm_config.heads < 1 ||
        lm_config.context_len < 1)
        throw std::runtime_error("config: lm dimensions must be positive");
    if (lm_config.dim % lm_config.heads != 0)
        throw std::runtime_error("config: lm dim must be divisible by heads");
    if (lm_epochs < 1 || lm_batch < 1) throw std::runtime_error("config: lm training counts must be positive");
    if (lm_corpus_label_match < 0 || lm_corpus_label_match > 1)
        throw std::runtime_error("config: lm_corpus_label_match must be in [0,1]");
    if (concept_c < 1) throw std::runtime_error("config: concept_c must be >= 1");
    if (concept_epochs < 1) throw std::runtime_error("config: concept_epochs must be >= 1");
    if (!(concept_lr > 0)) throw std::runtime_error("config: concept_lr must be > 0");
    if (concept_q < 0) throw std::runtime_error("config: concept_q must be >= 0");
    if (concept_c > concept_slots)
        throw std::runtime_error("config: concept_c exceeds concept_slots");
    if (n_tilde_fraction < 0 || n_tilde_fraction > 1)
        throw std::runtime_error("config: n_tilde_fraction must be in [0,1]");
    if (select_k > select_m) throw std::runtime_error("config: select_k exceeds select_m");
    if (runs < 1) throw std::runtime_error("config: runs must be >= 1");
    if (max_new_tokens < 1) throw std::runtime_error("config: max_new_tokens must be >= 1");
    if (strategies.empty()) throw std::runtime_error("config: at least one strategy required");
    if (target == ModelTarget::external) client.validate();
    for (auto s : strategies) {
        if (infer::needs_internal_lm(s) && target != ModelTarget::internal)
            throw std::runtime_error("config: fairicl_lc runs on the internal model only");
    }
}

Fingerprints compute_fingerprints(const ExperimentConfig& cfg) {
    Fingerprints fp;
    auto h = [](const std::string& s) { return fp_hex(fnv1a64(s)); };
    std::ostringstream prep;
    prep << "prepare|" << fp_hex(digest_file(cfg.data_csv)) << '|'
         << fp_hex(digest_file(cfg.schema_path)) << '|' << cfg.train_size << '|'
         << cfg.test_per_cell << '|' << cfg.skip_incomplete << '|' << cfg.base_seed;
    fp.prepare = h(prep.str());

    auto aug = [&](const char* mode, std::uint64_t stream) {
        std::ostringstream s;
        s << "augment|" << fp.prepare << '|' << cfg.effective_n_tilde() << '|' << mode << '|'
          << cfg.augment_unique << '|' << mix64(cfg.base_seed, stream);
        return h(s.str());
    };
    fp.augment = aug("hierarchical", kAugmentStream);
    fp.augment_random = aug("random", kAugmentRandomStream);

    std::ostringstream lm_s;
    lm_s << "lm|" << fp.prepare << '|' << fp_hex(digest_file(cfg.template_path)) << '|'
         << cfg.lm_config.layers << '|' << cfg.lm_config.dim << '|' << cfg.lm_config.heads << '|'
         << cfg.lm_config.context_len << '|' << cfg.lm_epochs << '|' << cfg.lm_lr << '|'
         << cfg.lm_batch << '|' << cfg.lm_corpus_q << '|' << cfg.lm_corpus_label_match << '|'
         << cfg.concept_slots;
    fp.lm = h(lm_s.str());

    for (ConceptVariant v :
         {ConceptVariant::fair, ConceptVariant::plain, ConceptVariant::random_aug}) {
        const auto cc = concept_config(cfg, v);
        std::string parent = v == ConceptVariant::random_aug ? fp.augment_random
                             : v == ConceptVariant::fair     ? fp.augment
                                                             : std::string("none");
        std::ostringstream s;
        s << "concept|" << fp.lm << '|' << parent << '|' << cc.c << '|' << cc.lr << '|'
          << cc.epochs << '|' << cc.q << '|' << int(cc.mode) << '|' << cc.seed << '|'
          << cfg.n_tilde_fraction;
        fp.concept_fp[v] = h(s.str());
        fp.scores[v] = h("rank|" + fp.concept_fp[v] + '|' +
                         std::to_string(cfg.score_with_instruction));
    }

    std::ostringstream inf;
    inf << "infer|" << fp.lm << '|' << cfg.select_m << '|' << cfg.select_k << '|' << cfg.runs
        << '|' << cfg.base_seed << '|' << int(cfg.target) << '|' << cfg.max_new_tokens;
    for (auto s : cfg.strategies) inf << '|' << infer::to_string(s);
    fp.infer = h(inf.str());
    return fp;
}

std::uint64_t run_seed(std::uint64_t base_seed, std::size_t run) {
    return mix64(mix64(base_seed, kRunStream), run);
}

void stage_prepare(const ExperimentConfig& cfg) {
    cfg.validate();
    ensure_dir(cfg.output_dir);
    const auto fp = compute_fingerprints(cfg);
    StagePaths out(cfg.output_dir);

    auto schema = load_schema(cfg.schema_path);
    LoadOptions opts;
    opts.skip_incomplete = cfg.skip_incomplete;
    LoadReport report;
    Dataset full = load_csv(cfg.data_csv, schema, opts, &report);
    if (report.skipped_incomplete > 0)
        std::fprintf(stderr, "prepare: skipped %zu rows with missing values\n",
                     report.skipped_incomplete);
    if (full.records.size() < cfg.train_size)
        throw std::runtime_error("prepare: dataset has " + std::to_string(full.records.size()) +
                                 " rows, train_size wants " + std::to_string(cfg.train_size));

    // Uniform subsample for D; the rest is the held-out test pool.
    Rng rng(mix64(cfg.base_seed, kPrepareSplitStream));
    auto picks = rng.sample_indices(full.records.size(), cfg.train_size);
    std::sort(picks.begin(), picks.end());
    std::vector<bool> in_train(full.records.size(), false);
    Dataset train;
    train.schema = schema;
    train.provenance = Provenance::original;
    for (std::size_t i : picks) {
        in_train[i] = true;
        train.records.push_back(full.records[i]);
    }
    Dataset pool;
    pool.schema = schema;
    pool.provenance = Provenance::test;
    for (std::size_t i = 0; i < full.records.size(); ++i)
        if (!in_train[i]) pool.records.push_back(full.records[i]);

    save_csv(train, out.train_csv(), fp.prepare);
    save_csv(pool, out.test_pool_csv(), fp.prepare);
    if (cfg.test_per_cell > 0) {
        const Dataset test = stratified_test_sample(pool, cfg.test_per_cell,
                                                    mix64(cfg.base_seed, kPrepareTestStream));
        save_csv(test, out.test_csv(), fp.prepare);
    } else {
        Dataset empty;
        empty.schema = schema;
        empty.provenance = Provenance::test;
        save_csv(empty, out.test_csv(), fp.prepare);
        std::fprintf(stderr, "prepare: test_per_cell is 0, wrote an empty test split\n");
    }
    save_schema(*schema, out.schema_echo());
}

namespace {

Dataset load_stage_dataset(const ExperimentConfig& cfg, const std::filesystem::path& rel,
                           std::shared_ptr<Schema> schema, const std::string& want_fp) {
    const auto path = resolve_input(cfg, rel);
    require_fingerprint(csv_fingerprint(path), want_fp, path);
    return load_csv(path, std::move(schema));
}

} // namespace

void stage_augment(const ExperimentConfig& cfg) {
    cfg.validate();
    ensure_dir(cfg.output_dir);
    const auto fp = compute_fingerprints(cfg);
    StagePaths out(cfg.output_dir);

    auto schema = load_schema(cfg.schema_path);
    Dataset train = load_stage_dataset(cfg, "train.csv", schema, fp.prepare);

    GenerationConfig gen;
    gen.n_tilde = cfg.effective_n_tilde();
    gen.unique = cfg.augment_unique;
    gen.mode = GenerationMode::hierarchical;
    gen.seed = mix64(cfg.base_seed, kAugmentStream);
    const Dataset d_tilde = generate_hierarchical(train, schema->hierarchy, gen);
    save_csv(d_tilde, out.d_tilde_csv(), fp.augment);

    if (required_variants(cfg).count(ConceptVariant::random_aug) > 0) {
        GenerationConfig rnd = gen;
        rnd.mode = GenerationMode::random;
        rnd.seed = mix64(cfg.base_seed, kAugmentRandomStream);
        save_csv(generate_random(train, rnd), out.d_tilde_random_csv(), fp.augment_random);
    }
}

std::vector<std::string> vocabulary_coverage_texts(const Schema& schema, const TextTemplate& tmpl,
                                                   const std::string& fairness_instruction) {
    std::vector<std::string> texts;
    texts.push_back("### Instruction: " + tmpl.instruction);
    if (!fairness_instruction.empty())
        texts.push_back("### Instruction: " + fairness_instruction + " " + tmpl.instruction);
    texts.push_back("### Question: " + tmpl.question);
    texts.push_back(std::string(kAnswerPrefix) + " " + verbalize(true));
    texts.push_back(std::string(kAnswerPrefix) + " " + verbalize(false));

    // One render per (attribute value, sensitive value, render mode) with all
    // other attributes pinned to their first domain value.
    const int sens = schema.sensitive_index();
    Record probe;
    probe.values.assign(schema.attributes.size(), 0);
    std::vector<RenderOptions> modes(2);
    modes[1].include_sensitive = false;
    modes[1].neutral_pronouns = true;
    const std::size_t sens_values =
        sens < 0 ? 1 : schema.attributes[std::size_t(sens)].domain.size();
    for (std::size_t a = 0; a < schema.attributes.size(); ++a) {
        if (schema.attributes[a].role == AttrRole::label) continue;
        for (std::size_t v = 0; v < schema.attributes[a].domain.size(); ++v) {
            for (std::size_t sv = 0; sv < sens_values; ++sv) {
                Record r = probe;
                if (sens >= 0) r.values[std::size_t(sens)] = std::int32_t(sv);
                r.values[a] = std::int32_t(v);
                for (const auto& opts : modes)
                    texts.push_back(serialize_record(r, tmpl, schema, opts).profile);
            }
        }
    }
    return texts;
}

std::vector<std::string> build_lm_corpus(const Dataset& train, const TextTemplate& tmpl, int q,
                                         std::uint64_t seed, double label_match) {
    std::vector<std::string> corpus;
    corpus.reserve(train.records.size() * 2);

    std::vector<std::vector<std::size_t>> by_label(
        train.schema->attributes[std::size_t(train.schema->label_index())].domain.size());
    for (std::size_t i = 0; i < train.records.size(); ++i)
        by_label[std::size_t(train.records[i].values[std::size_t(train.schema->label_index())])]
            .push_back(i);

    // ICL-shaped sequences with 0..q demonstrations, cycling, so every prompt
    // length the inference side uses has trained positions. With probability
    // label_match a demonstration is drawn from the query's label class:
    // pretraining documents share a latent theme, which is what gives the
    // model demonstration sensitivity at inference time.
    RenderOptions demo_opts;
    demo_opts.include_answer = true;
    for (std::size_t i = 0; i < train.records.size(); ++i) {
        Rng rng(mix64(seed, i));
        const Record& query = train.records[i];
        const std::size_t use = q == 0 ? 0 : i % std::size_t(q + 1);
        std::vector<SerializedExample> demos;
        for (std::size_t di = 0; di < use; ++di) {
            const bool match = rng.real01() < label_match;
            std::size_t pick = i;
            for (int guard = 0; pick == i && guard < 64; ++guard) {
                if (match) {
                    const auto& pool = by_label[std::size_t(
                        query.values[std::size_t(train.schema->label_index())])];
                    pick = pool[rng.below(pool.size())];
                } else {
                    pick = rng.below(train.records.size());
                }
            }
            demos.push_back(serialize_record(train.records[pick], tmpl, *train.schema, demo_opts));
        }
        const auto ser = serialize_record(query, tmpl, *train.schema, RenderOptions{});
        corpus.push_back(
            build_training_sequence(tmpl.instruction, demos, ser, train.label_positive(query))
                .full_text);
    }
    // Bare answered blocks in the scoring format (no instruction).
    for (const auto& rec : train.records) {
        const auto ser = serialize_record(rec, tmpl, *train.schema, RenderOptions{});
        corpus.push_back(
            build_training_sequence("", {}, ser, train.label_positive(rec)).full_text);
    }
    return corpus;
}

void stage_train_lm(const ExperimentConfig& cfg) {
    cfg.validate();
    ensure_dir(cfg.output_dir);
    const auto fp = compute_fingerprints(cfg);
    StagePaths out(cfg.output_dir);

    auto schema = load_schema(cfg.schema_path);
    const TextTemplate tmpl = load_template(cfg.template_path);
    tmpl.validate_against(*schema);
    Dataset train = load_stage_dataset(cfg, "train.csv", schema, fp.prepare);

    const auto corpus = build_lm_corpus(train, tmpl, cfg.lm_corpus_q,
                                        mix64(cfg.base_seed, kLmCorpusStream),
                                        cfg.lm_corpus_label_match);
    auto coverage = vocabulary_coverage_texts(*schema, tmpl, cfg.fairness_instruction);
    std::vector<std::string> vocab_texts = corpus;
    vocab_texts.insert(vocab_texts.end(), coverage.begin(), coverage.end());

    lm::Lm model;
    model.tokenizer = Tokenizer::build(vocab_texts, cfg.concept_slots);
    model.config = cfg.lm_config;
    model.config.vocab_size = model.tokenizer.vocab_size();

    lm::BaseTrainConfig train_cfg;
    train_cfg.lr = cfg.lm_lr;
    train_cfg.epochs = cfg.lm_epochs;
    train_cfg.batch = cfg.lm_batch;
    train_cfg.seed = mix64(cfg.base_seed, kLmTrainStream);
    lm::BaseTrainStats stats;
    model.params = lm::train_base_lm(corpus, model.config, model.tokenizer, train_cfg, &stats);
    std::fprintf(stderr, "train-lm: held-out nll %.4f -> %.4f over %d epochs\n",
                 stats.initial_heldout_nll, stats.final_heldout_nll, cfg.lm_epochs);
    save_lm(model, out.lm_ckpt(), fp.lm);
}

void stage_learn_concept(const ExperimentConfig& cfg) {
    cfg.validate();
    ensure_dir(cfg.output_dir);
    const auto fp = compute_fingerprints(cfg);
    StagePaths out(cfg.output_dir);

    auto schema = load_schema(cfg.schema_path);
    const TextTemplate tmpl = load_template(cfg.template_path);
    Dataset train = load_stage_dataset(cfg, "train.csv", schema, fp.prepare);

    std::string lm_fp;
    const lm::Lm model = load_lm(resolve_input(cfg, "lm.ficl"), &lm_fp);
    require_fingerprint(lm_fp, fp.lm, resolve_input(cfg, "lm.ficl"));

    for (ConceptVariant v : required_variants(cfg)) {
        Dataset d_tilde;
        d_tilde.schema = schema;
        d_tilde.provenance = Provenance::augmented;
        if (v == ConceptVariant::fair) {
            d_tilde = load_stage_dataset(cfg, "d_tilde.csv", schema, fp.augment);
            const std::size_t keep =
                std::size_t(cfg.n_tilde_fraction * double(d_tilde.records.size()));
            d_tilde.records.resize(keep);
        } else if (v == ConceptVariant::random_aug) {
            d_tilde = load_stage_dataset(cfg, "d_tilde_random.csv", schema, fp.augment_random);
        }
        const auto mixture = build_training_mixture(train, d_tilde, std::size_t(cfg.concept_q),
                                                    mix64(cfg.base_seed, kMixtureStream));
        const auto corpus = latent::build_concept_corpus(model, train, d_tilde, mixture, tmpl);

        auto cc = concept_config(cfg, v);
        const std::string corpus_fp =
            fp_hex(fnv1a64("corpus|" + fp.lm + '|' + std::to_string(corpus.size())));
        // Epoch checkpoints are stamped with the fingerprint a config with
        // that epoch count would compute, so epoch sweeps verify cleanly.
        auto epoch_fp = [&](int epochs) {
            ExperimentConfig tmp = cfg;
            tmp.concept_epochs = epochs;
            return compute_fingerprints(tmp).concept_fp.at(v);
        };
        const auto on_epoch = [&](const latent::ConceptState& st, int epoch) {
            latent::ConceptState snap = st;
            snap.config.epochs = epoch;
            snap.corpus_fingerprint = corpus_fp;
            save_concept(snap, out.concept_epoch_ckpt(v, epoch), epoch_fp(epoch));
        };
        latent::ConceptState state = latent::learn_concept(model, corpus, cc, on_epoch);
        state.corpus_fingerprint = corpus_fp;
        save_concept(state, out.concept_ckpt(v), fp.concept_fp.at(v));
        std::fprintf(stderr, "learn-concept[%s]: mean nll %.4f -> %.4f\n", to_string(v),
                     state.history.front(), state.history.back());
    }
}

namespace {

latent::ConceptState load_concept_checked(const ExperimentConfig& cfg, ConceptVariant v,
                                          const Fingerprints& fp) {
    // The plain checkpoint first; epoch sweeps fall back to the matching
    // per-epoch snapshot from the upstream training run.
    const StagePaths own(cfg.output_dir);
    std::vector<std::filesystem::path> candidates = {
        resolve_input(cfg, own.concept_ckpt(v).filename()),
        resolve_input(cfg, own.concept_epoch_ckpt(v, cfg.concept_epochs).filename()),
    };
    std::string last_err;
    for (const auto& path : candidates) {
        if (!std::filesystem::exists(path)) continue;
        std::string have;
        latent::ConceptState state = latent::load_concept(path, &have);
        if (have == fp.concept_fp.at(v)) return state;
        last_err = path.string() + ": fingerprint mismatch (artifact " + have + ", config expects " +
                   fp.concept_fp.at(v) + ")";
    }
    if (last_err.empty())
        last_err = "no concept checkpoint found for variant " + std::string(to_string(v));
    throw std::runtime_error(last_err);
}

} // namespace

void stage_rank(const ExperimentConfig& cfg) {
    cfg.validate();
    ensure_dir(cfg.output_dir);
    const auto fp = compute_fingerprints(cfg);
    StagePaths out(cfg.output_dir);

    auto schema = load_schema(cfg.schema_path);
    const TextTemplate tmpl = load_template(cfg.template_path);
    Dataset train = load_stage_dataset(cfg, "train.csv", schema, fp.prepare);

    std::string lm_fp;
    const lm::Lm model = load_lm(resolve_input(cfg, "lm.ficl"), &lm_fp);
    require_fingerprint(lm_fp, fp.lm, resolve_input(cfg, "lm.ficl"));

    for (ConceptVariant v : required_variants(cfg)) {
        const auto state = load_concept_checked(cfg, v, fp);
        const auto scores = latent::score_dataset(model, state, train, tmpl, cfg.threads);
        latent::save_scores_csv(scores, out.scores_csv(v), fp.scores.at(v));
    }
}

ExperimentContext load_context(const ExperimentConfig& cfg, bool need_lm, bool need_concepts) {
    cfg.validate();
    const auto fp = compute_fingerprints(cfg);
    ExperimentContext ctx;
    ctx.cfg = cfg;
    ctx.schema = load_schema(cfg.schema_path);
    ctx.tmpl = load_template(cfg.template_path);
    ctx.tmpl.validate_against(*ctx.schema);
    ctx.train = load_stage_dataset(cfg, "train.csv", ctx.schema, fp.prepare);
    ctx.test_pool = load_stage_dataset(cfg, "test_pool.csv", ctx.schema, fp.prepare);

    const bool internal = cfg.target == ModelTarget::internal;
    const bool any_lc = std::any_of(cfg.strategies.begin(), cfg.strategies.end(),
                                    [](auto s) { return infer::needs_internal_lm(s); });
    if (need_lm && (internal || any_lc)) {
        std::string lm_fp;
        ctx.model = load_lm(resolve_input(cfg, "lm.ficl"), &lm_fp);
        require_fingerprint(lm_fp, fp.lm, resolve_input(cfg, "lm.ficl"));
    }
    if (need_concepts) {
        for (ConceptVariant v : required_variants(cfg)) {
            ctx.concepts[v] = load_concept_checked(cfg, v, fp);
            const auto path = resolve_input(cfg, StagePaths(cfg.output_dir).scores_csv(v).filename());
            std::string have;
            ctx.scores[v] = latent::load_scores_csv(path, &have);
            require_fingerprint(have, fp.scores.at(v), path);
        }
    }
    return ctx;
}

std::vector<std::vector<infer::PredictionRecord>> run_experiment(const ExperimentContext& ctx,
                                                                 infer::StrategyKind strategy,
                                                                 bool persist) {
    const ExperimentConfig& cfg = ctx.cfg;
    const auto fp = compute_fingerprints(cfg);
    StagePaths out(cfg.output_dir);
    const int sens = ctx.schema->sensitive_index();
    const int lab = ctx.schema->label_index();

    const std::vector<latent::LikelihoodScore>* scores = nullptr;
    const lm::DenseMatrix<float>* soft_prefix = nullptr;
    if (const auto v = concept_variant_for(strategy)) {
        if (strategy == infer::StrategyKind::fairicl_lc) {
            const auto it = ctx.concepts.find(*v);
            if (it == ctx.concepts.end())
                throw std::runtime_error("fairicl_lc needs the fair concept state");
            soft_prefix = &it->second.embeddings;
        }
        const auto it = ctx.scores.find(*v);
        if (it == ctx.scores.end())
            throw std::runtime_error(std::string(infer::to_string(strategy)) +
                                     " needs scores for concept variant " + to_string(*v));
        scores = &it->second;
    }

    std::optional<infer::CompletionClient> client;
    if (cfg.target == ModelTarget::external && strategy != infer::StrategyKind::fairicl_lc)
        client.emplace(cfg.client);

    std::vector<std::vector<infer::PredictionRecord>> all_runs;
    for (std::size_t r = 0; r < cfg.runs; ++r) {
        const std::uint64_t seed = run_seed(cfg.base_seed, r);
        const Dataset test = stratified_test_sample(ctx.test_pool, cfg.test_per_cell, seed);

        infer::StrategySpec spec;
        spec.kind = strategy;
        spec.k = cfg.select_k;
        spec.seed = seed;
        if (!cfg.fairness_instruction.empty()) spec.fairness_instruction = cfg.fairness_instruction;
        infer::ConceptInputs concept_inputs;
        concept_inputs.scores = scores;
        concept_inputs.m = cfg.select_m;

        std::vector<infer::PredictionRecord> records(test.records.size());
        const unsigned max_threads =
            client.has_value() ? std::min(cfg.client.max_inflight,
                                          cfg.threads == 0 ? cfg.client.max_inflight : cfg.threads)
                               : cfg.threads;
        parallel_for(
            test.records.size(),
            [&](std::size_t qi) {
                const Record& query = test.records[qi];
                const auto sel = infer::select_demos(spec, ctx.train, query.id,
                                                     scores ? &concept_inputs : nullptr);
                const auto prompt_spec = infer::make_prompt_spec(sel, query, ctx.tmpl, *ctx.schema);
                const std::string prompt = build_icl_prompt(prompt_spec);

                infer::PredictionRecord rec;
                rec.query_id = query.id;
                rec.group = test.value_of(query, sens);
                rec.true_label = test.value_of(query, lab);
                rec.label_positive = test.label_positive(query);
                rec.strategy = infer::to_string(strategy);
                rec.seed = seed;
                rec.demo_ids = sel.source_ids;

                std::optional<bool> parsed;
                if (client.has_value()) {
                    const auto res = client->complete(prompt);
                    rec.raw_text = res.ok ? res.text : res.error;
                    rec.failed = !res.ok;
                    if (res.ok) parsed = parse_answer(res.text);
                } else {
                    const auto pred = infer::predict_internal(ctx.model, soft_prefix, prompt,
                                                              cfg.max_new_tokens);
                    rec.raw_text = pred.raw;
                    parsed = pred.parsed;
                }
                if (!rec.failed) {
                    rec.parse_ok = parsed.has_value();
                    rec.predicted_positive = parsed.value_or(false);
                }
                records[qi] = std::move(rec);
            },
            max_threads);

        if (persist) save_predictions_jsonl(records, out.predictions_jsonl(strategy, r), fp.infer);
        all_runs.push_back(std::move(records));
    }
    return all_runs;
}

void stage_infer(const ExperimentConfig& cfg) {
    const bool need_concepts = std::any_of(cfg.strategies.begin(), cfg.strategies.end(),
                                           [](auto s) { return infer::needs_concept(s); });
    const ExperimentContext ctx = load_context(cfg, true, need_concepts);
    ensure_dir(cfg.output_dir);
    for (auto strategy : cfg.strategies) run_experiment(ctx, strategy, true);
}

void stage_evaluate(const ExperimentConfig& cfg) {
    cfg.validate();
    ensure_dir(cfg.output_dir);
    const auto fp = compute_fingerprints(cfg);
    StagePaths out(cfg.output_dir);

    std::vector<SummaryRow> rows;
    for (auto strategy : cfg.strategies) {
        std::vector<metrics::EvalReport> reports;
        for (std::size_t r = 0; r < cfg.runs; ++r) {
            const auto path = resolve_input(cfg, out.predictions_jsonl(strategy, r).filename());
            std::string have;
            const auto records = infer::load_predictions_jsonl(path, &have);
            require_fingerprint(have, fp.infer, path);
            auto report = metrics::evaluate(infer::to_outcomes(records),
                                            records.empty() ? 0 : records.front().seed);
            std::ofstream rep(out.run_report_json(strategy, r), std::ios::binary);
            nlohmann::ordered_json j = nlohmann::ordered_json::parse(metrics::to_json(report));
            j["fingerprint"] = fp.infer;
            rep << j.dump(2) << '\n';
            reports.push_back(std::move(report));
        }
        const auto agg = metrics::aggregate(reports);
        std::ofstream aggf(out.aggregate_json(strategy), std::ios::binary);
        nlohmann::ordered_json j = nlohmann::ordered_json::parse(metrics::to_json(agg));
        j["fingerprint"] = fp.infer;
        j["strategy"] = infer::to_string(strategy);
        aggf << j.dump(2) << '\n';
        rows.push_back(SummaryRow{infer::to_string(strategy), agg});
    }
    write_summary_csv(out.summary_csv(), rows, fp.infer);
}

void run_pipeline(const ExperimentConfig& cfg) {
    stage_prepare(cfg);
    stage_augment(cfg);
    stage_train_lm(cfg);
    const bool need_concepts = std::any_of(cfg.strategies.begin(), cfg.strategies.end(),
                                           [](auto s) { return infer::needs_concept(s); });
    if (need_concepts) {
        stage_learn_concept(cfg);
        stage_rank(cfg);
    }
    stage_infer(cfg);
    stage_evaluate(cfg);
}

SweepParam sweep_param_from(const std::string& name) {
    if (name == "q") return SweepParam::q;
    if (name == "k") return SweepParam::k;
    if (name == "n_tilde_fraction") return SweepParam::n_tilde_fraction;
    if (name == "epochs") return SweepParam::epochs;
    throw std::runtime_error("unknown sweep parameter: " + name +
                             " (expected q, k, n_tilde_fraction or epochs)");
}

void run_sweep(const ExperimentConfig& cfg, SweepParam param, const std::vector<double>& values) {
    if (values.empty()) throw std::runtime_error("sweep: no values");
    const char* pname = param == SweepParam::q                 ? "q"
                        : param == SweepParam::k               ? "k"
                        : param == SweepParam::n_tilde_fraction ? "n_tilde_fraction"
                                                                : "epochs";
    std::ofstream summary(cfg.output_dir / ("sweep_" + std::string(pname) + ".csv"),
                          std::ios::binary);
    summary << "param,value,strategy,acc_mean,acc_std,f1_mean,f1_std,sp_mean,sp_std,eo_mean,eo_std\n";

    for (double value : values) {
        ExperimentConfig child = cfg;
        child.upstream_dir = cfg.output_dir;
        std::ostringstream tag;
        tag << pname << '_' << value;
        child.output_dir = cfg.output_dir / "sweep" / tag.str();
        ensure_dir(child.output_dir);

        bool redo_concept = false;
        switch (param) {
            case SweepParam::q:
                child.concept_q = int(value);
                redo_concept = true;
                break;
            case SweepParam::k:
                child.select_k = std::size_t(value);
                break;
            case SweepParam::n_tilde_fraction:
                child.n_tilde_fraction = value / (value > 1.0 ? 100.0 : 1.0);
                redo_concept = true;
                break;
            case SweepParam::epochs:
                child.concept_epochs = int(value);
                break;
        }
        if (redo_concept) stage_learn_concept(child);
        const bool need_concepts = std::any_of(child.strategies.begin(), child.strategies.end(),
                                               [](auto s) { return infer::needs_concept(s); });
        if (need_concepts) stage_rank(child);
        stage_infer(child);
        stage_evaluate(child);

        // Fold the child's summary into the sweep table.
        std::ifstream child_summary(StagePaths(child.output_dir).summary_csv());
        std::string line;
        while (std::getline(child_summary, line)) {
            if (line.empty() || line[0] == '#' || line.rfind("strategy,", 0) == 0) continue;
            summary << pname << ',' << value << ',' << line << '\n';
        }
    }
}

} // namespace fairicl::exp
