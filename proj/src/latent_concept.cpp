#include "fairicl/latent_concept.hpp"

#include "fairicl/checkpoint.hpp"
#include "fairicl/kvfile.hpp"
#include "fairicl/parallel.hpp"

#include <algorithm>
#include <cinttypes>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace fairicl::latent {

void ConceptTrainConfig::validate() const {
    if (c < 1) throw std::runtime_error("concept config: c must be >= 1");
    if (epochs < 1) throw std::runtime_error("concept config: epochs must be >= 1");
    // lr = 0 is a degenerate but well-defined run (no update); the pipeline
    // config layer enforces a strictly positive rate.
    if (lr < 0) throw std::runtime_error("concept config: lr must be >= 0");
    if (q < 0) throw std::runtime_error("concept config: q must be >= 0");
}

namespace {

std::unordered_map<std::int64_t, std::size_t> id_index(const Dataset& d) {
    std::unordered_map<std::int64_t, std::size_t> out;
    out.reserve(d.records.size());
    for (std::size_t i = 0; i < d.records.size(); ++i) out.emplace(d.records[i].id, i);
    return out;
}

ConceptExample encode_sequence(const lm::Lm& model, const TrainingSequence& seq,
                               Provenance source) {
    ConceptExample ex;
    ex.query_source = source;
    ex.tokens.push_back(Tokenizer::kBos);
    std::vector<std::pair<std::size_t, std::size_t>> offsets;
    const auto ids = model.tokenizer.encode_with_offsets(seq.full_text, offsets);
    ex.tokens.insert(ex.tokens.end(), ids.begin(), ids.end());
    const auto [first, last] =
        model.tokenizer.token_span(seq.full_text, seq.answer_begin, seq.answer_end);
    ex.span_begin = first + 1;  // shift for bos
    ex.span_end = last + 1;
    ex.tokens.push_back(Tokenizer::kEos);
    return ex;
}

} // namespace

std::vector<ConceptExample> build_concept_corpus(const lm::Lm& model, const Dataset& d,
                                                 const Dataset& d_tilde,
                                                 const std::vector<TrainingInstance>& mixture,
                                                 const TextTemplate& tmpl) {
    const auto d_index = id_index(d);
    const auto t_index = id_index(d_tilde);
    const Schema& schema = *d.schema;
    RenderOptions demo_opts;
    demo_opts.include_answer = true;

    std::vector<ConceptExample> out;
    out.reserve(mixture.size());
    for (const auto& inst : mixture) {
        std::vector<SerializedExample> demos;
        demos.reserve(inst.demo_ids.size());
        for (std::int64_t id : inst.demo_ids) {
            const auto it = d_index.find(id);
            if (it == d_index.end())
                throw std::runtime_error("mixture demo id not found in D: " + std::to_string(id));
            demos.push_back(serialize_record(d.records[it->second], tmpl, schema, demo_opts));
        }
        const Dataset& source = inst.query_source == Provenance::original ? d : d_tilde;
        const auto& index = inst.query_source == Provenance::original ? d_index : t_index;
        const auto it = index.find(inst.query_id);
        if (it == index.end())
            throw std::runtime_error("mixture query id not found: " + std::to_string(inst.query_id));
        const Record& query = source.records[it->second];
        const auto ser = serialize_record(query, tmpl, schema, RenderOptions{});
        const bool positive = source.label_positive(query);
        const auto seq = build_training_sequence(tmpl.instruction, demos, ser, positive);
        out.push_back(encode_sequence(model, seq, inst.query_source));
    }
    return out;
}

ConceptState learn_concept(const lm::Lm& model, const std::vector<ConceptExample>& mixture,
                           const ConceptTrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    if (cfg.c > model.tokenizer.concept_slots())
        throw std::runtime_error("learn_concept: c exceeds the tokenizer's reserved concept slots");

    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < mixture.size(); ++i) {
        if (cfg.mode == ConceptMode::plain && mixture[i].query_source != Provenance::original)
            continue;
        active.push_back(i);
    }
    if (active.empty()) throw std::runtime_error("learn_concept: no training instances");
    for (std::size_t i : active) {
        const auto& ex = mixture[i];
        if (int(ex.tokens.size()) + cfg.c > model.config.context_len)
            throw std::runtime_error("learn_concept: instance of " + std::to_string(ex.tokens.size()) +
                                     " tokens plus c=" + std::to_string(cfg.c) +
                                     " overflows context " + std::to_string(model.config.context_len));
    }

    ConceptState state;
    state.config = cfg;

    // Initialize each soft row from the embedding of a uniformly drawn text
    // vocabulary token.
    Rng init_rng(mix64(cfg.seed, 0));
    state.embeddings.resize(cfg.c, model.config.dim);
    const int first = model.tokenizer.first_text_id();
    const int text_count = model.tokenizer.text_vocab_size() - first;
    if (text_count <= 0) throw std::runtime_error("learn_concept: empty text vocabulary");
    for (int r = 0; r < cfg.c; ++r) {
        const int id = first + int(init_rng.below(std::uint64_t(text_count)));
        state.embeddings.row(r) = model.params.token_embedding.row(id);
    }

    std::vector<std::size_t> order = active;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng(mix64(cfg.seed, std::uint64_t(epoch) + 1)).shuffle(order);
        double epoch_loss = 0;
        for (std::size_t i : order) {
            const auto& ex = mixture[i];
            float loss = 0;
            const auto grad = lm::grad_soft_prompt<float>(model.params, model.config,
                                                          state.embeddings, ex.tokens,
                                                          ex.span_begin, ex.span_end, &loss);
            state.embeddings -= float(cfg.lr) * grad;
            if (!state.embeddings.allFinite())
                throw std::runtime_error("learn_concept: diverged (non-finite embeddings)");
            epoch_loss += double(loss);
        }
        state.history.push_back(epoch_loss / double(order.size()));
        if (on_epoch) on_epoch(state, epoch + 1);
    }
    return state;
}

double score_example(const lm::Lm& model, const ConceptState& state,
                     const std::vector<int>& example_tokens) {
    const int c = int(state.embeddings.rows());
    if (c == 0) return 0.0;
    if (int(example_tokens.size()) + c > model.config.context_len)
        throw std::runtime_error("score_example: sequence plus concept overflows context");

    lm::HeadTie<float> tie;
    tie.first_id = model.tokenizer.concept_id(0);
    tie.rows = &state.embeddings;

    lm::ForwardCache<float> cache;
    lm::forward(model.params, model.config,
                lm::embed_sequence<float>(model.params, model.config, &state.embeddings,
                                          lm::with_soft_postfix(example_tokens, c)),
                cache);
    double total = 0;
    const int base = int(example_tokens.size());
    for (int j = 0; j < c; ++j) {
        const auto lsm = lm::log_softmax(lm::logits_at(model.params, cache, base + j - 1, tie));
        total += double(lsm(model.tokenizer.concept_id(j)));
    }
    return total;
}

std::vector<int> score_sequence_tokens(const lm::Lm& model, const TextTemplate& tmpl,
                                       const Schema& schema, const Record& r,
                                       bool with_instruction) {
    RenderOptions opts;
    opts.include_answer = true;
    const auto ser = serialize_record(r, tmpl, schema, opts);
    std::string text;
    if (with_instruction) text += "### Instruction: " + tmpl.instruction + "\n\n";
    text += "### Profile: " + ser.profile + "\n\n";
    text += "### Question: " + ser.question + "\n";
    text += std::string(kAnswerPrefix) + " " + *ser.answer;
    std::vector<int> tokens;
    tokens.push_back(Tokenizer::kBos);
    for (int id : model.tokenizer.encode(text)) tokens.push_back(id);
    return tokens;
}

std::vector<LikelihoodScore> score_dataset(const lm::Lm& model, const ConceptState& state,
                                           const Dataset& d, const TextTemplate& tmpl,
                                           unsigned max_threads) {
    std::vector<LikelihoodScore> out(d.records.size());
    parallel_for(
        d.records.size(),
        [&](std::size_t i) {
            const auto tokens = score_sequence_tokens(model, tmpl, *d.schema, d.records[i],
                                                      state.config.score_with_instruction);
            out[i] = LikelihoodScore{d.records[i].id, score_example(model, state, tokens)};
        },
        max_threads);
    return out;
}

void SelectionConfig::validate(std::size_t n_scored) const {
    if (k > m) throw std::runtime_error("selection config: k > m");
    if (m > n_scored) throw std::runtime_error("selection config: m exceeds scored examples");
    if (m == 0) throw std::runtime_error("selection config: m must be >= 1");
}

std::vector<std::int64_t> top_candidates(std::vector<LikelihoodScore> scores, std::size_t m) {
    std::sort(scores.begin(), scores.end(), [](const LikelihoodScore& a, const LikelihoodScore& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    std::vector<std::int64_t> out;
    out.reserve(m);
    for (std::size_t i = 0; i < m && i < scores.size(); ++i) out.push_back(scores[i].id);
    return out;
}

std::vector<std::vector<std::int64_t>> rank_and_select_keys(
    const std::vector<LikelihoodScore>& scores, const SelectionConfig& cfg,
    const std::vector<std::uint64_t>& query_keys) {
    cfg.validate(scores.size());
    const auto candidates = top_candidates(scores, cfg.m);
    std::vector<std::vector<std::int64_t>> out;
    out.reserve(query_keys.size());
    for (std::uint64_t key : query_keys) {
        Rng rng(mix64(cfg.seed, key));
        std::vector<std::int64_t> picks;
        picks.reserve(cfg.k);
        for (std::size_t idx : rng.sample_indices(candidates.size(), cfg.k))
            picks.push_back(candidates[idx]);
        out.push_back(std::move(picks));
    }
    return out;
}

std::vector<std::vector<std::int64_t>> rank_and_select(const std::vector<LikelihoodScore>& scores,
                                                       const SelectionConfig& cfg,
                                                       std::size_t n_queries) {
    std::vector<std::uint64_t> keys(n_queries);
    std::iota(keys.begin(), keys.end(), 0);
    return rank_and_select_keys(scores, cfg, keys);
}

void save_concept(const ConceptState& state, const std::filesystem::path& path,
                  const std::string& fingerprint) {
    Checkpoint sections;
    std::ostringstream meta;
    meta << "c " << state.config.c << '\n'
         << "lr " << state.config.lr << '\n'
         << "epochs " << state.config.epochs << '\n'
         << "q " << state.config.q << '\n'
         << "seed " << state.config.seed << '\n'
         << "mode " << (state.config.mode == ConceptMode::fair ? "fair" : "plain") << '\n'
         << "score_with_instruction " << (state.config.score_with_instruction ? 1 : 0) << '\n'
         << "corpus_fingerprint " << state.corpus_fingerprint << '\n'
         << "fingerprint " << fingerprint << '\n';
    sections["concept"].blob = meta.str();
    CheckpointSection mat;
    mat.kind = CheckpointSection::kTensorF32;
    mat.f32 = state.embeddings;
    sections["concept.matrix"] = std::move(mat);
    CheckpointSection hist;
    hist.kind = CheckpointSection::kTensorF64;
    hist.f64.resize(1, Eigen::Index(state.history.size()));
    for (std::size_t i = 0; i < state.history.size(); ++i)
        hist.f64(0, Eigen::Index(i)) = state.history[i];
    sections["concept.history"] = std::move(hist);
    save_checkpoint(sections, path);
}

ConceptState load_concept(const std::filesystem::path& path, std::string* fingerprint) {
    const Checkpoint sections = load_checkpoint(path);
    const auto meta = sections.find("concept");
    const auto mat = sections.find("concept.matrix");
    const auto hist = sections.find("concept.history");
    if (meta == sections.end() || mat == sections.end() || hist == sections.end())
        throw std::runtime_error(path.string() + ": missing concept sections");
    ConceptState state;
    for (const auto& e : parse_kv_text(meta->second.blob)) {
        if (e.key == "c") state.config.c = std::stoi(e.value);
        else if (e.key == "lr") state.config.lr = std::stod(e.value);
        else if (e.key == "epochs") state.config.epochs = std::stoi(e.value);
        else if (e.key == "q") state.config.q = std::stoi(e.value);
        else if (e.key == "seed") state.config.seed = std::stoull(e.value);
        else if (e.key == "mode")
            state.config.mode = e.value == "plain" ? ConceptMode::plain : ConceptMode::fair;
        else if (e.key == "score_with_instruction") state.config.score_with_instruction = e.value == "1";
        else if (e.key == "corpus_fingerprint") state.corpus_fingerprint = e.value;
        else if (e.key == "fingerprint" && fingerprint) *fingerprint = e.value;
    }
    state.embeddings = mat->second.f32;
    for (Eigen::Index i = 0; i < hist->second.f64.cols(); ++i)
        state.history.push_back(hist->second.f64(0, i));
    if (state.embeddings.rows() != state.config.c)
        throw std::runtime_error(path.string() + ": concept matrix rows do not match c");
    return state;
}

void save_scores_csv(const std::vector<LikelihoodScore>& scores, const std::filesystem::path& path,
                     const std::string& fingerprint) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    if (!fingerprint.empty()) out << "# fingerprint=" << fingerprint << '\n';
    out << "id,score\n";
    char buf[64];
    for (const auto& s : scores) {
        std::snprintf(buf, sizeof buf, "%" PRId64 ",%.17g\n", s.id, s.score);
        out << buf;
    }
}

std::vector<LikelihoodScore> load_scores_csv(const std::filesystem::path& path,
                                             std::string* fingerprint) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<LikelihoodScore> out;
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.rfind("# fingerprint=", 0) == 0) {
            if (fingerprint) *fingerprint = trim(line.substr(14));
            continue;
        }
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;  // "id,score"
            continue;
        }
        const auto parts = split_char(line, ',');
        if (parts.size() != 2) throw std::runtime_error(path.string() + ": malformed score row");
        out.push_back(LikelihoodScore{std::stoll(parts[0]), std::stod(parts[1])});
    }
    return out;
}

} // namespace fairicl::latent
