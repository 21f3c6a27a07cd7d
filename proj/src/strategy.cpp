#include "fairicl/strategy.hpp"

#include "fairicl/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace fairicl::infer {

StrategyKind strategy_from(const std::string& name) {
    if (name == "random") return StrategyKind::random;
    if (name == "balanced") return StrategyKind::balanced;
    if (name == "counterfactual") return StrategyKind::counterfactual;
    if (name == "removal") return StrategyKind::removal;
    if (name == "instruction") return StrategyKind::instruction;
    if (name == "latent_concept") return StrategyKind::latent_concept;
    if (name == "fairicl") return StrategyKind::fairicl;
    if (name == "fairicl_r") return StrategyKind::fairicl_r;
    if (name == "fairicl_lc") return StrategyKind::fairicl_lc;
    throw std::runtime_error("unknown strategy: " + name);
}

const char* to_string(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::random: return "random";
        case StrategyKind::balanced: return "balanced";
        case StrategyKind::counterfactual: return "counterfactual";
        case StrategyKind::removal: return "removal";
        case StrategyKind::instruction: return "instruction";
        case StrategyKind::latent_concept: return "latent_concept";
        case StrategyKind::fairicl: return "fairicl";
        case StrategyKind::fairicl_r: return "fairicl_r";
        case StrategyKind::fairicl_lc: return "fairicl_lc";
    }
    return "?";
}

bool needs_concept(StrategyKind kind) {
    return kind == StrategyKind::latent_concept || kind == StrategyKind::fairicl ||
           kind == StrategyKind::fairicl_r || kind == StrategyKind::fairicl_lc;
}

bool needs_internal_lm(StrategyKind kind) { return kind == StrategyKind::fairicl_lc; }

namespace {

// (group, label) cells with members in ascending record position.
std::vector<std::vector<std::size_t>> build_cells(const Dataset& d, int sens, int lab) {
    const std::size_t n_labels = d.schema->attributes[std::size_t(lab)].domain.size();
    const std::size_t n_groups = d.schema->attributes[std::size_t(sens)].domain.size();
    std::vector<std::vector<std::size_t>> cells(n_groups * n_labels);
    for (std::size_t i = 0; i < d.records.size(); ++i) {
        const auto& r = d.records[i];
        cells[std::size_t(r.values[std::size_t(sens)]) * n_labels +
              std::size_t(r.values[std::size_t(lab)])].push_back(i);
    }
    return cells;
}

void draw_balanced(const StrategySpec& spec, const Dataset& train, Rng& rng, DemoSelection& out) {
    const int sens = train.schema->sensitive_index();
    if (sens < 0) throw std::runtime_error("balanced selection needs a sensitive attribute");
    const int lab = train.schema->label_index();
    const auto cells = build_cells(train, sens, lab);
    if (spec.k % cells.size() != 0)
        throw std::runtime_error("balanced selection: k=" + std::to_string(spec.k) +
                                 " not divisible by " + std::to_string(cells.size()) + " cells");
    const std::size_t per_cell = spec.k / cells.size();
    for (std::size_t cell = 0; cell < cells.size(); ++cell) {
        if (cells[cell].size() < per_cell)
            throw std::runtime_error("balanced selection: cell " + std::to_string(cell) +
                                     " has too few records");
        for (std::size_t pick : rng.sample_indices(cells[cell].size(), per_cell)) {
            out.demos.push_back(train.records[cells[cell][pick]]);
            out.source_ids.push_back(train.records[cells[cell][pick]].id);
        }
    }
}

} // namespace

DemoSelection select_demos(const StrategySpec& spec, const Dataset& train, std::int64_t query_id,
                           const ConceptInputs* concept_inputs) {
    DemoSelection out;
    Rng rng(mix64(spec.seed, std::uint64_t(query_id)));

    switch (spec.kind) {
        case StrategyKind::random:
        case StrategyKind::fairicl_lc: {
            if (spec.k > train.records.size())
                throw std::runtime_error("random selection: k exceeds training set");
            for (std::size_t pick : rng.sample_indices(train.records.size(), spec.k)) {
                out.demos.push_back(train.records[pick]);
                out.source_ids.push_back(train.records[pick].id);
            }
            break;
        }
        case StrategyKind::balanced: {
            draw_balanced(spec, train, rng, out);
            break;
        }
        case StrategyKind::instruction: {
            draw_balanced(spec, train, rng, out);
            out.extra_instruction = spec.fairness_instruction;
            break;
        }
        case StrategyKind::removal: {
            draw_balanced(spec, train, rng, out);
            out.render_options.include_sensitive = false;
            out.render_options.neutral_pronouns = true;
            break;
        }
        case StrategyKind::counterfactual: {
            if (spec.k % 2 != 0) throw std::runtime_error("counterfactual selection: k must be even");
            const int sens = train.schema->sensitive_index();
            if (sens < 0) throw std::runtime_error("counterfactual selection needs a sensitive attribute");
            const auto& domain = train.schema->attributes[std::size_t(sens)].domain;
            if (domain.size() != 2)
                throw std::runtime_error("counterfactual selection needs a binary sensitive attribute");
            std::vector<std::vector<std::size_t>> by_group(2);
            for (std::size_t i = 0; i < train.records.size(); ++i)
                by_group[std::size_t(train.records[i].values[std::size_t(sens)])].push_back(i);
            int base = spec.counterfactual_base_group;
            if (base < 0) base = by_group[0].size() >= by_group[1].size() ? 0 : 1;
            if (by_group[std::size_t(base)].size() < spec.k / 2)
                throw std::runtime_error("counterfactual selection: base group too small");
            std::vector<Record> flipped;
            for (std::size_t pick : rng.sample_indices(by_group[std::size_t(base)].size(), spec.k / 2)) {
                const Record& r = train.records[by_group[std::size_t(base)][pick]];
                out.demos.push_back(r);
                out.source_ids.push_back(r.id);
                Record twin = r;
                twin.values[std::size_t(sens)] = std::int32_t(1 - base);
                flipped.push_back(std::move(twin));
            }
            for (auto& twin : flipped) {
                out.source_ids.push_back(twin.id);
                out.demos.push_back(std::move(twin));
            }
            break;
        }
        case StrategyKind::latent_concept:
        case StrategyKind::fairicl:
        case StrategyKind::fairicl_r: {
            if (concept_inputs == nullptr || concept_inputs->scores == nullptr)
                throw std::runtime_error(std::string(to_string(spec.kind)) +
                                         " selection needs concept likelihood scores");
            latent::SelectionConfig sel;
            sel.m = concept_inputs->m;
            sel.k = spec.k;
            sel.seed = spec.seed;
            const auto picks = latent::rank_and_select_keys(*concept_inputs->scores, sel,
                                                            {std::uint64_t(query_id)});
            std::unordered_map<std::int64_t, std::size_t> index;
            index.reserve(train.records.size());
            for (std::size_t i = 0; i < train.records.size(); ++i)
                index.emplace(train.records[i].id, i);
            for (std::int64_t id : picks.front()) {
                const auto it = index.find(id);
                if (it == index.end())
                    throw std::runtime_error("scored id not present in training set: " +
                                             std::to_string(id));
                out.demos.push_back(train.records[it->second]);
                out.source_ids.push_back(id);
            }
            break;
        }
    }
    return out;
}

PromptSpec make_prompt_spec(const DemoSelection& sel, const Record& query, const TextTemplate& tmpl,
                            const Schema& schema) {
    PromptSpec spec;
    spec.instruction = sel.extra_instruction.empty()
                           ? tmpl.instruction
                           : sel.extra_instruction + " " + tmpl.instruction;
    spec.render_options = sel.render_options;
    RenderOptions demo_opts = sel.render_options;
    demo_opts.include_answer = true;
    for (const auto& demo : sel.demos)
        spec.demonstrations.push_back(serialize_record(demo, tmpl, schema, demo_opts));
    RenderOptions query_opts = sel.render_options;
    query_opts.include_answer = false;
    spec.query = serialize_record(query, tmpl, schema, query_opts);
    return spec;
}

InternalPrediction predict_internal(const lm::Lm& model, const lm::DenseMatrix<float>* soft_prefix,
                                    const std::string& prompt_text, int max_new) {
    std::string text = prompt_text;
    while (!text.empty() && (text.back() == ' ' || text.back() == '\n')) text.pop_back();
    std::vector<int> tokens;
    tokens.push_back(Tokenizer::kBos);
    for (int id : model.tokenizer.encode(text)) tokens.push_back(id);

    InternalPrediction pred;
    pred.raw = lm::generate(model.params, model.config, model.tokenizer, soft_prefix, tokens, max_new);
    pred.parsed = parse_answer(pred.raw);
    return pred;
}

metrics::Outcome to_outcome(const PredictionRecord& r) {
    metrics::Outcome o;
    o.group = r.group;
    o.label_positive = r.label_positive;
    o.predicted_positive = r.predicted_positive;
    o.parse_ok = r.parse_ok;
    o.failed = r.failed;
    return o;
}

std::vector<metrics::Outcome> to_outcomes(const std::vector<PredictionRecord>& records) {
    std::vector<metrics::Outcome> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(to_outcome(r));
    return out;
}

void save_predictions_jsonl(const std::vector<PredictionRecord>& records,
                            const std::filesystem::path& path, const std::string& fingerprint) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    nlohmann::ordered_json meta;
    meta["meta"] = {{"fingerprint", fingerprint}, {"records", records.size()}};
    out << meta.dump() << '\n';
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["query_id"] = r.query_id;
        j["group"] = r.group;
        j["true_label"] = r.true_label;
        j["label_positive"] = r.label_positive;
        j["predicted_positive"] = r.predicted_positive;
        j["parse_ok"] = r.parse_ok;
        j["failed"] = r.failed;
        j["raw_text"] = r.raw_text;
        j["strategy"] = r.strategy;
        j["seed"] = r.seed;
        j["demo_ids"] = r.demo_ids;
        out << j.dump() << '\n';
    }
}

std::vector<PredictionRecord> load_predictions_jsonl(const std::filesystem::path& path,
                                                     std::string* fingerprint) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<PredictionRecord> out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        if (first) {
            first = false;
            if (j.contains("meta")) {
                if (fingerprint) *fingerprint = j["meta"].value("fingerprint", "");
                continue;
            }
        }
        PredictionRecord r;
        r.query_id = j.at("query_id").get<std::int64_t>();
        r.group = j.at("group").get<std::string>();
        r.true_label = j.at("true_label").get<std::string>();
        r.label_positive = j.at("label_positive").get<bool>();
        r.predicted_positive = j.at("predicted_positive").get<bool>();
        r.parse_ok = j.at("parse_ok").get<bool>();
        r.failed = j.at("failed").get<bool>();
        r.raw_text = j.at("raw_text").get<std::string>();
        r.strategy = j.at("strategy").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.demo_ids = j.at("demo_ids").get<std::vector<std::int64_t>>();
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace fairicl::infer
