#include "fairicl/text_template.hpp"

#include "fairicl/kvfile.hpp"

#include <fstream>
#include <stdexcept>

namespace fairicl {

namespace {

const PronounSet kNeutralPronouns{"they", "their", "them"};

std::string plural_verb(const std::string& v) {
    if (v == "has") return "have";
    if (v == "is") return "are";
    if (v == "was") return "were";
    if (v == "does") return "do";
    if (v == "goes") return "go";
    if (!v.empty() && v.back() == 's') return v.substr(0, v.size() - 1);
    return v;
}

std::string neutral_noun(const std::string& n) {
    if (n == "husband" || n == "wife") return "spouse";
    return n;
}

std::string capitalized(std::string s) {
    if (!s.empty()) s[0] = char(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

struct RenderContext {
    const Record* record;
    const TextTemplate* tmpl;
    const Schema* schema;
    RenderOptions opts;
};

const PronounSet& pronouns_for(const RenderContext& ctx) {
    if (ctx.opts.neutral_pronouns) return kNeutralPronouns;
    const int sens = ctx.schema->sensitive_index();
    if (sens < 0) throw std::runtime_error("template uses pronoun slots but schema has no sensitive attribute");
    const std::string& value = ctx.schema->attributes[std::size_t(sens)]
                                   .domain[std::size_t(ctx.record->values[std::size_t(sens)])];
    const auto it = ctx.tmpl->pronouns.find(value);
    if (it == ctx.tmpl->pronouns.end())
        throw std::runtime_error("no pronoun entry for sensitive value '" + value + "'");
    return it->second;
}

std::string render_pattern(const std::string& pattern, const RenderContext& ctx, int depth);

std::string render_slot(const std::string& slot, const RenderContext& ctx, int depth) {
    if (slot.size() > 2 && (slot[0] == 'p' || slot[0] == 'P') && slot[1] == ':') {
        const bool cap = slot[0] == 'P';
        const std::string form = slot.substr(2);
        const PronounSet& p = pronouns_for(ctx);
        std::string word;
        if (form == "subj") word = p.subject;
        else if (form == "poss") word = p.possessive;
        else if (form == "obj") word = p.object;
        else throw std::runtime_error("unknown pronoun form '" + form + "'");
        return cap ? capitalized(word) : word;
    }
    if (slot.rfind("v:", 0) == 0) {
        const std::string word = slot.substr(2);
        return ctx.opts.neutral_pronouns ? plural_verb(word) : word;
    }
    if (slot.rfind("n:", 0) == 0) {
        const std::string word = slot.substr(2);
        return ctx.opts.neutral_pronouns ? neutral_noun(word) : word;
    }

    const int attr = ctx.schema->attr_index(slot);
    if (attr < 0) throw std::runtime_error("unknown slot '{" + slot + "}'");
    if (depth > 0) throw std::runtime_error("attribute slot '{" + slot + "}' nested inside a phrase");
    const Attribute& a = ctx.schema->attributes[std::size_t(attr)];
    if (a.role == AttrRole::label)
        throw std::runtime_error("label attribute '" + slot + "' cannot appear in the profile");
    if (a.role == AttrRole::sensitive && !ctx.opts.include_sensitive) return ctx.tmpl->redacted;

    const std::string& value = a.domain[std::size_t(ctx.record->values[std::size_t(attr)])];
    const auto pit = ctx.tmpl->phrases.find(slot);
    if (pit != ctx.tmpl->phrases.end()) {
        const auto vit = pit->second.find(value);
        if (vit != pit->second.end()) return render_pattern(vit->second, ctx, depth + 1);
    }
    return value;
}

std::string render_pattern(const std::string& pattern, const RenderContext& ctx, int depth) {
    std::string out;
    out.reserve(pattern.size() + 32);
    std::size_t i = 0;
    while (i < pattern.size()) {
        if (pattern[i] == '{') {
            const std::size_t close = pattern.find('}', i);
            if (close == std::string::npos)
                throw std::runtime_error("unterminated slot in pattern: " + pattern.substr(i));
            out += render_slot(pattern.substr(i + 1, close - i - 1), ctx, depth);
            i = close + 1;
        } else {
            out += pattern[i++];
        }
    }
    return out;
}

// All attribute names referenced by top-level slots, in pattern order.
std::vector<std::string> attribute_slots(const std::string& pattern) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while ((i = pattern.find('{', i)) != std::string::npos) {
        const std::size_t close = pattern.find('}', i);
        if (close == std::string::npos) break;
        const std::string slot = pattern.substr(i + 1, close - i - 1);
        if (slot.rfind("p:", 0) != 0 && slot.rfind("P:", 0) != 0 && slot.rfind("v:", 0) != 0 &&
            slot.rfind("n:", 0) != 0) {
            out.push_back(slot);
        }
        i = close + 1;
    }
    return out;
}

} // namespace

void TextTemplate::validate_against(const Schema& schema) const {
    std::map<std::string, int> uses;
    for (const auto& name : attribute_slots(profile_pattern)) {
        if (schema.attr_index(name) < 0)
            throw std::runtime_error("template slot '{" + name + "}' is not a schema attribute");
        uses[name]++;
    }
    for (const auto& a : schema.attributes) {
        if (a.role == AttrRole::label) continue;
        const auto it = uses.find(a.name);
        const int n = it == uses.end() ? 0 : it->second;
        if (n != 1)
            throw std::runtime_error("template must use attribute '" + a.name + "' exactly once, uses it " +
                                     std::to_string(n) + " times");
    }
    for (const auto& [attr, values] : phrases) {
        if (schema.attr_index(attr) < 0)
            throw std::runtime_error("phrase map names unknown attribute '" + attr + "'");
        (void)values;
    }
}

TextTemplate load_template(const std::filesystem::path& path) {
    TextTemplate t;
    for (const auto& e : load_kv_file(path)) {
        if (e.key == "id") t.id = e.value;
        else if (e.key == "instruction") t.instruction = e.value;
        else if (e.key == "question") t.question = e.value;
        else if (e.key == "profile") t.profile_pattern = e.value;
        else if (e.key == "redacted") t.redacted = e.value;
        else if (e.key == "pronouns") {
            const auto parts = split_ws(e.value);
            if (parts.size() != 4)
                throw std::runtime_error("template line " + std::to_string(e.line) +
                                         ": expected 'pronouns <value> <subj> <poss> <obj>'");
            t.pronouns[parts[0]] = PronounSet{parts[1], parts[2], parts[3]};
        } else if (e.key == "phrase") {
            const std::size_t s1 = e.value.find(' ');
            const std::size_t s2 = s1 == std::string::npos ? s1 : e.value.find(' ', s1 + 1);
            if (s2 == std::string::npos)
                throw std::runtime_error("template line " + std::to_string(e.line) +
                                         ": expected 'phrase <attr> <value> <text>'");
            t.phrases[e.value.substr(0, s1)][e.value.substr(s1 + 1, s2 - s1 - 1)] =
                trim(e.value.substr(s2 + 1));
        } else {
            throw std::runtime_error("template line " + std::to_string(e.line) + ": unknown key '" +
                                     e.key + "'");
        }
    }
    if (t.profile_pattern.empty()) throw std::runtime_error(path.string() + ": template has no profile pattern");
    if (t.redacted.empty()) t.redacted = "person";
    return t;
}

void save_template(const TextTemplate& t, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "id " << t.id << '\n';
    out << "instruction " << t.instruction << '\n';
    out << "question " << t.question << '\n';
    out << "redacted " << t.redacted << '\n';
    out << "profile " << t.profile_pattern << '\n';
    for (const auto& [value, p] : t.pronouns)
        out << "pronouns " << value << ' ' << p.subject << ' ' << p.possessive << ' ' << p.object << '\n';
    for (const auto& [attr, values] : t.phrases)
        for (const auto& [value, text] : values) out << "phrase " << attr << ' ' << value << ' ' << text << '\n';
}

SerializedExample serialize_record(const Record& r, const TextTemplate& t, const Schema& schema,
                                   const RenderOptions& opts) {
    RenderContext ctx{&r, &t, &schema, opts};
    SerializedExample ex;
    ex.profile = render_pattern(t.profile_pattern, ctx, 0);
    ex.question = t.question;
    ex.source_id = r.id;
    if (opts.include_answer) {
        const bool pos = r.values[std::size_t(schema.label_index())] == schema.positive_label_value();
        ex.answer = verbalize(pos);
    }
    return ex;
}

std::string build_icl_prompt(const PromptSpec& spec) {
    std::string out;
    if (!spec.instruction.empty()) out += "### Instruction: " + spec.instruction + "\n\n";
    for (const auto& demo : spec.demonstrations) {
        if (!demo.answer.has_value())
            throw std::runtime_error("build_icl_prompt: demonstration (source id " +
                                     std::to_string(demo.source_id) + ") has no answer");
        out += "### Profile: " + demo.profile + "\n\n";
        out += "### Question: " + demo.question + "\n";
        out += std::string(kAnswerPrefix) + " " + *demo.answer + "\n\n";
    }
    out += "### Profile: " + spec.query.profile + "\n\n";
    out += "### Question: " + spec.query.question + "\n";
    out += std::string(kAnswerPrefix) + " ";
    return out;
}

TrainingSequence build_training_sequence(const std::string& instruction,
                                         const std::vector<SerializedExample>& demos,
                                         const SerializedExample& query, bool label_positive) {
    PromptSpec spec;
    spec.instruction = instruction;
    spec.demonstrations = demos;
    spec.query = query;
    TrainingSequence seq;
    seq.full_text = build_icl_prompt(spec);
    seq.answer_begin = seq.full_text.size();
    seq.full_text += verbalize(label_positive);
    seq.answer_end = seq.full_text.size();
    return seq;
}

std::string verbalize(bool label_positive) { return label_positive ? "Yes" : "No"; }

std::optional<bool> parse_answer(const std::string& generated) {
    std::size_t i = 0;
    while (i < generated.size() && std::isspace(static_cast<unsigned char>(generated[i]))) ++i;
    std::string word;
    while (i < generated.size() && std::isalpha(static_cast<unsigned char>(generated[i])))
        word += char(std::tolower(static_cast<unsigned char>(generated[i++])));
    if (word == "yes") return true;
    if (word == "no") return false;
    return std::nullopt;
}

} // namespace fairicl
