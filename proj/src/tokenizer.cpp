#include "fairicl/tokenizer.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fairicl {

namespace {

bool word_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '\'';
}

} // namespace

std::vector<std::pair<std::size_t, std::size_t>> Tokenizer::split_offsets(const std::string& text) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        const std::size_t begin = i;
        if (text[i] == '\n') {
            out.emplace_back(begin, ++i);
            continue;
        }
        if (text[i] == ' ') {
            // A space binds to the following word or punctuation piece; a
            // space followed by a space, newline or end stands alone.
            if (i + 1 >= n || text[i + 1] == ' ' || text[i + 1] == '\n') {
                out.emplace_back(begin, ++i);
                continue;
            }
            ++i;
        }
        if (word_char(text[i])) {
            while (i < n && word_char(text[i])) ++i;
        } else {
            ++i;
        }
        out.emplace_back(begin, i);
    }
    return out;
}

std::vector<std::string> Tokenizer::split_pieces(const std::string& text) {
    std::vector<std::string> out;
    for (const auto& [b, e] : split_offsets(text)) out.push_back(text.substr(b, e - b));
    return out;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& corpus, int concept_slots) {
    if (concept_slots < 0) throw std::runtime_error("tokenizer: concept_slots must be >= 0");
    std::set<std::string> unique;
    for (const auto& text : corpus) {
        for (auto& p : split_pieces(text)) unique.insert(std::move(p));
    }
    Tokenizer t;
    t.concept_slots_ = concept_slots;
    t.pieces_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
    t.pieces_.insert(t.pieces_.end(), unique.begin(), unique.end());
    t.rebuild_index();
    return t;
}

void Tokenizer::rebuild_index() {
    ids_.clear();
    ids_.reserve(pieces_.size());
    for (std::size_t i = 4; i < pieces_.size(); ++i) ids_[pieces_[i]] = int(i);
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<std::pair<std::size_t, std::size_t>> offsets;
    return encode_with_offsets(text, offsets);
}

std::vector<int> Tokenizer::encode_with_offsets(
    const std::string& text, std::vector<std::pair<std::size_t, std::size_t>>& offsets) const {
    offsets = split_offsets(text);
    std::vector<int> out;
    out.reserve(offsets.size());
    for (const auto& [b, e] : offsets) {
        const auto it = ids_.find(text.substr(b, e - b));
        out.push_back(it == ids_.end() ? kUnk : it->second);
    }
    return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= vocab_size()) throw std::runtime_error("decode: id out of range");
        if (is_concept(id)) {
            out += "<concept:" + std::to_string(id - int(pieces_.size())) + ">";
        } else if (id == kPad || id == kBos || id == kEos) {
            continue;
        } else {
            out += pieces_[std::size_t(id)];
        }
    }
    return out;
}

std::pair<std::size_t, std::size_t> Tokenizer::token_span(const std::string& text,
                                                          std::size_t char_begin,
                                                          std::size_t char_end) const {
    const auto offsets = split_offsets(text);
    std::size_t first = offsets.size();
    std::size_t last = 0;
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        if (offsets[i].second > char_begin && offsets[i].first < char_end) {
            first = std::min(first, i);
            last = std::max(last, i + 1);
        }
    }
    if (first >= last) return {0, 0};
    return {first, last};
}

std::string Tokenizer::serialized() const {
    std::ostringstream out;
    out << concept_slots_ << '\n' << (pieces_.size() - 4) << '\n';
    for (std::size_t i = 4; i < pieces_.size(); ++i) {
        out << pieces_[i].size() << ':' << pieces_[i];
    }
    return out.str();
}

Tokenizer Tokenizer::deserialized(const std::string& bytes) {
    std::istringstream in(bytes);
    Tokenizer t;
    std::size_t count = 0;
    if (!(in >> t.concept_slots_ >> count)) throw std::runtime_error("tokenizer: corrupt vocabulary");
    in.get();  // newline
    t.pieces_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
    t.pieces_.reserve(count + 4);
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t len = 0;
        char sep = 0;
        if (!(in >> len) || !(in.get(sep)) || sep != ':')
            throw std::runtime_error("tokenizer: corrupt vocabulary entry");
        std::string piece(len, '\0');
        if (!in.read(piece.data(), std::streamsize(len)))
            throw std::runtime_error("tokenizer: truncated vocabulary entry");
        t.pieces_.push_back(std::move(piece));
    }
    t.rebuild_index();
    return t;
}

} // namespace fairicl
