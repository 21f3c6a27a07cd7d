#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace fairicl {

// Word-level tokenizer with punctuation splitting. A piece is an optional
// leading space followed by either a run of [A-Za-z0-9'] or a single other
// character; '\n' and a space not followed by a word are pieces of their own.
// Pieces partition the input exactly, so decode(encode(text)) == text
// whenever every piece is in vocabulary. Ids 0..3 are pad/bos/eos/unk and the
// last `concept_slots` ids are reserved for concept tokens; none of the
// special ids can be produced by encoding text.
class Tokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    Tokenizer() = default;

    // Vocabulary = sorted unique pieces of the corpus texts.
    static Tokenizer build(const std::vector<std::string>& corpus, int concept_slots);

    std::vector<int> encode(const std::string& text) const;
    // Also reports each token's [begin, end) character range in `text`.
    std::vector<int> encode_with_offsets(const std::string& text,
                                         std::vector<std::pair<std::size_t, std::size_t>>& offsets) const;
    std::string decode(const std::vector<int>& ids) const;

    // Token index range [first, last) of the tokens overlapping the character
    // span [char_begin, char_end) of `text`.
    std::pair<std::size_t, std::size_t> token_span(const std::string& text, std::size_t char_begin,
                                                   std::size_t char_end) const;

    int vocab_size() const { return int(pieces_.size()) + concept_slots_; }
    int text_vocab_size() const { return int(pieces_.size()); }
    int concept_slots() const { return concept_slots_; }
    int concept_id(int slot) const { return int(pieces_.size()) + slot; }
    bool is_concept(int id) const { return id >= int(pieces_.size()) && id < vocab_size(); }
    bool is_special(int id) const { return id < 4 || is_concept(id); }

    // First id of ordinary text pieces (after the four specials).
    int first_text_id() const { return 4; }

    const std::vector<std::string>& pieces() const { return pieces_; }

    // Wire format used inside checkpoint sections.
    std::string serialized() const;
    static Tokenizer deserialized(const std::string& bytes);

    static std::vector<std::string> split_pieces(const std::string& text);
    static std::vector<std::pair<std::size_t, std::size_t>> split_offsets(const std::string& text);

private:
    std::vector<std::string> pieces_;  // id -> piece text; ids 0..3 are special markers
    std::unordered_map<std::string, int> ids_;
    int concept_slots_ = 0;

    void rebuild_index();
};

} // namespace fairicl
