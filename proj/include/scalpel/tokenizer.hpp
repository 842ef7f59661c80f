#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "scalpel/common.hpp"

namespace scalpel {

// Character-level tokenizer. Ids 0..2 are reserved for padding,
// begin-of-sequence and end-of-sequence; the remaining ids are the distinct
// corpus characters in sorted order, so a vocabulary is reproducible from
// the corpus alone.
class Tokenizer {
public:
    static constexpr i64 kPad = 0;
    static constexpr i64 kBos = 1;
    static constexpr i64 kEos = 2;

    static Tokenizer fit(const std::vector<std::string>& texts) {
        std::set<char> chars;
        for (const auto& t : texts)
            for (char c : t) chars.insert(c);
        std::string alphabet(chars.begin(), chars.end());
        return from_alphabet(alphabet);
    }

    // Rebuilds a tokenizer from the id-ordered character list (ids 3 and up),
    // as persisted in checkpoint metadata.
    static Tokenizer from_alphabet(const std::string& alphabet) {
        Tokenizer tk;
        tk.alphabet_ = alphabet;
        for (std::size_t i = 0; i < alphabet.size(); ++i) {
            char c = alphabet[i];
            if (tk.to_id_.count(c))
                throw InputError(std::string("tokenizer alphabet repeats character '") + c + "'");
            tk.to_id_[c] = static_cast<i64>(i) + 3;
        }
        return tk;
    }

    i64 vocab_size() const { return static_cast<i64>(alphabet_.size()) + 3; }
    const std::string& alphabet() const { return alphabet_; }

    std::vector<i64> encode(const std::string& text) const {
        std::vector<i64> ids;
        ids.reserve(text.size());
        for (char c : text) {
            auto it = to_id_.find(c);
            if (it == to_id_.end())
                throw InputError(std::string("tokenizer: unknown character '") + c + "' (code " +
                                 std::to_string(static_cast<int>(static_cast<unsigned char>(c))) +
                                 ")");
            ids.push_back(it->second);
        }
        return ids;
    }

    // Inverse of encode; reserved ids decode to nothing.
    std::string decode(const std::vector<i64>& ids) const {
        std::string out;
        out.reserve(ids.size());
        for (i64 id : ids) {
            if (id >= 3 && id < vocab_size()) {
                out.push_back(alphabet_[static_cast<std::size_t>(id - 3)]);
            } else if (id < 0 || id >= vocab_size()) {
                throw InputError("tokenizer: id " + std::to_string(id) + " outside vocabulary");
            }
        }
        return out;
    }

private:
    std::string alphabet_;
    std::map<char, i64> to_id_;
};

}  // namespace scalpel
