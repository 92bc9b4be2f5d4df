#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "crl/tensor.hpp"

namespace crl {

// Word <-> id table. Id 0 is reserved for padding.
class Vocabulary {
public:
    Vocabulary() { words_.push_back("<pad>"); }

    int add(const std::string& w) {
        auto it = index_.find(w);
        if (it != index_.end()) return it->second;
        const int id = static_cast<int>(words_.size());
        words_.push_back(w);
        index_.emplace(w, id);
        return id;
    }

    int id(const std::string& w) const {
        auto it = index_.find(w);
        if (it == index_.end()) throw UsageError("word not in vocabulary: " + w);
        return it->second;
    }

    bool contains(const std::string& w) const { return index_.count(w) > 0; }

    const std::string& word(int id) const {
        if (id < 0 || id >= static_cast<int>(words_.size()))
            throw UsageError("token id out of range: " + std::to_string(id));
        return words_[static_cast<std::size_t>(id)];
    }

    int size() const { return static_cast<int>(words_.size()); }

private:
    std::vector<std::string> words_;
    std::map<std::string, int> index_;
};

// Episode text: fixed-capacity sentence x token grid of ids, pad id 0.
struct TextManual {
    int num_sent = 0;
    int l_sent = 0;
    std::vector<int> tokens;   // num_sent * l_sent
    std::vector<int> lengths;  // per sentence; 0 marks an unused slot
    int sentence_count = 0;

    int token(int s, int t) const { return tokens[static_cast<std::size_t>(s) * l_sent + t]; }

    std::vector<int> sentence_ids(int s) const {
        std::vector<int> out;
        for (int t = 0; t < lengths[static_cast<std::size_t>(s)]; ++t) out.push_back(token(s, t));
        return out;
    }

    bool operator==(const TextManual& o) const = default;
};

inline std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

inline std::vector<std::string> split_words(const std::string& sentence) {
    std::istringstream ss(sentence);
    std::vector<std::string> out;
    std::string w;
    while (ss >> w) out.push_back(w);
    return out;
}

// Builds a manual from rendered sentence strings. Throws if a sentence
// exceeds capacity or uses an unknown word.
inline TextManual tokenize_manual(const std::vector<std::string>& sentences,
                                  const Vocabulary& vocab, int num_sent, int l_sent) {
    if (static_cast<int>(sentences.size()) > num_sent)
        throw UsageError("manual has more sentences than num_sent capacity");
    TextManual m;
    m.num_sent = num_sent;
    m.l_sent = l_sent;
    m.tokens.assign(static_cast<std::size_t>(num_sent) * l_sent, 0);
    m.lengths.assign(static_cast<std::size_t>(num_sent), 0);
    m.sentence_count = static_cast<int>(sentences.size());
    for (int s = 0; s < m.sentence_count; ++s) {
        const auto words = split_words(sentences[static_cast<std::size_t>(s)]);
        if (static_cast<int>(words.size()) > l_sent)
            throw UsageError("sentence exceeds l_sent tokens: " + sentences[static_cast<std::size_t>(s)]);
        m.lengths[static_cast<std::size_t>(s)] = static_cast<int>(words.size());
        for (std::size_t t = 0; t < words.size(); ++t)
            m.tokens[static_cast<std::size_t>(s) * l_sent + t] = vocab.id(words[t]);
    }
    return m;
}

inline std::string decode_sentence(const TextManual& m, int s, const Vocabulary& vocab) {
    std::string out;
    for (int t = 0; t < m.lengths[static_cast<std::size_t>(s)]; ++t) {
        if (t) out += " ";
        out += vocab.word(m.token(s, t));
    }
    return out;
}

inline std::vector<std::string> decode_manual(const TextManual& m, const Vocabulary& vocab) {
    std::vector<std::string> out;
    for (int s = 0; s < m.sentence_count; ++s) out.push_back(decode_sentence(m, s, vocab));
    return out;
}

}  // namespace crl
