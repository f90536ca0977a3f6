#include "sidrec/sidspace.hpp"

#include <cmath>

namespace sidrec::sid {

char SidVocab::level_letter(size_t level) const {
    if (level > levels || level > 25)
        throw Error("sid vocab: level " + std::to_string(level) + " out of range");
    return char('a' + level);
}

std::string SidVocab::token(size_t level, size_t index) const {
    return std::string("<") + level_letter(level) + "_" + std::to_string(index) + ">";
}

std::vector<std::string> SidVocab::all_tokens(size_t max_disambiguation) const {
    std::vector<std::string> out;
    for (size_t l = 0; l < levels; ++l)
        for (size_t k = 0; k < codewords; ++k) out.push_back(token(l, k));
    for (size_t i = 0; i < max_disambiguation; ++i) out.push_back(token(levels, i));
    return out;
}

SidTrie build_trie(const quant::SidAssignment& assignment) {
    SidTrie trie;
    trie.levels = assignment.levels;
    std::map<std::vector<size_t>, size_t> group_size;
    for (const auto& [id, sc] : assignment.by_item) {
        if (sc.codes.size() != assignment.levels)
            throw Error("build_trie: item " + id + " has " + std::to_string(sc.codes.size()) +
                        " codes, expected " + std::to_string(assignment.levels));
        ++group_size[sc.codes];
    }
    for (const auto& [id, sc] : assignment.by_item) {
        SidTrie::Node* node = &trie.root;
        for (size_t c : sc.codes) node = &node->children[c];
        if (group_size[sc.codes] > 1) node = &node->children[sc.disambiguation];
        if (node->terminal)
            throw Error("build_trie: duplicate SID path for items " + node->item_id + " and " + id);
        node->terminal = true;
        node->item_id = id;
    }
    return trie;
}

std::optional<std::string> SidTrie::resolve(const std::vector<size_t>& codes,
                                            std::optional<size_t> disambiguation) const {
    if (codes.size() != levels) return std::nullopt;
    const Node* node = &root;
    for (size_t c : codes) {
        auto it = node->children.find(c);
        if (it == node->children.end()) return std::nullopt;
        node = &it->second;
    }
    if (disambiguation) {
        auto it = node->children.find(*disambiguation);
        if (it == node->children.end() || !it->second.terminal) return std::nullopt;
        return it->second.item_id;
    }
    if (!node->terminal) return std::nullopt;  // collision group needs a suffix
    return node->item_id;
}

std::optional<std::string> SidTrie::resolve(const ParsedSid& sid) const {
    if (!sid.ok) return std::nullopt;
    return resolve(sid.codes, sid.disambiguation);
}

NextSet constrained_next(const SidTrie& trie, const std::vector<size_t>& prefix) {
    NextSet out;
    const SidTrie::Node* node = &trie.root;
    for (size_t c : prefix) {
        auto it = node->children.find(c);
        if (it == node->children.end()) return out;
        node = &it->second;
    }
    for (const auto& [code, child] : node->children) out.codes.insert(code);
    out.terminal = node->terminal;
    if (node->terminal) out.item_id = node->item_id;
    return out;
}

std::string render_sid(const SidVocab& vocab, const SidTrie& trie, const quant::SidCode& code) {
    std::string out;
    for (size_t l = 0; l < code.codes.size(); ++l) out += vocab.token(l, code.codes[l]);
    // suffix only when the plain tuple is ambiguous in the catalog
    if (!trie.resolve(code.codes, std::nullopt))
        out += vocab.token(vocab.levels, code.disambiguation);
    return out;
}

namespace {

struct TokenHit {
    size_t begin, end;  // [begin, end) in the text
    size_t level, index;
};

// all well-formed `<letter_INT>` tokens whose letter is a valid level
std::vector<TokenHit> scan_tokens(const SidVocab& vocab, const std::string& text) {
    std::vector<TokenHit> hits;
    for (size_t i = 0; i + 4 < text.size(); ++i) {
        if (text[i] != '<') continue;
        char letter = text[i + 1];
        if (letter < 'a' || size_t(letter - 'a') > vocab.levels) continue;
        if (text[i + 2] != '_') continue;
        size_t j = i + 3;
        while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
        if (j == i + 3 || j >= text.size() || text[j] != '>') continue;
        TokenHit h;
        h.begin = i;
        h.end = j + 1;
        h.level = size_t(letter - 'a');
        h.index = std::stoul(text.substr(i + 3, j - i - 3));
        hits.push_back(h);
    }
    return hits;
}

}  // namespace

ParsedSid parse_sid_text(const SidVocab& vocab, const std::string& text) {
    auto hits = scan_tokens(vocab, text);
    ParsedSid best = ParsedSid::failure();
    size_t L = vocab.levels;
    for (size_t i = 0; i + L <= hits.size(); ++i) {
        bool run = hits[i].level == 0;
        for (size_t l = 1; run && l < L; ++l)
            run = hits[i + l].level == l && hits[i + l].begin == hits[i + l - 1].end;
        if (!run) continue;
        ParsedSid p;
        p.ok = true;
        for (size_t l = 0; l < L; ++l) p.codes.push_back(hits[i + l].index);
        if (i + L < hits.size() && hits[i + L].level == L &&
            hits[i + L].begin == hits[i + L - 1].end)
            p.disambiguation = hits[i + L].index;
        best = p;  // keep scanning: the last complete run wins
    }
    return best;
}

RewardBreakdown compute_reward(const ParsedSid& predicted, const quant::SidCode& truth,
                               const SidTrie& trie, double lambda) {
    if (!trie.resolve(truth.codes, std::nullopt) && !trie.resolve(truth.codes, truth.disambiguation))
        throw Error("compute_reward: ground-truth codes missing from trie");
    RewardBreakdown rb;
    rb.lambda = lambda;
    if (!predicted.ok) return rb;  // parse failure: everything stays 0
    rb.parsed = true;
    size_t L = trie.levels;
    while (rb.m < L && predicted.codes[rb.m] == truth.codes[rb.m]) ++rb.m;
    rb.r_sr = std::ldexp(1.0, -int(L - rb.m));
    rb.r_f = trie.resolve(predicted) ? 1.0 : 0.0;
    rb.total = rb.r_sr + lambda * rb.r_f;
    return rb;
}

RewardBreakdown compute_reward(const SidVocab& vocab, const std::string& predicted_text,
                               const quant::SidCode& truth, const SidTrie& trie, double lambda) {
    return compute_reward(parse_sid_text(vocab, predicted_text), truth, trie, lambda);
}

}  // namespace sidrec::sid
