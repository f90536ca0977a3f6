#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sidrec/quantizer.hpp"

namespace sidrec::sid {

// Token surface syntax: `<a_5><b_2><c_7>` with one letter per level, plus an
// optional next-letter suffix (`<d_i>` at L=3) that disambiguates collisions.
struct SidVocab {
    size_t levels = 3;
    size_t codewords = 8;

    // level == levels addresses the disambiguation suffix
    std::string token(size_t level, size_t index) const;
    char level_letter(size_t level) const;
    // all renderable tokens, suffix included, for vocabulary construction
    std::vector<std::string> all_tokens(size_t max_disambiguation) const;
};

struct ParsedSid {
    bool ok = false;
    std::vector<size_t> codes;  // L entries when ok
    std::optional<size_t> disambiguation;

    static ParsedSid failure() { return {}; }
};

struct SidTrie {
    struct Node {
        std::map<size_t, Node> children;
        std::string item_id;  // set on terminal nodes only
        bool terminal = false;
    };
    size_t levels = 0;
    Node root;

    // item_id iff the parsed SID names exactly one catalog item
    std::optional<std::string> resolve(const ParsedSid& sid) const;
    std::optional<std::string> resolve(const std::vector<size_t>& codes,
                                       std::optional<size_t> disambiguation) const;
};

SidTrie build_trie(const quant::SidAssignment& assignment);

struct NextSet {
    std::set<size_t> codes;  // allowed next code at this prefix
    bool terminal = false;   // prefix already names an item
    std::string item_id;
};
// prefix may run into the disambiguation level (length levels) for collisions
NextSet constrained_next(const SidTrie& trie, const std::vector<size_t>& prefix);

// Renders an item's SID; suffix emitted only when the code tuple collides.
std::string render_sid(const SidVocab& vocab, const SidTrie& trie, const quant::SidCode& code);

// Extracts the last complete run `<a_i><b_j><c_k>` (+ adjacent suffix) from
// free text. Never throws; returns failure when no complete run exists.
ParsedSid parse_sid_text(const SidVocab& vocab, const std::string& text);

struct RewardBreakdown {
    bool parsed = false;
    size_t m = 0;      // longest correct prefix over the L semantic levels
    double r_sr = 0.0;
    double r_f = 0.0;
    double lambda = 0.0;
    double total = 0.0;
};

RewardBreakdown compute_reward(const ParsedSid& predicted, const quant::SidCode& truth,
                               const SidTrie& trie, double lambda);
RewardBreakdown compute_reward(const SidVocab& vocab, const std::string& predicted_text,
                               const quant::SidCode& truth, const SidTrie& trie, double lambda);

}  // namespace sidrec::sid
