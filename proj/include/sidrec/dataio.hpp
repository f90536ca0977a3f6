#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sidrec/util.hpp"

namespace sidrec::data {

struct Item {
    std::string item_id;
    std::string title;
    std::string description;
    std::string category;
};

struct Interaction {
    std::string user_id;
    std::string item_id;
    int64_t timestamp = 0;
};

struct Example {
    std::string user_id;
    std::vector<std::string> history;  // item ids, oldest first
    std::string target;
};

struct SplitDataset {
    std::vector<Example> train, val, test;
    size_t dropped_users = 0;  // users with < 2 interactions contribute no examples
};

// Catalog: JSON-lines with item_id/title/description/category; extra keys ignored.
std::vector<Item> load_catalog(const std::string& path);
void write_catalog(const std::string& path, const std::vector<Item>& items);

// Interactions: JSON-lines (user_id, item_id, timestamp) or CSV with that header.
std::vector<Interaction> load_interactions(const std::string& path);
void write_interactions(const std::string& path, const std::vector<Interaction>& inter);

// Maximal subset where every remaining user and item has >= k interactions.
std::vector<Interaction> k_core_filter(std::vector<Interaction> interactions, size_t k);

// Sliding-window examples with a per-user temporal split: newest to test,
// then val, remainder train. Timestamp ties break by item_id.
SplitDataset build_split_sequences(const std::vector<Interaction>& interactions, size_t max_len,
                                   std::array<double, 3> ratios);

struct SynthConfig {
    size_t n_items = 300;
    size_t n_users = 200;
    size_t n_categories = 8;
    std::vector<std::vector<double>> transition_matrix;  // rows sum to 1; empty -> uniform
    size_t seq_len_min = 8;
    size_t seq_len_max = 24;
    uint64_t seed = 1;
};

// Deterministic synthetic catalog + interaction log with Markov category structure.
std::pair<std::vector<Item>, std::vector<Interaction>> synth_dataset(const SynthConfig& cfg);

// Diagonal-dominant transition matrix helper: self_p on the diagonal, rest uniform.
std::vector<std::vector<double>> self_transition_matrix(size_t n_categories, double self_p);

}  // namespace sidrec::data
