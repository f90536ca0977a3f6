#include "sidrec/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace sidrec::data {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::vector<Item> load_catalog(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("load_catalog: cannot open " + path);
    std::vector<Item> items;
    std::map<std::string, size_t> seen;  // item_id -> first line number
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw Error("load_catalog: line " + std::to_string(lineno) + ": " + e.what());
        }
        for (const char* key : {"item_id", "title"}) {
            if (!j.contains(key))
                throw Error("load_catalog: line " + std::to_string(lineno) + ": missing key '" +
                            key + "'");
        }
        Item it;
        it.item_id = j.at("item_id").get<std::string>();
        it.title = j.at("title").get<std::string>();
        it.description = j.value("description", "");
        it.category = j.value("category", "");
        if (it.item_id.empty())
            throw Error("load_catalog: line " + std::to_string(lineno) + ": empty item_id");
        if (it.title.empty())
            throw Error("load_catalog: line " + std::to_string(lineno) + ": empty title");
        auto [pos, inserted] = seen.emplace(it.item_id, lineno);
        if (!inserted)
            throw Error("load_catalog: duplicate item_id '" + it.item_id + "' on lines " +
                        std::to_string(pos->second) + " and " + std::to_string(lineno));
        items.push_back(std::move(it));
    }
    return items;
}

void write_catalog(const std::string& path, const std::vector<Item>& items) {
    std::ofstream out(path);
    if (!out) throw Error("write_catalog: cannot open " + path);
    for (const Item& it : items) {
        ordered_json j;
        j["item_id"] = it.item_id;
        j["title"] = it.title;
        j["description"] = it.description;
        j["category"] = it.category;
        out << j.dump() << "\n";
    }
}

std::vector<Interaction> load_interactions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("load_interactions: cannot open " + path);
    std::vector<Interaction> rows;
    std::string line;
    size_t lineno = 0;
    bool csv_mode = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (lineno == 1 && line.rfind("user_id", 0) == 0) {
            csv_mode = true;
            continue;
        }
        Interaction r;
        if (csv_mode || line[0] != '{') {
            std::stringstream ss(line);
            std::string u, i, t;
            if (!std::getline(ss, u, ',') || !std::getline(ss, i, ',') || !std::getline(ss, t))
                throw Error("load_interactions: line " + std::to_string(lineno) +
                            ": expected user_id,item_id,timestamp");
            r.user_id = u;
            r.item_id = i;
            r.timestamp = std::stoll(t);
        } else {
            json j;
            try {
                j = json::parse(line);
            } catch (const json::parse_error& e) {
                throw Error("load_interactions: line " + std::to_string(lineno) + ": " + e.what());
            }
            for (const char* key : {"user_id", "item_id", "timestamp"}) {
                if (!j.contains(key))
                    throw Error("load_interactions: line " + std::to_string(lineno) +
                                ": missing key '" + key + "'");
            }
            r.user_id = j.at("user_id").get<std::string>();
            r.item_id = j.at("item_id").get<std::string>();
            r.timestamp = j.at("timestamp").get<int64_t>();
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_interactions(const std::string& path, const std::vector<Interaction>& inter) {
    std::ofstream out(path);
    if (!out) throw Error("write_interactions: cannot open " + path);
    for (const Interaction& r : inter) {
        ordered_json j;
        j["user_id"] = r.user_id;
        j["item_id"] = r.item_id;
        j["timestamp"] = r.timestamp;
        out << j.dump() << "\n";
    }
}

std::vector<Interaction> k_core_filter(std::vector<Interaction> interactions, size_t k) {
    if (k < 1) throw Error("k_core_filter: k must be >= 1");
    bool changed = true;
    while (changed) {
        changed = false;
        std::map<std::string, size_t> udeg, ideg;
        for (const Interaction& r : interactions) {
            ++udeg[r.user_id];
            ++ideg[r.item_id];
        }
        std::vector<Interaction> kept;
        kept.reserve(interactions.size());
        for (Interaction& r : interactions) {
            if (udeg[r.user_id] >= k && ideg[r.item_id] >= k)
                kept.push_back(std::move(r));
            else
                changed = true;
        }
        interactions = std::move(kept);
    }
    return interactions;
}

SplitDataset build_split_sequences(const std::vector<Interaction>& interactions, size_t max_len,
                                   std::array<double, 3> ratios) {
    if (max_len < 1) throw Error("build_split_sequences: max_len must be >= 1");
    for (double r : ratios)
        if (!(r > 0.0)) throw Error("build_split_sequences: ratios must be positive");
    double rsum = ratios[0] + ratios[1] + ratios[2];

    std::map<std::string, std::vector<Interaction>> by_user;
    for (const Interaction& r : interactions) by_user[r.user_id].push_back(r);

    SplitDataset out;
    for (auto& [user, rows] : by_user) {
        if (rows.size() < 2) {
            ++out.dropped_users;
            continue;
        }
        std::sort(rows.begin(), rows.end(), [](const Interaction& a, const Interaction& b) {
            if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
            return a.item_id < b.item_id;
        });
        size_t n_examples = rows.size() - 1;
        size_t n_test = size_t(std::ceil(n_examples * ratios[2] / rsum));
        size_t n_val = size_t(std::ceil(n_examples * ratios[1] / rsum));
        if (n_test + n_val > n_examples) n_val = n_examples - n_test;
        size_t n_train = n_examples - n_test - n_val;

        for (size_t t = 1; t < rows.size(); ++t) {
            Example ex;
            ex.user_id = user;
            size_t start = t > max_len ? t - max_len : 0;
            for (size_t i = start; i < t; ++i) ex.history.push_back(rows[i].item_id);
            ex.target = rows[t].item_id;
            size_t pos = t - 1;  // example index, chronological
            if (pos < n_train)
                out.train.push_back(std::move(ex));
            else if (pos < n_train + n_val)
                out.val.push_back(std::move(ex));
            else
                out.test.push_back(std::move(ex));
        }
    }
    return out;
}

std::vector<std::vector<double>> self_transition_matrix(size_t n, double self_p) {
    std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < n; ++j)
            m[i][j] = (i == j) ? self_p : (n > 1 ? (1.0 - self_p) / double(n - 1) : 0.0);
        if (n == 1) m[i][i] = 1.0;
    }
    return m;
}

namespace {

// Word pools for synthetic titles/descriptions; each category takes a
// disjoint 12-word slice so embeddings cluster by category.
const char* kWords[] = {
    "arcane",  "blade",    "citadel",  "dragon",   "ember",    "fortress", "grimoire", "hex",
    "knight",  "legend",   "mystic",   "quest",    "circuit",  "console",  "docking",  "ethernet",
    "firmware", "gamepad", "headset",  "joystick", "keyboard", "monitor",  "router",   "sensor",
    "acoustic", "ballad",  "chord",    "drum",     "echo",     "fiddle",   "guitar",   "harmony",
    "jazz",    "keys",     "lyric",    "melody",   "anchor",   "buoy",     "compass",  "deck",
    "estuary", "fathom",   "galleon",  "harbor",   "island",   "jetty",    "keel",     "lagoon",
    "almond",  "basil",    "cinnamon", "date",     "espresso", "fennel",   "ginger",   "honey",
    "infusion", "juniper", "kale",     "lemon",    "alpine",   "boulder",  "crag",     "descent",
    "elevation", "foothill", "glacier", "highland", "icefall", "juncture", "knoll",    "ledge",
    "atlas",   "border",   "canyon",   "desert",   "expanse",  "frontier", "grove",    "horizon",
    "inlet",   "junction", "kingdom",  "lowland",  "amber",    "bronze",   "copper",   "diamond",
    "emerald", "flint",    "granite",  "hematite", "ivory",    "jade",     "kryptonite", "limestone",
};
constexpr size_t kWordCount = sizeof(kWords) / sizeof(kWords[0]);
constexpr size_t kPoolSize = 12;

const char* pool_word(size_t category, size_t i) {
    return kWords[(category * kPoolSize + i % kPoolSize) % kWordCount];
}

}  // namespace

std::pair<std::vector<Item>, std::vector<Interaction>> synth_dataset(const SynthConfig& cfg) {
    if (cfg.n_categories == 0) throw Error("synth_dataset: n_categories must be >= 1");
    if (cfg.seq_len_min < 1 || cfg.seq_len_max < cfg.seq_len_min)
        throw Error("synth_dataset: invalid seq_len range");
    auto tm = cfg.transition_matrix.empty()
                  ? self_transition_matrix(cfg.n_categories, 1.0 / double(cfg.n_categories))
                  : cfg.transition_matrix;
    if (tm.size() != cfg.n_categories)
        throw Error("synth_dataset: transition_matrix must have n_categories rows");
    for (const auto& row : tm) {
        if (row.size() != cfg.n_categories)
            throw Error("synth_dataset: transition_matrix must be square");
        double s = 0.0;
        for (double v : row) {
            if (v < 0.0) throw Error("synth_dataset: transition probabilities must be >= 0");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-9)
            throw Error("synth_dataset: transition_matrix row does not sum to 1");
    }

    Rng rng(cfg.seed);
    Rng item_rng = rng.derive(1);
    Rng user_rng = rng.derive(2);

    std::vector<Item> items;
    items.reserve(cfg.n_items);
    std::vector<std::vector<size_t>> by_category(cfg.n_categories);
    for (size_t i = 0; i < cfg.n_items; ++i) {
        size_t c = item_rng.below(cfg.n_categories);
        Item it;
        it.item_id = "item_" + std::to_string(i);
        it.category = std::string("cat_") + pool_word(c, 0);
        std::string title;
        for (int w = 0; w < 3; ++w) {
            if (w) title += " ";
            title += pool_word(c, item_rng.below(kPoolSize));
        }
        it.title = title + " " + std::to_string(i);
        size_t dlen = 6 + item_rng.below(6);
        std::string desc;
        for (size_t w = 0; w < dlen; ++w) {
            if (w) desc += " ";
            desc += pool_word(c, item_rng.below(kPoolSize));
        }
        it.description = desc;
        by_category[c].push_back(i);
        items.push_back(std::move(it));
    }
    for (size_t c = 0; c < cfg.n_categories; ++c)
        if (by_category[c].empty())
            // retry with another seed rather than emitting an empty category
            throw Error("synth_dataset: category " + std::to_string(c) +
                        " received no items; increase n_items or change seed");

    std::vector<Interaction> inter;
    for (size_t u = 0; u < cfg.n_users; ++u) {
        Rng ur = user_rng.derive(u);
        size_t len = cfg.seq_len_min + ur.below(cfg.seq_len_max - cfg.seq_len_min + 1);
        size_t c = ur.below(cfg.n_categories);
        for (size_t t = 0; t < len; ++t) {
            if (t > 0) {
                double p = ur.uniform();
                double acc = 0.0;
                size_t next = cfg.n_categories - 1;
                for (size_t j = 0; j < cfg.n_categories; ++j) {
                    acc += tm[c][j];
                    if (p < acc) {
                        next = j;
                        break;
                    }
                }
                c = next;
            }
            const auto& pool = by_category[c];
            Interaction r;
            r.user_id = "user_" + std::to_string(u);
            r.item_id = items[pool[ur.below(pool.size())]].item_id;
            r.timestamp = int64_t(1600000000) + int64_t(u) * 100000 + int64_t(t) * 60;
            inter.push_back(std::move(r));
        }
    }
    return {std::move(items), std::move(inter)};
}

}  // namespace sidrec::data
