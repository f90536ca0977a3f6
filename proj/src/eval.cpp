#include "sidrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "sidrec/sidspace.hpp"

namespace sidrec::eval {

void EvalConfig::validate() const {
    if (ks.empty()) throw Error("eval config: ks must be non-empty");
    for (size_t k : ks)
        if (k == 0) throw Error("eval config: ks must be positive");
    size_t max_k = *std::max_element(ks.begin(), ks.end());
    if (beam_width < max_k)
        throw Error("eval config: beam_width " + std::to_string(beam_width) +
                    " is smaller than max K " + std::to_string(max_k));
    if (reasoning != "none" && reasoning != "greedy" && reasoning != "sampled")
        throw Error("eval config: reasoning mode must be none, greedy, or sampled");
    if (temperature <= 0.0) throw Error("eval config: temperature must be positive");
}

double ndcg_at(size_t rank, size_t k) {
    if (rank == 0 || rank > k) return 0.0;
    return 1.0 / std::log2(double(rank) + 1.0);
}

EvalReport metrics_from_ranks(const std::vector<size_t>& ranks, const std::vector<size_t>& ks) {
    if (ranks.empty()) throw Error("metrics_from_ranks: empty split");
    EvalReport r;
    r.examples = ranks.size();
    for (size_t k : ks) {
        double rec = 0.0, nd = 0.0;
        for (size_t rank : ranks) {
            if (rank > 0 && rank <= k) rec += 1.0;
            nd += ndcg_at(rank, k);
        }
        r.recall[k] = rec / double(ranks.size());
        r.ndcg[k] = nd / double(ranks.size());
    }
    return r;
}

namespace {

size_t catalog_size(const corpus::SidCatalog& catalog) { return catalog.items.size(); }

size_t rank_of(const std::vector<policy::RankedItem>& ranked, const std::string& target) {
    for (size_t i = 0; i < ranked.size(); ++i)
        if (ranked[i].item_id == target) return i + 1;
    return 0;
}

double median(std::vector<double> xs) {
    if (xs.empty()) return 0.0;
    std::sort(xs.begin(), xs.end());
    size_t n = xs.size();
    return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace

EvalReport evaluate_ranking(const policy::Policy& policy, const std::vector<EvalExample>& split,
                            const corpus::SidCatalog& catalog, const EvalConfig& config,
                            std::vector<ExampleTranscript>* transcripts) {
    config.validate();
    if (split.empty()) throw Error("evaluate_ranking: empty split");
    size_t max_k = *std::max_element(config.ks.begin(), config.ks.end());
    size_t k = std::min(max_k, catalog_size(catalog));

    std::vector<size_t> ranks;
    std::vector<double> rewards, lens;
    size_t invalid = 0;
    Rng base(config.seed);
    for (size_t i = 0; i < split.size(); ++i) {
        const EvalExample& ex = split[i];
        // free generation supplies the reasoning prefix and the reward stats
        size_t budget = config.reasoning == "none" ? 0 : config.max_reasoning_tokens;
        double temp = config.reasoning == "sampled" ? config.temperature : 0.0;
        auto gen = policy::generate(policy, ex.context, temp, budget, base.derive(i).state());
        auto rb = sid::compute_reward(catalog.vocab, gen.reasoning_text + gen.answer_text,
                                      ex.truth, catalog.trie, config.lambda);
        rewards.push_back(rb.total);
        lens.push_back(double(gen.reasoning_ids.size()));
        if (rb.r_f == 0.0) ++invalid;

        auto ranked = policy::rank_topk(policy, ex.context, gen.reasoning_ids, k,
                                        config.beam_width, catalog.trie);
        size_t rank = rank_of(ranked, ex.target_item);
        ranks.push_back(rank);
        if (transcripts) {
            ExampleTranscript tr;
            tr.target_item = ex.target_item;
            tr.rank = rank;
            tr.reasoning_text = gen.reasoning_text;
            tr.generated_text = gen.reasoning_text + gen.answer_text;
            tr.reward = rb.total;
            tr.top_item = ranked.empty() ? "" : ranked[0].item_id;
            transcripts->push_back(tr);
        }
    }

    EvalReport r = metrics_from_ranks(ranks, config.ks);
    for (double rw : rewards) r.mean_reward += rw;
    r.mean_reward /= double(rewards.size());
    r.invalid_rate = double(invalid) / double(split.size());
    for (double l : lens) r.reasoning_mean += l;
    r.reasoning_mean /= double(lens.size());
    r.reasoning_median = median(lens);
    r.reasoning_mode = config.reasoning;
    r.seed = config.seed;
    return r;
}

std::vector<BestOfNResult> best_of_n(const policy::Policy& policy,
                                     const std::vector<EvalExample>& split,
                                     const corpus::SidCatalog& catalog,
                                     const std::vector<size_t>& ns, const EvalConfig& config) {
    config.validate();
    if (ns.empty() || split.empty()) throw Error("best_of_n: empty split or N list");
    size_t max_n = *std::max_element(ns.begin(), ns.end());
    if (max_n == 0) throw Error("best_of_n: N must be at least 1");
    size_t max_k = *std::max_element(config.ks.begin(), config.ks.end());
    size_t k = std::min(max_k, catalog_size(catalog));

    // per example: max_n sampled reasonings with their induced-answer rewards
    struct Candidate {
        std::vector<size_t> reasoning;
        double reward = 0.0;
    };
    std::vector<std::vector<Candidate>> pools;
    Rng base(config.seed);
    for (size_t i = 0; i < split.size(); ++i) {
        const EvalExample& ex = split[i];
        std::vector<Candidate> pool;
        for (size_t j = 0; j < max_n; ++j) {
            Candidate c;
            auto gen = policy::generate(policy, ex.context, config.temperature,
                                        config.max_reasoning_tokens, base.derive(i, j).state());
            c.reasoning = gen.reasoning_ids;
            // induced answer: constrained greedy continuation of this reasoning
            auto top = policy::rank_topk(policy, ex.context, c.reasoning, 1, 1, catalog.trie);
            auto rb = sid::compute_reward(catalog.vocab, catalog.sid_string(top[0].item_id),
                                          ex.truth, catalog.trie, config.lambda);
            c.reward = rb.total;
            pool.push_back(std::move(c));
        }
        pools.push_back(std::move(pool));
    }

    std::vector<BestOfNResult> results;
    for (size_t n : ns) {
        BestOfNResult res;
        res.n = n;
        std::vector<size_t> ranks;
        std::vector<double> lens;
        for (size_t i = 0; i < split.size(); ++i) {
            // first N candidates; earliest wins ties so the choice is nested
            size_t best = 0;
            for (size_t j = 1; j < n && j < pools[i].size(); ++j)
                if (pools[i][j].reward > pools[i][best].reward) best = j;
            const Candidate& c = pools[i][best];
            res.best_rewards.push_back(c.reward);
            auto ranked = policy::rank_topk(policy, split[i].context, c.reasoning, k,
                                            config.beam_width, catalog.trie);
            ranks.push_back(rank_of(ranked, split[i].target_item));
            lens.push_back(double(c.reasoning.size()));
        }
        res.report = metrics_from_ranks(ranks, config.ks);
        for (double rw : res.best_rewards) res.report.mean_reward += rw;
        res.report.mean_reward /= double(res.best_rewards.size());
        for (double l : lens) res.report.reasoning_mean += l;
        res.report.reasoning_mean /= double(lens.size());
        res.report.reasoning_median = median(lens);
        res.report.reasoning_mode = "sampled";
        res.report.seed = config.seed;
        results.push_back(std::move(res));
    }
    return results;
}

EvalReport popularity_baseline(const std::vector<std::string>& train_targets,
                               const std::vector<EvalExample>& test,
                               const corpus::SidCatalog& catalog, const std::vector<size_t>& ks) {
    if (train_targets.empty()) throw Error("popularity_baseline: empty train split");
    if (test.empty()) throw Error("popularity_baseline: empty test split");
    std::map<std::string, size_t> counts;
    for (const auto& [id, item] : catalog.items) counts[id] = 0;
    for (const auto& id : train_targets) {
        if (!counts.count(id))
            throw Error("popularity_baseline: train target " + id + " not in catalog");
        ++counts[id];
    }
    std::vector<std::pair<std::string, size_t>> order(counts.begin(), counts.end());
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::map<std::string, size_t> rank_by_item;
    for (size_t i = 0; i < order.size(); ++i) rank_by_item[order[i].first] = i + 1;

    std::vector<size_t> ranks;
    for (const auto& ex : test) {
        auto it = rank_by_item.find(ex.target_item);
        ranks.push_back(it == rank_by_item.end() ? 0 : it->second);
    }
    EvalReport r = metrics_from_ranks(ranks, ks);
    r.reasoning_mode = "popularity";
    return r;
}

std::string report_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    for (const auto& [k, v] : report.recall) j["recall@" + std::to_string(k)] = v;
    for (const auto& [k, v] : report.ndcg) j["ndcg@" + std::to_string(k)] = v;
    j["invalid_rate"] = report.invalid_rate;
    j["mean_reward"] = report.mean_reward;
    j["reasoning_mean"] = report.reasoning_mean;
    j["reasoning_median"] = report.reasoning_median;
    j["examples"] = report.examples;
    j["reasoning_mode"] = report.reasoning_mode;
    j["seed"] = report.seed;
    return j.dump();
}

void write_report_json(const std::string& path,
                       const std::vector<std::pair<std::string, EvalReport>>& reports) {
    nlohmann::ordered_json j;
    for (const auto& [label, rep] : reports) j[label] = nlohmann::json::parse(report_json(rep));
    std::ofstream out(path);
    if (!out) throw Error("write_report_json: cannot open " + path);
    out << j.dump(2) << "\n";
}

void write_reports_csv(const std::string& path,
                       const std::vector<std::pair<std::string, EvalReport>>& reports) {
    if (reports.empty()) throw Error("write_reports_csv: no reports");
    std::ofstream out(path);
    if (!out) throw Error("write_reports_csv: cannot open " + path);
    out << "label";
    for (const auto& [k, v] : reports[0].second.recall) out << ",recall@" << k;
    for (const auto& [k, v] : reports[0].second.ndcg) out << ",ndcg@" << k;
    out << ",invalid_rate,mean_reward,reasoning_mean,examples\n";
    for (const auto& [label, rep] : reports) {
        out << label;
        // JSON double formatting keeps the bytes stable across reruns
        for (const auto& [k, v] : rep.recall) out << "," << nlohmann::json(v).dump();
        for (const auto& [k, v] : rep.ndcg) out << "," << nlohmann::json(v).dump();
        out << "," << nlohmann::json(rep.invalid_rate).dump()
            << "," << nlohmann::json(rep.mean_reward).dump()
            << "," << nlohmann::json(rep.reasoning_mean).dump() << "," << rep.examples << "\n";
    }
}

void write_transcripts(const std::string& path, const std::vector<ExampleTranscript>& transcripts) {
    std::ofstream out(path);
    if (!out) throw Error("write_transcripts: cannot open " + path);
    for (const auto& tr : transcripts) {
        nlohmann::ordered_json j;
        j["target_item"] = tr.target_item;
        j["rank"] = tr.rank;
        j["reasoning"] = tr.reasoning_text;
        j["generated"] = tr.generated_text;
        j["reward"] = tr.reward;
        j["top_item"] = tr.top_item;
        out << j.dump() << "\n";
    }
}

}  // namespace sidrec::eval
