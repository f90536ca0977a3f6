#pragma once

#include <map>
#include <string>
#include <vector>

#include "sidrec/corpusgen.hpp"
#include "sidrec/policy.hpp"

namespace sidrec::eval {

struct EvalExample {
    std::vector<size_t> context;
    std::string target_item;
    quant::SidCode truth;
};

struct EvalConfig {
    std::vector<size_t> ks = {5, 10};
    size_t beam_width = 16;
    std::string reasoning = "none";  // none | greedy | sampled
    double temperature = 1.0;
    size_t max_reasoning_tokens = 24;
    double lambda = 0.1;
    uint64_t seed = 1;

    void validate() const;
};

struct EvalReport {
    std::map<size_t, double> recall;  // K -> Recall@K
    std::map<size_t, double> ndcg;    // K -> NDCG@K
    double invalid_rate = 0.0;
    double mean_reward = 0.0;
    double reasoning_mean = 0.0;
    double reasoning_median = 0.0;
    size_t examples = 0;
    std::string reasoning_mode;
    uint64_t seed = 0;
};

struct ExampleTranscript {
    std::string target_item;
    size_t rank = 0;  // 1-based within the ranked list, 0 if absent
    std::string reasoning_text;
    std::string generated_text;
    double reward = 0.0;
    std::string top_item;
};

// per-example NDCG for a single relevant item: 1/log2(1+rank), 0 past K
double ndcg_at(size_t rank, size_t k);

// metrics from precomputed 1-based target ranks (0 = target not retrieved)
EvalReport metrics_from_ranks(const std::vector<size_t>& ranks, const std::vector<size_t>& ks);

// Full-item ranking over the whole catalog via constrained beam search,
// optionally preceded by generated reasoning.
EvalReport evaluate_ranking(const policy::Policy& policy, const std::vector<EvalExample>& split,
                            const corpus::SidCatalog& catalog, const EvalConfig& config,
                            std::vector<ExampleTranscript>* transcripts = nullptr);

struct BestOfNResult {
    size_t n = 0;
    EvalReport report;
    std::vector<double> best_rewards;  // per example, selected reasoning's reward
};

// Nested sampling: per example the first N of max(Ns) sampled reasonings are
// considered, so the selected reward is non-decreasing in N.
std::vector<BestOfNResult> best_of_n(const policy::Policy& policy,
                                     const std::vector<EvalExample>& split,
                                     const corpus::SidCatalog& catalog,
                                     const std::vector<size_t>& ns, const EvalConfig& config);

// Ranks items by train-split target frequency (ties by item id) and applies
// the same metric definitions to the test split.
EvalReport popularity_baseline(const std::vector<std::string>& train_targets,
                               const std::vector<EvalExample>& test,
                               const corpus::SidCatalog& catalog, const std::vector<size_t>& ks);

std::string report_json(const EvalReport& report);
void write_report_json(const std::string& path, const std::vector<std::pair<std::string, EvalReport>>& reports);
void write_reports_csv(const std::string& path,
                       const std::vector<std::pair<std::string, EvalReport>>& reports);
void write_transcripts(const std::string& path, const std::vector<ExampleTranscript>& transcripts);

}  // namespace sidrec::eval
