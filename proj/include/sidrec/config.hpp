#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sidrec/corpusgen.hpp"
#include "sidrec/eval.hpp"
#include "sidrec/grpo.hpp"
#include "sidrec/policy.hpp"
#include "sidrec/quantizer.hpp"

namespace sidrec::cli {

// configuration problems exit with status 1, runtime failures with 2
struct ValidationError : Error {
    using Error::Error;
};

struct DatasetConfig {
    std::string kind = "synthetic";  // synthetic | files
    std::string catalog_path;
    std::string interactions_path;
    size_t n_items = 300;
    size_t n_users = 200;
    size_t n_categories = 8;
    double self_transition = 0.6;
    size_t seq_len_min = 8;
    size_t seq_len_max = 24;
    size_t k_core = 5;
    size_t max_len = 10;
    std::array<double, 3> ratios = {0.8, 0.1, 0.1};
};

struct CorpusSection {
    size_t budget = 2000;
    // task tag name -> mixture weight
    std::map<std::string, double> weights = {
        {"title2sid", 0.15},   {"sid2title", 0.10},     {"seqsid2title", 0.10},
        {"seqtitle2title", 0.10}, {"seqsid2sid", 0.15}, {"seqtitle2sid", 0.15},
        {"item_enrich", 0.075}, {"user_enrich", 0.075}, {"general", 0.10},
    };
    std::string general_path = "data/fixtures/general_reasoning.jsonl";
    size_t enrich_items = 24;
    size_t enrich_users = 24;
    corpus::TeacherConfig teacher;  // endpoint empty -> offline fallback
};

struct ActivationSection {
    size_t examples = 200;
};

struct EvalSection {
    std::vector<size_t> ks = {5, 10};
    std::vector<size_t> ns = {1, 2, 4, 8};
    size_t beam_width = 16;
    std::string reasoning = "none";
    double temperature = 1.0;
    size_t max_reasoning_tokens = 24;
    size_t max_examples = 100;
};

struct RunConfig {
    std::string run_dir = "run";
    uint64_t seed = 1;
    DatasetConfig dataset;
    quant::RqVaeConfig quantizer;
    size_t embed_dim = 64;
    CorpusSection corpus;
    policy::PolicyConfig policy;
    size_t min_freq = 1;
    policy::SftSchedule sft;
    ActivationSection activation;
    grpo::GrpoConfig rl;
    EvalSection eval;

    void validate() const;
};

// Strict parse: unknown keys are rejected with a nearest-key suggestion
// (e.g. rl.klcoef -> "did you mean rl.kl_coef?").
RunConfig parse_config(const std::string& json_text, const std::string& origin);
RunConfig load_config(const std::string& path);

// applies a repeatable `--set section.key=value` override to the raw JSON text
std::string apply_override(const std::string& json_text, const std::string& assignment);

// fnv-1a content hashes, hex encoded, for the run manifest
std::string text_hash(const std::string& text);
std::string file_hash(const std::string& path);

}  // namespace sidrec::cli
