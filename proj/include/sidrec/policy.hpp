#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sidrec/corpusgen.hpp"
#include "sidrec/sidspace.hpp"
#include "sidrec/tape.hpp"

namespace sidrec::policy {

using num::Tensor;

// Word-level tokenizer over V = language words + SID tokens + specials.
// SID tokens and specials are atomic; unknown words map to <|unk|>.
struct Vocab {
    std::vector<std::string> tokens;  // id -> surface string
    std::map<std::string, size_t> ids;
    size_t pad = 0, unk = 0, eot = 0, im_start = 0, im_end = 0;
    size_t sid_levels = 0;
    // SID token id -> (level, index); level == sid_levels is the suffix
    std::map<size_t, std::pair<size_t, size_t>> sid_info;

    size_t size() const { return tokens.size(); }
    bool is_sid(size_t id) const { return sid_info.count(id) > 0; }
    std::optional<size_t> sid_token_id(size_t level, size_t index) const;

    std::vector<size_t> encode(const std::string& text) const;
    std::string decode(const std::vector<size_t>& ids_in) const;
};

Vocab build_vocab(const std::vector<corpus::AlignmentExample>& corpus,
                  const quant::SidAssignment& assignment, size_t min_freq);

struct PolicyConfig {
    size_t layers = 2;
    size_t heads = 4;
    size_t width = 64;
    size_t ff_width = 256;
    size_t context = 320;
    uint64_t seed = 1;

    void validate() const;
};

struct Policy {
    PolicyConfig config;
    Vocab vocab;
    std::string stage = "init";  // init | aligned | activated | rl
    std::vector<Tensor> params;

    // parameter layout helpers (indices into params)
    size_t layer_base(size_t layer) const;
    size_t per_layer() const { return 8 + 4 * config.heads; }
};

Policy init_policy(const PolicyConfig& config, Vocab vocab);

// Training-side forward: [T, vocab] logits for the whole sequence on a tape.
num::Tape::Id forward_logits(num::Tape& t, const std::vector<num::Tape::Id>& params,
                             const PolicyConfig& config, const std::vector<size_t>& ids);

// Incremental scorer/sampler with a KV cache. Row-wise arithmetic matches
// forward_logits bit-for-bit, so incremental and full scoring agree exactly.
class Engine {
public:
    explicit Engine(const Policy& policy);
    // feeds one token, returns the next-token logits row
    const std::vector<double>& feed(size_t token_id);
    size_t length() const { return length_; }

private:
    const Policy& p_;
    size_t length_ = 0;
    std::vector<std::vector<std::vector<double>>> k_cache_, v_cache_;  // [layer][head][pos*hd]
    std::vector<double> logits_;
};

// log-softmax of a logits row divided by temperature; same arithmetic as the
// tape's scale + gather_log_softmax
double row_logprob(const std::vector<double>& logits, size_t target, double temperature);

struct SftSchedule {
    size_t epochs = 10;
    size_t batch_size = 8;
    double learning_rate = 3e-3;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    size_t patience = 2;        // alignment early stopping
    double val_fraction = 0.1;  // alignment validation share
    std::string optimizer = "adamw";
    uint64_t seed = 1;
};

struct SftReport {
    std::vector<double> epoch_loss;
    std::vector<double> val_accuracy;  // alignment stage only
    size_t steps = 0;
    size_t epochs_run = 0;
};

enum class SftStage { alignment, activation };

SftReport train_sft(Policy& policy, const std::vector<corpus::AlignmentExample>& corpus,
                    SftStage stage, const SftSchedule& schedule);

struct GenerationOutput {
    std::vector<size_t> reasoning_ids;
    std::vector<size_t> answer_ids;
    std::vector<double> logprobs;  // one per emitted token, reasoning then answer
    std::string stop_reason;       // complete | parse_failure | context_overflow
    std::string reasoning_text;
    std::string answer_text;
};

GenerationOutput generate(const Policy& policy, const std::vector<size_t>& context,
                          double temperature, size_t max_reasoning_tokens, uint64_t seed,
                          const sid::SidTrie* trie = nullptr);

struct RankedItem {
    std::string item_id;
    double score;  // sum of token log-probabilities
};

std::vector<RankedItem> rank_topk(const Policy& policy, const std::vector<size_t>& context,
                                  const std::vector<size_t>& reasoning, size_t k,
                                  size_t beam_width, const sid::SidTrie& trie);

std::vector<double> sequence_logprob(const Policy& policy, const std::vector<size_t>& context,
                                     const std::vector<size_t>& tokens,
                                     double temperature = 1.0);

void save_policy(const std::string& path, const Policy& policy);
Policy load_policy(const std::string& path);

// stream forms, for checkpoints that embed a policy
void write_policy(std::ostream& out, const Policy& policy);
Policy read_policy(std::istream& in);

}  // namespace sidrec::policy
