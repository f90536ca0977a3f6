#pragma once

#include <string>
#include <vector>

#include "sidrec/optim.hpp"
#include "sidrec/policy.hpp"
#include "sidrec/sidspace.hpp"

namespace sidrec::grpo {

struct GrpoConfig {
    size_t group_size = 8;
    double kl_coef = 1e-3;
    double clip = 0.2;
    double lambda = 0.1;          // format reward weight
    size_t batch_size = 32;       // rollouts per step, multiple of group_size
    double learning_rate = 1e-4;
    double temperature = 1.0;
    double adv_epsilon = 1e-6;
    std::string ratio_mode = "token";  // token | trajectory
    size_t max_steps = 40;
    size_t max_reasoning_tokens = 24;
    std::string optimizer = "sgd";
    double weight_decay = 0.0;
    double clip_norm = 1.0;
    size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
    uint64_t seed = 1;

    void validate() const;
};

struct Trajectory {
    std::vector<size_t> tokens;        // reasoning then answer, as emitted
    std::vector<double> old_logprobs;  // sampling-time, one per token
    std::vector<double> ref_logprobs;  // frozen reference, one per token
    std::string text;
    std::string stop_reason;
    size_t reasoning_len = 0;
};

struct TrajectoryGroup {
    std::vector<size_t> context;
    std::vector<Trajectory> trajectories;
    std::vector<double> rewards;
    std::vector<double> r_sr;
    std::vector<bool> valid;  // format reward earned
    std::vector<double> advantages;
    bool skip = false;  // all rewards equal: no policy term
};

// K_roll trajectories from the current policy, each with a derived seed;
// reference log-probabilities scored against the frozen checkpoint.
TrajectoryGroup rollout_group(const policy::Policy& current, const policy::Policy& reference,
                              const std::vector<size_t>& context, const GrpoConfig& config,
                              uint64_t seed);

void score_group(TrajectoryGroup& group, const sid::SidVocab& vocab, const sid::SidTrie& trie,
                 const quant::SidCode& truth, double lambda);

// (R - mean) / (std + eps) with population std; all-equal groups come back
// as exact zeros with the skip flag raised
std::pair<std::vector<double>, bool> group_advantages(const std::vector<double>& rewards,
                                                      double eps);

struct UpdateStats {
    double surrogate = 0.0;  // mean clipped policy objective
    double kl = 0.0;         // mean per-token KL estimate
    double grad_norm = 0.0;  // pre-clip
    size_t tokens = 0;
};

// One optimizer step over the batch: clipped surrogate with group-normalized
// advantages minus kl_coef times the exp(d)-d-1 KL estimator.
UpdateStats grpo_update(policy::Policy& current, const std::vector<TrajectoryGroup>& groups,
                        const GrpoConfig& config, num::Optimizer& opt);

struct RlExample {
    std::vector<size_t> context;
    quant::SidCode truth;
};

struct StepMetrics {
    size_t step = 0;
    double mean_reward = 0.0;
    double mean_r_sr = 0.0;
    double invalid_rate = 0.0;
    double mean_reasoning_len = 0.0;
    double kl = 0.0;
    double grad_norm = 0.0;
};

std::string metrics_json(const StepMetrics& m);

// Steps start_step..max_steps: sample contexts, roll out, score, update.
// Batch composition and rollout seeds derive statelessly from (seed, step),
// so a resumed run continues the interrupted one bit for bit.
std::vector<StepMetrics> rl_train(policy::Policy& current, const policy::Policy& reference,
                                  const std::vector<RlExample>& train,
                                  const sid::SidVocab& vocab, const sid::SidTrie& trie,
                                  const GrpoConfig& config, num::Optimizer& opt,
                                  size_t start_step = 0, const std::string& metrics_path = "",
                                  const std::string& checkpoint_dir = "");

// policy plus optimizer moments plus the next step index
void save_rl_state(const std::string& path, const policy::Policy& policy,
                   const num::Optimizer& opt, size_t next_step);
struct RlState {
    policy::Policy policy;
    size_t opt_step_count = 0;
    std::vector<num::Tensor> opt_m, opt_v;
    size_t next_step = 0;
};
RlState load_rl_state(const std::string& path);

}  // namespace sidrec::grpo
