#include "sidrec/grpo.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "sidrec/serialize.hpp"
#include "sidrec/tape.hpp"

namespace sidrec::grpo {

using num::Tape;
using num::Tensor;

void GrpoConfig::validate() const {
    if (group_size < 2) throw Error("grpo config: group_size must be >= 2");
    if (clip <= 0.0 || clip >= 1.0) throw Error("grpo config: clip must lie in (0, 1)");
    if (learning_rate <= 0.0 || temperature <= 0.0)
        throw Error("grpo config: rates must be positive");
    if (kl_coef < 0.0 || lambda < 0.0 || adv_epsilon <= 0.0)
        throw Error("grpo config: coefficients must be non-negative (adv_epsilon positive)");
    if (batch_size < group_size || batch_size % group_size != 0)
        throw Error("grpo config: batch_size must be a positive multiple of group_size");
    if (ratio_mode != "token" && ratio_mode != "trajectory")
        throw Error("grpo config: ratio_mode must be token or trajectory");
    if (max_steps == 0) throw Error("grpo config: max_steps must be positive");
}

TrajectoryGroup rollout_group(const policy::Policy& current, const policy::Policy& reference,
                              const std::vector<size_t>& context, const GrpoConfig& config,
                              uint64_t seed) {
    if (config.temperature <= 0.0) throw Error("rollout_group: temperature must be positive");
    TrajectoryGroup g;
    g.context = context;
    Rng base(seed);
    for (size_t k = 0; k < config.group_size; ++k) {
        auto out = policy::generate(current, context, config.temperature,
                                    config.max_reasoning_tokens, base.derive(k).state());
        Trajectory tr;
        tr.tokens = out.reasoning_ids;
        tr.tokens.insert(tr.tokens.end(), out.answer_ids.begin(), out.answer_ids.end());
        tr.old_logprobs = out.logprobs;
        tr.text = current.vocab.decode(tr.tokens);
        tr.stop_reason = out.stop_reason;
        tr.reasoning_len = out.reasoning_ids.size();
        if (!tr.tokens.empty())
            tr.ref_logprobs =
                policy::sequence_logprob(reference, context, tr.tokens, config.temperature);
        g.trajectories.push_back(std::move(tr));
    }
    return g;
}

void score_group(TrajectoryGroup& group, const sid::SidVocab& vocab, const sid::SidTrie& trie,
                 const quant::SidCode& truth, double lambda) {
    group.rewards.clear();
    group.r_sr.clear();
    group.valid.clear();
    for (const auto& tr : group.trajectories) {
        auto rb = sid::compute_reward(vocab, tr.text, truth, trie, lambda);
        group.rewards.push_back(rb.total);
        group.r_sr.push_back(rb.r_sr);
        group.valid.push_back(rb.r_f > 0.0);
    }
}

std::pair<std::vector<double>, bool> group_advantages(const std::vector<double>& rewards,
                                                      double eps) {
    if (rewards.empty()) throw Error("group_advantages: empty rewards");
    bool all_equal = true;
    for (double r : rewards) all_equal &= r == rewards[0];
    if (all_equal) return {std::vector<double>(rewards.size(), 0.0), true};
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= double(rewards.size());
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= double(rewards.size());  // population variance
    double denom = std::sqrt(var) + eps;
    std::vector<double> adv;
    for (double r : rewards) adv.push_back((r - mean) / denom);
    return {adv, false};
}

UpdateStats grpo_update(policy::Policy& current, const std::vector<TrajectoryGroup>& groups,
                        const GrpoConfig& config, num::Optimizer& opt) {
    config.validate();
    bool token_mode = config.ratio_mode == "token";
    double invT = 1.0 / config.temperature;

    // batch-wide normalizers, known before any tape is built
    size_t total_tokens = 0;    // all trajectory tokens (KL denominator)
    size_t policy_units = 0;    // tokens (token mode) or trajectories, non-skip only
    for (const auto& g : groups) {
        if (g.advantages.size() != g.trajectories.size())
            throw Error("grpo_update: group missing advantages");
        for (const auto& tr : g.trajectories) {
            total_tokens += tr.tokens.size();
            if (!g.skip && !tr.tokens.empty())
                policy_units += token_mode ? tr.tokens.size() : 1;
        }
    }

    std::vector<Tensor> grads;
    for (const auto& p : current.params) grads.push_back(Tensor::zeros(p.shape));
    double surrogate_sum = 0.0;
    double kl_sum_total = 0.0;

    for (const auto& g : groups) {
        for (size_t k = 0; k < g.trajectories.size(); ++k) {
            const Trajectory& tr = g.trajectories[k];
            if (tr.tokens.empty()) continue;
            size_t ctx = g.context.size();
            size_t ntok = tr.tokens.size();

            Tape t;
            std::vector<Tape::Id> pids;
            for (const auto& p : current.params) pids.push_back(t.leaf(p, true));
            std::vector<size_t> full = g.context;
            full.insert(full.end(), tr.tokens.begin(), tr.tokens.end());
            std::vector<size_t> input(full.begin(), full.end() - 1);
            std::vector<size_t> targets(full.begin() + 1, full.end());
            Tape::Id logits = policy::forward_logits(t, pids, current.config, input);
            Tape::Id lp = t.gather_log_softmax(t.scale(logits, invT), targets);

            size_t rows = targets.size();
            Tensor mask = Tensor::zeros({rows});
            Tensor old_full = Tensor::zeros({rows});
            Tensor ref_full = Tensor::zeros({rows});
            Tensor adv_full = Tensor::zeros({rows});
            for (size_t i = 0; i < ntok; ++i) {
                size_t row = ctx - 1 + i;
                mask.data[row] = 1.0;
                old_full.data[row] = tr.old_logprobs[i];
                ref_full.data[row] = tr.ref_logprobs[i];
                adv_full.data[row] = g.advantages[k];
            }

            Tape::Id delta_old = t.sub(lp, t.constant(old_full));
            Tape::Id policy_term;
            bool have_policy = !g.skip;
            if (have_policy) {
                if (token_mode) {
                    Tape::Id rho = t.exp_op(delta_old);
                    Tape::Id advc = t.constant(adv_full);
                    Tape::Id unclipped = t.mul(rho, advc);
                    Tape::Id clipped =
                        t.mul(t.clamp(rho, 1.0 - config.clip, 1.0 + config.clip), advc);
                    policy_term = t.sum(t.min_elem(unclipped, clipped));
                } else {
                    Tape::Id log_ratio = t.sum(t.mul(delta_old, t.constant(mask)));
                    Tape::Id rho = t.exp_op(t.clamp(log_ratio, -5.0, 5.0));
                    Tape::Id unclipped = t.scale(rho, g.advantages[k]);
                    Tape::Id clipped =
                        t.scale(t.clamp(rho, 1.0 - config.clip, 1.0 + config.clip),
                                g.advantages[k]);
                    policy_term = t.min_elem(unclipped, clipped);
                }
            }

            Tape::Id delta_ref = t.sub(t.constant(ref_full), lp);
            Tape::Id kl_vec = t.add_scalar(t.sub(t.exp_op(delta_ref), delta_ref), -1.0);
            Tape::Id kl_term = t.sum(t.mul(kl_vec, t.constant(mask)));

            double pol_scale = have_policy && policy_units > 0 ? 1.0 / double(policy_units) : 0.0;
            double kl_scale = total_tokens > 0 ? config.kl_coef / double(total_tokens) : 0.0;
            Tape::Id loss = have_policy
                                ? t.add(t.scale(policy_term, -pol_scale),
                                        t.scale(kl_term, kl_scale))
                                : t.scale(kl_term, kl_scale);
            t.backward(loss);
            for (size_t i = 0; i < pids.size(); ++i) {
                const Tensor& gr = t.grad(pids[i]);
                if (gr.data.empty()) continue;
                for (size_t j = 0; j < gr.size(); ++j) grads[i].data[j] += gr.data[j];
            }
            if (have_policy) surrogate_sum += t.value(policy_term).data[0];
            kl_sum_total += t.value(kl_term).data[0];
        }
    }

    UpdateStats stats;
    stats.tokens = total_tokens;
    stats.surrogate = policy_units > 0 ? surrogate_sum / double(policy_units) : 0.0;
    stats.kl = total_tokens > 0 ? kl_sum_total / double(total_tokens) : 0.0;
    stats.grad_norm = opt.step(current.params, grads);
    current.stage = "rl";
    return stats;
}

std::string metrics_json(const StepMetrics& m) {
    nlohmann::ordered_json j;
    j["step"] = m.step;
    j["mean_reward"] = m.mean_reward;
    j["mean_r_sr"] = m.mean_r_sr;
    j["invalid_rate"] = m.invalid_rate;
    j["mean_reasoning_len"] = m.mean_reasoning_len;
    j["kl"] = m.kl;
    j["grad_norm"] = m.grad_norm;
    return j.dump();
}

std::vector<StepMetrics> rl_train(policy::Policy& current, const policy::Policy& reference,
                                  const std::vector<RlExample>& train,
                                  const sid::SidVocab& vocab, const sid::SidTrie& trie,
                                  const GrpoConfig& config, num::Optimizer& opt,
                                  size_t start_step, const std::string& metrics_path,
                                  const std::string& checkpoint_dir) {
    config.validate();
    if (train.empty()) throw Error("rl_train: empty training split");
    opt.kind = num::Optimizer::parse_kind(config.optimizer);
    opt.lr = config.learning_rate;
    opt.weight_decay = config.weight_decay;
    opt.clip_norm = config.clip_norm;

    std::ofstream metrics_out;
    if (!metrics_path.empty()) {
        metrics_out.open(metrics_path, std::ios::app);
        if (!metrics_out) throw Error("rl_train: cannot open metrics log " + metrics_path);
    }

    size_t groups_per_step = config.batch_size / config.group_size;
    std::vector<StepMetrics> all;
    for (size_t step = start_step; step < config.max_steps; ++step) {
        // stateless per-step stream: resume reproduces the same draws
        Rng sr = Rng(config.seed).derive(step);
        std::vector<TrajectoryGroup> groups;
        for (size_t gi = 0; gi < groups_per_step; ++gi) {
            const RlExample& ex = train[sr.below(train.size())];
            TrajectoryGroup g = rollout_group(current, reference, ex.context, config,
                                              sr.next_u64());
            score_group(g, vocab, trie, ex.truth, config.lambda);
            auto [adv, skip] = group_advantages(g.rewards, config.adv_epsilon);
            g.advantages = std::move(adv);
            g.skip = skip;
            groups.push_back(std::move(g));
        }
        UpdateStats us = grpo_update(current, groups, config, opt);

        StepMetrics m;
        m.step = step;
        size_t n = 0;
        for (const auto& g : groups)
            for (size_t k = 0; k < g.trajectories.size(); ++k) {
                m.mean_reward += g.rewards[k];
                m.mean_r_sr += g.r_sr[k];
                m.invalid_rate += g.valid[k] ? 0.0 : 1.0;
                m.mean_reasoning_len += double(g.trajectories[k].reasoning_len);
                ++n;
            }
        m.mean_reward /= double(n);
        m.mean_r_sr /= double(n);
        m.invalid_rate /= double(n);
        m.mean_reasoning_len /= double(n);
        m.kl = us.kl;
        m.grad_norm = us.grad_norm;
        if (metrics_out) metrics_out << metrics_json(m) << "\n" << std::flush;
        all.push_back(m);

        if (config.checkpoint_every > 0 && !checkpoint_dir.empty() &&
            (step + 1) % config.checkpoint_every == 0)
            save_rl_state(checkpoint_dir + "/rl_step_" + std::to_string(step + 1) + ".bin",
                          current, opt, step + 1);
    }
    return all;
}

static constexpr const char* kRlMagic = "SIDREC-RL-V1";

void save_rl_state(const std::string& path, const policy::Policy& policy,
                   const num::Optimizer& opt, size_t next_step) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_rl_state: cannot open " + path);
    ser::write_string(out, kRlMagic);
    ser::write_u64(out, next_step);
    ser::write_u64(out, opt.step_count);
    ser::write_tensors(out, opt.m);
    ser::write_tensors(out, opt.v);
    policy::write_policy(out, policy);
}

RlState load_rl_state(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("load_rl_state: cannot open " + path);
    if (ser::read_string(in) != kRlMagic)
        throw Error("load_rl_state: unrecognized checkpoint version in " + path);
    RlState st;
    st.next_step = ser::read_u64(in);
    st.opt_step_count = ser::read_u64(in);
    st.opt_m = ser::read_tensors(in);
    st.opt_v = ser::read_tensors(in);
    st.policy = policy::read_policy(in);
    return st;
}

}  // namespace sidrec::grpo
