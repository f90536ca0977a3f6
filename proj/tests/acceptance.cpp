// Acceptance harness: runs the ten headline checks and prints one PASS/FAIL
// line each. Exits nonzero if any check fails.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sidrec/eval.hpp"
#include "sidrec/grpo.hpp"
#include "sidrec/pipeline.hpp"
#include "sidrec/policy.hpp"
#include "sidrec/quantizer.hpp"
#include "sidrec/sidspace.hpp"
#include "test_util.hpp"

using namespace sidrec;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Check {
    bool ok = true;
    std::vector<std::string> notes;

    void require(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            notes.push_back(what);
        }
    }
};

// ---- shared fixtures -------------------------------------------------------

corpus::SidCatalog make_catalog(size_t n_items, size_t codewords, uint64_t seed) {
    Rng rng(seed);
    std::vector<data::Item> items;
    quant::SidAssignment a;
    a.levels = 3;
    a.codewords = codewords;
    static const char* kWords[] = {"amber", "birch", "cedar", "dune",  "ember", "fjord",
                                   "grove", "heath", "inlet", "juniper", "knoll", "lagoon"};
    for (size_t i = 0; i < n_items; ++i) {
        std::string id = "item_" + std::to_string(i);
        items.push_back({id,
                         std::string("Title ") + kWords[i % 12] + " " + std::to_string(i),
                         "an entry", "Things"});
        quant::SidCode code;
        for (size_t l = 0; l < 3; ++l) code.codes.push_back(rng.below(codewords));
        a.by_item[id] = code;
    }
    // disambiguation suffixes for colliding tuples, in item order
    std::map<std::vector<size_t>, size_t> seen;
    for (size_t i = 0; i < n_items; ++i) {
        auto& code = a.by_item["item_" + std::to_string(i)];
        code.disambiguation = seen[code.codes]++;
    }
    return corpus::SidCatalog::build(items, a);
}

std::vector<corpus::AlignmentExample> next_item_corpus(const corpus::SidCatalog& cat) {
    std::vector<corpus::AlignmentExample> out;
    for (const auto& [id, item] : cat.items) {
        corpus::AlignmentExample ex;
        ex.prompt = "<|im_start|>user\nnext after " + item.title +
                    "<|im_end|>\n<|im_start|>assistant\n";
        ex.target = cat.sid_string(id) + "<|im_end|>";
        out.push_back(ex);
    }
    return out;
}

policy::Policy make_policy(const corpus::SidCatalog& cat,
                           const std::vector<corpus::AlignmentExample>& corpus, uint64_t seed,
                           size_t width = 16) {
    policy::Vocab v = policy::build_vocab(corpus, cat.assignment, 1);
    policy::PolicyConfig pc;
    pc.layers = 1;
    pc.heads = 2;
    pc.width = width;
    pc.ff_width = 2 * width;
    pc.context = 96;
    pc.seed = seed;
    return policy::init_policy(pc, v);
}

// ---- criterion 1: reward exactness -----------------------------------------

void reward_exactness(Check& c) {
    // hand-built 3-level catalog where prefixes of the truth are controllable
    std::vector<data::Item> items = {{"t", "Target", "", "X"}, {"o", "Other", "", "X"}};
    quant::SidAssignment a;
    a.levels = 3;
    a.codewords = 4;
    a.by_item["t"] = {{1, 2, 3}, 0};
    a.by_item["o"] = {{1, 2, 0}, 0};
    auto cat = corpus::SidCatalog::build(items, a);
    const quant::SidCode truth = a.by_item["t"];
    const double lambda = 0.1;

    auto total = [&](const std::string& text) {
        return sid::compute_reward(cat.vocab, text, truth, cat.trie, lambda).total;
    };
    // matched-prefix lengths 0..3; codes chosen so only m=3 resolves an item
    c.require(total("<a_0><b_0><c_0>") == 0.125, "m=0 total != 0.125");
    c.require(total("<a_1><b_0><c_0>") == 0.25, "m=1 total != 0.25");
    c.require(total("<a_1><b_2><c_1>") == 0.5, "m=2 total != 0.5");
    c.require(total("<a_1><b_2><c_3>") == 1.1, "exact match total != 1.1");
    c.require(total("no identifier here") == 0.0, "parse failure total != 0");
    // catalog validity bonus applies off-target too
    c.require(total("<a_1><b_2><c_0>") == 0.5 + lambda, "valid non-target misses the bonus");
    auto rb = sid::compute_reward(cat.vocab, "<a_1><b_2><c_3>", truth, cat.trie, lambda);
    c.require(rb.r_sr == 1.0 && rb.r_f == 1.0, "exact match breakdown wrong");
}

// ---- criterion 2: constrained decoding soundness ---------------------------

void constrained_soundness(Check& c) {
    auto cat = make_catalog(100, 5, 77);
    auto corpus = next_item_corpus(cat);
    auto pol = make_policy(cat, corpus, 3);

    size_t bad = 0, checked = 0;
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        const auto& ex = corpus[seed % corpus.size()];
        auto gen = policy::generate(pol, pol.vocab.encode(ex.prompt), 1.0, 6, seed, &cat.trie);
        if (gen.stop_reason != "complete") continue;
        auto parsed = sid::parse_sid_text(cat.vocab, gen.answer_text);
        if (!parsed.ok || !cat.trie.resolve(parsed)) ++bad;
        ++checked;
    }
    c.require(bad == 0, std::to_string(bad) + " constrained generations left the catalog");
    c.require(checked >= 900, "too few complete generations: " + std::to_string(checked));

    // trie prefix sets equal a brute-force scan of the assignment
    std::set<std::vector<size_t>> prefixes = {{}};
    for (const auto& [id, code] : cat.assignment.by_item) {
        std::vector<size_t> p;
        for (size_t x : code.codes) {
            p.push_back(x);
            prefixes.insert(p);
        }
    }
    for (const auto& prefix : prefixes) {
        auto next = sid::constrained_next(cat.trie, prefix);
        std::set<size_t> brute;
        for (const auto& [id, code] : cat.assignment.by_item) {
            if (code.codes.size() <= prefix.size() &&
                !(prefix.size() == code.codes.size())) continue;
            bool match = true;
            for (size_t i = 0; i < prefix.size() && i < code.codes.size(); ++i)
                if (code.codes[i] != prefix[i]) match = false;
            if (!match) continue;
            if (prefix.size() < code.codes.size()) brute.insert(code.codes[prefix.size()]);
            else brute.insert(code.disambiguation);  // suffix level under collisions
        }
        // at the suffix level the trie only offers children when needed
        if (prefix.size() < cat.assignment.levels)
            c.require(next.codes == brute,
                      "prefix set mismatch at depth " + std::to_string(prefix.size()));
    }
}

// ---- criterion 3: quantization oracle --------------------------------------

void quantization_oracle(Check& c) {
    Rng rng(123);
    const size_t L = 3, K = 32, d = 8;
    std::vector<num::Tensor> codebooks;
    for (size_t l = 0; l < L; ++l) {
        num::Tensor cb = num::Tensor::zeros({K, d});
        for (double& x : cb.data) x = rng.normal();
        codebooks.push_back(std::move(cb));
    }
    size_t mismatches = 0;
    for (size_t n = 0; n < 1000; ++n) {
        num::Tensor z = num::Tensor::zeros({d});
        for (double& x : z.data) x = rng.normal();
        auto res = quant::quantize_residual(codebooks, z);
        // linear-scan oracle with strict lowest-index tie handling
        std::vector<double> r(z.data);
        for (size_t l = 0; l < L; ++l) {
            size_t best = 0;
            double best_d = 1e300;
            for (size_t k = 0; k < K; ++k) {
                double dist = 0.0;
                for (size_t j = 0; j < d; ++j) {
                    double diff = r[j] - codebooks[l].at(k, j);
                    dist += diff * diff;
                }
                if (dist < best_d) {
                    best_d = dist;
                    best = k;
                }
            }
            if (res.codes[l] != best) ++mismatches;
            for (size_t j = 0; j < d; ++j) r[j] -= codebooks[l].at(best, j);
        }
    }
    c.require(mismatches == 0,
              std::to_string(mismatches) + " codes differ from the linear-scan oracle");
}

// ---- criterion 4: gradient correctness -------------------------------------

void gradient_correctness(Check& c) {
    // 20 random compositions of the smooth primitive set
    for (uint64_t g = 0; g < 20; ++g) {
        Rng rng(1000 + g);
        size_t rows = 2 + rng.below(3);
        size_t cols = 2 + rng.below(6);
        num::Tensor point = num::Tensor::zeros({rows, cols});
        for (double& x : point.data) x = 0.3 * rng.normal();
        size_t depth = 2 + rng.below(4);
        std::vector<size_t> ops;
        for (size_t i = 0; i < depth; ++i) ops.push_back(rng.below(7));
        num::Tensor proj = num::Tensor::zeros({cols, cols});
        for (double& x : proj.data) x = 0.4 * rng.normal();
        num::Tensor gain = num::Tensor::zeros({cols});
        num::Tensor bias = num::Tensor::zeros({cols});
        for (size_t j = 0; j < cols; ++j) gain.data[j] = 1.0 + 0.1 * (double(j) / double(cols));
        std::vector<size_t> targets;
        for (size_t i = 0; i < rows; ++i) targets.push_back((i + g) % cols);

        auto build = [&](num::Tape& t, num::Tape::Id x) {
            num::Tape::Id cur = x;
            for (size_t op : ops) {
                switch (op) {
                    case 0: cur = t.tanh_op(cur); break;
                    case 1: cur = t.scale(t.exp_op(t.scale(cur, 0.5)), 0.7); break;
                    case 2: cur = t.matmul(cur, t.constant(proj)); break;
                    case 3: cur = t.mul(cur, t.tanh_op(cur)); break;
                    case 4: cur = t.row_softmax(cur, rows == cols && g % 2 == 0); break;
                    case 5:
                        cur = t.layer_norm(cur, t.constant(gain), t.constant(bias), 1e-5);
                        break;
                    case 6: cur = t.add(cur, t.scale(cur, 0.25)); break;
                }
            }
            return t.mean(t.gather_log_softmax(cur, targets));
        };
        double err = num::grad_check(build, point, 1e-5);
        c.require(err < 1e-4,
                  "graph " + std::to_string(g) + " grad error " + std::to_string(err));
    }

    // the SFT loss of a miniature two-layer policy passes the same bound
    auto cat = make_catalog(8, 3, 5);
    auto corpus = next_item_corpus(cat);
    policy::Vocab v = policy::build_vocab(corpus, cat.assignment, 1);
    policy::PolicyConfig pc;
    pc.layers = 2;
    pc.heads = 2;
    pc.width = 8;
    pc.ff_width = 16;
    pc.context = 64;
    pc.seed = 21;
    auto pol = policy::init_policy(pc, v);
    auto ids = pol.vocab.encode(corpus[0].prompt + corpus[0].target);
    size_t ctx = pol.vocab.encode(corpus[0].prompt).size();
    std::vector<size_t> rows, targets;
    for (size_t i = ctx; i < ids.size(); ++i) {
        rows.push_back(i - 1);
        targets.push_back(ids[i]);
    }
    for (size_t pi : {size_t{0}, size_t{4}, pol.params.size() - 1}) {
        auto build = [&](num::Tape& t, num::Tape::Id x) {
            std::vector<num::Tape::Id> ps;
            for (size_t q = 0; q < pol.params.size(); ++q)
                ps.push_back(q == pi ? x : t.constant(pol.params[q]));
            auto logits = policy::forward_logits(t, ps, pol.config, ids);
            auto picked = t.gather_rows(logits, rows);
            return t.scale(t.mean(t.gather_log_softmax(picked, targets)), -1.0);
        };
        double err = num::grad_check(build, pol.params[pi], 1e-5);
        c.require(err < 1e-4,
                  "policy param " + std::to_string(pi) + " grad error " + std::to_string(err));
    }
}

// ---- criterion 5: residual quantizer training ------------------------------

void rqvae_training(Check& c) {
    auto fx = make_cluster_embeddings(512, 32, 8, 4242);
    quant::RqVaeConfig qc;
    qc.levels = 3;
    qc.codewords = 8;
    qc.latent_dim = 16;
    qc.epochs = 30;
    qc.seed = 4242;
    quant::TrainReport rep;
    auto state = quant::train_rqvae(qc, fx.points, &rep);
    c.require(rep.final_recon <= 0.1 * rep.initial_recon,
              "recon only fell " + std::to_string(rep.final_recon / rep.initial_recon));
    for (size_t l = 0; l < rep.utilization.size(); ++l)
        c.require(rep.utilization[l] >= 0.5,
                  "level " + std::to_string(l) + " utilization " +
                      std::to_string(rep.utilization[l]));
}

// ---- criterion 6: ranking metric oracle ------------------------------------

void metric_oracle(Check& c) {
    Rng rng(99);
    std::vector<size_t> ks = {1, 3, 5, 10};
    std::vector<size_t> ranks;
    for (size_t i = 0; i < 200; ++i)
        ranks.push_back(rng.below(30));  // 0 = miss, else 1-based rank
    auto rep = eval::metrics_from_ranks(ranks, ks);
    for (size_t k : ks) {
        double recall = 0.0, ndcg = 0.0;
        for (size_t r : ranks) {
            if (r >= 1 && r <= k) {
                recall += 1.0;
                ndcg += 1.0 / std::log2(double(r) + 1.0);
            }
        }
        recall /= double(ranks.size());
        ndcg /= double(ranks.size());
        c.require(rep.recall.at(k) == recall, "recall@" + std::to_string(k) + " mismatch");
        c.require(rep.ndcg.at(k) == ndcg, "ndcg@" + std::to_string(k) + " mismatch");
    }
    c.require(eval::ndcg_at(3, 10) == 0.5, "rank-3 ndcg != 0.5");
}

// ---- criterion 7: policy-gradient invariants -------------------------------

void grpo_invariants(Check& c) {
    auto cat = make_catalog(12, 3, 31);
    auto corpus = next_item_corpus(cat);
    auto pol = make_policy(cat, corpus, 13);
    pol.stage = "activated";

    grpo::GrpoConfig gc;
    gc.group_size = 4;
    gc.batch_size = 8;
    gc.max_reasoning_tokens = 3;
    gc.max_steps = 1;
    gc.seed = 5;

    // advantage normalization: zero mean, shift invariance, all-equal skip
    std::vector<double> r = {0.9, 0.1, 0.4, 0.4};
    auto [adv, skip] = grpo::group_advantages(r, 1e-6);
    c.require(!skip, "mixed rewards must not be skipped");
    double mean = 0.0;
    for (double a : adv) mean += a;
    c.require(std::abs(mean / 4.0) < 1e-9, "advantage mean too large");
    std::vector<double> shifted = r;
    for (double& x : shifted) x += 3.25;
    auto [adv2, skip2] = grpo::group_advantages(shifted, 1e-6);
    for (size_t i = 0; i < 4; ++i)
        c.require(std::abs(adv[i] - adv2[i]) < 1e-9, "shift invariance broken");
    std::vector<double> scaled = r;
    for (double& x : scaled) x *= 7.0;
    auto [adv3a, s3a] = grpo::group_advantages(r, 1e-12);
    auto [adv3b, s3b] = grpo::group_advantages(scaled, 1e-12);
    for (size_t i = 0; i < 4; ++i)
        c.require(std::abs(adv3a[i] - adv3b[i]) < 1e-9, "scale invariance broken");
    auto [adv4, skip4] = grpo::group_advantages({0.5, 0.5, 0.5, 0.5}, 1e-6);
    c.require(skip4, "all-equal group not skipped");
    for (double a : adv4) c.require(a == 0.0, "skip group advantage nonzero");

    // first update: ratio identically 1, KL identically 0
    auto mk_groups = [&](const policy::Policy& ref) {
        std::vector<grpo::TrajectoryGroup> groups;
        for (size_t g = 0; g < 2; ++g) {
            auto grp = grpo::rollout_group(pol, ref, pol.vocab.encode(corpus[g].prompt), gc,
                                           100 + g);
            for (size_t k = 0; k < grp.trajectories.size(); ++k)
                grp.rewards.push_back(double(k % 3) * 0.5);
            auto [a, s] = grpo::group_advantages(grp.rewards, gc.adv_epsilon);
            grp.advantages = a;
            grp.skip = s;
            groups.push_back(std::move(grp));
        }
        return groups;
    };
    {
        policy::Policy work = pol;
        num::Optimizer opt;
        auto groups = mk_groups(pol);
        double want = 0.0;
        size_t ntok = 0;
        for (const auto& g : groups)
            for (size_t k = 0; k < g.trajectories.size(); ++k) {
                want += g.advantages[k] * double(g.trajectories[k].tokens.size());
                ntok += g.trajectories[k].tokens.size();
            }
        auto stats = grpo::grpo_update(work, groups, gc, opt);
        c.require(stats.kl == 0.0, "first-update KL not exactly zero");
        c.require(std::abs(stats.surrogate - want / double(ntok)) < 1e-12,
                  "first-update surrogate != mean advantage, ratio drifted from 1");
    }
    // KL estimator stays non-negative against a genuinely different reference
    {
        policy::Policy ref = pol;
        Rng prng(404);
        for (auto& t : ref.params)
            for (double& x : t.data) x += 0.02 * prng.normal();
        policy::Policy work = pol;
        num::Optimizer opt;
        auto stats = grpo::grpo_update(work, mk_groups(ref), gc, opt);
        c.require(stats.kl >= 0.0, "KL estimate went negative");
        c.require(stats.kl > 0.0, "KL estimate vacuously zero");
    }
    // all-equal rewards: zero policy gradient, parameters untouched
    {
        policy::Policy work = pol;
        num::Optimizer opt;
        grpo::GrpoConfig flat = gc;
        flat.kl_coef = 0.0;
        auto groups = mk_groups(pol);
        for (auto& g : groups) {
            std::fill(g.rewards.begin(), g.rewards.end(), 0.7);
            auto [a, s] = grpo::group_advantages(g.rewards, flat.adv_epsilon);
            g.advantages = a;
            g.skip = s;
        }
        auto stats = grpo::grpo_update(work, groups, flat, opt);
        c.require(stats.grad_norm == 0.0, "all-equal rewards produced a gradient");
        for (size_t q = 0; q < pol.params.size(); ++q)
            c.require(work.params[q].data == pol.params[q].data,
                      "parameters moved on an all-equal batch");
    }
}

// ---- criterion 8: end-to-end desk experiment -------------------------------

double json_num(const json& j, const std::string& key) { return j.at(key).get<double>(); }

void desk_experiment(Check& c) {
    std::string cfg = repo_root() + "/configs/desk.json";
    const std::vector<uint64_t> seeds = {1, 2, 3};
    size_t aligned_wins = 0, rl_wins = 0;
    for (uint64_t seed : seeds) {
        std::string run = (fs::temp_directory_path() /
                           ("sidrec_acc_desk_" + std::to_string(seed))).string();
        fs::remove_all(run);
        int code = cli::run_command("all", cfg, {}, seed, run);
        c.require(code == 0, "pipeline exited " + std::to_string(code) + " for seed " +
                                 std::to_string(seed));
        if (code != 0) continue;

        std::ifstream rin(run + "/eval_report.json");
        json reports = json::parse(rin);
        double pop = json_num(reports.at("popularity"), "recall@10");
        double aligned = json_num(reports.at("aligned"), "recall@10");
        if (aligned > pop) ++aligned_wins;
        std::cout << "    seed " << seed << ": recall@10 popularity " << pop << ", aligned "
                  << aligned;

        std::ifstream win(run + "/eval_rewards.json");
        json rewards = json::parse(win);
        double act = json_num(rewards, "activated");
        double rl = json_num(rewards, "rl");
        if (rl >= 1.1 * act && rl > 0.0) ++rl_wins;
        std::cout << "; mean reward activated " << act << ", rl " << rl;

        // reasoning length must be logged, finite, per step
        std::ifstream min(run + "/rl_metrics.jsonl");
        std::string line;
        size_t steps = 0;
        double first_len = 0.0, last_len = 0.0;
        bool finite = true;
        while (std::getline(min, line)) {
            if (line.empty()) continue;
            double len = json_num(json::parse(line), "mean_reasoning_len");
            if (!std::isfinite(len)) finite = false;
            if (steps == 0) first_len = len;
            last_len = len;
            ++steps;
        }
        c.require(finite && steps > 0, "reasoning length log broken for seed " +
                                           std::to_string(seed));
        std::cout << "; reasoning len " << first_len << " -> " << last_len << " over " << steps
                  << " steps\n";
    }
    c.require(aligned_wins == seeds.size(),
              "aligned beat popularity in only " + std::to_string(aligned_wins) + "/3 seeds");
    c.require(rl_wins >= 2,
              "RL beat activation by 10% in only " + std::to_string(rl_wins) + "/3 seeds");
}

// ---- criterion 9: best-of-N monotonicity -----------------------------------

void best_of_n_monotone(Check& c) {
    auto cat = make_catalog(12, 3, 55);
    auto corpus = next_item_corpus(cat);
    auto pol = make_policy(cat, corpus, 17);
    policy::SftSchedule sched;
    sched.epochs = 30;
    sched.batch_size = 6;
    sched.learning_rate = 5e-3;
    sched.val_fraction = 0.0;
    policy::train_sft(pol, corpus, policy::SftStage::alignment, sched);
    pol.stage = "activated";

    std::vector<eval::EvalExample> split;
    for (const auto& [id, item] : cat.items) {
        eval::EvalExample ex;
        ex.context = pol.vocab.encode(
            "<|im_start|>user\nnext after " + item.title +
            "<|im_end|>\n<|im_start|>assistant\n");
        ex.target_item = id;
        ex.truth = cat.assignment.by_item.at(id);
        split.push_back(ex);
    }
    eval::EvalConfig ec;
    ec.ks = {5};
    ec.beam_width = 8;
    ec.reasoning = "sampled";
    ec.max_reasoning_tokens = 6;
    ec.seed = 23;
    auto results = eval::best_of_n(pol, split, cat, {1, 2, 4, 8}, ec);
    c.require(results.size() == 4, "wrong result count");
    for (size_t i = 0; i + 1 < results.size(); ++i)
        for (size_t e = 0; e < split.size(); ++e)
            c.require(results[i].best_rewards[e] <= results[i + 1].best_rewards[e],
                      "reward fell from N=" + std::to_string(results[i].n) + " to N=" +
                          std::to_string(results[i + 1].n) + " on example " + std::to_string(e));
    double at8 = 0.0;
    for (double x : results.back().best_rewards) at8 += x;
    c.require(at8 > 0.0, "best-of-8 never earned reward, property vacuous");
}

// ---- criterion 10: determinism and resume ----------------------------------

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void determinism(Check& c) {
    // identical config + seed => byte-identical metrics files
    std::string base = (fs::temp_directory_path() / "sidrec_acc_det").string();
    fs::remove_all(base);
    fs::create_directories(base);
    std::string cfg_path = base + "/cfg.json";
    {
        std::ofstream out(cfg_path);
        out << R"({
  "run_dir": ")" << base << R"(/a",
  "seed": 11,
  "dataset": {"n_items": 60, "n_users": 40, "n_categories": 4,
              "seq_len_min": 6, "seq_len_max": 12, "k_core": 2, "max_len": 8},
  "quantizer": {"levels": 3, "codewords": 6, "latent_dim": 8, "hidden": 32, "epochs": 10},
  "embed_dim": 16,
  "corpus": {"budget": 250, "enrich_items": 6, "enrich_users": 6,
             "general_path": ")" << fixture_path("general_reasoning.jsonl") << R"("},
  "policy": {"layers": 1, "heads": 2, "width": 32, "ff_width": 64, "context": 224},
  "sft": {"epochs": 2, "batch_size": 8},
  "activation": {"examples": 12},
  "rl": {"group_size": 4, "batch_size": 8, "max_steps": 2, "max_reasoning_tokens": 10},
  "eval": {"ks": [5], "ns": [1, 2], "beam_width": 8, "max_examples": 6}
})";
    }
    c.require(cli::run_command("all", cfg_path, {}) == 0, "first pipeline run failed");
    c.require(cli::run_command("all", cfg_path, {}, std::nullopt, base + "/b") == 0,
              "second pipeline run failed");
    for (const char* f : {"eval_report.json", "rl_metrics.jsonl", "bestofn.json"})
        c.require(slurp(base + "/a/" + f) == slurp(base + "/b/" + f),
                  std::string(f) + " differs between identical runs");

    // resume from a checkpoint reproduces the uninterrupted run bit for bit
    auto cat = make_catalog(12, 3, 31);
    auto corpus = next_item_corpus(cat);
    auto pol = make_policy(cat, corpus, 13);
    pol.stage = "activated";
    std::vector<grpo::RlExample> train;
    for (const auto& ex : corpus) {
        grpo::RlExample r;
        r.context = pol.vocab.encode(ex.prompt);
        auto parsed = sid::parse_sid_text(cat.vocab, ex.target);
        r.truth.codes = parsed.codes;
        train.push_back(r);
    }
    grpo::GrpoConfig gc;
    gc.group_size = 4;
    gc.batch_size = 8;
    gc.max_steps = 4;
    gc.max_reasoning_tokens = 3;
    gc.checkpoint_every = 2;
    gc.seed = 77;
    std::string ck = base + "/ck";
    fs::create_directories(ck);

    policy::Policy full = pol;
    num::Optimizer opt_full;
    auto metrics_full =
        grpo::rl_train(full, pol, train, cat.vocab, cat.trie, gc, opt_full, 0, "", ck);

    auto st = grpo::load_rl_state(ck + "/rl_step_2.bin");
    num::Optimizer opt_res;
    opt_res.step_count = st.opt_step_count;
    opt_res.m = st.opt_m;
    opt_res.v = st.opt_v;
    auto metrics_res = grpo::rl_train(st.policy, pol, train, cat.vocab, cat.trie, gc, opt_res,
                                      st.next_step, "", "");
    c.require(metrics_res.size() == 2, "resume ran the wrong number of steps");
    for (size_t i = 0; i < metrics_res.size(); ++i)
        c.require(grpo::metrics_json(metrics_res[i]) ==
                      grpo::metrics_json(metrics_full[i + 2]),
                  "resumed step " + std::to_string(i + 2) + " metrics differ");
    for (size_t q = 0; q < full.params.size(); ++q)
        c.require(st.policy.params[q].data == full.params[q].data,
                  "resumed parameters differ at tensor " + std::to_string(q));
    fs::remove_all(base);
}

}  // namespace

int main(int argc, char** argv) {
    struct Criterion {
        const char* label;
        void (*fn)(Check&);
    };
    const Criterion criteria[] = {
        {"1. reward exactness", reward_exactness},
        {"2. constrained decoding soundness", constrained_soundness},
        {"3. residual quantization oracle", quantization_oracle},
        {"4. gradient correctness", gradient_correctness},
        {"5. residual quantizer training", rqvae_training},
        {"6. ranking metric oracle", metric_oracle},
        {"7. policy-gradient invariants", grpo_invariants},
        {"8. end-to-end desk experiment", desk_experiment},
        {"9. best-of-N monotonicity", best_of_n_monotone},
        {"10. determinism and resume", determinism},
    };
    std::set<int> only;  // optional criterion numbers on the command line
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    int failures = 0;
    int num = 0;
    for (const auto& cr : criteria) {
        ++num;
        if (!only.empty() && !only.count(num)) continue;
        Check c;
        try {
            cr.fn(c);
        } catch (const std::exception& e) {
            c.ok = false;
            c.notes.push_back(std::string("exception: ") + e.what());
        }
        std::cout << (c.ok ? "[PASS] " : "[FAIL] ") << cr.label << "\n";
        for (const auto& n : c.notes) std::cout << "       " << n << "\n";
        if (!c.ok) ++failures;
    }
    if (failures) std::cout << failures << " criteria failed\n";
    else std::cout << "all 10 criteria passed\n";
    return failures == 0 ? 0 : 1;
}
