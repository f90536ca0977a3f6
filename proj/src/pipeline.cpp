#include "sidrec/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "sidrec/dataio.hpp"
#include "sidrec/eval.hpp"
#include "sidrec/grpo.hpp"
#include "sidrec/quantizer.hpp"

namespace sidrec::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// split files

void write_examples(const std::string& path, const std::vector<data::Example>& examples) {
    std::ofstream out(path);
    if (!out) throw Error("pipeline: cannot open " + path);
    for (const auto& ex : examples) {
        ordered_json j;
        j["user_id"] = ex.user_id;
        j["history"] = ex.history;
        j["target"] = ex.target;
        out << j.dump() << "\n";
    }
}

std::vector<data::Example> load_examples(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("pipeline: cannot open " + path);
    std::vector<data::Example> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = json::parse(line);
        data::Example ex;
        ex.user_id = j.at("user_id");
        ex.history = j.at("history").get<std::vector<std::string>>();
        ex.target = j.at("target");
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------
// run-directory lock

struct RunLock {
    std::string path;
    explicit RunLock(const std::string& dir) : path(dir + "/.lock") {
        if (fs::exists(path))
            throw ValidationError("run directory " + dir +
                                  " is locked by another process; remove " + path +
                                  " if that run is gone");
        std::ofstream out(path);
        out << "locked\n";
    }
    ~RunLock() { std::error_code ec; fs::remove(path, ec); }
};

// ---------------------------------------------------------------------------
// pipeline

struct Pipeline {
    RunConfig cfg;
    std::string cfg_hash;
    std::string dir;
    json manifest;

    Pipeline(RunConfig c, std::string hash) : cfg(std::move(c)), cfg_hash(std::move(hash)) {
        dir = cfg.run_dir;
        fs::create_directories(dir);
        std::string mpath = dir + "/manifest.json";
        if (fs::exists(mpath)) {
            std::ifstream in(mpath);
            manifest = json::parse(in);
        } else {
            manifest = json::object();
            manifest["tool"] = kToolVersion;
            manifest["stages"] = json::object();
        }
        manifest["config_hash"] = cfg_hash;
    }

    std::string p(const std::string& name) const { return dir + "/" + name; }

    uint64_t stage_seed(uint64_t n) const { return Rng(cfg.seed).derive(n).state(); }

    void record_stage(const std::string& name, const std::vector<std::string>& outputs) {
        json entry;
        entry["config_hash"] = cfg_hash;
        entry["outputs"] = json::object();
        for (const auto& o : outputs) entry["outputs"][o] = file_hash(p(o));
        manifest["stages"][name] = entry;
        std::ofstream out(p("manifest.json"));
        out << manifest.dump(2) << "\n";
    }

    void require_stage(const std::string& name) const {
        if (!manifest["stages"].contains(name))
            throw ValidationError("pipeline: stage '" + name + "' has not run yet; run '" + name +
                                  "' first");
        const json& entry = manifest["stages"][name];
        for (const auto& [file, hash] : entry["outputs"].items()) {
            std::string full = p(file);
            if (!fs::exists(full) || file_hash(full) != hash.get<std::string>())
                throw ValidationError("pipeline: output " + file + " of stage '" + name +
                                      "' is missing or changed; rerun '" + name + "'");
        }
    }

    // ---- shared loaders -------------------------------------------------

    corpus::SidCatalog load_sid_catalog() const {
        auto items = data::load_catalog(p("catalog.jsonl"));
        auto assignment = quant::load_assignment(p("sids.jsonl"));
        return corpus::SidCatalog::build(items, assignment);
    }

    std::string coldstart_prompt(const corpus::SidCatalog& cat,
                                 const data::Example& ex) const {
        std::vector<std::string> ids = ex.history;
        ids.push_back(ex.target);
        return corpus::coldstart_reason_example(cat, ids, 0).prompt;
    }

    // context must leave room for reasoning, the SID, and the terminator
    bool context_fits(const policy::Policy& pol, const std::vector<size_t>& ctx,
                      size_t budget) const {
        return ctx.size() + budget + pol.vocab.sid_levels + 2 <= pol.config.context;
    }

    std::vector<grpo::RlExample> build_rl_split(const corpus::SidCatalog& cat,
                                                const policy::Policy& pol,
                                                const std::vector<data::Example>& split,
                                                size_t budget, size_t cap) const {
        std::vector<grpo::RlExample> out;
        size_t skipped = 0;
        for (const auto& ex : split) {
            if (cap > 0 && out.size() >= cap) break;
            grpo::RlExample r;
            r.context = pol.vocab.encode(coldstart_prompt(cat, ex));
            if (!context_fits(pol, r.context, budget)) {
                ++skipped;
                continue;
            }
            r.truth = cat.assignment.by_item.at(ex.target);
            out.push_back(std::move(r));
        }
        if (skipped > 0)
            std::cerr << "pipeline: skipped " << skipped
                      << " examples whose prompt exceeds the model context\n";
        if (out.empty()) throw Error("pipeline: no examples fit the model context");
        return out;
    }

    // Ranking without reasoning queries the model in the alignment corpus's
    // sequence-to-SID format; reasoning modes use the cold-start prompt the
    // activation/RL stages train on.
    std::string eval_prompt(const corpus::SidCatalog& cat, const data::Example& ex,
                            bool reason) const {
        if (reason) return coldstart_prompt(cat, ex);
        std::vector<std::string> ids = ex.history;
        ids.push_back(ex.target);
        return corpus::render_alignment_example(6, cat, ids).prompt;
    }

    std::vector<eval::EvalExample> build_eval_split(const corpus::SidCatalog& cat,
                                                    const policy::Policy& pol,
                                                    const std::vector<data::Example>& split,
                                                    size_t budget, size_t cap,
                                                    bool reason) const {
        std::vector<eval::EvalExample> out;
        for (const auto& ex : split) {
            if (cap > 0 && out.size() >= cap) break;
            eval::EvalExample e;
            e.context = pol.vocab.encode(eval_prompt(cat, ex, reason));
            if (!context_fits(pol, e.context, budget)) continue;
            e.target_item = ex.target;
            e.truth = cat.assignment.by_item.at(ex.target);
            out.push_back(std::move(e));
        }
        if (out.empty()) throw Error("pipeline: no evaluation examples fit the model context");
        return out;
    }

    // ---- stages ---------------------------------------------------------

    void synth() {
        std::vector<data::Item> items;
        std::vector<data::Interaction> inter;
        if (cfg.dataset.kind == "synthetic") {
            data::SynthConfig sc;
            sc.n_items = cfg.dataset.n_items;
            sc.n_users = cfg.dataset.n_users;
            sc.n_categories = cfg.dataset.n_categories;
            sc.transition_matrix =
                data::self_transition_matrix(cfg.dataset.n_categories, cfg.dataset.self_transition);
            sc.seq_len_min = cfg.dataset.seq_len_min;
            sc.seq_len_max = cfg.dataset.seq_len_max;
            sc.seed = stage_seed(1);
            std::tie(items, inter) = data::synth_dataset(sc);
        } else {
            items = data::load_catalog(cfg.dataset.catalog_path);
            inter = data::load_interactions(cfg.dataset.interactions_path);
        }
        inter = data::k_core_filter(std::move(inter), cfg.dataset.k_core);
        auto split = data::build_split_sequences(inter, cfg.dataset.max_len, cfg.dataset.ratios);
        data::write_catalog(p("catalog.jsonl"), items);
        data::write_interactions(p("interactions.jsonl"), inter);
        write_examples(p("train.jsonl"), split.train);
        write_examples(p("val.jsonl"), split.val);
        write_examples(p("test.jsonl"), split.test);
        record_stage("synth", {"catalog.jsonl", "interactions.jsonl", "train.jsonl", "val.jsonl",
                               "test.jsonl"});
        std::cerr << "synth: " << items.size() << " items, " << split.train.size()
                  << " train / " << split.val.size() << " val / " << split.test.size()
                  << " test examples\n";
    }

    void quantize() {
        require_stage("synth");
        auto items = data::load_catalog(p("catalog.jsonl"));
        auto embeddings = quant::embed_items(items, cfg.embed_dim, stage_seed(2));
        quant::RqVaeConfig qc = cfg.quantizer;
        qc.seed = stage_seed(3);
        quant::TrainReport rep;
        auto state = quant::train_rqvae(qc, embeddings, &rep);
        auto assignment = quant::assign_sids(state, items, embeddings);
        quant::save_quantizer(p("quantizer.bin"), state);
        quant::save_assignment(p("sids.jsonl"), assignment);
        ordered_json j;
        j["initial_recon"] = rep.initial_recon;
        j["final_recon"] = rep.final_recon;
        j["utilization"] = rep.utilization;
        {
            std::ofstream out(p("quantize_report.json"));
            out << j.dump(2) << "\n";
        }
        record_stage("quantize", {"quantizer.bin", "sids.jsonl", "quantize_report.json"});
        std::cerr << "quantize: recon " << rep.initial_recon << " -> " << rep.final_recon << "\n";
    }

    void build_corpus() {
        require_stage("synth");
        require_stage("quantize");
        auto cat = load_sid_catalog();
        auto train = load_examples(p("train.jsonl"));
        bool use_teacher = !cfg.corpus.teacher.endpoint.empty();
        Rng er(stage_seed(4));

        std::map<corpus::TaskTag, std::vector<corpus::AlignmentExample>> sources;
        for (const auto& [id, item] : cat.items) {
            sources[corpus::TaskTag::title2sid].push_back(
                corpus::render_alignment_example(1, cat, {id}));
            sources[corpus::TaskTag::sid2title].push_back(
                corpus::render_alignment_example(2, cat, {id}));
        }
        for (const auto& ex : train) {
            std::vector<std::string> ids = ex.history;
            ids.push_back(ex.target);
            if (ids.size() < 2) continue;
            for (int c = 3; c <= 6; ++c) {
                auto ex_c = corpus::render_alignment_example(c, cat, ids);
                sources[ex_c.tag].push_back(std::move(ex_c));
            }
        }
        size_t ei = 0;
        for (const auto& [id, item] : cat.items) {
            if (ei >= cfg.corpus.enrich_items) break;
            sources[corpus::TaskTag::item_enrich].push_back(corpus::synth_enrichment(
                corpus::EnrichKind::item, cat, {id},
                use_teacher ? corpus::EnrichSource::teacher : corpus::EnrichSource::fallback,
                er.derive(ei).state(), use_teacher ? &cfg.corpus.teacher : nullptr));
            ++ei;
        }
        for (size_t i = 0; i < train.size() && i < cfg.corpus.enrich_users; ++i) {
            std::vector<std::string> ids = train[i].history;
            ids.push_back(train[i].target);
            if (ids.size() < 2) continue;
            sources[corpus::TaskTag::user_enrich].push_back(corpus::synth_enrichment(
                corpus::EnrichKind::user, cat, ids,
                use_teacher ? corpus::EnrichSource::teacher : corpus::EnrichSource::fallback,
                er.derive(1000 + i).state(), use_teacher ? &cfg.corpus.teacher : nullptr));
        }
        sources[corpus::TaskTag::general] = corpus::load_general_reasoning(cfg.corpus.general_path);

        corpus::MixtureSpec spec;
        for (const auto& [name, w] : cfg.corpus.weights)
            if (w > 0.0) spec.weights[corpus::parse_tag(name)] = w;
        spec.budget = cfg.corpus.budget;
        spec.seed = stage_seed(5);
        auto mixture = corpus::build_mixture(sources, spec);
        corpus::write_corpus(p("corpus.jsonl"), mixture);
        record_stage("build-corpus", {"corpus.jsonl"});
        std::cerr << "build-corpus: " << mixture.size() << " examples\n";
    }

    void align() {
        require_stage("quantize");
        require_stage("build-corpus");
        auto corp = corpus::load_corpus(p("corpus.jsonl"));
        auto assignment = quant::load_assignment(p("sids.jsonl"));
        auto vocab = policy::build_vocab(corp, assignment, cfg.min_freq);
        policy::PolicyConfig pc = cfg.policy;
        pc.seed = stage_seed(6);
        policy::Policy pol = policy::init_policy(pc, vocab);
        policy::SftSchedule sched = cfg.sft;
        sched.seed = stage_seed(7);
        auto rep = policy::train_sft(pol, corp, policy::SftStage::alignment, sched);
        policy::save_policy(p("policy_aligned.bin"), pol);
        ordered_json j;
        j["epoch_loss"] = rep.epoch_loss;
        j["val_accuracy"] = rep.val_accuracy;
        j["steps"] = rep.steps;
        j["epochs_run"] = rep.epochs_run;
        j["vocab_size"] = vocab.size();
        {
            std::ofstream out(p("align_report.json"));
            out << j.dump(2) << "\n";
        }
        record_stage("align", {"policy_aligned.bin", "align_report.json"});
        std::cerr << "align: " << rep.epochs_run << " epochs, final loss "
                  << (rep.epoch_loss.empty() ? 0.0 : rep.epoch_loss.back()) << "\n";
    }

    void activate() {
        require_stage("align");
        auto cat = load_sid_catalog();
        auto train = load_examples(p("train.jsonl"));
        policy::Policy pol = policy::load_policy(p("policy_aligned.bin"));

        Rng pick(stage_seed(8));
        std::vector<corpus::AlignmentExample> cold;
        size_t attempts = 0;
        while (cold.size() < cfg.activation.examples && attempts < cfg.activation.examples * 4) {
            const data::Example& ex = train[pick.below(train.size())];
            ++attempts;
            if (ex.history.empty()) continue;
            std::vector<std::string> ids = ex.history;
            ids.push_back(ex.target);
            auto ce = corpus::coldstart_reason_example(cat, ids, pick.next_u64());
            if (pol.vocab.encode(ce.prompt + ce.target).size() > pol.config.context) continue;
            cold.push_back(std::move(ce));
        }
        if (cold.empty()) throw Error("pipeline: no cold-start examples fit the model context");
        policy::SftSchedule sched = cfg.sft;
        sched.seed = stage_seed(9);
        auto rep = policy::train_sft(pol, cold, policy::SftStage::activation, sched);
        policy::save_policy(p("policy_activated.bin"), pol);
        record_stage("activate", {"policy_activated.bin"});
        std::cerr << "activate: " << cold.size() << " examples, loss "
                  << (rep.epoch_loss.empty() ? 0.0 : rep.epoch_loss.back()) << "\n";
    }

    void rl_train_stage() {
        require_stage("activate");
        auto cat = load_sid_catalog();
        auto train = load_examples(p("train.jsonl"));
        policy::Policy current = policy::load_policy(p("policy_activated.bin"));
        policy::Policy reference = current;

        grpo::GrpoConfig rc = cfg.rl;
        rc.seed = stage_seed(10);
        auto rl_split = build_rl_split(cat, current, train, rc.max_reasoning_tokens, 0);
        std::error_code ec;
        fs::remove(p("rl_metrics.jsonl"), ec);  // metrics log is per run, not appended across runs
        num::Optimizer opt;
        auto metrics = grpo::rl_train(current, reference, rl_split, cat.vocab, cat.trie, rc, opt,
                                      0, p("rl_metrics.jsonl"), dir);
        policy::save_policy(p("policy_rl.bin"), current);
        record_stage("rl-train", {"policy_rl.bin", "rl_metrics.jsonl"});
        if (!metrics.empty())
            std::cerr << "rl-train: " << metrics.size() << " steps, mean reward "
                      << metrics.front().mean_reward << " -> " << metrics.back().mean_reward
                      << "\n";
    }

    // sampled-generation mean total reward, the RL yardstick
    double sampled_reward(const policy::Policy& pol, const corpus::SidCatalog& cat,
                          const std::vector<eval::EvalExample>& split, size_t samples,
                          uint64_t seed) const {
        double total = 0.0;
        size_t n = 0;
        Rng base(seed);
        for (size_t i = 0; i < split.size(); ++i)
            for (size_t s = 0; s < samples; ++s) {
                auto gen = policy::generate(pol, split[i].context, cfg.rl.temperature,
                                            cfg.rl.max_reasoning_tokens,
                                            base.derive(i, s).state());
                auto rb = sid::compute_reward(cat.vocab, gen.reasoning_text + gen.answer_text,
                                              split[i].truth, cat.trie, cfg.rl.lambda);
                total += rb.total;
                ++n;
            }
        return n == 0 ? 0.0 : total / double(n);
    }

    void evaluate() {
        require_stage("activate");
        auto cat = load_sid_catalog();
        auto train = load_examples(p("train.jsonl"));
        auto test = load_examples(p("test.jsonl"));

        std::vector<std::pair<std::string, policy::Policy>> checkpoints;
        checkpoints.emplace_back("aligned", policy::load_policy(p("policy_aligned.bin")));
        checkpoints.emplace_back("activated", policy::load_policy(p("policy_activated.bin")));
        if (fs::exists(p("policy_rl.bin")))
            checkpoints.emplace_back("rl", policy::load_policy(p("policy_rl.bin")));

        eval::EvalConfig ec;
        ec.ks = cfg.eval.ks;
        ec.beam_width = cfg.eval.beam_width;
        ec.reasoning = cfg.eval.reasoning;
        ec.temperature = cfg.eval.temperature;
        ec.max_reasoning_tokens = cfg.eval.max_reasoning_tokens;
        ec.lambda = cfg.rl.lambda;
        ec.seed = stage_seed(11);

        bool reason = ec.reasoning != "none";
        auto split = build_eval_split(cat, checkpoints[0].second, test,
                                      reason ? ec.max_reasoning_tokens : 0,
                                      cfg.eval.max_examples, reason);
        // the RL yardstick always samples reasoning from the cold-start prompt
        auto reward_split = build_eval_split(cat, checkpoints[0].second, test,
                                             cfg.rl.max_reasoning_tokens,
                                             cfg.eval.max_examples, true);
        std::vector<std::string> train_targets;
        for (const auto& ex : train) train_targets.push_back(ex.target);

        std::vector<std::pair<std::string, eval::EvalReport>> reports;
        reports.emplace_back("popularity",
                             eval::popularity_baseline(train_targets, split, cat, ec.ks));
        ordered_json rewards;
        std::vector<eval::ExampleTranscript> transcripts;
        for (auto& [label, pol] : checkpoints) {
            bool last = &pol == &checkpoints.back().second;
            reports.emplace_back(label, eval::evaluate_ranking(pol, split, cat, ec,
                                                               last ? &transcripts : nullptr));
            rewards[label] = sampled_reward(pol, cat, reward_split, 4, stage_seed(12));
        }
        eval::write_report_json(p("eval_report.json"), reports);
        eval::write_reports_csv(p("eval_report.csv"), reports);
        eval::write_transcripts(p("transcripts.jsonl"), transcripts);
        {
            std::ofstream out(p("eval_rewards.json"));
            out << rewards.dump(2) << "\n";
        }
        record_stage("evaluate", {"eval_report.json", "eval_report.csv", "transcripts.jsonl",
                                  "eval_rewards.json"});
        for (const auto& [label, rep] : reports)
            std::cerr << "evaluate: " << label << " recall@" << ec.ks.back() << " = "
                      << rep.recall.at(ec.ks.back()) << "\n";
    }

    void bestofn() {
        require_stage("activate");
        auto cat = load_sid_catalog();
        auto test = load_examples(p("test.jsonl"));
        std::string ckpt = fs::exists(p("policy_rl.bin")) ? "policy_rl.bin"
                                                          : "policy_activated.bin";
        policy::Policy pol = policy::load_policy(p(ckpt));

        eval::EvalConfig ec;
        ec.ks = cfg.eval.ks;
        ec.beam_width = cfg.eval.beam_width;
        ec.reasoning = "sampled";
        ec.temperature = cfg.eval.temperature;
        ec.max_reasoning_tokens = cfg.eval.max_reasoning_tokens;
        ec.lambda = cfg.rl.lambda;
        ec.seed = stage_seed(13);
        auto split = build_eval_split(cat, pol, test, ec.max_reasoning_tokens,
                                      cfg.eval.max_examples, true);
        auto results = eval::best_of_n(pol, split, cat, cfg.eval.ns, ec);

        std::vector<std::pair<std::string, eval::EvalReport>> reports;
        for (const auto& r : results) reports.emplace_back("n=" + std::to_string(r.n), r.report);
        eval::write_report_json(p("bestofn.json"), reports);
        eval::write_reports_csv(p("bestofn.csv"), reports);
        record_stage("bestofn", {"bestofn.json", "bestofn.csv"});
        std::cerr << "bestofn: evaluated N in {";
        for (const auto& r : results) std::cerr << " " << r.n;
        std::cerr << " } on " << ckpt << "\n";
    }

    void report() {
        if (!fs::exists(p("eval_report.json")))
            throw ValidationError("pipeline: no evaluation output in " + dir +
                                  "; run 'evaluate' first");
        ordered_json consolidated;
        consolidated["tool"] = kToolVersion;
        consolidated["config_hash"] = cfg_hash;
        {
            std::ifstream in(p("eval_report.json"));
            consolidated["eval"] = json::parse(in);
        }
        if (fs::exists(p("eval_rewards.json"))) {
            std::ifstream in(p("eval_rewards.json"));
            consolidated["rewards"] = json::parse(in);
        }
        if (fs::exists(p("bestofn.json"))) {
            std::ifstream in(p("bestofn.json"));
            consolidated["bestofn"] = json::parse(in);
        }
        {
            std::ofstream out(p("report.json"));
            out << consolidated.dump(2) << "\n";
        }

        // plot-ready CSVs
        if (fs::exists(p("rl_metrics.jsonl"))) {
            std::ifstream in(p("rl_metrics.jsonl"));
            std::ofstream csv(p("reward_vs_step.csv"));
            csv << "step,mean_reward,mean_r_sr,invalid_rate,mean_reasoning_len,kl\n";
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                auto j = json::parse(line);
                csv << j.at("step") << "," << j.at("mean_reward").dump() << ","
                    << j.at("mean_r_sr").dump() << "," << j.at("invalid_rate").dump() << ","
                    << j.at("mean_reasoning_len").dump() << "," << j.at("kl").dump() << "\n";
            }
        }
        if (fs::exists(p("bestofn.json"))) {
            std::ifstream in(p("bestofn.json"));
            auto j = json::parse(in);
            std::ofstream csv(p("metric_vs_n.csv"));
            csv << "n";
            for (size_t k : cfg.eval.ks) csv << ",recall@" << k;
            csv << ",mean_reward\n";
            for (const auto& [label, rep] : j.items()) {
                csv << label.substr(2);
                for (size_t k : cfg.eval.ks)
                    csv << "," << rep.at("recall@" + std::to_string(k)).dump();
                csv << "," << rep.at("mean_reward").dump() << "\n";
            }
        }
        std::vector<std::string> outputs = {"report.json"};
        if (fs::exists(p("reward_vs_step.csv"))) outputs.push_back("reward_vs_step.csv");
        if (fs::exists(p("metric_vs_n.csv"))) outputs.push_back("metric_vs_n.csv");
        record_stage("report", outputs);
        std::cerr << "report: wrote " << p("report.json") << "\n";
    }

    void run_stage(const std::string& sub) {
        if (sub == "synth") synth();
        else if (sub == "quantize") quantize();
        else if (sub == "build-corpus") build_corpus();
        else if (sub == "align") align();
        else if (sub == "activate") activate();
        else if (sub == "rl-train") rl_train_stage();
        else if (sub == "evaluate") evaluate();
        else if (sub == "bestofn") bestofn();
        else if (sub == "report") report();
        else if (sub == "all") {
            synth();
            quantize();
            build_corpus();
            align();
            activate();
            rl_train_stage();
            evaluate();
            bestofn();
            report();
        } else {
            throw ValidationError("unknown subcommand '" + sub + "'");
        }
    }
};

std::string resolve_relative(const std::string& base_dir, const std::string& path) {
    if (path.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(base_dir) / path).string();
}

}  // namespace

int run_command(const std::string& subcommand, const std::string& config_path,
                const std::vector<std::string>& overrides,
                std::optional<uint64_t> seed_override,
                std::optional<std::string> run_dir_override) {
    try {
        std::ifstream in(config_path);
        if (!in) throw ValidationError("config: cannot open " + config_path);
        std::stringstream ss;
        ss << in.rdbuf();
        std::string text = ss.str();
        for (const auto& ov : overrides) text = apply_override(text, ov);
        if (seed_override) text = apply_override(text, "seed=" + std::to_string(*seed_override));
        if (run_dir_override) text = apply_override(text, "run_dir=" + *run_dir_override);

        RunConfig cfg = parse_config(text, config_path);
        std::string base = fs::path(config_path).parent_path().string();
        if (base.empty()) base = ".";
        cfg.corpus.general_path = resolve_relative(base, cfg.corpus.general_path);
        cfg.dataset.catalog_path = resolve_relative(base, cfg.dataset.catalog_path);
        cfg.dataset.interactions_path = resolve_relative(base, cfg.dataset.interactions_path);

        fs::create_directories(cfg.run_dir);
        RunLock lock(cfg.run_dir);
        Pipeline pipe(std::move(cfg), text_hash(text));
        pipe.run_stage(subcommand);
        return 0;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace sidrec::cli
