#include "sidrec/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sidrec::cli {

using nlohmann::json;

namespace {

size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= b.size(); ++j) {
            size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

// strict section reader: every key must be consumed, otherwise the nearest
// known key is suggested
class Obj {
public:
    Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object())
            throw ValidationError("config: " + (path_.empty() ? "top level" : path_) +
                                  " must be an object");
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        known_.push_back(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->get<T>();
        } catch (const json::exception&) {
            throw ValidationError("config: bad value type for " + qualify(key));
        }
    }

    json child(const std::string& key) {
        known_.push_back(key);
        auto it = j_.find(key);
        if (it == j_.end()) return json::object();
        return *it;
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (std::find(known_.begin(), known_.end(), key) != known_.end()) continue;
            std::string msg = "config: unknown key " + qualify(key);
            std::string best;
            size_t best_d = 3;  // suggest only close matches
            for (const auto& k : known_) {
                size_t d = edit_distance(key, k);
                if (d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            if (!best.empty()) msg += "; did you mean '" + qualified_name(best) + "'?";
            throw ValidationError(msg);
        }
    }

private:
    std::string qualified_name(const std::string& key) const {
        return path_.empty() ? key : path_ + "." + key;
    }
    std::string qualify(const std::string& key) const { return "'" + qualified_name(key) + "'"; }

    const json& j_;
    std::string path_;
    std::vector<std::string> known_;
};

void read_dataset(const json& j, DatasetConfig& d) {
    Obj o(j, "dataset");
    o.get("kind", d.kind);
    o.get("catalog_path", d.catalog_path);
    o.get("interactions_path", d.interactions_path);
    o.get("n_items", d.n_items);
    o.get("n_users", d.n_users);
    o.get("n_categories", d.n_categories);
    o.get("self_transition", d.self_transition);
    o.get("seq_len_min", d.seq_len_min);
    o.get("seq_len_max", d.seq_len_max);
    o.get("k_core", d.k_core);
    o.get("max_len", d.max_len);
    std::vector<double> ratios;
    o.get("ratios", ratios);
    if (!ratios.empty()) {
        if (ratios.size() != 3)
            throw ValidationError("config: dataset.ratios must have 3 entries");
        d.ratios = {ratios[0], ratios[1], ratios[2]};
    }
    o.finish();
}

void read_quantizer(const json& j, quant::RqVaeConfig& q) {
    Obj o(j, "quantizer");
    o.get("levels", q.levels);
    o.get("codewords", q.codewords);
    o.get("latent_dim", q.latent_dim);
    o.get("beta_commit", q.beta_commit);
    o.get("hidden", q.hidden);
    o.get("learning_rate", q.learning_rate);
    o.get("epochs", q.epochs);
    o.get("batch_size", q.batch_size);
    o.finish();
}

void read_teacher(const json& j, corpus::TeacherConfig& t) {
    Obj o(j, "corpus.teacher");
    if (j.contains("api_key"))
        throw ValidationError(
            "config: 'corpus.teacher.api_key' is not allowed; secrets must come from the "
            "environment, set 'corpus.teacher.api_key_env' to the variable name instead");
    o.get("endpoint", t.endpoint);
    o.get("model", t.model);
    o.get("api_key_env", t.api_key_env);
    o.get("timeout_seconds", t.timeout_seconds);
    o.get("max_retries", t.max_retries);
    o.get("temperature", t.temperature);
    o.get("backoff_ms", t.backoff_ms);
    o.finish();
}

void read_corpus(const json& j, CorpusSection& c) {
    Obj o(j, "corpus");
    o.get("budget", c.budget);
    o.get("weights", c.weights);
    o.get("general_path", c.general_path);
    o.get("enrich_items", c.enrich_items);
    o.get("enrich_users", c.enrich_users);
    json t = o.child("teacher");
    if (!t.empty()) read_teacher(t, c.teacher);
    o.finish();
}

void read_policy(const json& j, policy::PolicyConfig& p, size_t& min_freq) {
    Obj o(j, "policy");
    o.get("layers", p.layers);
    o.get("heads", p.heads);
    o.get("width", p.width);
    o.get("ff_width", p.ff_width);
    o.get("context", p.context);
    o.get("min_freq", min_freq);
    o.finish();
}

void read_sft(const json& j, policy::SftSchedule& s) {
    Obj o(j, "sft");
    o.get("epochs", s.epochs);
    o.get("batch_size", s.batch_size);
    o.get("learning_rate", s.learning_rate);
    o.get("weight_decay", s.weight_decay);
    o.get("clip_norm", s.clip_norm);
    o.get("patience", s.patience);
    o.get("val_fraction", s.val_fraction);
    o.get("optimizer", s.optimizer);
    o.finish();
}

void read_activation(const json& j, ActivationSection& a) {
    Obj o(j, "activation");
    o.get("examples", a.examples);
    o.finish();
}

void read_rl(const json& j, grpo::GrpoConfig& r) {
    Obj o(j, "rl");
    o.get("group_size", r.group_size);
    o.get("kl_coef", r.kl_coef);
    o.get("clip", r.clip);
    o.get("lambda", r.lambda);
    o.get("batch_size", r.batch_size);
    o.get("learning_rate", r.learning_rate);
    o.get("temperature", r.temperature);
    o.get("adv_epsilon", r.adv_epsilon);
    o.get("ratio_mode", r.ratio_mode);
    o.get("max_steps", r.max_steps);
    o.get("max_reasoning_tokens", r.max_reasoning_tokens);
    o.get("optimizer", r.optimizer);
    o.get("weight_decay", r.weight_decay);
    o.get("clip_norm", r.clip_norm);
    o.get("checkpoint_every", r.checkpoint_every);
    o.finish();
}

void read_eval(const json& j, EvalSection& e) {
    Obj o(j, "eval");
    o.get("ks", e.ks);
    o.get("ns", e.ns);
    o.get("beam_width", e.beam_width);
    o.get("reasoning", e.reasoning);
    o.get("temperature", e.temperature);
    o.get("max_reasoning_tokens", e.max_reasoning_tokens);
    o.get("max_examples", e.max_examples);
    o.finish();
}

}  // namespace

void RunConfig::validate() const {
    if (run_dir.empty()) throw ValidationError("config: run_dir must be set");
    if (dataset.kind != "synthetic" && dataset.kind != "files")
        throw ValidationError("config: dataset.kind must be 'synthetic' or 'files'");
    if (dataset.kind == "files" &&
        (dataset.catalog_path.empty() || dataset.interactions_path.empty()))
        throw ValidationError("config: dataset.kind 'files' needs catalog_path and "
                              "interactions_path");
    double rsum = dataset.ratios[0] + dataset.ratios[1] + dataset.ratios[2];
    if (std::abs(rsum - 1.0) > 1e-9)
        throw ValidationError("config: dataset.ratios must sum to 1");
    try {
        quantizer.validate();
        policy.validate();
        rl.validate();
    } catch (const Error& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    for (const auto& [name, w] : corpus.weights) {
        try {
            sidrec::corpus::parse_tag(name);
        } catch (const Error&) {
            throw ValidationError("config: corpus.weights has unknown task tag '" + name + "'");
        }
        if (w < 0) throw ValidationError("config: corpus.weights must be non-negative");
    }
    if (eval.ks.empty()) throw ValidationError("config: eval.ks must be non-empty");
    size_t max_k = *std::max_element(eval.ks.begin(), eval.ks.end());
    if (eval.beam_width < max_k)
        throw ValidationError("config: eval.beam_width must be >= max of eval.ks");
    if (eval.reasoning != "none" && eval.reasoning != "greedy" && eval.reasoning != "sampled")
        throw ValidationError("config: eval.reasoning must be none, greedy, or sampled");
}

RunConfig parse_config(const std::string& json_text, const std::string& origin) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ValidationError("config: " + origin + " is not valid JSON: " + e.what());
    }
    RunConfig c;
    Obj o(j, "");
    o.get("run_dir", c.run_dir);
    o.get("seed", c.seed);
    read_dataset(o.child("dataset"), c.dataset);
    read_quantizer(o.child("quantizer"), c.quantizer);
    o.get("embed_dim", c.embed_dim);
    read_corpus(o.child("corpus"), c.corpus);
    read_policy(o.child("policy"), c.policy, c.min_freq);
    read_sft(o.child("sft"), c.sft);
    read_activation(o.child("activation"), c.activation);
    read_rl(o.child("rl"), c.rl);
    read_eval(o.child("eval"), c.eval);
    o.finish();
    c.validate();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

std::string apply_override(const std::string& json_text, const std::string& assignment) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ValidationError("config: --set expects key=value, got '" + assignment + "'");
    std::string key = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: not valid JSON: ") + e.what());
    }
    json* node = &j;
    size_t pos = 0;
    while (true) {
        size_t dot = key.find('.', pos);
        std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (part.empty()) throw ValidationError("config: --set key has an empty segment");
        if (dot == std::string::npos) {
            json parsed;
            try {
                parsed = json::parse(value);
            } catch (const json::exception&) {
                parsed = value;  // bare strings stay strings
            }
            (*node)[part] = parsed;
            break;
        }
        node = &(*node)[part];
        pos = dot + 1;
    }
    return j.dump(2);
}

std::string text_hash(const std::string& text) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)fnv1a64(text));
    return buf;
}

std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("file_hash: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return text_hash(ss.str());
}

}  // namespace sidrec::cli
