#include "sidrec/policy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "sidrec/optim.hpp"
#include "sidrec/serialize.hpp"

namespace sidrec::policy {

using num::Tape;

// ---------------------------------------------------------------------------
// tokenizer

namespace {

const char* kSpecials[] = {"<|pad|>", "<|unk|>", "<|endoftext|>", "<|im_start|>", "<|im_end|>"};

// recognizes `<letter_digits>` starting at pos; returns length or 0
size_t sid_token_len(const std::string& text, size_t pos) {
    if (pos + 4 >= text.size() || text[pos] != '<') return 0;
    char letter = text[pos + 1];
    if (letter < 'a' || letter > 'z' || text[pos + 2] != '_') return 0;
    size_t j = pos + 3;
    while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
    if (j == pos + 3 || j >= text.size() || text[j] != '>') return 0;
    return j - pos + 1;
}

size_t special_token_len(const std::string& text, size_t pos) {
    for (const char* s : kSpecials) {
        size_t n = std::strlen(s);
        if (text.compare(pos, n, s) == 0) return n;
    }
    return 0;
}

// splits text into atomic surface strings: specials, SID-shaped tokens,
// lowercased whitespace-delimited words
std::vector<std::string> scan_surface(const std::string& text) {
    std::vector<std::string> out;
    size_t i = 0;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            out.push_back(word);
            word.clear();
        }
    };
    while (i < text.size()) {
        char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
            ++i;
            continue;
        }
        if (c == '<') {
            if (size_t n = special_token_len(text, i)) {
                flush();
                out.push_back(text.substr(i, n));
                i += n;
                continue;
            }
            if (size_t n = sid_token_len(text, i)) {
                flush();
                out.push_back(text.substr(i, n));
                i += n;
                continue;
            }
        }
        word += char(std::tolower(static_cast<unsigned char>(c)));
        ++i;
    }
    flush();
    return out;
}

bool looks_like_sid(const std::string& s) { return sid_token_len(s, 0) == s.size() && s.size() > 0; }

}  // namespace

std::optional<size_t> Vocab::sid_token_id(size_t level, size_t index) const {
    std::string tok = std::string("<") + char('a' + level) + "_" + std::to_string(index) + ">";
    auto it = ids.find(tok);
    if (it == ids.end()) return std::nullopt;
    return it->second;
}

std::vector<size_t> Vocab::encode(const std::string& text) const {
    std::vector<size_t> out;
    for (const auto& s : scan_surface(text)) {
        auto it = ids.find(s);
        out.push_back(it == ids.end() ? unk : it->second);
    }
    return out;
}

std::string Vocab::decode(const std::vector<size_t>& ids_in) const {
    std::string out;
    for (size_t id : ids_in) {
        if (id >= tokens.size()) throw Error("vocab: id " + std::to_string(id) + " out of range");
        const std::string& s = tokens[id];
        if (!out.empty() && s[0] != '<') out += ' ';
        out += s;
    }
    return out;
}

Vocab build_vocab(const std::vector<corpus::AlignmentExample>& corpus,
                  const quant::SidAssignment& assignment, size_t min_freq) {
    if (corpus.empty()) throw Error("build_vocab: empty corpus");
    Vocab v;
    for (const char* s : kSpecials) {
        v.ids[s] = v.tokens.size();
        v.tokens.push_back(s);
    }
    v.pad = v.ids["<|pad|>"];
    v.unk = v.ids["<|unk|>"];
    v.eot = v.ids["<|endoftext|>"];
    v.im_start = v.ids["<|im_start|>"];
    v.im_end = v.ids["<|im_end|>"];

    v.sid_levels = assignment.levels;
    size_t max_disamb = 0;
    for (const auto& [id, sc] : assignment.by_item)
        max_disamb = std::max(max_disamb, sc.disambiguation + 1);
    sid::SidVocab sv;
    sv.levels = assignment.levels;
    sv.codewords = assignment.codewords;
    for (const auto& tok : sv.all_tokens(max_disamb)) {
        size_t id = v.tokens.size();
        v.ids[tok] = id;
        v.tokens.push_back(tok);
        size_t level = size_t(tok[1] - 'a');
        size_t index = std::stoul(tok.substr(3, tok.size() - 4));
        v.sid_info[id] = {level, index};
    }

    // language words by frequency, deterministic order (freq desc, then word)
    std::map<std::string, size_t> freq;
    for (const auto& ex : corpus)
        for (const auto& s : scan_surface(ex.prompt + " " + ex.target))
            if (!v.ids.count(s) && !looks_like_sid(s)) ++freq[s];
    std::vector<std::pair<std::string, size_t>> words(freq.begin(), freq.end());
    std::stable_sort(words.begin(), words.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    for (const auto& [w, f] : words) {
        if (f < min_freq) continue;
        v.ids[w] = v.tokens.size();
        v.tokens.push_back(w);
    }
    return v;
}

// ---------------------------------------------------------------------------
// model

void PolicyConfig::validate() const {
    if (layers < 1 || heads < 1 || width < 1 || ff_width < 1 || context < 4)
        throw Error("policy config: all dimensions must be positive");
    if (width % heads != 0)
        throw Error("policy config: width " + std::to_string(width) + " not divisible by heads " +
                    std::to_string(heads));
}

size_t Policy::layer_base(size_t layer) const { return 2 + layer * per_layer(); }

Policy init_policy(const PolicyConfig& config, Vocab vocab) {
    config.validate();
    Policy p;
    p.config = config;
    p.vocab = std::move(vocab);
    Rng rng(config.seed);
    size_t D = config.width, F = config.ff_width, hd = D / config.heads;
    size_t V = p.vocab.size();
    auto mat = [&](size_t r, size_t c) {
        Tensor t = Tensor::zeros({r, c});
        for (double& x : t.data) x = rng.normal() * 0.02;
        return t;
    };
    auto ones = [&](size_t n) { return Tensor({n}, std::vector<double>(n, 1.0)); };

    p.params.push_back(mat(V, D));              // token embeddings
    p.params.push_back(mat(config.context, D)); // position embeddings
    for (size_t l = 0; l < config.layers; ++l) {
        p.params.push_back(ones(D));            // ln1 gain
        p.params.push_back(Tensor::zeros({D})); // ln1 bias
        for (size_t h = 0; h < config.heads; ++h) {
            p.params.push_back(mat(D, hd));  // wq
            p.params.push_back(mat(D, hd));  // wk
            p.params.push_back(mat(D, hd));  // wv
            p.params.push_back(mat(hd, D));  // wo
        }
        p.params.push_back(ones(D));            // ln2 gain
        p.params.push_back(Tensor::zeros({D})); // ln2 bias
        p.params.push_back(mat(D, F));          // w1
        p.params.push_back(Tensor::zeros({F})); // b1
        p.params.push_back(mat(F, D));          // w2
        p.params.push_back(Tensor::zeros({D})); // b2
    }
    p.params.push_back(ones(D));            // final ln gain
    p.params.push_back(Tensor::zeros({D})); // final ln bias
    p.params.push_back(mat(D, V));          // output head
    return p;
}

static constexpr double kLnEps = 1e-5;

Tape::Id forward_logits(Tape& t, const std::vector<Tape::Id>& p, const PolicyConfig& cfg,
                        const std::vector<size_t>& ids) {
    if (ids.empty()) throw Error("forward_logits: empty sequence");
    if (ids.size() > cfg.context)
        throw Error("forward_logits: sequence length " + std::to_string(ids.size()) +
                    " exceeds context " + std::to_string(cfg.context));
    size_t hd = cfg.width / cfg.heads;
    double inv_sqrt = 1.0 / std::sqrt(double(hd));
    std::vector<size_t> positions(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) positions[i] = i;

    Tape::Id x = t.add(t.gather_rows(p[0], ids), t.gather_rows(p[1], positions));
    size_t per = 8 + 4 * cfg.heads;
    for (size_t l = 0; l < cfg.layers; ++l) {
        size_t b = 2 + l * per;
        Tape::Id h = t.layer_norm(x, p[b], p[b + 1], kLnEps);
        Tape::Id attn = 0;
        for (size_t hh = 0; hh < cfg.heads; ++hh) {
            size_t hb = b + 2 + hh * 4;
            Tape::Id q = t.matmul(h, p[hb]);
            Tape::Id k = t.matmul(h, p[hb + 1]);
            Tape::Id v = t.matmul(h, p[hb + 2]);
            Tape::Id scores = t.scale(t.matmul(q, t.transpose(k)), inv_sqrt);
            Tape::Id probs = t.row_softmax(scores, true);
            Tape::Id proj = t.matmul(t.matmul(probs, v), p[hb + 3]);
            attn = hh == 0 ? proj : t.add(attn, proj);
        }
        x = t.add(x, attn);
        size_t mb = b + 2 + 4 * cfg.heads;
        Tape::Id h2 = t.layer_norm(x, p[mb], p[mb + 1], kLnEps);
        Tape::Id m = t.tanh_op(t.add(t.matmul(h2, p[mb + 2]), p[mb + 3]));
        x = t.add(x, t.add(t.matmul(m, p[mb + 4]), p[mb + 5]));
    }
    size_t fb = 2 + cfg.layers * per;
    Tape::Id xf = t.layer_norm(x, p[fb], p[fb + 1], kLnEps);
    return t.matmul(xf, p[fb + 2]);
}

// ---------------------------------------------------------------------------
// incremental engine: same row arithmetic and accumulation order as the tape

namespace {

// y[j] += sum_kk x[kk] * W[kk, j], kk outer to match the tape's matmul loop
void vecmat_acc(const std::vector<double>& x, const Tensor& W, std::vector<double>& y) {
    size_t k = W.shape[0], n = W.shape[1];
    for (size_t kk = 0; kk < k; ++kk) {
        double av = x[kk];
        const double* brow = &W.data[kk * n];
        for (size_t j = 0; j < n; ++j) y[j] += av * brow[j];
    }
}

void layer_norm_row(const std::vector<double>& x, const Tensor& gain, const Tensor& bias,
                    std::vector<double>& out) {
    size_t n = x.size();
    double s = 0.0;
    for (size_t j = 0; j < n; ++j) s += x[j];
    double mu = s / double(n);
    double var = 0.0;
    for (size_t j = 0; j < n; ++j) {
        double d = x[j] - mu;
        var += d * d;
    }
    var /= double(n);
    double inv_std = 1.0 / std::sqrt(var + kLnEps);
    out.resize(n);
    for (size_t j = 0; j < n; ++j) out[j] = (x[j] - mu) * inv_std * gain.data[j] + bias.data[j];
}

}  // namespace

Engine::Engine(const Policy& policy) : p_(policy) {
    k_cache_.assign(p_.config.layers, std::vector<std::vector<double>>(p_.config.heads));
    v_cache_ = k_cache_;
}

const std::vector<double>& Engine::feed(size_t token_id) {
    const PolicyConfig& cfg = p_.config;
    if (length_ >= cfg.context) throw Error("engine: context window exhausted");
    if (token_id >= p_.vocab.size()) throw Error("engine: token id out of range");
    size_t D = cfg.width, F = cfg.ff_width, hd = D / cfg.heads, V = p_.vocab.size();
    double inv_sqrt = 1.0 / std::sqrt(double(hd));
    size_t t = length_;

    std::vector<double> x(D);
    for (size_t j = 0; j < D; ++j)
        x[j] = p_.params[0].at(token_id, j) + p_.params[1].at(t, j);

    size_t per = 8 + 4 * cfg.heads;
    std::vector<double> h, h2, q, scores, probs, ho, proj, attn, m1, m2;
    for (size_t l = 0; l < cfg.layers; ++l) {
        size_t b = 2 + l * per;
        layer_norm_row(x, p_.params[b], p_.params[b + 1], h);
        attn.assign(D, 0.0);
        for (size_t hh = 0; hh < cfg.heads; ++hh) {
            size_t hb = b + 2 + hh * 4;
            q.assign(hd, 0.0);
            vecmat_acc(h, p_.params[hb], q);
            std::vector<double>& kc = k_cache_[l][hh];
            std::vector<double>& vc = v_cache_[l][hh];
            size_t old = kc.size();
            kc.resize(old + hd, 0.0);
            vc.resize(old + hd, 0.0);
            {
                // k/v rows for this position
                std::vector<double> kv(hd, 0.0);
                vecmat_acc(h, p_.params[hb + 1], kv);
                std::copy(kv.begin(), kv.end(), kc.begin() + old);
                kv.assign(hd, 0.0);
                vecmat_acc(h, p_.params[hb + 2], kv);
                std::copy(kv.begin(), kv.end(), vc.begin() + old);
            }
            // scores over positions 0..t, accumulated kk-outer like matmul
            scores.assign(t + 1, 0.0);
            for (size_t kk = 0; kk < hd; ++kk) {
                double av = q[kk];
                for (size_t j = 0; j <= t; ++j) scores[j] += av * kc[j * hd + kk];
            }
            for (size_t j = 0; j <= t; ++j) scores[j] *= inv_sqrt;
            // softmax over the causal support
            double mx = scores[0];
            for (size_t j = 1; j <= t; ++j) mx = std::max(mx, scores[j]);
            probs.assign(t + 1, 0.0);
            double z = 0.0;
            for (size_t j = 0; j <= t; ++j) {
                double e = std::exp(scores[j] - mx);
                probs[j] = e;
                z += e;
            }
            for (size_t j = 0; j <= t; ++j) probs[j] /= z;
            ho.assign(hd, 0.0);
            for (size_t kk = 0; kk <= t; ++kk) {
                double av = probs[kk];
                const double* vrow = &vc[kk * hd];
                for (size_t j = 0; j < hd; ++j) ho[j] += av * vrow[j];
            }
            proj.assign(D, 0.0);
            vecmat_acc(ho, p_.params[hb + 3], proj);
            for (size_t j = 0; j < D; ++j) attn[j] += proj[j];
        }
        for (size_t j = 0; j < D; ++j) x[j] += attn[j];
        size_t mb = b + 2 + 4 * cfg.heads;
        layer_norm_row(x, p_.params[mb], p_.params[mb + 1], h2);
        m1.assign(F, 0.0);
        vecmat_acc(h2, p_.params[mb + 2], m1);
        for (size_t j = 0; j < F; ++j) m1[j] = std::tanh(m1[j] + p_.params[mb + 3].data[j]);
        m2.assign(D, 0.0);
        vecmat_acc(m1, p_.params[mb + 4], m2);
        for (size_t j = 0; j < D; ++j) x[j] += m2[j] + p_.params[mb + 5].data[j];
    }
    size_t fb = 2 + cfg.layers * per;
    layer_norm_row(x, p_.params[fb], p_.params[fb + 1], h);
    logits_.assign(V, 0.0);
    vecmat_acc(h, p_.params[fb + 2], logits_);
    ++length_;
    return logits_;
}

double row_logprob(const std::vector<double>& logits, size_t target, double temperature) {
    if (target >= logits.size()) throw Error("row_logprob: target out of range");
    double invT = temperature > 0.0 ? 1.0 / temperature : 1.0;
    size_t n = logits.size();
    double mx = logits[0] * invT;
    for (size_t j = 1; j < n; ++j) mx = std::max(mx, logits[j] * invT);
    double z = 0.0;
    for (size_t j = 0; j < n; ++j) z += std::exp(logits[j] * invT - mx);
    return logits[target] * invT - mx - std::log(z);
}

// ---------------------------------------------------------------------------
// supervised training

namespace {

struct TokenizedExample {
    std::vector<size_t> full;     // prompt + target tokens
    size_t prompt_len = 0;
};

std::vector<TokenizedExample> tokenize_corpus(const Policy& policy,
                                              const std::vector<corpus::AlignmentExample>& corpus) {
    std::vector<TokenizedExample> out;
    for (size_t i = 0; i < corpus.size(); ++i) {
        TokenizedExample te;
        std::vector<size_t> prompt = policy.vocab.encode(corpus[i].prompt);
        std::vector<size_t> target = policy.vocab.encode(corpus[i].target);
        te.prompt_len = prompt.size();
        te.full = std::move(prompt);
        te.full.insert(te.full.end(), target.begin(), target.end());
        if (te.full.size() > policy.config.context)
            throw Error("train_sft: example " + std::to_string(i) + " has " +
                        std::to_string(te.full.size()) + " tokens, context is " +
                        std::to_string(policy.config.context));
        if (te.full.size() < 2 || te.prompt_len == 0 || te.prompt_len >= te.full.size())
            throw Error("train_sft: example " + std::to_string(i) + " has an empty span");
        out.push_back(std::move(te));
    }
    return out;
}

// gradient of the summed target-span cross entropy for one example
double example_loss_grads(const Policy& policy, const TokenizedExample& te,
                          std::vector<Tensor>& grad_acc, size_t* masked_tokens) {
    Tape t;
    std::vector<Tape::Id> pids;
    for (const auto& p : policy.params) pids.push_back(t.leaf(p, true));
    std::vector<size_t> input(te.full.begin(), te.full.end() - 1);
    std::vector<size_t> targets(te.full.begin() + 1, te.full.end());
    Tape::Id logits = forward_logits(t, pids, policy.config, input);
    Tape::Id lp = t.gather_log_softmax(logits, targets);
    Tensor mask = Tensor::zeros({targets.size()});
    size_t n_masked = 0;
    for (size_t i = 0; i < targets.size(); ++i) {
        if (i + 1 >= te.prompt_len) {
            mask.data[i] = 1.0;
            ++n_masked;
        }
    }
    Tape::Id loss = t.scale(t.sum(t.mul(lp, t.constant(mask))), -1.0);
    t.backward(loss);
    for (size_t i = 0; i < pids.size(); ++i) {
        const Tensor& g = t.grad(pids[i]);
        if (g.data.empty()) continue;
        for (size_t j = 0; j < g.size(); ++j) grad_acc[i].data[j] += g.data[j];
    }
    *masked_tokens += n_masked;
    return t.value(loss).data[0];
}

// teacher-forced SID accuracy over the validation slice
double val_sid_accuracy(const Policy& policy, const std::vector<TokenizedExample>& val) {
    size_t scored = 0, correct = 0;
    for (const auto& te : val) {
        Engine eng(policy);
        bool all_ok = true;
        size_t sid_positions = 0;
        for (size_t i = 0; i + 1 < te.full.size(); ++i) {
            const auto& logits = eng.feed(te.full[i]);
            size_t next = te.full[i + 1];
            if (i + 1 >= te.prompt_len && policy.vocab.is_sid(next)) {
                ++sid_positions;
                size_t best = 0;
                for (size_t j = 1; j < logits.size(); ++j)
                    if (logits[j] > logits[best]) best = j;
                all_ok &= best == next;
            }
        }
        if (sid_positions == 0) continue;
        ++scored;
        correct += all_ok;
    }
    return scored == 0 ? 0.0 : double(correct) / double(scored);
}

}  // namespace

SftReport train_sft(Policy& policy, const std::vector<corpus::AlignmentExample>& corpus,
                    SftStage stage, const SftSchedule& schedule) {
    if (corpus.empty()) throw Error("train_sft: empty corpus");
    auto tokenized = tokenize_corpus(policy, corpus);

    Rng rng(schedule.seed);
    std::vector<size_t> order(tokenized.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    // validation slice for alignment early stopping
    std::vector<TokenizedExample> val;
    if (stage == SftStage::alignment && schedule.val_fraction > 0.0) {
        Rng vr = rng.derive(1);
        for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[vr.below(i)]);
        size_t n_val = std::max<size_t>(1, size_t(double(order.size()) * schedule.val_fraction));
        if (n_val >= order.size()) n_val = order.size() - 1;
        for (size_t i = 0; i < n_val; ++i) val.push_back(tokenized[order[order.size() - 1 - i]]);
        order.resize(order.size() - n_val);
    }

    num::Optimizer opt;
    opt.kind = num::Optimizer::parse_kind(schedule.optimizer);
    opt.lr = schedule.learning_rate;
    opt.weight_decay = schedule.weight_decay;
    opt.clip_norm = schedule.clip_norm;

    SftReport report;
    size_t epochs = stage == SftStage::activation ? 1 : schedule.epochs;
    double best_acc = -1.0;
    size_t since_best = 0;
    std::vector<Tensor> best_params;

    Rng shuffle_rng = rng.derive(2);
    for (size_t epoch = 0; epoch < epochs; ++epoch) {
        Rng sr = shuffle_rng.derive(epoch);
        for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[sr.below(i)]);
        double epoch_loss = 0.0;
        size_t epoch_tokens = 0;
        for (size_t off = 0; off < order.size(); off += schedule.batch_size) {
            size_t end = std::min(order.size(), off + schedule.batch_size);
            std::vector<Tensor> grads;
            for (const auto& p : policy.params) grads.push_back(Tensor::zeros(p.shape));
            size_t masked = 0;
            double batch_loss = 0.0;
            for (size_t i = off; i < end; ++i)
                batch_loss += example_loss_grads(policy, tokenized[order[i]], grads, &masked);
            if (masked == 0) continue;
            for (auto& g : grads)
                for (double& x : g.data) x /= double(masked);
            opt.step(policy.params, grads);
            ++report.steps;
            epoch_loss += batch_loss;
            epoch_tokens += masked;
        }
        report.epoch_loss.push_back(epoch_tokens ? epoch_loss / double(epoch_tokens) : 0.0);
        ++report.epochs_run;

        if (stage == SftStage::alignment && !val.empty()) {
            double acc = val_sid_accuracy(policy, val);
            report.val_accuracy.push_back(acc);
            if (acc > best_acc) {
                best_acc = acc;
                since_best = 0;
                best_params = policy.params;
            } else if (++since_best > schedule.patience) {
                break;
            }
        }
    }
    if (stage == SftStage::alignment && !best_params.empty()) policy.params = best_params;
    policy.stage = stage == SftStage::alignment ? "aligned" : "activated";
    return report;
}

// ---------------------------------------------------------------------------
// sampling and ranking

namespace {

// samples from the temperature softmax restricted to `allowed` (all ids when
// empty); returns (token, logprob under the restricted distribution)
std::pair<size_t, double> sample_row(const std::vector<double>& logits,
                                     const std::vector<size_t>& allowed, double temperature,
                                     Rng& rng) {
    std::vector<size_t> support;
    if (allowed.empty()) {
        support.resize(logits.size());
        for (size_t i = 0; i < support.size(); ++i) support[i] = i;
    } else {
        support = allowed;
    }
    if (temperature <= 0.0) {
        size_t best = support[0];
        for (size_t id : support)
            if (logits[id] > logits[best]) best = id;
        // report the model's unscaled log-probability for the greedy pick
        return {best, row_logprob(logits, best, 1.0)};
    }
    double invT = 1.0 / temperature;
    double mx = logits[support[0]] * invT;
    for (size_t id : support) mx = std::max(mx, logits[id] * invT);
    std::vector<double> e(support.size());
    double z = 0.0;
    for (size_t i = 0; i < support.size(); ++i) {
        e[i] = std::exp(logits[support[i]] * invT - mx);
        z += e[i];
    }
    double r = rng.uniform() * z;
    size_t pick = support.size() - 1;
    double acc = 0.0;
    for (size_t i = 0; i < support.size(); ++i) {
        acc += e[i];
        if (r < acc) {
            pick = i;
            break;
        }
    }
    if (allowed.empty()) {
        // unrestricted: identical arithmetic to row_logprob over the full row
        return {support[pick], row_logprob(logits, support[pick], temperature)};
    }
    return {support[pick], std::log(e[pick] / z)};
}

}  // namespace

GenerationOutput generate(const Policy& policy, const std::vector<size_t>& context,
                          double temperature, size_t max_reasoning_tokens, uint64_t seed,
                          const sid::SidTrie* trie) {
    GenerationOutput out;
    size_t L = policy.vocab.sid_levels;
    if (context.empty()) throw Error("generate: empty context");
    if (context.size() + max_reasoning_tokens + L + 2 > policy.config.context) {
        out.stop_reason = "context_overflow";
        return out;
    }
    Rng rng(seed);
    Engine eng(policy);
    const std::vector<double>* logits = nullptr;
    for (size_t id : context) logits = &eng.feed(id);

    // with constrained masking on, reasoning may not emit terminators or
    // SID tokens other than valid answer openers
    std::vector<size_t> reasoning_allowed;
    if (trie) {
        auto root = sid::constrained_next(*trie, {});
        for (size_t id = 0; id < policy.vocab.size(); ++id) {
            if (id == policy.vocab.pad || id == policy.vocab.eot || id == policy.vocab.im_end)
                continue;
            auto info = policy.vocab.sid_info.find(id);
            if (info != policy.vocab.sid_info.end() &&
                (info->second.first != 0 || !root.codes.count(info->second.second)))
                continue;
            reasoning_allowed.push_back(id);
        }
    }

    // reasoning phase: until the first level-1 SID token or the budget
    std::optional<size_t> first_answer;
    while (out.reasoning_ids.size() < max_reasoning_tokens) {
        auto [tok, lp] = sample_row(*logits, reasoning_allowed, temperature, rng);
        auto info = policy.vocab.sid_info.find(tok);
        if (info != policy.vocab.sid_info.end() && info->second.first == 0) {
            first_answer = tok;
            out.logprobs.push_back(lp);
            break;
        }
        if (tok == policy.vocab.eot || tok == policy.vocab.im_end || tok == policy.vocab.pad) {
            out.stop_reason = "parse_failure";
            out.reasoning_text = policy.vocab.decode(out.reasoning_ids);
            return out;
        }
        out.reasoning_ids.push_back(tok);
        out.logprobs.push_back(lp);
        logits = &eng.feed(tok);
    }

    // answer phase: one full SID, suffix level included when the trie needs it
    std::vector<size_t> prefix;
    while (true) {
        size_t level = prefix.size();
        size_t tok;
        bool sampled_here = false;
        if (first_answer) {
            tok = *first_answer;
            first_answer.reset();
        } else {
            std::vector<size_t> allowed;
            if (trie) {
                auto next = sid::constrained_next(*trie, prefix);
                if (next.terminal && level >= L) break;
                for (size_t code : next.codes)
                    if (auto id = policy.vocab.sid_token_id(level, code)) allowed.push_back(*id);
                if (allowed.empty()) {
                    out.stop_reason = "parse_failure";
                    break;
                }
            } else if (level >= L) {
                break;  // unconstrained answers stop at the L semantic levels
            }
            auto [t2, lp] = sample_row(*logits, allowed, temperature, rng);
            tok = t2;
            out.logprobs.push_back(lp);
            sampled_here = true;
        }
        auto info = policy.vocab.sid_info.find(tok);
        if (info == policy.vocab.sid_info.end() || info->second.first != level) {
            // keep logprobs aligned with the emitted tokens
            if (sampled_here) out.logprobs.pop_back();
            out.stop_reason = "parse_failure";
            break;
        }
        out.answer_ids.push_back(tok);
        prefix.push_back(info->second.second);
        logits = &eng.feed(tok);
        if (!trie && prefix.size() == L) break;
        if (trie && prefix.size() > L) break;  // suffix token emitted
    }
    if (out.stop_reason.empty()) out.stop_reason = "complete";
    out.reasoning_text = policy.vocab.decode(out.reasoning_ids);
    out.answer_text = policy.vocab.decode(out.answer_ids);
    return out;
}

namespace {

size_t count_items(const sid::SidTrie::Node& n) {
    size_t c = n.terminal ? 1 : 0;
    for (const auto& [code, child] : n.children) c += count_items(child);
    return c;
}

}  // namespace

std::vector<RankedItem> rank_topk(const Policy& policy, const std::vector<size_t>& context,
                                  const std::vector<size_t>& reasoning, size_t k,
                                  size_t beam_width, const sid::SidTrie& trie) {
    if (beam_width < k) throw Error("rank_topk: beam_width < k");
    size_t catalog = count_items(trie.root);
    if (k > catalog)
        throw Error("rank_topk: k " + std::to_string(k) + " exceeds catalog size " +
                    std::to_string(catalog));

    struct Beam {
        std::vector<size_t> prefix;
        double score = 0.0;
        Engine eng;
        std::vector<double> logits;
    };

    Engine base(policy);
    const std::vector<double>* logits = nullptr;
    for (size_t id : context) logits = &base.feed(id);
    for (size_t id : reasoning) logits = &base.feed(id);

    std::vector<Beam> beams;
    beams.push_back({{}, 0.0, base, *logits});
    std::vector<RankedItem> finished;

    while (!beams.empty()) {
        struct Cand {
            size_t beam;
            size_t code;
            size_t token;
            double score;
        };
        std::vector<Cand> cands;
        std::vector<Beam> next_beams;
        for (size_t bi = 0; bi < beams.size(); ++bi) {
            auto next = sid::constrained_next(trie, beams[bi].prefix);
            if (next.terminal) {
                finished.push_back({next.item_id, beams[bi].score});
                continue;
            }
            size_t level = beams[bi].prefix.size();
            for (size_t code : next.codes) {
                auto id = policy.vocab.sid_token_id(level, code);
                if (!id) continue;
                double lp = row_logprob(beams[bi].logits, *id, 1.0);
                cands.push_back({bi, code, *id, beams[bi].score + lp});
            }
        }
        std::stable_sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.beam != b.beam) return a.beam < b.beam;
            return a.code < b.code;
        });
        if (cands.size() > beam_width) cands.resize(beam_width);
        for (const auto& c : cands) {
            Beam nb = beams[c.beam];
            nb.prefix.push_back(c.code);
            nb.score = c.score;
            nb.logits = nb.eng.feed(c.token);
            next_beams.push_back(std::move(nb));
        }
        beams = std::move(next_beams);
    }

    std::stable_sort(finished.begin(), finished.end(), [](const RankedItem& a, const RankedItem& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.item_id < b.item_id;
    });
    if (finished.size() > k) finished.resize(k);
    return finished;
}

std::vector<double> sequence_logprob(const Policy& policy, const std::vector<size_t>& context,
                                     const std::vector<size_t>& tokens, double temperature) {
    if (context.empty()) throw Error("sequence_logprob: empty context");
    Engine eng(policy);
    const std::vector<double>* logits = nullptr;
    for (size_t id : context) logits = &eng.feed(id);
    std::vector<double> out;
    for (size_t tok : tokens) {
        out.push_back(row_logprob(*logits, tok, temperature));
        logits = &eng.feed(tok);
    }
    return out;
}

// ---------------------------------------------------------------------------
// persistence

static constexpr const char* kPolicyMagic = "SIDREC-POLICY-V1";

void write_policy(std::ostream& out, const Policy& policy) {
    ser::write_string(out, kPolicyMagic);
    nlohmann::ordered_json cfg;
    cfg["layers"] = policy.config.layers;
    cfg["heads"] = policy.config.heads;
    cfg["width"] = policy.config.width;
    cfg["ff_width"] = policy.config.ff_width;
    cfg["context"] = policy.config.context;
    cfg["seed"] = policy.config.seed;
    ser::write_string(out, cfg.dump());
    ser::write_string(out, policy.stage);
    ser::write_u64(out, policy.vocab.tokens.size());
    for (const auto& t : policy.vocab.tokens) ser::write_string(out, t);
    ser::write_u64(out, policy.vocab.sid_levels);
    ser::write_u64(out, policy.vocab.sid_info.size());
    for (const auto& [id, li] : policy.vocab.sid_info) {
        ser::write_u64(out, id);
        ser::write_u64(out, li.first);
        ser::write_u64(out, li.second);
    }
    ser::write_tensors(out, policy.params);
}

void save_policy(const std::string& path, const Policy& policy) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_policy: cannot open " + path);
    write_policy(out, policy);
}

Policy read_policy(std::istream& in) {
    if (ser::read_string(in) != kPolicyMagic)
        throw Error("load_policy: unrecognized checkpoint version");
    Policy p;
    auto cfg = nlohmann::json::parse(ser::read_string(in));
    p.config.layers = cfg.at("layers");
    p.config.heads = cfg.at("heads");
    p.config.width = cfg.at("width");
    p.config.ff_width = cfg.at("ff_width");
    p.config.context = cfg.at("context");
    p.config.seed = cfg.at("seed");
    p.stage = ser::read_string(in);
    size_t n = ser::read_u64(in);
    for (size_t i = 0; i < n; ++i) {
        p.vocab.tokens.push_back(ser::read_string(in));
        p.vocab.ids[p.vocab.tokens.back()] = i;
    }
    p.vocab.pad = p.vocab.ids.at("<|pad|>");
    p.vocab.unk = p.vocab.ids.at("<|unk|>");
    p.vocab.eot = p.vocab.ids.at("<|endoftext|>");
    p.vocab.im_start = p.vocab.ids.at("<|im_start|>");
    p.vocab.im_end = p.vocab.ids.at("<|im_end|>");
    p.vocab.sid_levels = ser::read_u64(in);
    size_t ns = ser::read_u64(in);
    for (size_t i = 0; i < ns; ++i) {
        size_t id = ser::read_u64(in);
        size_t level = ser::read_u64(in);
        size_t index = ser::read_u64(in);
        p.vocab.sid_info[id] = {level, index};
    }
    p.params = ser::read_tensors(in);
    return p;
}

Policy load_policy(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("load_policy: cannot open " + path);
    return read_policy(in);
}

}  // namespace sidrec::policy
