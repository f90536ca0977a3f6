#include "sidrec/quantizer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include <json.hpp>

#include "sidrec/optim.hpp"
#include "sidrec/serialize.hpp"
#include "sidrec/tape.hpp"

namespace sidrec::quant {

using num::Tape;
using num::Tensor;

void RqVaeConfig::validate() const {
    if (levels < 1) throw Error("quantizer: levels must be >= 1");
    if (codewords < 2) throw Error("quantizer: codewords must be >= 2");
    if (latent_dim < 1) throw Error("quantizer: latent_dim must be >= 1");
    if (beta_commit < 0.0) throw Error("quantizer: beta_commit must be >= 0");
    if (hidden < 1 || epochs < 1 || batch_size < 1)
        throw Error("quantizer: hidden/epochs/batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw Error("quantizer: learning_rate must be > 0");
}

// ---------------------------------------------------------------------------
// text embedding stand-in

namespace {

std::vector<std::string> words_of(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            cur += char(std::tolower(static_cast<unsigned char>(c)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

constexpr size_t kHashDim = 2048;

}  // namespace

std::vector<Tensor> embed_items(const std::vector<data::Item>& items, size_t d, uint64_t seed) {
    if (d < 8) throw Error("embed_items: d must be >= 8");
    Rng base(seed);
    // projection columns generated lazily and cached per feature bucket
    std::vector<std::vector<double>> columns(kHashDim);
    auto column = [&](size_t h) -> const std::vector<double>& {
        if (columns[h].empty()) {
            Rng cr = base.derive(h);
            columns[h].resize(d);
            for (double& v : columns[h]) v = cr.normal();
        }
        return columns[h];
    };

    std::vector<Tensor> out(items.size());
    for (size_t it = 0; it < items.size(); ++it) {
        const data::Item& item = items[it];
        auto ws = words_of(item.title + " " + item.description + " " + item.category);
        // hashed unigram + bigram counts with sign trick
        std::map<size_t, double> features;
        auto add_feature = [&](const std::string& f) {
            uint64_t h = fnv1a64(f);
            double sign = (h >> 63) ? 1.0 : -1.0;
            features[size_t(h % kHashDim)] += sign;
        };
        for (size_t i = 0; i < ws.size(); ++i) {
            add_feature(ws[i]);
            if (i + 1 < ws.size()) add_feature(ws[i] + "_" + ws[i + 1]);
        }
        Tensor v = Tensor::zeros({d});
        for (const auto& [h, w] : features) {
            const auto& col = column(h);
            for (size_t j = 0; j < d; ++j) v.data[j] += w * col[j];
        }
        double norm = 0.0;
        for (double x : v.data) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-12) {
            v.data[0] = 1.0;  // pathological empty text
        } else {
            for (double& x : v.data) x /= norm;
        }
        out[it] = std::move(v);
    }
    return out;
}

// ---------------------------------------------------------------------------
// residual quantization

QuantizeResult quantize_residual(const std::vector<Tensor>& codebooks, const Tensor& z) {
    QuantizeResult res;
    Tensor r = z;
    res.quantized = Tensor::zeros(z.shape);
    for (const Tensor& cb : codebooks) {
        if (cb.rank() != 2 || cb.shape[1] != z.size())
            throw Error("quantize_residual: codebook shape " + cb.shape_str() +
                        " incompatible with z of size " + std::to_string(z.size()));
        size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (size_t k = 0; k < cb.shape[0]; ++k) {
            double dist = 0.0;
            for (size_t j = 0; j < z.size(); ++j) {
                double diff = r.data[j] - cb.at(k, j);
                dist += diff * diff;
            }
            if (dist < best_d) {  // strict: lowest index wins ties
                best_d = dist;
                best = k;
            }
        }
        res.codes.push_back(best);
        for (size_t j = 0; j < z.size(); ++j) {
            r.data[j] -= cb.at(best, j);
            res.quantized.data[j] += cb.at(best, j);
        }
        res.residuals.push_back(r);
    }
    return res;
}

// ---------------------------------------------------------------------------
// MLP helpers

namespace {

std::vector<Tensor> init_mlp(size_t in, size_t hidden, size_t out, Rng& rng) {
    auto mat = [&](size_t r, size_t c) {
        Tensor t = Tensor::zeros({r, c});
        double s = 1.0 / std::sqrt(double(r));
        for (double& v : t.data) v = rng.normal() * s;
        return t;
    };
    return {mat(in, hidden), Tensor::zeros({hidden}), mat(hidden, hidden), Tensor::zeros({hidden}),
            mat(hidden, out), Tensor::zeros({out})};
}

Tape::Id mlp_forward(Tape& t, const std::vector<Tape::Id>& p, Tape::Id x) {
    Tape::Id h1 = t.tanh_op(t.add(t.matmul(x, p[0]), p[1]));
    Tape::Id h2 = t.tanh_op(t.add(t.matmul(h1, p[2]), p[3]));
    return t.add(t.matmul(h2, p[4]), p[5]);
}

Tensor mlp_forward_plain(const std::vector<Tensor>& p, const Tensor& x) {
    Tape t;
    std::vector<Tape::Id> ids;
    for (const Tensor& w : p) ids.push_back(t.constant(w));
    Tensor xm = x.rank() == 1 ? Tensor({1, x.size()}, x.data) : x;
    Tape::Id out = mlp_forward(t, ids, t.constant(xm));
    Tensor y = t.value(out);
    if (x.rank() == 1) y.shape = {y.data.size()};
    return y;
}

struct LossNodes {
    Tape::Id recon;
    Tape::Id rq;
    Tape::Id total;
    std::vector<std::vector<size_t>> codes_per_level;      // [L][B]
    std::vector<std::vector<Tensor>> residuals_per_item;   // [B][L], r^1..r^L
    std::vector<Tensor> z_rows;                            // [B], r^0
};

// Builds the full RQ-VAE objective on a tape. Parameter ids: encoder(6),
// decoder(6), codebooks(L). Straight-through on the decoder input; the first
// RQ term trains codebooks, the commitment term trains the encoder.
LossNodes build_losses(Tape& t, const std::vector<Tape::Id>& enc, const std::vector<Tape::Id>& dec,
                       const std::vector<Tape::Id>& cbs, const std::vector<Tensor>& cb_values,
                       const Tensor& batch, double beta) {
    size_t B = batch.shape[0];
    size_t L = cbs.size();
    Tape::Id x = t.constant(batch);
    Tape::Id z = mlp_forward(t, enc, x);  // [B,d]
    Tensor zv = t.value(z);  // copied: node storage moves as ops are pushed
    size_t d = zv.shape[1];

    LossNodes out;
    out.codes_per_level.assign(L, std::vector<size_t>(B));
    out.residuals_per_item.assign(B, {});

    // off-tape nearest-codeword selection per item
    std::vector<QuantizeResult> qr(B);
    for (size_t b = 0; b < B; ++b) {
        Tensor zi({d}, std::vector<double>(zv.data.begin() + b * d, zv.data.begin() + (b + 1) * d));
        qr[b] = quantize_residual(cb_values, zi);
        for (size_t l = 0; l < L; ++l) out.codes_per_level[l][b] = qr[b].codes[l];
        out.residuals_per_item[b] = qr[b].residuals;
        out.z_rows.push_back(std::move(zi));
    }

    Tape::Id rq_loss = t.constant(Tensor::scalar(0.0));
    Tape::Id r_prev = z;  // on-tape residual, codewords treated as constants
    for (size_t l = 0; l < L; ++l) {
        Tensor e_val = Tensor::zeros({B, d});
        for (size_t b = 0; b < B; ++b)
            for (size_t j = 0; j < d; ++j)
                e_val.at(b, j) = cb_values[l].at(out.codes_per_level[l][b], j);
        // codebook term: || sg[r^{l-1}] - e ||^2
        Tape::Id e_sel = t.gather_rows(cbs[l], out.codes_per_level[l]);
        Tensor rv = t.value(r_prev);
        Tape::Id diff1 = t.sub(t.constant(rv), e_sel);
        Tape::Id term1 = t.scale(t.sum(t.mul(diff1, diff1)), 1.0 / double(B));
        // commitment term: beta * || r^{l-1} - sg[e] ||^2
        Tape::Id diff2 = t.sub(r_prev, t.constant(e_val));
        Tape::Id term2 = t.scale(t.sum(t.mul(diff2, diff2)), beta / double(B));
        rq_loss = t.add(rq_loss, t.add(term1, term2));
        r_prev = t.sub(r_prev, t.constant(e_val));
    }

    // straight-through: decoder sees the quantized sum, gradient flows to z
    Tensor st_shift = Tensor::zeros({B, d});
    for (size_t b = 0; b < B; ++b)
        for (size_t j = 0; j < d; ++j) st_shift.at(b, j) = qr[b].quantized.data[j] - zv.at(b, j);
    Tape::Id zq = t.add(z, t.constant(st_shift));
    Tape::Id xhat = mlp_forward(t, dec, zq);
    Tape::Id dr = t.sub(x, xhat);
    out.recon = t.scale(t.sum(t.mul(dr, dr)), 1.0 / double(B));
    out.rq = rq_loss;
    out.total = t.add(out.recon, out.rq);
    return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows, const std::vector<size_t>& idx) {
    size_t d = rows[idx[0]].size();
    Tensor out = Tensor::zeros({idx.size(), d});
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy(rows[idx[i]].data.begin(), rows[idx[i]].data.end(), &out.data[i * d]);
    return out;
}

// Lloyd's k-means with deterministic seeding; empty clusters re-seeded.
std::vector<Tensor> kmeans_rows(const std::vector<Tensor>& points, size_t K, Rng rng,
                                size_t iters = 15) {
    size_t n = points.size(), d = points[0].size();
    std::vector<size_t> init;
    std::set<size_t> used;
    while (init.size() < K) {
        size_t c = rng.below(n);
        if (used.insert(c).second) init.push_back(c);
        if (used.size() == n) break;
    }
    std::vector<Tensor> centers;
    for (size_t i = 0; i < K; ++i) centers.push_back(points[init[i % init.size()]]);

    std::vector<size_t> assign(n, 0);
    for (size_t it = 0; it < iters; ++it) {
        for (size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (size_t k = 0; k < K; ++k) {
                double dist = 0.0;
                for (size_t j = 0; j < d; ++j) {
                    double diff = points[i].data[j] - centers[k].data[j];
                    dist += diff * diff;
                }
                if (dist < best) {
                    best = dist;
                    assign[i] = k;
                }
            }
        }
        std::vector<Tensor> sums(K, Tensor::zeros({d}));
        std::vector<size_t> counts(K, 0);
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = 0; j < d; ++j) sums[assign[i]].data[j] += points[i].data[j];
            ++counts[assign[i]];
        }
        for (size_t k = 0; k < K; ++k) {
            if (counts[k] == 0) {
                centers[k] = points[rng.below(n)];
            } else {
                for (size_t j = 0; j < d; ++j) centers[k].data[j] = sums[k].data[j] / double(counts[k]);
            }
        }
    }
    return centers;
}

}  // namespace

Losses rqvae_losses(const QuantizerState& state, const std::vector<Tensor>& batch) {
    if (batch.empty()) throw Error("rqvae_losses: empty batch");
    Tape t;
    std::vector<Tape::Id> enc, dec, cbs;
    for (const Tensor& p : state.encoder) enc.push_back(t.constant(p));
    for (const Tensor& p : state.decoder) dec.push_back(t.constant(p));
    for (const Tensor& p : state.codebooks) cbs.push_back(t.constant(p));
    std::vector<size_t> all(batch.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    LossNodes nodes =
        build_losses(t, enc, dec, cbs, state.codebooks, stack_rows(batch, all), state.config.beta_commit);
    return {t.value(nodes.recon).data[0], t.value(nodes.rq).data[0], t.value(nodes.total).data[0]};
}

num::Tensor encode_embedding(const QuantizerState& state, const Tensor& embedding) {
    return mlp_forward_plain(state.encoder, embedding);
}

QuantizerState train_rqvae(const RqVaeConfig& cfg, const std::vector<Tensor>& embeddings,
                           TrainReport* report) {
    cfg.validate();
    if (embeddings.size() < cfg.codewords)
        throw Error("train_rqvae: need at least K=" + std::to_string(cfg.codewords) +
                    " embeddings, got " + std::to_string(embeddings.size()));
    size_t n = embeddings.size();
    size_t in_dim = embeddings[0].size();

    QuantizerState st;
    st.config = cfg;
    st.input_dim = in_dim;
    Rng rng(cfg.seed);
    Rng enc_rng = rng.derive(1), dec_rng = rng.derive(2), km_rng = rng.derive(3),
        shuffle_rng = rng.derive(4), dead_rng = rng.derive(5);
    st.encoder = init_mlp(in_dim, cfg.hidden, cfg.latent_dim, enc_rng);
    st.decoder = init_mlp(cfg.latent_dim, cfg.hidden, in_dim, dec_rng);

    // k-means codebook init on level residuals of the initial encoder outputs
    std::vector<Tensor> level_points(n);
    for (size_t i = 0; i < n; ++i) level_points[i] = encode_embedding(st, embeddings[i]);
    for (size_t l = 0; l < cfg.levels; ++l) {
        auto centers = kmeans_rows(level_points, cfg.codewords, km_rng.derive(l));
        Tensor cb = Tensor::zeros({cfg.codewords, cfg.latent_dim});
        for (size_t k = 0; k < cfg.codewords; ++k)
            std::copy(centers[k].data.begin(), centers[k].data.end(), &cb.data[k * cfg.latent_dim]);
        st.codebooks.push_back(cb);
        // next level quantizes what this level leaves behind
        for (size_t i = 0; i < n; ++i) {
            std::vector<Tensor> one = {cb};
            auto q = quantize_residual(one, level_points[i]);
            level_points[i] = q.residuals[0];
        }
    }

    if (report) report->initial_recon = rqvae_losses(st, embeddings).recon;

    std::vector<Tensor> params;  // enc(6) + dec(6) + cb(L)
    for (auto& p : st.encoder) params.push_back(p);
    for (auto& p : st.decoder) params.push_back(p);
    for (auto& p : st.codebooks) params.push_back(p);

    num::Optimizer opt;
    opt.kind = num::Optimizer::Kind::AdamW;
    opt.lr = cfg.learning_rate;
    opt.clip_norm = 0.0;

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;

    std::vector<std::vector<size_t>> usage(cfg.levels, std::vector<size_t>(cfg.codewords, 0));
    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // seeded shuffle
        Rng sr = shuffle_rng.derive(epoch);
        for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[sr.below(i)]);
        for (auto& u : usage) std::fill(u.begin(), u.end(), 0);
        std::vector<Tensor> last_residuals;

        for (size_t off = 0; off < n; off += cfg.batch_size) {
            std::vector<size_t> idx(order.begin() + off,
                                    order.begin() + std::min(n, off + cfg.batch_size));
            Tensor batch = stack_rows(embeddings, idx);

            Tape t;
            std::vector<Tape::Id> pids;
            for (const Tensor& p : params) pids.push_back(t.leaf(p, true));
            std::vector<Tape::Id> enc(pids.begin(), pids.begin() + 6);
            std::vector<Tape::Id> dec(pids.begin() + 6, pids.begin() + 12);
            std::vector<Tape::Id> cbs(pids.begin() + 12, pids.end());
            std::vector<Tensor> cb_values(params.begin() + 12, params.end());
            LossNodes nodes = build_losses(t, enc, dec, cbs, cb_values, batch, cfg.beta_commit);
            t.backward(nodes.total);

            std::vector<Tensor> grads;
            for (size_t i = 0; i < params.size(); ++i) {
                const Tensor& g = t.grad(pids[i]);
                grads.push_back(g.data.empty() ? Tensor::zeros(params[i].shape) : g);
            }
            opt.step(params, grads);

            for (size_t l = 0; l < cfg.levels; ++l)
                for (size_t code : nodes.codes_per_level[l]) ++usage[l][code];
            // per level, the residual each level actually quantizes (r^{l-1})
            last_residuals.clear();
            for (size_t b = 0; b < nodes.z_rows.size(); ++b) {
                for (size_t l = 0; l < cfg.levels; ++l)
                    last_residuals.push_back(l == 0 ? nodes.z_rows[b]
                                                    : nodes.residuals_per_item[b][l - 1]);
            }
        }

        // re-seed dead codewords to a random in-batch residual of their level
        Rng dr = dead_rng.derive(epoch);
        size_t batch_items = last_residuals.size() / cfg.levels;
        for (size_t l = 0; l < cfg.levels && batch_items > 0; ++l) {
            for (size_t k = 0; k < cfg.codewords; ++k) {
                if (usage[l][k] == 0) {
                    const Tensor& r = last_residuals[dr.below(batch_items) * cfg.levels + l];
                    for (size_t j = 0; j < cfg.latent_dim; ++j)
                        params[12 + l].at(k, j) = r.data[j];
                }
            }
        }

        // params are views copied into st at the end; sync each epoch for loss eval
        for (size_t i = 0; i < 6; ++i) st.encoder[i] = params[i];
        for (size_t i = 0; i < 6; ++i) st.decoder[i] = params[6 + i];
        for (size_t l = 0; l < cfg.levels; ++l) st.codebooks[l] = params[12 + l];
    }

    if (report) {
        report->final_recon = rqvae_losses(st, embeddings).recon;
        report->utilization.clear();
        // utilization over the full dataset with final codebooks
        std::vector<std::set<size_t>> used(cfg.levels);
        for (size_t i = 0; i < n; ++i) {
            auto q = quantize_residual(st.codebooks, encode_embedding(st, embeddings[i]));
            for (size_t l = 0; l < cfg.levels; ++l) used[l].insert(q.codes[l]);
        }
        for (size_t l = 0; l < cfg.levels; ++l)
            report->utilization.push_back(double(used[l].size()) / double(cfg.codewords));
    }
    return st;
}

SidAssignment assign_sids(const QuantizerState& state, const std::vector<data::Item>& items,
                          const std::vector<Tensor>& embeddings) {
    if (items.size() != embeddings.size())
        throw Error("assign_sids: items/embeddings size mismatch");
    SidAssignment a;
    a.levels = state.config.levels;
    a.codewords = state.config.codewords;
    std::map<std::vector<size_t>, std::vector<std::string>> groups;
    std::map<std::string, std::vector<size_t>> codes_by_item;
    for (size_t i = 0; i < items.size(); ++i) {
        auto q = quantize_residual(state.codebooks, encode_embedding(state, embeddings[i]));
        groups[q.codes].push_back(items[i].item_id);
        codes_by_item[items[i].item_id] = q.codes;
    }
    for (auto& [codes, ids] : groups) {
        std::sort(ids.begin(), ids.end());
        for (size_t i = 0; i < ids.size(); ++i) a.by_item[ids[i]] = SidCode{codes, i};
    }
    return a;
}

// ---------------------------------------------------------------------------
// persistence

static constexpr const char* kQuantMagic = "SIDREC-QUANT-V1";

void save_quantizer(const std::string& path, const QuantizerState& state) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_quantizer: cannot open " + path);
    ser::write_string(out, kQuantMagic);
    nlohmann::ordered_json cfg;
    cfg["levels"] = state.config.levels;
    cfg["codewords"] = state.config.codewords;
    cfg["latent_dim"] = state.config.latent_dim;
    cfg["beta_commit"] = state.config.beta_commit;
    cfg["hidden"] = state.config.hidden;
    cfg["learning_rate"] = state.config.learning_rate;
    cfg["epochs"] = state.config.epochs;
    cfg["batch_size"] = state.config.batch_size;
    cfg["seed"] = state.config.seed;
    ser::write_string(out, cfg.dump());
    ser::write_u64(out, state.input_dim);
    ser::write_tensors(out, state.encoder);
    ser::write_tensors(out, state.decoder);
    ser::write_tensors(out, state.codebooks);
}

QuantizerState load_quantizer(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("load_quantizer: cannot open " + path);
    if (ser::read_string(in) != kQuantMagic)
        throw Error("load_quantizer: unrecognized format version in " + path);
    QuantizerState st;
    auto cfg = nlohmann::json::parse(ser::read_string(in));
    st.config.levels = cfg.at("levels");
    st.config.codewords = cfg.at("codewords");
    st.config.latent_dim = cfg.at("latent_dim");
    st.config.beta_commit = cfg.at("beta_commit");
    st.config.hidden = cfg.at("hidden");
    st.config.learning_rate = cfg.at("learning_rate");
    st.config.epochs = cfg.at("epochs");
    st.config.batch_size = cfg.at("batch_size");
    st.config.seed = cfg.at("seed");
    st.input_dim = ser::read_u64(in);
    st.encoder = ser::read_tensors(in);
    st.decoder = ser::read_tensors(in);
    st.codebooks = ser::read_tensors(in);
    return st;
}

void save_assignment(const std::string& path, const SidAssignment& a) {
    std::ofstream out(path);
    if (!out) throw Error("save_assignment: cannot open " + path);
    nlohmann::ordered_json header;
    header["levels"] = a.levels;
    header["codewords"] = a.codewords;
    out << header.dump() << "\n";
    for (const auto& [id, sc] : a.by_item) {
        nlohmann::ordered_json j;
        j["item_id"] = id;
        j["codes"] = sc.codes;
        j["disambiguation"] = sc.disambiguation;
        out << j.dump() << "\n";
    }
}

SidAssignment load_assignment(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("load_assignment: cannot open " + path);
    SidAssignment a;
    std::string line;
    if (!std::getline(in, line)) throw Error("load_assignment: empty file " + path);
    auto header = nlohmann::json::parse(line);
    a.levels = header.at("levels");
    a.codewords = header.at("codewords");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        SidCode sc;
        sc.codes = j.at("codes").get<std::vector<size_t>>();
        sc.disambiguation = j.at("disambiguation");
        a.by_item[j.at("item_id").get<std::string>()] = sc;
    }
    return a;
}

std::vector<Tensor> load_embeddings(const std::string& path, const std::vector<data::Item>& items) {
    std::ifstream in(path);
    if (!in) throw Error("load_embeddings: cannot open " + path);
    std::map<std::string, Tensor> by_id;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        if (!j.contains("item_id") || !j.contains("vector"))
            throw Error("load_embeddings: line " + std::to_string(lineno) +
                        ": expected keys item_id, vector");
        by_id[j.at("item_id").get<std::string>()] = Tensor::row(j.at("vector").get<std::vector<double>>());
    }
    std::vector<Tensor> out;
    for (const auto& it : items) {
        auto pos = by_id.find(it.item_id);
        if (pos == by_id.end()) throw Error("load_embeddings: missing vector for " + it.item_id);
        out.push_back(pos->second);
    }
    return out;
}

}  // namespace sidrec::quant
