#pragma once

#include <map>
#include <string>
#include <vector>

#include "sidrec/dataio.hpp"
#include "sidrec/tensor.hpp"

namespace sidrec::quant {

struct RqVaeConfig {
    size_t levels = 3;       // L
    size_t codewords = 8;    // K per level; desk fixtures use 8-24
    size_t latent_dim = 16;  // d
    double beta_commit = 0.25;
    size_t hidden = 64;  // encoder/decoder hidden width, 2 hidden layers
    double learning_rate = 1e-3;
    size_t epochs = 30;
    size_t batch_size = 64;
    uint64_t seed = 1;

    void validate() const;
};

struct QuantizerState {
    RqVaeConfig config;
    size_t input_dim = 0;
    std::vector<num::Tensor> encoder;    // w1,b1,w2,b2,w3,b3 (tanh hidden layers)
    std::vector<num::Tensor> decoder;    // same layout, d -> input_dim
    std::vector<num::Tensor> codebooks;  // L matrices [K, d]
};

struct SidCode {
    std::vector<size_t> codes;   // s^1..s^L
    size_t disambiguation = 0;   // extra suffix level, 0 unless codes collide
};

struct SidAssignment {
    size_t levels = 0;
    size_t codewords = 0;
    std::map<std::string, SidCode> by_item;
};

// Feature-hashed word n-grams + seeded random projection, unit-normalized.
std::vector<num::Tensor> embed_items(const std::vector<data::Item>& items, size_t d, uint64_t seed);

struct QuantizeResult {
    std::vector<size_t> codes;           // argmin per level, lowest index on ties
    std::vector<num::Tensor> residuals;  // r^1..r^L
    num::Tensor quantized;               // sum of selected codewords
};
QuantizeResult quantize_residual(const std::vector<num::Tensor>& codebooks, const num::Tensor& z);

struct Losses {
    double recon = 0.0;
    double rq = 0.0;
    double total = 0.0;
};
Losses rqvae_losses(const QuantizerState& state, const std::vector<num::Tensor>& batch);

struct TrainReport {
    double initial_recon = 0.0;
    double final_recon = 0.0;
    std::vector<double> utilization;  // per level, fraction of codewords used in last epoch
};

QuantizerState train_rqvae(const RqVaeConfig& cfg, const std::vector<num::Tensor>& embeddings,
                           TrainReport* report = nullptr);

num::Tensor encode_embedding(const QuantizerState& state, const num::Tensor& embedding);

SidAssignment assign_sids(const QuantizerState& state, const std::vector<data::Item>& items,
                          const std::vector<num::Tensor>& embeddings);

// persistence
void save_quantizer(const std::string& path, const QuantizerState& state);
QuantizerState load_quantizer(const std::string& path);
void save_assignment(const std::string& path, const SidAssignment& a);  // JSON-lines
SidAssignment load_assignment(const std::string& path);
std::vector<num::Tensor> load_embeddings(const std::string& path,
                                         const std::vector<data::Item>& items);  // JSON-lines

}  // namespace sidrec::quant
