#pragma once
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "molr/tensor.hpp"
#include "molr/vocab.hpp"

namespace molr {

struct ModelConfig {
    int d_model = 128;
    int n_layers = 4;
    int n_heads = 4;
    int vocab_size = 0;        // filled from Vocabulary at construction
    int max_seq = 256;
    int ffn_mult = 4;
    int lora_rank = 8;
    double lora_scaling = 2.0;

    int d_k() const { return d_model / n_heads; }
    int ffn_width() const { return d_model * ffn_mult; }
    void validate() const;
};

// One low-rank delta for a single target matrix. Column convention here is
// activations-as-rows, so with the usual W' = W + B*A on column vectors,
// `a` stores A^T (in x r, gaussian init) and `b` stores B^T (r x out, zero
// init — a fresh adapter is an exact no-op).
struct LoraAdapter {
    Tensor a;
    Tensor b;
    int rank = 0;
    double scaling = 1.0;

    static LoraAdapter init(int in_dim, int out_dim, int rank, double scaling, Rng& rng);
};

// Named adapters, keyed "layer{i}.q" / "layer{i}.v".
struct AdapterSet {
    std::map<std::string, LoraAdapter> entries;

    const LoraAdapter* find(const std::string& key) const;
    std::vector<Tensor> params();
    bool all_zero() const;
};

// x*W plus the adapter's low-rank path; ad == nullptr means base only.
Tensor lora_linear(const Tensor& x, const Tensor& w, const LoraAdapter* ad);
// W + scaling * a*b, the merged dense weight
Mat lora_merged_weight(const Mat& w, const LoraAdapter& ad);

// softmax(Q K^T / sqrt(d_k)) V with optional causal masking
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal);

enum class DecodeMode { Greedy, Temperature };

struct GenerateOptions {
    DecodeMode mode = DecodeMode::Greedy;
    double temperature = 1.0;
    uint64_t seed = 0;
    int max_new = 64;
};

// Pre-norm decoder-only transformer with RMS norms, learned positional
// embeddings, and LoRA hooks on each layer's Q and V projections.
class Model {
public:
    Model() = default;
    Model(ModelConfig cfg, Vocabulary vocab, Rng& rng);

    Tensor forward(const std::vector<int>& tokens, const AdapterSet* adapters = nullptr) const;
    std::vector<int> generate(const std::vector<int>& prompt, const GenerateOptions& opt,
                              const AdapterSet* adapters = nullptr) const;

    // mean-pooled final-layer hidden state of the tokens, 1 x d_model
    Mat embed(const std::vector<int>& tokens) const;

    std::vector<Tensor> base_params();
    // registry "group{1..8}.{prediction|inference}" plus any free-form names
    AdapterSet& adapter_set(const std::string& name);
    const AdapterSet* find_adapter_set(const std::string& name) const;
    bool has_adapter_set(const std::string& name) const;
    AdapterSet& create_lora_set(const std::string& name, Rng& rng);

    const ModelConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    Vocabulary& mutable_vocab() { return vocab_; }
    const std::map<std::string, AdapterSet>& adapter_sets() const { return adapters_; }
    std::map<std::string, AdapterSet>& mutable_adapter_sets() { return adapters_; }

    struct Layer {
        Tensor attn_gain, wq, wk, wv, wo;
        Tensor ffn_gain, w1, w2;
    };
    Tensor tok_emb, pos_emb, final_gain, unembed;
    std::vector<Layer> layers;

private:
    ModelConfig cfg_;
    Vocabulary vocab_;
    std::map<std::string, AdapterSet> adapters_;
};

} // namespace molr
