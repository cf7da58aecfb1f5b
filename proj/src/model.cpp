#include "molr/model.hpp"

#include <cmath>

namespace molr {

void ModelConfig::validate() const {
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || max_seq <= 0 || ffn_mult <= 0)
        throw std::invalid_argument("ModelConfig: all dimensions must be positive");
    if (d_model % n_heads != 0)
        throw std::invalid_argument("ModelConfig: d_model not divisible by n_heads");
    if (vocab_size <= 0) throw std::invalid_argument("ModelConfig: vocab_size unset");
}

LoraAdapter LoraAdapter::init(int in_dim, int out_dim, int rank, double scaling, Rng& rng) {
    int lim = std::min(in_dim, out_dim) / 2;
    if (rank < 1 || rank > lim)
        throw std::invalid_argument("LoraAdapter: rank must be in [1, min(d,k)/2]");
    LoraAdapter ad;
    ad.rank = rank;
    ad.scaling = scaling;
    ad.a = Tensor::random_gaussian(in_dim, rank, 1.0 / std::sqrt(in_dim), rng, true);
    ad.b = Tensor::zeros(rank, out_dim, true);
    return ad;
}

const LoraAdapter* AdapterSet::find(const std::string& key) const {
    auto it = entries.find(key);
    return it == entries.end() ? nullptr : &it->second;
}

std::vector<Tensor> AdapterSet::params() {
    std::vector<Tensor> out;
    for (auto& [k, ad] : entries) {
        out.push_back(ad.a);
        out.push_back(ad.b);
    }
    return out;
}

bool AdapterSet::all_zero() const {
    for (const auto& [k, ad] : entries)
        if (ad.b.value().cwiseAbs().maxCoeff() != 0.0) return false;
    return true;
}

Tensor lora_linear(const Tensor& x, const Tensor& w, const LoraAdapter* ad) {
    Tensor base = matmul(x, w);
    if (!ad) return base;
    Tensor delta = matmul(matmul(x, ad->a), ad->b);
    return add(base, scale(delta, ad->scaling));
}

Mat lora_merged_weight(const Mat& w, const LoraAdapter& ad) {
    return w + ad.scaling * (ad.a.value() * ad.b.value());
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal) {
    if (q.cols() != k.cols() || k.rows() != v.rows())
        throw std::invalid_argument("attention: shape mismatch");
    double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_dk);
    if (causal) {
        if (q.rows() != k.rows())
            throw std::invalid_argument("attention: causal mask needs square scores");
        Mat mask = Mat::Zero(scores.rows(), scores.cols());
        for (Eigen::Index i = 0; i < mask.rows(); ++i)
            for (Eigen::Index j = i + 1; j < mask.cols(); ++j)
                mask(i, j) = -1e30;
        scores = add(scores, Tensor::constant(mask));
    }
    return matmul(softmax(scores, 1), v);
}

Model::Model(ModelConfig cfg, Vocabulary vocab, Rng& rng)
    : cfg_(cfg), vocab_(std::move(vocab)) {
    cfg_.vocab_size = vocab_.size();
    cfg_.validate();
    const double std0 = 0.08;
    int d = cfg_.d_model, f = cfg_.ffn_width(), v = cfg_.vocab_size;
    tok_emb = Tensor::random_gaussian(v, d, std0, rng, true);
    pos_emb = Tensor::random_gaussian(cfg_.max_seq, d, std0, rng, true);
    final_gain = Tensor::leaf(Mat::Ones(1, d), true);
    unembed = Tensor::random_gaussian(d, v, std0, rng, true);
    for (int l = 0; l < cfg_.n_layers; ++l) {
        Layer layer;
        layer.attn_gain = Tensor::leaf(Mat::Ones(1, d), true);
        layer.wq = Tensor::random_gaussian(d, d, std0, rng, true);
        layer.wk = Tensor::random_gaussian(d, d, std0, rng, true);
        layer.wv = Tensor::random_gaussian(d, d, std0, rng, true);
        layer.wo = Tensor::random_gaussian(d, d, std0, rng, true);
        layer.ffn_gain = Tensor::leaf(Mat::Ones(1, d), true);
        layer.w1 = Tensor::random_gaussian(d, f, std0, rng, true);
        layer.w2 = Tensor::random_gaussian(f, d, std0, rng, true);
        layers.push_back(std::move(layer));
    }
}

Tensor Model::forward(const std::vector<int>& tokens, const AdapterSet* adapters) const {
    if (tokens.empty()) throw std::invalid_argument("Model::forward: empty input");
    if (static_cast<int>(tokens.size()) > cfg_.max_seq)
        throw std::invalid_argument("Model::forward: sequence exceeds max_seq " +
                                    std::to_string(cfg_.max_seq));
    std::vector<int> positions(tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i) positions[i] = static_cast<int>(i);

    Tensor x = add(embed_rows(tok_emb, tokens), embed_rows(pos_emb, positions));
    int dk = cfg_.d_k();
    for (int l = 0; l < cfg_.n_layers; ++l) {
        const Layer& layer = layers[l];
        std::string prefix = "layer" + std::to_string(l);
        const LoraAdapter* ad_q = adapters ? adapters->find(prefix + ".q") : nullptr;
        const LoraAdapter* ad_v = adapters ? adapters->find(prefix + ".v") : nullptr;

        Tensor h = rms_norm_rows(x, layer.attn_gain);
        Tensor q = lora_linear(h, layer.wq, ad_q);
        Tensor k = matmul(h, layer.wk);
        Tensor v = lora_linear(h, layer.wv, ad_v);
        std::vector<Tensor> heads;
        for (int hd = 0; hd < cfg_.n_heads; ++hd) {
            heads.push_back(attention(slice_cols(q, hd * dk, dk),
                                      slice_cols(k, hd * dk, dk),
                                      slice_cols(v, hd * dk, dk), true));
        }
        x = add(x, matmul(concat_cols(heads), layer.wo));

        Tensor g = rms_norm_rows(x, layer.ffn_gain);
        x = add(x, matmul(gelu(matmul(g, layer.w1)), layer.w2));
    }
    x = rms_norm_rows(x, final_gain);
    return matmul(x, unembed);
}

std::vector<int> Model::generate(const std::vector<int>& prompt, const GenerateOptions& opt,
                                 const AdapterSet* adapters) const {
    if (prompt.empty()) throw std::invalid_argument("Model::generate: empty prompt");
    if (opt.max_new <= 0) throw std::invalid_argument("Model::generate: max_new must be > 0");
    NoGradScope ng;
    Rng rng(opt.seed, 0x9e3779b97f4a7c15ULL);
    std::vector<int> out = prompt;
    bool greedy = opt.mode == DecodeMode::Greedy || opt.temperature <= 1e-9;
    for (int step = 0; step < opt.max_new; ++step) {
        if (static_cast<int>(out.size()) >= cfg_.max_seq) break;
        Tensor logits = forward(out, adapters);
        Eigen::RowVectorXd row = logits.value().row(logits.rows() - 1);
        int next = 0;
        if (greedy) {
            row.maxCoeff(&next);
        } else {
            row /= opt.temperature;
            row.array() -= row.maxCoeff();
            Eigen::RowVectorXd p = row.array().exp();
            p /= p.sum();
            double u = rng.uniform(), acc = 0.0;
            next = static_cast<int>(p.size()) - 1;
            for (Eigen::Index j = 0; j < p.size(); ++j) {
                acc += p(j);
                if (u < acc) { next = static_cast<int>(j); break; }
            }
        }
        out.push_back(next);
        if (next == vocab_.eos()) break;
    }
    return out;
}

Mat Model::embed(const std::vector<int>& tokens) const {
    if (tokens.empty()) throw std::invalid_argument("Model::embed: empty input");
    NoGradScope ng;
    // final-layer hidden state = pre-unembed normalized activations
    std::vector<int> positions(tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i) positions[i] = static_cast<int>(i);
    Tensor x = add(embed_rows(tok_emb, tokens), embed_rows(pos_emb, positions));
    int dk = cfg_.d_k();
    for (int l = 0; l < cfg_.n_layers; ++l) {
        const Layer& layer = layers[l];
        Tensor h = rms_norm_rows(x, layer.attn_gain);
        Tensor q = matmul(h, layer.wq);
        Tensor k = matmul(h, layer.wk);
        Tensor v = matmul(h, layer.wv);
        std::vector<Tensor> heads;
        for (int hd = 0; hd < cfg_.n_heads; ++hd)
            heads.push_back(attention(slice_cols(q, hd * dk, dk),
                                      slice_cols(k, hd * dk, dk),
                                      slice_cols(v, hd * dk, dk), true));
        x = add(x, matmul(concat_cols(heads), layer.wo));
        Tensor g = rms_norm_rows(x, layer.ffn_gain);
        x = add(x, matmul(gelu(matmul(g, layer.w1)), layer.w2));
    }
    return x.value().colwise().mean();
}

std::vector<Tensor> Model::base_params() {
    std::vector<Tensor> out = {tok_emb, pos_emb, final_gain, unembed};
    for (auto& l : layers) {
        out.push_back(l.attn_gain);
        out.push_back(l.wq);
        out.push_back(l.wk);
        out.push_back(l.wv);
        out.push_back(l.wo);
        out.push_back(l.ffn_gain);
        out.push_back(l.w1);
        out.push_back(l.w2);
    }
    return out;
}

AdapterSet& Model::adapter_set(const std::string& name) {
    auto it = adapters_.find(name);
    if (it == adapters_.end())
        throw std::runtime_error("Model: adapter set '" + name + "' missing from checkpoint");
    return it->second;
}

const AdapterSet* Model::find_adapter_set(const std::string& name) const {
    auto it = adapters_.find(name);
    return it == adapters_.end() ? nullptr : &it->second;
}

bool Model::has_adapter_set(const std::string& name) const {
    return adapters_.count(name) != 0;
}

AdapterSet& Model::create_lora_set(const std::string& name, Rng& rng) {
    AdapterSet set;
    for (int l = 0; l < cfg_.n_layers; ++l) {
        std::string prefix = "layer" + std::to_string(l);
        set.entries.emplace(prefix + ".q",
                            LoraAdapter::init(cfg_.d_model, cfg_.d_model, cfg_.lora_rank,
                                              cfg_.lora_scaling, rng));
        set.entries.emplace(prefix + ".v",
                            LoraAdapter::init(cfg_.d_model, cfg_.d_model, cfg_.lora_rank,
                                              cfg_.lora_scaling, rng));
    }
    return adapters_[name] = std::move(set);
}

} // namespace molr
