#include "molr/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "molr/rng.hpp"

namespace molr {

using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'M', 'O', 'L', 'R'};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

std::vector<NamedTensor> tensor_manifest(Model& m) {
    std::vector<NamedTensor> out;
    out.push_back({"tok_emb", m.tok_emb});
    out.push_back({"pos_emb", m.pos_emb});
    out.push_back({"final_gain", m.final_gain});
    out.push_back({"unembed", m.unembed});
    for (size_t l = 0; l < m.layers.size(); ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        auto& layer = m.layers[l];
        out.push_back({p + "attn_gain", layer.attn_gain});
        out.push_back({p + "wq", layer.wq});
        out.push_back({p + "wk", layer.wk});
        out.push_back({p + "wv", layer.wv});
        out.push_back({p + "wo", layer.wo});
        out.push_back({p + "ffn_gain", layer.ffn_gain});
        out.push_back({p + "w1", layer.w1});
        out.push_back({p + "w2", layer.w2});
    }
    for (auto& [set_name, set] : m.mutable_adapter_sets()) {
        for (auto& [key, ad] : set.entries) {
            out.push_back({"adapter." + set_name + "." + key + ".a", ad.a});
            out.push_back({"adapter." + set_name + "." + key + ".b", ad.b});
        }
    }
    return out;
}

void append_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void append_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

uint32_t read_u32(const std::string& buf, size_t& off) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf.at(off++))) << (8 * i);
    return v;
}

uint64_t read_u64(const std::string& buf, size_t& off) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf.at(off++))) << (8 * i);
    return v;
}

} // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    Model& m = const_cast<Model&>(model);
    auto manifest = tensor_manifest(m);

    json meta;
    meta["config"] = {
        {"d_model", m.config().d_model},       {"n_layers", m.config().n_layers},
        {"n_heads", m.config().n_heads},       {"vocab_size", m.config().vocab_size},
        {"max_seq", m.config().max_seq},       {"ffn_mult", m.config().ffn_mult},
        {"lora_rank", m.config().lora_rank},   {"lora_scaling", m.config().lora_scaling},
    };
    meta["vocab"] = m.vocab().tokens();
    json adapters = json::object();
    for (const auto& [set_name, set] : m.adapter_sets()) {
        json keys = json::object();
        for (const auto& [key, ad] : set.entries)
            keys[key] = {{"rank", ad.rank}, {"scaling", ad.scaling}};
        adapters[set_name] = keys;
    }
    meta["adapters"] = adapters;
    json tensors = json::array();
    for (const auto& nt : manifest)
        tensors.push_back({{"name", nt.name},
                           {"rows", nt.tensor.rows()},
                           {"cols", nt.tensor.cols()}});
    meta["tensors"] = tensors;
    std::string meta_str = meta.dump();

    std::string buf;
    buf.append(kMagic, 4);
    append_u32(buf, kCheckpointVersion);
    append_u64(buf, meta_str.size());
    buf += meta_str;
    for (const auto& nt : manifest) {
        const Mat& v = nt.tensor.value();
        for (Eigen::Index i = 0; i < v.rows(); ++i)
            for (Eigen::Index j = 0; j < v.cols(); ++j) {
                double d = v(i, j);
                uint64_t bits;
                static_assert(sizeof(bits) == sizeof(d));
                std::memcpy(&bits, &d, 8);
                append_u64(buf, bits);
            }
    }
    append_u64(buf, fnv1a(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 24 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path);

    size_t off = buf.size() - 8;
    uint64_t stored = read_u64(buf, off);
    uint64_t actual = fnv1a(buf.data(), buf.size() - 8);
    if (stored != actual)
        throw std::runtime_error("load_checkpoint: checksum mismatch in " + path);

    off = 4;
    uint32_t version = read_u32(buf, off);
    if (version != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
    uint64_t meta_len = read_u64(buf, off);
    json meta = json::parse(buf.substr(off, meta_len));
    off += meta_len;

    ModelConfig cfg;
    cfg.d_model = meta["config"]["d_model"];
    cfg.n_layers = meta["config"]["n_layers"];
    cfg.n_heads = meta["config"]["n_heads"];
    cfg.vocab_size = meta["config"]["vocab_size"];
    cfg.max_seq = meta["config"]["max_seq"];
    cfg.ffn_mult = meta["config"]["ffn_mult"];
    cfg.lora_rank = meta["config"]["lora_rank"];
    cfg.lora_scaling = meta["config"]["lora_scaling"];

    Vocabulary vocab;
    for (const auto& t : meta["vocab"]) vocab.extend(t.get<std::string>());
    if (vocab.size() != cfg.vocab_size)
        throw std::runtime_error("load_checkpoint: vocabulary size mismatch");

    Rng dummy(0);
    Model m(cfg, std::move(vocab), dummy);
    for (auto& [set_name, keys] : meta["adapters"].items()) {
        AdapterSet set;
        for (auto& [key, info] : keys.items()) {
            LoraAdapter ad;
            ad.rank = info["rank"];
            ad.scaling = info["scaling"];
            set.entries.emplace(key, std::move(ad));
        }
        m.mutable_adapter_sets().emplace(set_name, std::move(set));
    }

    // rebuild the manifest against the fresh model, then fill values in order
    auto manifest = tensor_manifest(m);
    size_t idx = 0;
    for (const auto& entry : meta["tensors"]) {
        if (idx >= manifest.size())
            throw std::runtime_error("load_checkpoint: tensor manifest mismatch");
        auto& nt = manifest[idx];
        std::string name = entry["name"];
        Eigen::Index rows = entry["rows"], cols = entry["cols"];
        if (name != nt.name)
            throw std::runtime_error("load_checkpoint: tensor order mismatch at " + name);
        Mat v(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) {
                uint64_t bits = read_u64(buf, off);
                double d;
                std::memcpy(&d, &bits, 8);
                v(i, j) = d;
            }
        if (nt.tensor.valid()) {
            nt.tensor.mutable_value() = std::move(v);
        } else if (name.rfind("adapter.", 0) == 0) {
            // adapter.<set>.<layerK.q|v>.<a|b>, default-constructed above
            // the key is always two segments ("layerN.q"), set names may dot
            std::string rest = name.substr(8);
            size_t d1 = rest.rfind('.');
            std::string ab = rest.substr(d1 + 1);
            size_t d2 = rest.rfind('.', d1 - 1);
            size_t d3 = rest.rfind('.', d2 - 1);
            std::string set_name = rest.substr(0, d3);
            std::string key = rest.substr(d3 + 1, d1 - d3 - 1);
            auto& ad = m.mutable_adapter_sets().at(set_name).entries.at(key);
            Tensor t = Tensor::leaf(std::move(v), true);
            if (ab == "a") ad.a = t; else ad.b = t;
        }
        ++idx;
    }
    return m;
}

} // namespace molr
