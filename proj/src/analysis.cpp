#include "molr/analysis.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "molr/checkpoint.hpp"

namespace molr {

namespace {

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// "layer3.q" -> "Layer_3_q"
std::string display_layer_name(const std::string& key) {
    size_t dot = key.find('.');
    if (dot == std::string::npos || key.rfind("layer", 0) != 0)
        throw std::invalid_argument("unexpected adapter key: " + key);
    return "Layer_" + key.substr(5, dot - 5) + "_" + key.substr(dot + 1);
}

void flatten_into(const Mat& m, std::vector<double>& out) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    return out;
}

} // namespace

double LayerHistogram::out_of_range_fraction() const {
    long total = in_range + out_of_range;
    return total == 0 ? 0.0 : static_cast<double>(out_of_range) / static_cast<double>(total);
}

double l2_delta(const Mat& specialist, const Mat& init) {
    if (specialist.rows() != init.rows() || specialist.cols() != init.cols())
        throw std::invalid_argument("l2_delta: shape mismatch");
    return std::max(specialist.norm() - init.norm(), 0.0);
}

LayerHistogram layer_histogram(const std::string& layer, const std::vector<double>& weights) {
    if (weights.empty()) throw std::invalid_argument("layer_histogram: empty layer " + layer);
    LayerHistogram h;
    h.layer = layer;
    std::array<long, kHistBins> counts{};
    for (double w : weights) {
        if (w < kHistLo || w > kHistHi) {
            ++h.out_of_range;
            continue;
        }
        int b = std::min(kHistBins - 1, static_cast<int>((w - kHistLo) / kHistBinWidth));
        ++counts[b];
        ++h.in_range;
    }
    if (h.in_range == 0)
        throw std::invalid_argument("layer_histogram: zero in-range weights in " + layer);
    for (int b = 0; b < kHistBins; ++b)
        h.rho[b] = static_cast<double>(counts[b]) /
                   (static_cast<double>(h.in_range) * kHistBinWidth);
    return h;
}

std::map<std::string, std::vector<double>> merged_lora_weights(const AdapterSet& set,
                                                               MergeMode mode) {
    std::map<std::string, std::vector<double>> out;
    for (const auto& [key, ad] : set.entries) {
        std::vector<double>& flat = out[display_layer_name(key)];
        if (mode == MergeMode::Concat) {
            flatten_into(ad.a.value(), flat);
            flatten_into(ad.b.value(), flat);
        } else {
            flatten_into(ad.scaling * (ad.a.value() * ad.b.value()), flat);
        }
    }
    return out;
}

std::vector<LayerHistogram> adapter_histograms(const AdapterSet& set, MergeMode mode) {
    std::vector<LayerHistogram> hists;
    for (const auto& [name, flat] : merged_lora_weights(set, mode))
        hists.push_back(layer_histogram(name, flat));
    return hists;
}

DensityDiff density_diff(const std::vector<LayerHistogram>& specialist,
                         const std::vector<LayerHistogram>& reference) {
    if (specialist.size() != reference.size() || specialist.empty())
        throw std::invalid_argument("density_diff: layer grids do not match");
    DensityDiff d;
    d.values.resize(static_cast<Eigen::Index>(specialist.size()), kHistBins);
    for (size_t l = 0; l < specialist.size(); ++l) {
        if (specialist[l].layer != reference[l].layer)
            throw std::invalid_argument("density_diff: layer mismatch at " + specialist[l].layer +
                                        " vs " + reference[l].layer);
        d.layers.push_back(specialist[l].layer);
        for (int b = 0; b < kHistBins; ++b)
            d.values(static_cast<Eigen::Index>(l), b) =
                specialist[l].rho[b] - reference[l].rho[b];
    }
    d.scale = std::max(std::abs(d.values.minCoeff()), std::abs(d.values.maxCoeff()));
    if (d.scale > 0.0) d.values /= d.scale;
    return d;
}

std::map<std::string, double> task_dispersion(const Mat& coords,
                                              const std::vector<TaskRecord>& samples) {
    if (static_cast<size_t>(coords.rows()) != samples.size())
        throw std::invalid_argument("task_dispersion: coords/samples size mismatch");
    std::map<std::string, std::vector<Eigen::Index>> by_task;
    for (size_t i = 0; i < samples.size(); ++i)
        by_task[task_name(samples[i].task)].push_back(static_cast<Eigen::Index>(i));
    std::map<std::string, double> out;
    for (const auto& [task, idx] : by_task) {
        double sum = 0.0;
        long pairs = 0;
        for (size_t i = 0; i < idx.size(); ++i)
            for (size_t j = i + 1; j < idx.size(); ++j) {
                sum += (coords.row(idx[i]) - coords.row(idx[j])).norm();
                ++pairs;
            }
        out[task] = pairs == 0 ? 0.0 : sum / static_cast<double>(pairs);
    }
    return out;
}

ProjectionResult project_representations(const std::vector<TaskRecord>& samples,
                                         const Model& before, const Model& after) {
    ProjectionResult res;
    res.before = reduce_2d(embed_records(samples, before));
    res.after = reduce_2d(embed_records(samples, after));
    res.dispersion_before = task_dispersion(res.before, samples);
    res.dispersion_after = task_dispersion(res.after, samples);
    return res;
}

ProjectionResult project_representations(const std::vector<TaskRecord>& samples,
                                         const std::string& before_ckpt,
                                         const std::string& after_ckpt) {
    Model before = load_checkpoint(before_ckpt);
    Model after = load_checkpoint(after_ckpt);
    return project_representations(samples, before, after);
}

ChainTaxonomy ChainTaxonomy::defaults() {
    ChainTaxonomy t;
    t.rules = {
        {"A", {"asks for", "the request", "the question", "we need", "the task", "the input"}},
        {"C", {"compare", "than", "similar", "matches", "versus", "corresponds", "same as"}},
        {"E", {"known", "recall", "typically", "in general", "literature", "by definition"}},
        {"I", {"therefore", "thus", "hence", "conclude", "so the answer", "the answer is",
               "this gives"}},
    };
    return t;
}

std::vector<std::string> segment_think(const std::string& think) {
    // blank-line paragraphs first; single-paragraph text falls back to sentences
    std::vector<std::string> paras;
    size_t start = 0;
    while (start < think.size()) {
        size_t brk = think.find("\n\n", start);
        std::string chunk =
            brk == std::string::npos ? think.substr(start) : think.substr(start, brk - start);
        std::string t = trim(chunk);
        if (!t.empty()) paras.push_back(t);
        if (brk == std::string::npos) break;
        start = brk + 2;
    }
    if (paras.size() > 1) return paras;

    std::vector<std::string> sentences;
    std::string text = paras.empty() ? "" : paras[0];
    start = 0;
    for (size_t i = 0; i < text.size(); ++i) {
        if (text[i] == '.' || text[i] == '!' || text[i] == '?') {
            std::string s = trim(text.substr(start, i + 1 - start));
            if (!s.empty()) sentences.push_back(s);
            start = i + 1;
        }
    }
    std::string tail = start < text.size() ? trim(text.substr(start)) : "";
    if (!tail.empty()) sentences.push_back(tail);
    return sentences;
}

std::string label_step(const std::string& step, const ChainTaxonomy& taxonomy) {
    std::string low = lower(step);
    for (const auto& [label, keywords] : taxonomy.rules)
        for (const auto& kw : keywords)
            if (low.find(lower(kw)) != std::string::npos) return label;
    return "other";
}

std::map<std::string, double> chain_distribution(const std::vector<CoTRecord>& corpus,
                                                 const ChainTaxonomy& taxonomy) {
    if (corpus.empty()) throw std::invalid_argument("chain_distribution: empty corpus");
    std::map<std::string, long> counts;
    for (const auto& rec : corpus) {
        std::vector<std::string> labels;
        for (const auto& step : segment_think(rec.think)) {
            std::string l = label_step(step, taxonomy);
            if (labels.empty() || labels.back() != l) labels.push_back(l);
        }
        std::string path;
        for (const auto& l : labels) {
            if (!path.empty()) path += "->";
            path += l;
        }
        if (path.empty()) path = "other";
        ++counts[path];
    }
    std::map<std::string, double> freq;
    for (const auto& [path, n] : counts)
        freq[path] = static_cast<double>(n) / static_cast<double>(corpus.size());
    return freq;
}

void write_histogram_csv(const std::string& path, const std::vector<LayerHistogram>& hists,
                         const DensityDiff* diff) {
    if (diff && (diff->layers.size() != hists.size()))
        throw std::invalid_argument("write_histogram_csv: diff grid does not match histograms");
    std::ofstream out = open_out(path);
    out << "layer,bin_left,rho,delta_rho\n";
    out << std::setprecision(12);
    for (size_t l = 0; l < hists.size(); ++l) {
        if (diff && diff->layers[l] != hists[l].layer)
            throw std::invalid_argument("write_histogram_csv: layer order mismatch");
        for (int b = 0; b < kHistBins; ++b) {
            out << hists[l].layer << "," << hists[l].bin_left(b) << "," << hists[l].rho[b] << ",";
            if (diff) out << diff->values(static_cast<Eigen::Index>(l), b);
            out << "\n";
        }
    }
}

void write_chain_csv(const std::string& path, const std::map<std::string, double>& distribution) {
    std::ofstream out = open_out(path);
    out << "path,frequency\n";
    out << std::setprecision(12);
    for (const auto& [p, f] : distribution) out << p << "," << f << "\n";
}

void write_analysis_manifest(const std::string& path,
                             const std::map<std::string, std::string>& entries) {
    nlohmann::json j(entries);
    std::ofstream out = open_out(path);
    out << j.dump(2) << "\n";
}

} // namespace molr
